"""Command-line front end: ``reflectdim {analyze,simulate,compare,dimension}``.

Scenario files are INI-like.  A single optional ``[config]`` section holds
computation settings; each ``[session]`` section describes one measurement
session (``count = N`` replicates it)::

    [config]
    seed = 1
    mass_threshold = 0.99

    [session]
    lambda = 4000
    train_size = 17
    packet_size_bytes = 1500
    rate_min_bps = 0.5e9
    rate_max_bps = 1.5e9

Times in CSV files are seconds; text reports show milliseconds.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np

from . import __version__
from .errors import DimensioningError, ReflectDimError, ValidationError
from .numerics import RNG_ALGORITHM
from .occupancy import pk_mean_wait, queue_length_quantile, steady_state
from .scenario import Scenario, SessionSpec, aggregate
from .simulator import SimConfig, Thresholds, compare, run, write_samples_csv
from .waittime import MonteCarloConfig, assemble, compute_components, wait_quantiles

log = logging.getLogger("reflectdim")

SESSION_KEYS = ("lambda", "train_size", "packet_size_bytes", "rate_min_bps", "rate_max_bps")
CONFIG_KEYS = {
    "seed": int,
    "grid_steps": int,
    "k_steps": int,
    "mass_threshold": float,
    "mc_tolerance": float,
    "mc_initial": int,
}


@dataclass(frozen=True)
class Settings:
    seed: int = 1
    grid_steps: int = 5000
    k_steps: int = 10000
    mass_threshold: float = 0.99
    mc_tolerance: float = 0.01
    mc_initial: int = 1000
    percentiles: tuple[float, ...] = (0.95, 0.99)
    normalize: bool = True

    def mc_config(self) -> MonteCarloConfig:
        return MonteCarloConfig(
            tolerance_epsilon=self.mc_tolerance,
            initial_points=self.mc_initial,
            min_points=min(1000, self.mc_initial),
            wait_grid_steps=self.grid_steps,
        )


# -- scenario files ---------------------------------------------------------


def _number(key, raw, kind, lineno):
    try:
        value = kind(raw) if kind is float else _integer(raw)
    except ValueError:
        raise ValidationError(key, f"line {lineno}: not a number: {raw!r}") from None
    if not (math.isfinite(value) and value > 0):
        raise ValidationError(key, f"line {lineno}: must be positive, got {raw!r}")
    return value


def _integer(raw):
    v = float(raw)
    if v != int(v):
        raise ValueError(raw)
    return int(v)


def parse_scenario_text(text: str) -> tuple[Scenario, dict]:
    """Parse scenario file contents into a :class:`Scenario` and config overrides."""
    config: dict = {}
    sessions: list[tuple[int, dict]] = []
    section = None
    seen_config = False
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].split(";", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise ValidationError("file", f"line {lineno}: malformed section header")
            section = line[1:-1].strip().lower()
            if section == "session":
                sessions.append((lineno, {}))
            elif section == "config":
                if seen_config:
                    raise ValidationError("config", f"line {lineno}: duplicate [config] section")
                seen_config = True
            else:
                raise ValidationError("file", f"line {lineno}: unknown section [{section}]")
            continue
        if "=" not in line:
            raise ValidationError("file", f"line {lineno}: expected key = value")
        key, raw = (x.strip() for x in line.split("=", 1))
        key = key.lower()
        if section == "config":
            if key not in CONFIG_KEYS:
                raise ValidationError(key, f"line {lineno}: unknown [config] key")
            config[key] = _number(key, raw, CONFIG_KEYS[key], lineno)
        elif section == "session":
            if key not in SESSION_KEYS and key != "count":
                raise ValidationError(key, f"line {lineno}: unknown [session] key")
            kind = int if key in ("train_size", "packet_size_bytes", "count") else float
            sessions[-1][1][key] = _number(key, raw, kind, lineno)
        else:
            raise ValidationError("file", f"line {lineno}: key outside any section")

    if not sessions:
        raise ValidationError("sessions", "scenario file has no [session] section")
    specs = []
    for lineno, d in sessions:
        missing = [k for k in SESSION_KEYS if k not in d]
        if missing:
            raise ValidationError(missing[0], f"[session] at line {lineno} is missing {', '.join(missing)}")
        spec = SessionSpec(
            intensity_lambda=d["lambda"],
            train_size=d["train_size"],
            packet_size=8 * d["packet_size_bytes"],
            rate_min=d["rate_min_bps"],
            rate_max=d["rate_max_bps"],
        )
        specs.extend([spec] * d.get("count", 1))
    if "mass_threshold" in config and not config["mass_threshold"] < 1:
        raise ValidationError("mass_threshold", "must be < 1")
    return Scenario(tuple(specs)), config


def load_scenario(path) -> tuple[Scenario, dict]:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ValidationError("scenario", f"cannot read {path}: {exc}") from None
    return parse_scenario_text(text)


def _parse_probs(text):
    out = []
    for tok in text.split(","):
        tok = tok.strip()
        if not tok:
            continue
        v = float(tok)
        if v > 1:
            v /= 100.0
        if not 0 < v < 1:
            raise ValidationError("percentiles", f"{tok} is not a probability or percentile")
        out.append(v)
    if not out:
        raise ValidationError("percentiles", "empty list")
    return tuple(out)


def _parse_floats(text):
    return [float(t) for t in text.split(",") if t.strip()]


def build_settings(file_config: dict, args) -> Settings:
    s = Settings(**file_config)
    overrides = {
        "seed": args.seed,
        "grid_steps": args.grid_steps,
        "k_steps": args.k_steps,
        "mass_threshold": args.mass,
        "mc_tolerance": args.mc_tol,
        "mc_initial": args.mc_init,
    }
    s = replace(s, **{k: v for k, v in overrides.items() if v is not None})
    if args.percentiles:
        s = replace(s, percentiles=_parse_probs(args.percentiles))
    if getattr(args, "raw_quantiles", False):
        s = replace(s, normalize=False)
    return s


# -- analysis pipeline --------------------------------------------------------


@dataclass
class Analysis:
    scenario: Scenario
    settings: Settings
    model: object
    occupancy: object
    components: list
    waiting: object
    wait_q: list
    queue_q: list
    mean_wait: float

    def report_row(self) -> dict:
        row = {
            "lambda_per_s": self.model.total_lambda,
            "rho": self.model.rho,
            "mean_wait_pk_s": self.mean_wait,
        }
        for p, q in zip(self.settings.percentiles, self.wait_q):
            row[f"wait_p{_pct(p)}_s"] = q
        for p, q in zip(self.settings.percentiles, self.queue_q):
            row[f"queue_p{_pct(p)}"] = q
        diags = self.waiting.components
        row["i_max"] = self.occupancy.i_max
        row["mc_max_points"] = max((d.points_used for d in diags), default=0)
        row["mc_total_attempts"] = sum(d.attempts for d in diags)
        row["wait_mass"] = self.waiting.total_mass
        return row


def _pct(p):
    return f"{100 * p:g}".replace(".", "_")


def analyze_scenario(scenario: Scenario, settings: Settings) -> Analysis:
    model = aggregate(scenario)
    occ = steady_state(model, settings.mass_threshold, k_steps=settings.k_steps)
    comps = compute_components(model, max(occ.i_max, 1), settings.mc_config(), settings.seed)
    w = assemble(occ, comps, settings.grid_steps)
    wq = wait_quantiles(w, settings.percentiles, normalize=settings.normalize)
    qq = [queue_length_quantile(occ, p) for p in settings.percentiles]
    return Analysis(scenario, settings, model, occ, comps, w, wq, qq, pk_mean_wait(model))


# -- output ---------------------------------------------------------------------


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return "" if v is None else str(v)


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(header)
        for row in rows:
            wr.writerow([_fmt(v) for v in row])


def _rate(bps):
    return f"{bps / 1e9:g} Gbps" if bps >= 1e9 else f"{bps / 1e6:g} Mbps"


def _metadata(settings: Settings, command: str) -> dict:
    return {
        "tool": "reflectdim",
        "version": __version__,
        "command": command,
        "rng_algorithm": RNG_ALGORITHM,
        "analysis_stream_ids": "component index i",
        "simulation_stream_id": 0,
        **asdict(settings),
    }


def write_analysis(a: Analysis, out: Path):
    out.mkdir(parents=True, exist_ok=True)
    m, occ, w = a.model, a.occupancy, a.waiting

    sgrid = m.working_grid(a.settings.grid_steps)
    write_csv(out / "service_pdf.csv", ["t_s", "pdf_per_s"], zip(sgrid.values, m.pdf(sgrid.values)))
    k = list(occ.k) + [None] * (len(occ.pi) - len(occ.k))
    write_csv(
        out / "occupancy.csv", ["i", "pi", "Pi", "k"],
        ((i, occ.pi[i], occ.Pi[i], k[i]) for i in range(len(occ.pi))),
    )
    t = w.grid.values
    write_csv(out / "wait_pdf.csv", ["t_s", "pdf_per_s"], zip(t, w.pdf.samples))
    # leading t = 0 row carries the atom; values equal the first grid row
    norm = w.cdf.samples / w.total_mass
    write_csv(
        out / "wait_cdf.csv", ["t_s", "cdf", "cdf_normalized"],
        [(0.0, w.cdf.samples[0], norm[0]), *zip(t, w.cdf.samples, norm)],
    )
    write_csv(
        out / "components.csv",
        ["i", "pi", "points_used", "integral_value", "est_stddev", "attempts", "exact"],
        ((d.i, occ.pi[d.i], d.points_used, d.integral_value, d.est_stddev, d.attempts, d.exact)
         for d in w.components),
    )
    row = a.report_row()
    write_csv(out / "report.csv", list(row), [list(row.values())])
    (out / "report.txt").write_text(render_report(a))
    (out / "metadata.json").write_text(json.dumps(_metadata(a.settings, "analyze"), indent=2) + "\n")


def render_report(a: Analysis) -> str:
    m, occ = a.model, a.occupancy
    lines = ["Sessions:"]
    for n, s in enumerate(a.scenario.sessions):
        lines.append(
            f"  {n:3d}  lambda={s.intensity_lambda:g}/s  r={s.train_size}  "
            f"s={s.packet_size // 8} B  rate=[{_rate(s.rate_min)}, {_rate(s.rate_max)}]"
        )
    lines += [
        "",
        f"lambda      {m.total_lambda:.6g} /s",
        f"t_min/max   {1e3 * m.t_min:.6g} / {1e3 * m.t_max:.6g} ms",
        f"E(T)        {1e3 * m.mean_service:.6g} ms   mu = {m.departure_rate:.6g} /s",
        f"rho         {m.rho:.6g}",
        f"E(W) (P-K)  {1e3 * a.mean_wait:.6g} ms",
        f"i_max       {occ.i_max}  (mass {occ.attained_mass:.6g} >= {occ.mass_threshold:g})",
        f"wait mass   {a.waiting.total_mass:.6g}"
        + ("  (quantiles renormalized)" if a.settings.normalize else ""),
        "",
        f"{'percentile':>10}  {'wait [ms]':>10}  {'queue length':>12}",
    ]
    for p, wq, qq in zip(a.settings.percentiles, a.wait_q, a.queue_q):
        lines.append(f"{100 * p:>10g}  {1e3 * wq:>10.4g}  {qq:>12d}")
    lines += ["", f"{'i':>3}  {'pi_i':>10}  {'MC points':>10}  {'integral':>9}  {'stddev':>8}"]
    for d in a.waiting.components:
        pts = "exact" if d.exact else str(d.points_used)
        lines.append(
            f"{d.i:>3}  {occ.pi[d.i]:>10.4g}  {pts:>10}  {d.integral_value:>9.5f}  {d.est_stddev:>8.2g}"
        )
    return "\n".join(lines) + "\n"


# -- commands ----------------------------------------------------------------------


def cmd_analyze(args) -> int:
    scenario, file_cfg = load_scenario(args.scenario)
    settings = build_settings(file_cfg, args)
    a = analyze_scenario(scenario, settings)
    if args.out:
        write_analysis(a, Path(args.out))
    print(render_report(a), end="")
    return 0


def _sim_config(scenario, settings, args):
    return SimConfig(
        scenario=scenario,
        arrivals=args.arrivals,
        warmup=_warmup(args),
        seed=settings.seed,
        record_samples=bool(getattr(args, "samples", False)),
    )


def _warmup(args):
    return args.warmup if args.warmup is not None else min(10_000, args.arrivals // 10)


def cmd_simulate(args) -> int:
    scenario, file_cfg = load_scenario(args.scenario)
    settings = build_settings(file_cfg, args)
    res = run(_sim_config(scenario, settings, args))
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        write_csv(out / "sim_summary.csv", ["statistic", "value"], res.summary.items())
        if args.samples:
            write_samples_csv(res, out / "samples.csv")
        meta = _metadata(settings, "simulate") | {"arrivals": args.arrivals, "warmup": _warmup(args)}
        (out / "metadata.json").write_text(json.dumps(meta, indent=2) + "\n")
    for key, val in res.summary.items():
        print(f"{key:<24} {_fmt(val)}")
    return 0


def cmd_compare(args) -> int:
    scenario, file_cfg = load_scenario(args.scenario)
    settings = build_settings(file_cfg, args)
    a = analyze_scenario(scenario, settings)
    occ = a.occupancy
    if args.corrupt_pi:
        # negative control: move half of pi_0 onto state 1
        pi = occ.pi.copy()
        pi[1] += pi[0] / 2
        pi[0] /= 2
        occ = replace(occ, pi=pi, Pi=np.cumsum(pi))
    res = run(_sim_config(scenario, settings, args))
    rep = compare(res, occ, a.waiting, Thresholds(tv=args.tv_max, ks_surrogate=args.ks_max))
    rows = rep.rows()
    if args.out:
        out = Path(args.out)
        write_analysis(a, out)
        write_csv(
            out / "comparison.csv", ["check", "value", "reference", "pass"],
            ([n, v, r, "" if ok is None else ok] for n, v, r, ok in rows),
        )
    print(f"{'check':<36} {'value':>12} {'reference':>12}  result")
    for name, val, ref, ok in rows:
        status = "info" if ok is None else ("PASS" if ok else "FAIL")
        ref_s = "" if ref is None else f"{ref:.6g}"
        print(f"{name:<36} {val:>12.6g} {ref_s:>12}  {status}")
    print("overall:", "PASS" if rep.passed else "FAIL")
    return 0


def cmd_dimension(args) -> int:
    scenario, file_cfg = load_scenario(args.scenario)
    settings = build_settings(file_cfg, args)
    wait_limits = _parse_floats(args.wait_limit_ms) if args.wait_limit_ms else []
    queue_limits = _parse_floats(args.queue_limit) if args.queue_limit else []
    for name, lim in (("wait-limit-ms", wait_limits), ("queue-limit", queue_limits)):
        if len(lim) > len(settings.percentiles):
            raise ValidationError(name, "more limits than percentiles")
    if not wait_limits and not queue_limits:
        raise ValidationError("limits", "give --wait-limit-ms and/or --queue-limit")
    lo = args.lambda_min
    hi = args.lambda_max
    if not 0 < lo <= hi:
        raise ValidationError("lambda", "need 0 < lambda-min <= lambda-max")
    grid = np.linspace(lo, hi, args.lambda_steps) if hi > lo else np.array([lo])

    rows = []
    best = None
    nearest = None
    # quantiles grow with lambda, so points past the first violation cannot pass
    for lam in np.sort(grid):
        sc = scenario.with_total_lambda(float(lam))
        a = analyze_scenario(sc, settings)
        row = a.report_row()
        excess = [_excess(1e3 * q, lim) for q, lim in zip(a.wait_q, wait_limits)]
        excess += [_excess(q, lim) for q, lim in zip(a.queue_q, queue_limits)]
        worst = max(excess)
        row["satisfied"] = worst <= 0
        rows.append(row)
        if row["satisfied"]:
            best = row
        if nearest is None or worst < nearest[0]:
            nearest = (worst, row)
        if worst > 0 and not args.full_sweep:
            skipped = int(np.sum(grid > lam))
            if skipped:
                print(f"stopping at lambda = {lam:.6g}: {skipped} larger values skipped (use --full-sweep)")
            break

    header = list(rows[0])
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        write_csv(out / "dimension.csv", header, [list(r.values()) for r in rows])
        meta = _metadata(settings, "dimension") | {
            "wait_limits_ms": wait_limits, "queue_limits": queue_limits,
        }
        (out / "metadata.json").write_text(json.dumps(meta, indent=2) + "\n")
    print(_render_dimension(rows, settings))
    if best is None:
        print("no lambda in range satisfies the limits; nearest miss:")
        print(_render_dimension([nearest[1]], settings))
        raise DimensioningError("limits unsatisfiable over the lambda range")
    print(f"max lambda satisfying limits: {best['lambda_per_s']:.6g} /s (rho = {best['rho']:.4g})")
    return 0


def _excess(value, limit):
    """Relative amount by which ``value`` exceeds ``limit`` (<= 0 when within it)."""
    if limit > 0:
        return value / limit - 1.0
    return math.inf if value > limit else -1.0


def _render_dimension(rows, settings):
    ps = settings.percentiles
    head = f"{'lambda':>10} {'rho':>7} " + " ".join(f"{'W' + _pct(p) + '[ms]':>10}" for p in ps)
    head += " " + " ".join(f"{'Q' + _pct(p):>6}" for p in ps) + f" {'i_max':>5}  ok"
    lines = [head]
    for r in rows:
        line = f"{r['lambda_per_s']:>10.6g} {r['rho']:>7.4f} "
        line += " ".join(f"{1e3 * r[f'wait_p{_pct(p)}_s']:>10.4g}" for p in ps)
        line += " " + " ".join(f"{r[f'queue_p{_pct(p)}']:>6d}" for p in ps)
        line += f" {r['i_max']:>5d}  {'yes' if r['satisfied'] else 'no'}"
        lines.append(line)
    return "\n".join(lines)


# -- argument parsing -------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--scenario", required=True, metavar="PATH")
    common.add_argument("--out", metavar="DIR")
    common.add_argument("--seed", type=int)
    common.add_argument("--grid-steps", type=int)
    common.add_argument("--k-steps", type=int)
    common.add_argument("--mass", type=float, help="queue-length mass threshold for i_max")
    common.add_argument("--mc-tol", type=float, help="Monte Carlo integral tolerance")
    common.add_argument("--mc-init", type=int, help="initial Monte Carlo sample size")
    common.add_argument("--percentiles", metavar="LIST", help="e.g. 0.95,0.99 or 95,99")
    common.add_argument("--raw-quantiles", action="store_true",
                        help="do not renormalize the truncated waiting-time distribution")
    common.add_argument("-v", "--verbose", action="count", default=0)

    sim = argparse.ArgumentParser(add_help=False)
    sim.add_argument("--arrivals", type=int, default=1_000_000)
    sim.add_argument("--warmup", type=int, help="default: min(10000, arrivals // 10)")

    p = argparse.ArgumentParser(prog="reflectdim", description=__doc__.split("\n")[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    a = sub.add_parser("analyze", parents=[common], help="queue-length and waiting-time distributions")
    a.set_defaults(func=cmd_analyze)

    s = sub.add_parser("simulate", parents=[common, sim], help="event-driven simulation")
    s.add_argument("--samples", action="store_true", help="write per-arrival samples.csv")
    s.set_defaults(func=cmd_simulate)

    c = sub.add_parser("compare", parents=[common, sim], help="analysis vs simulation")
    c.add_argument("--tv-max", type=float, default=0.02)
    c.add_argument("--ks-max", type=float, default=0.02)
    c.add_argument("--corrupt-pi", action="store_true", help=argparse.SUPPRESS)
    c.set_defaults(func=cmd_compare)

    d = sub.add_parser("dimension", parents=[common], help="largest lambda meeting quantile limits")
    d.add_argument("--lambda-min", type=float, required=True)
    d.add_argument("--lambda-max", type=float, required=True)
    d.add_argument("--lambda-steps", type=int, default=9)
    d.add_argument("--wait-limit-ms", metavar="LIST", help="one limit per percentile")
    d.add_argument("--queue-limit", metavar="LIST", help="one limit per percentile")
    d.add_argument("--full-sweep", action="store_true",
                   help="evaluate every lambda instead of stopping at the first violation")
    d.set_defaults(func=cmd_dimension)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s"
    )
    try:
        return args.func(args)
    except ReflectDimError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
