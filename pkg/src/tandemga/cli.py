"""Command-line entry point: design-safe, optimize, evaluate, sweep-weights.

Exit codes: 0 success, 1 usage or config error, 2 safety violation (or a
SAFE recovery failure during design), 3 numerical failure.
"""

import argparse
import csv
import dataclasses
import logging
import math
import sys
import time
from pathlib import Path

import numpy as np
from scipy.stats import spearmanr

from .config import DEG, ConfigError, ExperimentConfig, dump_config, load_config
from .ga import OptimizationResult, run_optimization, write_history_csv
from .neuro import decode_genome, load_genome, save_genome
from .plant import IntegrationError
from .safe import RiccatiError, SafeGain, design_gain, linearize, load_gain, save_gain
from .supervisor import (CONTROLLER_NAMES, EpisodeResult, FitnessWeights, ResetFailure,
                         TandemEvaluator, compute_rms, vertex_recovery)

log = logging.getLogger("tandemga")

EXIT_OK, EXIT_USAGE, EXIT_SAFETY, EXIT_NUMERIC = 0, 1, 2, 3

REFERENCE_WEIGHT_PAIRS = ((0.5, 2.0), (0.5, 1.0), (0.5, 0.5), (1.0, 0.5), (2.0, 0.5))


class SafetyViolation(RuntimeError):
    pass


def provenance(cfg: ExperimentConfig, what: str) -> str:
    return f"tandemga {what}\nconfig-digest: {cfg.digest()}"


def _fmt9(x: float) -> str:
    return f"{x:.9g}"


def obtain_gain(cfg: ExperimentConfig) -> SafeGain:
    if cfg.safe.gain_file:
        return load_gain(cfg.safe.gain_file)
    return design_gain(linearize(cfg.plant), np.diag(cfg.safe.q), cfg.safe.r)


def make_evaluator(cfg: ExperimentConfig, gain: SafeGain, weights: FitnessWeights | None = None) -> TandemEvaluator:
    return TandemEvaluator(
        gain=gain, params=cfg.plant, sensors=cfg.sensors, sim=cfg.sim, limits=cfg.limits,
        weights=weights or cfg.weights, T=cfg.episode.T, s0=cfg.episode.s0,
        start=cfg.episode.start, reset_budget=cfg.episode.reset_budget, tol=cfg.tol,
        observe_measured=cfg.episode.observe == "measured", workers=cfg.workers,
    )


def write_trace_csv(path, result: EpisodeResult, header: str) -> Path:
    path = Path(path)
    tr = result.trace
    with path.open("w", newline="") as fh:
        for line in header.splitlines():
            fh.write(f"# {line}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t_s", "p_m", "v_mps", "theta_rad", "omega_radps", "voltage_V", "controller", "in_limits"])
        for k in range(len(tr)):
            x = tr.true[k]
            w.writerow([_fmt9(k * tr.dt), *(_fmt9(c) for c in x), _fmt9(tr.voltage[k]),
                        CONTROLLER_NAMES[int(tr.controller[k])], int(tr.in_limits[k])])
    return path


# --- design-safe -------------------------------------------------------------

def cmd_design_safe(cfg: ExperimentConfig, out: Path) -> int:
    model = linearize(cfg.plant)
    gain = obtain_gain(cfg)
    eig = gain.closed_loop_eigenvalues(model)
    checks = vertex_recovery(cfg.plant, gain, cfg.limits, cfg.sim, cfg.episode.s0,
                             cfg.episode.reset_budget, cfg.tol)
    header = provenance(cfg, "design-safe")
    save_gain(out / "safe_gain.txt", gain, header)
    lines = [f"# {ln}" for ln in header.splitlines()]
    lines.append("gain K: " + " ".join(_fmt9(k) for k in gain.K))
    lines.append("closed-loop eigenvalues:")
    lines += [f"  {_fmt9(e.real)} {_fmt9(e.imag)}j" for e in sorted(eig, key=lambda z: (z.real, z.imag))]
    lines.append(f"stable: {bool(np.all(eig.real < 0))}")
    lines.append("vertex recovery (p_m v_mps theta_deg omega_dps -> recovered time_s max_abs_p max_abs_theta_deg):")
    for c in checks:
        v = c["vertex"]
        lines.append(
            f"  {_fmt9(v.p)} {_fmt9(v.v)} {_fmt9(v.theta / DEG)} {_fmt9(v.omega / DEG)} -> "
            f"{int(c['recovered'])} {_fmt9(c['time_s'])} {_fmt9(c['max_abs_p'])} {_fmt9(c['max_abs_theta'] / DEG)}")
    failed = sum(not c["recovered"] for c in checks)
    lines.append(f"recovery failures: {failed} of {len(checks)}")
    (out / "safe_report.txt").write_text("\n".join(lines) + "\n")
    print("\n".join(lines[len(header.splitlines()):]))
    return EXIT_SAFETY if failed or np.any(eig.real >= 0) else EXIT_OK


# --- optimize ----------------------------------------------------------------

class Audit:
    """Tracks the true-state extremes over every evaluated episode."""

    def __init__(self, evaluator: TandemEvaluator):
        self.evaluator = evaluator
        self.max_p = 0.0
        self.max_theta = 0.0
        self.contacts = 0
        self.episodes = 0

    def __call__(self, genomes, episodes):
        outcomes = self.evaluator.evaluate_batch(genomes, episodes)
        for o in outcomes:
            self.max_p = max(self.max_p, o.max_abs_p)
            self.max_theta = max(self.max_theta, o.max_abs_theta)
            self.contacts += o.contacts
            self.episodes += 1
        return outcomes

    def violated(self, cfg: ExperimentConfig) -> bool:
        return (self.contacts > 0 or self.max_p >= cfg.plant.rail_half
                or self.max_theta >= cfg.plant.theta_max)

    def report(self, cfg: ExperimentConfig) -> str:
        return "\n".join([
            f"episodes: {self.episodes}",
            f"max_abs_p_m: {_fmt9(self.max_p)}",
            f"max_abs_theta_rad: {_fmt9(self.max_theta)}",
            f"max_abs_theta_deg: {_fmt9(self.max_theta / DEG)}",
            f"hard_stop_contacts: {self.contacts}",
            f"rail_half_m: {_fmt9(cfg.plant.rail_half)}",
            f"theta_max_rad: {_fmt9(cfg.plant.theta_max)}",
            f"safety_invariant: {'VIOLATED' if self.violated(cfg) else 'held'}",
        ])


def optimize(cfg: ExperimentConfig, gain: SafeGain, weights: FitnessWeights | None = None):
    evaluator = make_evaluator(cfg, gain, weights)
    audit = Audit(evaluator)
    t0 = time.perf_counter()

    def progress(rec):
        log.info("%s gen %d best %.6g mean %.6g switches %d (%.1fs)", rec.phase, rec.generation,
                 rec.best_fitness, rec.mean_fitness, rec.switch_count, time.perf_counter() - t0)

    result = run_optimization(cfg.ga, audit, on_generation=progress)
    return result, audit, evaluator


def write_optimize_outputs(cfg: ExperimentConfig, out: Path, result: OptimizationResult, audit: Audit):
    header = provenance(cfg, "optimize")
    save_genome(out / "best_genome.hex", result.best.genome, header)
    save_genome(out / "best_genome.bin", result.best.genome)
    write_history_csv(out / "history.csv", result.history, header)
    write_history_csv(out / "selection.csv", result.selection, header)
    (out / "safety_audit.txt").write_text(
        "\n".join(f"# {ln}" for ln in header.splitlines()) + "\n" + audit.report(cfg) + "\n")


def cmd_optimize(cfg: ExperimentConfig, out: Path) -> int:
    gain = obtain_gain(cfg)
    result, audit, _ = optimize(cfg, gain)
    write_optimize_outputs(cfg, out, result, audit)
    print(audit.report(cfg))
    print(f"best accumulated fitness: {_fmt9(result.best.fitness)}")
    return EXIT_SAFETY if audit.violated(cfg) else EXIT_OK


# --- evaluate ----------------------------------------------------------------

def balance_comparison(cfg: ExperimentConfig, gain: SafeGain, genome, weights: FitnessWeights | None = None):
    """LEARNING vs SAFE over the RMS window from identical starting conditions."""
    ev = make_evaluator(cfg, gain, weights)
    learned, _ = ev.episode(decode_genome(genome), 0, cfg.episode.rms_window, recover=False)
    baseline, _ = ev.episode(None, 0, cfg.episode.rms_window, recover=False)
    return learned, baseline


def _rms(result: EpisodeResult):
    return compute_rms(result.trace.observed[:, 0], result.trace.observed[:, 2])


def reduction_pct(value: float, reference: float) -> float:
    return 100.0 * (reference - value) / reference if reference > 0 else 0.0


def cmd_evaluate(cfg: ExperimentConfig, out: Path, genome_path: Path) -> int:
    genome = load_genome(genome_path)
    gain = obtain_gain(cfg)
    learned, baseline = balance_comparison(cfg, gain, genome)
    header = provenance(cfg, f"evaluate {genome_path.name}")
    write_trace_csv(out / "trace_learning.csv", learned, header)
    write_trace_csv(out / "trace_safe.csv", baseline, header)
    lp, la = _rms(learned)
    sp, sa = _rms(baseline)
    lines = [
        f"window_s: {_fmt9(cfg.episode.rms_window)}",
        f"learning_switch_time_s: {'none' if learned.switch_time is None else _fmt9(learned.switch_time)}",
        f"learning_cart_rms_cm: {_fmt9(100 * lp)}",
        f"learning_angle_rms_deg: {_fmt9(la / DEG)}",
        f"safe_cart_rms_cm: {_fmt9(100 * sp)}",
        f"safe_angle_rms_deg: {_fmt9(sa / DEG)}",
        f"reduction_cart_rms_pct: {_fmt9(reduction_pct(lp, sp))}",
        f"reduction_angle_rms_pct: {_fmt9(reduction_pct(la, sa))}",
        f"learning_fitness: {_fmt9(learned.fitness)}",
        f"safe_fitness: {_fmt9(baseline.fitness)}",
        f"reduction_fitness_pct: {_fmt9(reduction_pct(learned.fitness, baseline.fitness))}",
    ]
    (out / "evaluate_report.txt").write_text(
        "\n".join(f"# {ln}" for ln in header.splitlines()) + "\n" + "\n".join(lines) + "\n")
    print("\n".join(lines))
    return EXIT_OK


# --- sweep-weights -----------------------------------------------------------

SWEEP_COLUMNS = ("Pw_cm", "Aw_deg", "cart_rms_cm", "angle_rms_deg", "reduction_p_pct", "reduction_a_pct")


def sweep_weights(cfg: ExperimentConfig, pairs, gain: SafeGain | None = None) -> list[dict]:
    gain = gain or obtain_gain(cfg)
    rows = []
    for pw_cm, aw_deg in pairs:
        weights = dataclasses.replace(cfg.weights, Pw=pw_cm / 100.0, Aw=aw_deg * DEG)
        log.info("sweep pair Pw=%g cm Aw=%g deg", pw_cm, aw_deg)
        result, audit, _ = optimize(cfg, gain, weights)
        if audit.violated(cfg):
            raise SafetyViolation(f"safety invariant violated for Pw={pw_cm} cm, Aw={aw_deg} deg")
        learned, baseline = balance_comparison(cfg, gain, result.best.genome, weights)
        lp, la = _rms(learned)
        sp, sa = _rms(baseline)
        rows.append({
            "Pw_cm": pw_cm, "Aw_deg": aw_deg, "cart_rms_cm": 100 * lp, "angle_rms_deg": la / DEG,
            "reduction_p_pct": reduction_pct(lp, sp), "reduction_a_pct": reduction_pct(la, sa),
            "switch_time": learned.switch_time,
        })
    return rows


def trend(rows) -> tuple[float, float]:
    """Spearman correlation of Pw/Aw against cart RMS and against angle RMS."""
    ratio = [r["Pw_cm"] / r["Aw_deg"] for r in rows]

    def rho(values):
        # identical results for every pair (e.g. all runs converged on one genome) carry no trend
        if len(set(values)) < 2:
            return math.nan
        return float(spearmanr(ratio, values).statistic)

    return rho([r["cart_rms_cm"] for r in rows]), rho([r["angle_rms_deg"] for r in rows])


def cmd_sweep_weights(cfg: ExperimentConfig, out: Path, pairs) -> int:
    rows = sweep_weights(cfg, pairs)
    header = provenance(cfg, "sweep-weights") + (
        f"\nseed policy: every pair uses ga.seed={cfg.ga.seed} and sim.seed={cfg.sim.seed}")
    with (out / "sweep.csv").open("w", newline="") as fh:
        for line in header.splitlines():
            fh.write(f"# {line}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SWEEP_COLUMNS)
        for r in rows:
            w.writerow([_fmt9(r[c]) for c in SWEEP_COLUMNS])
    for r in rows:
        print("  ".join(f"{c}={_fmt9(r[c])}" for c in SWEEP_COLUMNS))
    if len(rows) > 1:
        rho_p, rho_a = trend(rows)
        print(f"spearman(Pw/Aw, cart_rms)={rho_p:.3f}  spearman(Pw/Aw, angle_rms)={rho_a:.3f}")
    return EXIT_OK


# --- entry point -------------------------------------------------------------

def _pair(text: str):
    try:
        pw, aw = (float(t) for t in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected 'Pw_cm,Aw_deg', got {text!r}")
    return pw, aw


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tandemga", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True, type=Path)
        p.add_argument("--seed", type=int, help="overrides ga.seed and sim.seed")
        p.add_argument("--out", type=Path, help="output directory (overrides run.out)")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override any config key; repeatable")
        return p

    common(sub.add_parser("design-safe", help="design the SAFE gain and check vertex recovery"))
    common(sub.add_parser("optimize", help="run the SAFE/LEARNING tandem optimization"))
    ev = common(sub.add_parser("evaluate", help="compare a genome against SAFE over the RMS window"))
    ev.add_argument("--genome", required=True, type=Path)
    sw = common(sub.add_parser("sweep-weights", help="optimize for several (Pw, Aw) pairs"))
    sw.add_argument("--pair", action="append", type=_pair, metavar="PW_CM,AW_DEG",
                    help="weight pair in cm and degrees; defaults to five reference pairs")
    sub.add_parser("dump-config", help="print the default configuration file")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    if args.command == "dump-config":
        sys.stdout.write(dump_config(ExperimentConfig()))
        return EXIT_OK
    try:
        overrides = {}
        for item in args.set:
            if "=" not in item:
                raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
            key, value = item.split("=", 1)
            overrides[key.strip()] = value.strip()
        if args.seed is not None:
            overrides["ga.seed"] = overrides["sim.seed"] = str(args.seed)
        if args.out is not None:
            overrides["run.out"] = str(args.out)
        cfg = load_config(args.config, overrides)
        out = Path(cfg.out)
        out.mkdir(parents=True, exist_ok=True)
        if args.command == "design-safe":
            return cmd_design_safe(cfg, out)
        if args.command == "optimize":
            return cmd_optimize(cfg, out)
        if args.command == "evaluate":
            return cmd_evaluate(cfg, out, args.genome)
        if args.command == "sweep-weights":
            return cmd_sweep_weights(cfg, out, args.pair or REFERENCE_WEIGHT_PAIRS)
    except (ConfigError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (SafetyViolation, ResetFailure) as exc:
        print(f"safety failure: {exc}", file=sys.stderr)
        return EXIT_SAFETY
    except (RiccatiError, IntegrationError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
