"""Command-line front end: tables, calibration, scenario sweeps, sample size.

Subcommands
-----------
table       build a standardized index table and write it as CSV
calibrate   Monte Carlo critical value of one design under the global null
simulate    operating-characteristics sweep over policies and hypotheses
sweep       empirical critical value against trial size
samplesize  equal-randomisation trial size for target power

Index tables are cached per (discount, n_max) in $BANDIT_TRIALS_TABLE_DIR
when that variable is set.  Every command is deterministic given its
``--seed``; replicate streams are derived per policy and hypothesis, so
adding policies to a sweep does not perturb the others.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from importlib import resources
from pathlib import Path

import numpy as np

from .engine import TrialScenario, run_replicates, write_trace_csv
from .gittins import DpConfig, GittinsTable, compute_index_table, load_index_table, save_index_table
from .inference import CriticalValue, calibrate_critical_value, fwer_critical_value, sample_size
from .operating import aggregate, bias_trajectories, write_bias_csv, write_results_csv
from .policies import POLICY_KINDS, PolicySpec

TABLE_DIR_ENV = "BANDIT_TRIALS_TABLE_DIR"
PRESET_NAMES = ("two-arm-t116", "four-arm-t302", "rare-t64")


def load_preset(name: str) -> dict:
    """Load a bundled scenario preset by name."""
    fname = name.replace("-", "_") + ".json"
    try:
        text = resources.files("bandit_trials.presets").joinpath(fname).read_text()
    except FileNotFoundError:
        raise SystemExit(f"unknown preset {name!r}; available: {', '.join(PRESET_NAMES)}")
    return json.loads(text)


def _table_cache_path(discount: float, n_max: int) -> Path | None:
    cache_dir = os.environ.get(TABLE_DIR_ENV)
    if not cache_dir:
        return None
    return Path(cache_dir) / f"gittins_d{discount:g}_n{n_max}.csv"


def get_table(discount: float, n_max: int, cfg: DpConfig | None = None) -> GittinsTable:
    """Fetch a cached index table or compute (and cache) one."""
    path = _table_cache_path(discount, n_max)
    if path is not None and path.exists():
        table = load_index_table(path)
        if table.discount == discount and table.n_max >= n_max:
            return table
    table = compute_index_table(discount, n_max, cfg)
    if path is not None:
        path.parent.mkdir(parents=True, exist_ok=True)
        save_index_table(table, path)
    return table


def _derived_seed(master_seed: int, *scope) -> int:
    """Stable 63-bit sub-seed for one (policy, hypothesis, purpose) run."""
    entropy = (int(master_seed),) + tuple(int(s) for s in scope)
    return int(np.random.SeedSequence(entropy).generate_state(1, dtype=np.uint64)[0] >> 1)


def _policy_spec(kind: str, preset: dict) -> PolicySpec:
    return PolicySpec(
        kind=kind,
        discount=float(preset.get("discount", 0.995)),
        batch=preset.get("batch") if kind in ("TSB", "TPB") else None,
        ts_draws=int(preset.get("ts_draws", 1000)),
        control_guard_prob=preset.get("guard_prob"),
    )


def _scenario(preset: dict, kind: str, label: str, mu, T: int | None = None) -> TrialScenario:
    return TrialScenario(
        K=int(preset["K"]),
        mu=tuple(mu),
        sigma=float(preset.get("sigma", 1.0)),
        T=int(T if T is not None else preset["T"]),
        policy=_policy_spec(kind, preset),
        hypothesis_label=label,
    )


def _load_scenario_source(args) -> dict:
    if getattr(args, "config", None):
        cfg = json.loads(Path(args.config).read_text())
        if "preset" in cfg:
            preset = load_preset(cfg["preset"])
            preset.update({k: v for k, v in cfg.items() if k != "preset"})
            return preset
        return cfg
    return load_preset(args.preset)


def _dp_config(args) -> DpConfig:
    kwargs = {}
    if args.grid_step is not None:
        kwargs["grid_step"] = args.grid_step
    if args.state_bound is not None:
        kwargs["state_bound"] = args.state_bound
    if args.quad_points is not None:
        kwargs["quadrature_points"] = args.quad_points
    if args.horizon is not None:
        kwargs["horizon"] = args.horizon
    if args.bisect_tol is not None:
        kwargs["bisection_tol"] = args.bisect_tol
    if args.lambda_hi is not None or args.lambda_lo is not None:
        kwargs["lambda_bracket"] = (args.lambda_lo or 0.0, args.lambda_hi or 3.0)
    return DpConfig(**kwargs)


def cmd_table(args) -> int:
    table = compute_index_table(args.discount, args.n_max, _dp_config(args))
    out = Path(args.out) if args.out else Path(f"gittins_d{args.discount:g}_n{args.n_max}.csv")
    save_index_table(table, out)
    print(f"wrote {out} ({table.n_max} rows, discount={table.discount})")
    return 0


def cmd_samplesize(args) -> int:
    critical = fwer_critical_value(args.k, args.alpha)
    total = sample_size(args.k, args.sigma, args.delta, critical.value, args.beta)
    per_arm = total / (args.k + 1)
    print(f"T = {total}")
    print(f"  K={args.k} experimental arms + control, sigma={args.sigma}, "
          f"one-sided alpha={args.alpha}, power={1 - args.beta:.2f} "
          f"for effect {args.delta}")
    print(f"  family-wise critical value C = {critical.value:.4f}")
    print(f"  about {per_arm:.1f} patients per arm under equal randomisation")
    return 0


def _needs_table(kinds) -> bool:
    return any(PolicySpec(k).needs_table for k in kinds)


def _scenario_table(preset: dict, kinds, T: int, dp_cfg: DpConfig | None = None):
    if not _needs_table(kinds):
        return None
    return get_table(float(preset.get("discount", 0.995)), max(T, int(preset["T"])), dp_cfg)


def cmd_calibrate(args) -> int:
    preset = _load_scenario_source(args)
    kind = args.policy.upper()
    labels = list(preset["hypotheses"])
    null_label = labels[0]
    mu = preset["hypotheses"][null_label]
    if max(mu) != min(mu):
        print(f"scenario hypothesis {null_label!r} is not a global null; refusing to calibrate",
              file=sys.stderr)
        return 1
    T = args.T or int(preset["T"])
    scenario = _scenario(preset, kind, null_label, mu, T=T)
    table = _scenario_table(preset, [kind], T)
    seed = _derived_seed(args.seed, POLICY_KINDS.index(kind), 0, T)
    critical, summary = calibrate_critical_value(
        scenario, table, seed, args.replicates, args.alpha, workers=args.workers)

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    record = {
        "policy": kind,
        "K": scenario.K,
        "T": scenario.T,
        "M": args.replicates,
        "alpha": args.alpha,
        "critical_value": critical.value,
        "z_mean": summary.mean,
        "z_sd": summary.sd,
        "seed": seed,
    }
    json_path = out_dir / f"calibration_{kind}_T{scenario.T}.json"
    json_path.write_text(json.dumps(record, indent=2) + "\n")
    hist_path = out_dir / f"calibration_{kind}_T{scenario.T}_hist.csv"
    edges, counts = summary.histogram.edges, summary.histogram.counts
    lines = ["bin_left,bin_right,count"]
    lines += [f"{edges[i]},{edges[i + 1]},{counts[i]}" for i in range(counts.size)]
    hist_path.write_text("\n".join(lines) + "\n")
    print(f"{kind}: C_{{{args.alpha}}} = {critical.value:.4f} "
          f"(statistic sd {summary.sd:.3f}); wrote {json_path} and {hist_path}")
    return 0


def _resolve_critical(args, preset, kind, T, table, analytic) -> CriticalValue:
    mode = args.critical_values
    if mode == "analytic" or (mode == "calibrate" and kind == "FR"):
        # equal randomisation keeps the contrasts on their nominal law, so
        # FR always tests at the analytic value
        return analytic
    if mode == "calibrate":
        labels = list(preset["hypotheses"])
        null_label = labels[0]
        mu = preset["hypotheses"][null_label]
        if max(mu) != min(mu):
            raise SystemExit(f"hypothesis {null_label!r} is not a global null; cannot calibrate")
        scenario = _scenario(preset, kind, null_label, mu, T=T)
        seed = _derived_seed(args.seed, POLICY_KINDS.index(kind), 0, T)
        critical, _ = calibrate_critical_value(
            scenario, table, seed, args.replicates, preset.get("alpha", 0.05),
            workers=args.workers)
        return critical
    mapping = json.loads(Path(mode).read_text())
    if kind not in mapping:
        raise SystemExit(f"critical-value file {mode} has no entry for {kind}")
    return CriticalValue(float(mapping[kind]), "fixed", float(preset.get("alpha", 0.05)))


def cmd_simulate(args) -> int:
    preset = _load_scenario_source(args)
    kinds = [k.upper() for k in (args.policies.split(",") if args.policies else preset["policies"])]
    hypotheses = (args.hypotheses.split(",") if args.hypotheses
                  else list(preset["hypotheses"]))
    T = args.T or int(preset["T"])
    alpha = float(preset.get("alpha", 0.05))
    table = _scenario_table(preset, kinds, T)
    analytic = fwer_critical_value(int(preset["K"]), alpha)

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    criticals = {}
    for kind in kinds:
        critical = _resolve_critical(args, preset, kind, T, table, analytic)
        criticals[kind] = critical.value
        for label in hypotheses:
            mu = preset["hypotheses"][label]
            scenario = _scenario(preset, kind, label, mu, T=T)
            seed = _derived_seed(args.seed, POLICY_KINDS.index(kind),
                                 1 + hypotheses.index(label), T)
            records = run_replicates(scenario, table, seed, args.replicates,
                                     workers=args.workers,
                                     keep_trajectory=args.bias)
            oc = aggregate(records, scenario, critical)
            rows.append({
                "policy": kind, "hypothesis": label, "C_alpha": critical.value,
                "rejection_rate": oc.rejection_rate,
                "global_rejection_rate": oc.global_rejection_rate,
                "e_pstar": oc.e_pstar, "sd_pstar": oc.sd_pstar,
                "e_outcome": oc.e_outcome, "sd_outcome": oc.sd_outcome,
                "M": oc.M, "seed": seed,
            })
            if args.bias:
                trajs = bias_trajectories(records, scenario)
                write_bias_csv(trajs, out_dir / f"bias_{kind}_{label}.csv")
            for r in range(min(args.traces, len(records))):
                write_trace_csv(records[r],
                                out_dir / f"trace_{kind}_{label}_r{r}.csv",
                                out_dir / f"trace_{kind}_{label}_r{r}_arms.csv")
            print(f"{kind} {label}: reject={oc.rejection_rate:.4f} "
                  f"Ep*={oc.e_pstar:.4f} EO={oc.e_outcome:.4f}", flush=True)

    results_path = out_dir / "results.csv"
    write_results_csv(rows, results_path)
    cv_path = out_dir / "critical_values.json"
    cv_path.write_text(json.dumps(criticals, indent=2) + "\n")
    print(f"wrote {results_path} and {cv_path}")
    return 0


def cmd_sweep(args) -> int:
    preset = _load_scenario_source(args)
    kind = args.policy.upper()
    sizes = [int(s) for s in args.sizes.split(",")]
    if not sizes:
        print("no trial sizes given", file=sys.stderr)
        return 1
    labels = list(preset["hypotheses"])
    null_label = labels[0]
    mu = preset["hypotheses"][null_label]
    if max(mu) != min(mu):
        print(f"hypothesis {null_label!r} is not a global null", file=sys.stderr)
        return 1
    table = _scenario_table(preset, [kind], max(sizes))
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    lines = ["T,critical_value"]
    for T in sizes:
        scenario = _scenario(preset, kind, null_label, mu, T=T)
        seed = _derived_seed(args.seed, POLICY_KINDS.index(kind), 0, T)
        critical, _ = calibrate_critical_value(
            scenario, table, seed, args.replicates, preset.get("alpha", 0.05),
            workers=args.workers)
        lines.append(f"{T},{critical.value!r}")
        print(f"{kind} T={T}: C = {critical.value:.4f}", flush=True)
    path = out_dir / f"sweep_{kind}.csv"
    path.write_text("\n".join(lines) + "\n")
    print(f"wrote {path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bandit-trials",
        description="Adaptive multi-armed trial simulation and test calibration")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("table", help="build a standardized index table")
    p.add_argument("--discount", type=float, required=True)
    p.add_argument("--n-max", type=int, required=True)
    p.add_argument("--out", type=str, default=None)
    p.add_argument("--grid-step", type=float, default=None)
    p.add_argument("--state-bound", type=float, default=None)
    p.add_argument("--quad-points", type=int, default=None)
    p.add_argument("--horizon", type=int, default=None)
    p.add_argument("--bisect-tol", type=float, default=None)
    p.add_argument("--lambda-lo", type=float, default=None)
    p.add_argument("--lambda-hi", type=float, default=None)
    p.set_defaults(func=cmd_table)

    p = sub.add_parser("samplesize", help="equal-randomisation trial size")
    p.add_argument("--k", type=int, required=True, help="number of experimental arms")
    p.add_argument("--sigma", type=float, default=1.0)
    p.add_argument("--delta", type=float, required=True, help="target effect size")
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--beta", type=float, default=0.10)
    p.set_defaults(func=cmd_samplesize)

    def common(p):
        p.add_argument("--preset", choices=PRESET_NAMES, default="two-arm-t116")
        p.add_argument("--config", type=str, default=None,
                       help="JSON run config (overrides --preset)")
        p.add_argument("--replicates", "-M", type=int, default=10000)
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--workers", type=int, default=max(1, os.cpu_count() or 1))
        p.add_argument("--out-dir", type=str, default="results")

    p = sub.add_parser("calibrate", help="empirical critical value under the global null")
    common(p)
    p.add_argument("--policy", type=str, required=True)
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--T", type=int, default=None, help="override the preset trial size")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("simulate", help="operating-characteristics sweep")
    common(p)
    p.add_argument("--policies", type=str, default=None, help="comma-separated subset")
    p.add_argument("--hypotheses", type=str, default=None)
    p.add_argument("--T", type=int, default=None)
    p.add_argument("--critical-values", type=str, default="calibrate",
                   help="'calibrate' (FR still uses the analytic value), 'analytic', "
                        "or a JSON file of per-policy values")
    p.add_argument("--bias", action="store_true", help="also write bias trajectories")
    p.add_argument("--traces", type=int, default=0, help="dump the first N replicate traces")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("sweep", help="critical value against trial size")
    common(p)
    p.add_argument("--policy", type=str, required=True)
    p.add_argument("--sizes", type=str, required=True, help="comma-separated trial sizes")
    p.set_defaults(func=cmd_sweep)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
