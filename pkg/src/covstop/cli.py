"""Command-line entry point.

Subcommands cover the stock experiments (fly-by sensitivity grid,
persistent-surveillance traces, linearity tables, DP threshold curve),
policy training and the property-verification suites. Every command
requires an explicit seed (flag or scenario file), writes plot-ready
CSV files whose first line records the generating config hash and the
column units, and finishes with a JSON run manifest. Outputs are byte
identical across reruns of the same (config, seed).

Exit codes: 0 success, 2 validation error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__
from .config import (canonical_json, config_hash, load_scenario,
                     params_from_dict, params_to_dict)
from .dp_oracle import (check_monotone_policy, extract_threshold,
                        make_scalar_model, value_iterate)
from .errors import ContractError, NumericalError
from .filter_core import (det_ratio_lyapunov, det_ratio_riccati, loewner_geq,
                          lyapunov_update, riccati_update, TargetModel)
from .gmti import Scenario, build_flyby_scenario, run_macro_cycles
from .linearization import validate_linearization
from .observability import StoppingCase
from .optimizer import (SpsaSchedule, evaluate_cost, periodic_cost_curve,
                        rollout, spsa_optimize)
from .policy import (MonotoneSamplerConfig, ParamLayout, PolicyFamily,
                     verify_monotone)
from .sampling import ordered_pair, random_pd, random_transition
from .streams import child_seed, stream

BUNDLED = {"flyby": "configs/flyby.json", "persistent": "configs/persistent.json"}


def _bundled_path(name: str) -> Path:
    return Path(resources.files("covstop") / BUNDLED[name])


@dataclass
class RunConfig:
    command: str
    scenario_path: Path | None
    seed: int
    out_dir: Path
    overrides: dict


def _fmt(value) -> str:
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    return str(value)


def write_csv(path: Path, columns: list, rows, cfg_hash: str,
              units: str) -> None:
    lines = [f"# config_hash={cfg_hash} units: {units}"]
    lines.append(",".join(columns))
    for row in rows:
        lines.append(",".join(_fmt(v) for v in row))
    path.write_text("\n".join(lines) + "\n")


def write_manifest(out_dir: Path, command: str, cfg: dict, seed: int,
                   files: list) -> None:
    manifest = {
        "command": command,
        "config_hash": config_hash(cfg),
        "config": cfg,
        "seed": seed,
        "versions": {"covstop": __version__, "numpy": np.__version__},
        "outputs": sorted(files),
    }
    (out_dir / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _load_run_scenario(args) -> tuple[Scenario, dict, int]:
    path = Path(args.config) if args.config else _bundled_path(args.scenario)
    scenario, raw = load_scenario(path)
    seed = args.seed if args.seed is not None else raw.get("seed")
    if seed is None:
        raise ContractError("a seed is required (flag --seed or config file)")
    overrides = {}
    if args.c_nu is not None:
        overrides["operating_cost"] = args.c_nu
    if args.pd is not None:
        overrides["p_d"] = args.pd
    if args.tau_max is not None:
        overrides["tau_max"] = args.tau_max
    scenario = scenario.with_overrides(**overrides)
    cfg = {"scenario": raw, "overrides": overrides, "seed": int(seed)}
    return scenario, cfg, int(seed)


def _load_params(path: str):
    spec = json.loads(Path(path).read_text())
    return params_from_dict(spec)


def _train_params(scenario, args, seed):
    layout = ParamLayout(family=PolicyFamily(args.family),
                         n_targets=scenario.n_targets,
                         state_dim=scenario.models[0].state_dim,
                         share_other=args.share_other,
                         tie_priors=args.tie_priors,
                         a=scenario.a)
    schedule = SpsaSchedule(n_iterations=args.iterations,
                            n_restarts=args.restarts,
                            rollouts_per_eval=args.rollouts_per_eval,
                            epsilon=args.epsilon)
    result = spsa_optimize(scenario, layout, None, schedule,
                           child_seed(seed, "cli.train"))
    return result, layout, schedule


def cmd_optimize(args) -> int:
    scenario, cfg, seed = _load_run_scenario(args)
    cfg["family"] = args.family
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    result, layout, schedule = _train_params(scenario, args, seed)
    h = config_hash(cfg)
    phi_cols = [f"phi_{i}" for i in range(layout.n_params)]
    write_csv(out / "spsa_trace.csv",
              ["restart", "iteration", "cost"] + phi_cols,
              [[t.restart, t.iteration, t.cost] + list(t.phi)
               for t in result.trace],
              h, "cost=nats+epochs*c_nu, phi=unconstrained")
    (out / "best_params.json").write_text(
        json.dumps(params_to_dict(result.best_params, layout), indent=2,
                   sort_keys=True) + "\n")
    write_manifest(out, "optimize", cfg, seed,
                   ["spsa_trace.csv", "best_params.json"])
    print(f"best smoothed cost {result.best_cost:.6g} "
          f"(restart {result.best_restart}, iteration {result.best_iteration})")
    return 0


def cmd_flyby(args) -> int:
    scenario, cfg, seed = _load_run_scenario(args)
    pd_grid = [float(x) for x in args.pd_grid.split(",")]
    cnu_grid = [float(x) for x in args.cnu_grid.split(",")]
    cfg["pd_grid"], cfg["cnu_grid"] = pd_grid, cnu_grid
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.params:
        params, _ = _load_params(args.params)
    else:
        result, _, _ = _train_params(scenario, args, seed)
        params = result.best_params
    h = config_hash(cfg)
    rows = []
    eval_seed = child_seed(seed, "cli.flyby.eval")
    for p_d in pd_grid:
        for c_nu in cnu_grid:
            variant = scenario.with_overrides(operating_cost=c_nu, p_d=p_d)
            costs = []
            taus = []
            for b in range(args.rollouts):
                res = rollout(variant, params, child_seed(eval_seed, "pair", b))
                costs.append(res.sample_cost)
                taus.append(res.tau)
            rows.append([p_d, c_nu, float(np.mean(costs)),
                         float(np.std(costs) / np.sqrt(len(costs))),
                         float(np.mean(taus))])
    write_csv(out / "figure4_grid.csv",
              ["p_d", "c_nu", "mean_cost", "stderr_cost", "mean_tau"],
              rows, h, "cost=nats+epochs*c_nu, tau=epochs")
    write_manifest(out, "flyby", cfg, seed, ["figure4_grid.csv"])
    return 0


def cmd_periodic_sweep(args) -> int:
    scenario, cfg, seed = _load_run_scenario(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    k_max = args.kmax or scenario.tau_max
    cfg["kmax"] = k_max
    h = config_hash(cfg)
    eval_seed = child_seed(seed, "cli.periodic.eval")
    curve = periodic_cost_curve(scenario, eval_seed, args.rollouts, k_max)
    rows = [[k + 1, float(curve[:, k].mean()),
             float(curve[:, k].std() / np.sqrt(curve.shape[0]))]
            for k in range(k_max)]
    files = ["periodic_costs.csv"]
    write_csv(out / "periodic_costs.csv", ["k_stop", "mean_cost", "stderr"],
              rows, h, "cost=nats+epochs*c_nu")
    if args.params:
        params, _ = _load_params(args.params)
        policy_cost = evaluate_cost(scenario, params, eval_seed,
                                    args.rollouts)
        best_k = int(np.argmin(curve.mean(axis=0))) + 1
        write_csv(out / "envelope.csv",
                  ["policy_cost", "best_periodic_cost", "best_k_stop"],
                  [[policy_cost, float(curve.mean(axis=0).min()), best_k]],
                  h, "cost=nats+epochs*c_nu")
        files.append("envelope.csv")
    write_manifest(out, "periodic-sweep", cfg, seed, files)
    return 0


def cmd_persistent(args) -> int:
    scenario, cfg, seed = _load_run_scenario(args)
    cfg["cycles"] = args.cycles
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.params:
        params, _ = _load_params(args.params)
    else:
        result, _, _ = _train_params(scenario, args, seed)
        params = result.best_params
    h = config_hash(cfg)
    trace = run_macro_cycles(scenario, params, args.cycles,
                             child_seed(seed, "cli.persistent"))
    write_csv(out / "logdet_trace.csv",
              ["cycle", "epoch", "target", "log_det_P", "log_det_Pbar",
               "detected", "action"],
              [[r.cycle, r.epoch, r.target, r.log_det_posterior,
                r.log_det_prior, r.detected, r.action]
               for r in trace.records],
              h, "log_det=nats, action: 1=stop 2=continue")
    write_csv(out / "stop_times.csv", ["cycle", "tau", "priority_target"],
              [[c, t, a] for c, (t, a) in
               enumerate(zip(trace.stop_times, trace.priority_targets))],
              h, "tau=epochs")
    write_manifest(out, "persistent", cfg, seed,
                   ["logdet_trace.csv", "stop_times.csv"])
    return 0


def cmd_validate_linearization(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.seed is None:
        raise ContractError("a seed is required")
    cfg = {"command": "validate-linearization", "seeds": args.seeds,
           "seed": args.seed}
    h = config_hash(cfg)
    report = validate_linearization(n_seeds=args.seeds, seed=args.seed)
    files = []
    d_rows = [[label] + [report.d_values[i, j] for j in range(len(report.ks))]
              for i, label in enumerate(report.state_labels)]
    write_csv(out / "table_d.csv",
              ["state"] + [f"k_{k}" for k in report.ks], d_rows, h,
              "D=dimensionless relative Jacobian drift")
    files.append("table_d.csv")
    for g in report.gammas:
        tag = str(g).replace(".", "")
        rows = [[label] + [report.e_values[g][i, j]
                           for j in range(len(report.ks))]
                for i, label in enumerate(report.state_labels)]
        name = f"table_e_gamma{tag}.csv"
        write_csv(out / name, ["state"] + [f"k_{k}" for k in report.ks],
                  rows, h, f"E=second/first order ratio, gamma={g}, "
                  f"mean over {report.n_seeds} tracks")
        files.append(name)
    write_csv(out / "linearity_flags.csv",
              ["metric", "state", "k", "gamma", "value"],
              [[m, s, k, "" if g is None else g, v]
               for (m, s, k, g, v) in report.flags],
              h, "entries exceeding bounds D<=0.06 E<=0.02")
    files.append("linearity_flags.csv")
    write_manifest(out, "validate-linearization", cfg, args.seed, files)
    return 0


def cmd_dp_threshold(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.seed is None:
        raise ContractError("a seed is required")
    cfg = {"command": "dp-threshold", "f": args.f, "q": args.q, "r": args.r,
           "p_d": args.pd if args.pd is not None else 0.75,
           "c_nu": args.c_nu if args.c_nu is not None else 0.8,
           "grid": args.grid, "seed": args.seed}
    h = config_hash(cfg)
    model = make_scalar_model(f=args.f, q=args.q, r=args.r, p_d=cfg["p_d"],
                              c_nu=cfg["c_nu"], n_a=args.grid,
                              n_other=args.grid)
    qtable = value_iterate(model)
    violations = check_monotone_policy(qtable)
    threshold = extract_threshold(qtable)
    grid_a, grid_o = qtable.grids
    rows = []
    for i in range(len(grid_a)):
        for j in range(len(grid_o)):
            rows.append([grid_a[i], grid_o[j], qtable.value[i, j],
                         qtable.q_continue[i, j], int(qtable.action[i, j])])
    write_csv(out / "qtable.csv",
              ["P_a", "P_other", "V", "Q_continue", "action"], rows, h,
              "P=squared state units, V/Q=nats, action: 1=stop 2=continue")
    write_csv(out / "threshold.csv", ["P_other", "g"],
              [[grid_o[j], threshold[j]] for j in range(len(grid_o))], h,
              "stop below g, continue at or above")
    write_manifest(out, "dp-threshold", cfg, args.seed,
                   ["qtable.csv", "threshold.csv"])
    print(f"value iteration: {qtable.n_iterations} iterations, residual "
          f"{qtable.residual:.3e}, monotonicity violations {violations}")
    return 0 if violations == 0 else 3


def _theorem2_suite(n_samples: int, seed: int) -> dict:
    gen = stream(seed, "verify.theorem2")
    base_f, base_g, base_q, _ = None, None, None, None
    flyby = build_flyby_scenario()
    gmti_model = flyby.models[0]
    violations = 0
    worst = 0.0
    for i in range(n_samples):
        m = 4
        if i % 10 == 0:
            f = gmti_model.F
            q = gmti_model.Q + 1e-8 * np.eye(4)
        else:
            f = random_transition(gen, m, gen.uniform(0.5, 1.5))
            q = random_pd(gen, m, gen.uniform(0.3, 3.0))
        model = TargetModel(F=f, G=np.eye(m), H=gen.normal(size=(3, m)),
                            Q=q, r_base=random_pd(gen, 3, 1.0, jitter=1e-3),
                            p_d=1.0, delta=1.0)
        p1, p2 = ordered_pair(gen, m, gen.uniform(0.5, 2.0))
        for ratio_fn in (det_ratio_lyapunov,
                         lambda p, mo: det_ratio_riccati(p, mo, 1.0)):
            r1, r2 = ratio_fn(p1, model), ratio_fn(p2, model)
            slack = r1 - r2 - 1e-9 * max(abs(r1), abs(r2))
            if slack > 0.0:
                violations += 1
                worst = max(worst, slack)
    return {"samples": n_samples, "violations": violations, "worst": worst}


def _operator_monotonicity_suite(n_samples: int, seed: int) -> dict:
    gen = stream(seed, "verify.operators")
    flyby = build_flyby_scenario()
    model = flyby.models[0]
    violations = 0
    for _ in range(n_samples):
        p1, p2 = ordered_pair(gen, 4, gen.uniform(0.5, 2.0))
        tol = 1e-9 * float(np.trace(p1))
        if not loewner_geq(lyapunov_update(p1, model),
                           lyapunov_update(p2, model), tol):
            violations += 1
        if not loewner_geq(riccati_update(p1, True, model, 0.6),
                           riccati_update(p2, True, model, 0.6), tol):
            violations += 1
    return {"samples": n_samples, "violations": violations}


def _policy_suite(n_samples: int, seed: int) -> dict:
    gen = stream(seed, "verify.policy")
    out = {}
    for family in PolicyFamily:
        layout = ParamLayout(family, n_targets=2, state_dim=4)
        params = layout.build(gen.uniform(-1.0, 1.0, layout.n_params))
        report = verify_monotone(params, MonotoneSamplerConfig(),
                                 n_samples, seed=child_seed(seed, family.value))
        out[family.value] = len(report.violations)
    return out


def cmd_verify_properties(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.seed is None:
        raise ContractError("a seed is required")
    cfg = {"command": "verify-properties", "samples": args.samples,
           "seed": args.seed}
    report = {
        "det_ratio_monotone": _theorem2_suite(args.samples, args.seed),
        "operator_monotone": _operator_monotonicity_suite(
            args.samples, child_seed(args.seed, "operators")),
        "policy_monotone_violations": _policy_suite(
            args.samples, child_seed(args.seed, "policy")),
    }
    (out / "properties_report.json").write_text(
        json.dumps(report, indent=2, sort_keys=True) + "\n")
    write_manifest(out, "verify-properties", cfg, args.seed,
                   ["properties_report.json"])
    failed = (report["det_ratio_monotone"]["violations"]
              + report["operator_monotone"]["violations"]
              + sum(report["policy_monotone_violations"].values()))
    print(json.dumps(report, indent=2, sort_keys=True))
    return 0 if failed == 0 else 3


def _add_scenario_args(p: argparse.ArgumentParser, scenario_default: str):
    p.add_argument("--config", help="scenario JSON path (default: bundled)")
    p.add_argument("--scenario", default=scenario_default,
                   choices=sorted(BUNDLED),
                   help="bundled scenario when --config is not given")
    p.add_argument("--seed", type=int, help="run seed (overrides config)")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--c-nu", dest="c_nu", type=float,
                   help="override operating cost")
    p.add_argument("--pd", type=float, help="override detection probability")
    p.add_argument("--tau-max", dest="tau_max", type=int,
                   help="override stopping horizon")


def _add_train_args(p: argparse.ArgumentParser):
    p.add_argument("--family", default="quadform",
                   choices=[f.value for f in PolicyFamily])
    p.add_argument("--iterations", type=int, default=200)
    p.add_argument("--restarts", type=int, default=4)
    p.add_argument("--rollouts-per-eval", type=int, default=16)
    p.add_argument("--epsilon", type=float, default=0.25)
    p.add_argument("--share-other", action="store_true")
    p.add_argument("--tie-priors", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="covstop",
        description="Covariance-driven sequential stopping experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("flyby", help="sample-path cost over a (p_d, c_nu) grid")
    _add_scenario_args(p, "flyby")
    _add_train_args(p)
    p.add_argument("--params", help="trained policy params JSON")
    p.add_argument("--pd-grid", default="0.6,0.75,0.9")
    p.add_argument("--cnu-grid", default="0.2,0.4,0.8,1.6")
    p.add_argument("--rollouts", type=int, default=500)
    p.set_defaults(func=cmd_flyby)

    p = sub.add_parser("persistent", help="macro/micro log-determinant traces")
    _add_scenario_args(p, "persistent")
    _add_train_args(p)
    p.add_argument("--params", help="trained policy params JSON")
    p.add_argument("--cycles", type=int, default=12)
    p.set_defaults(func=cmd_persistent)

    p = sub.add_parser("optimize", help="SPSA policy-parameter search")
    _add_scenario_args(p, "flyby")
    _add_train_args(p)
    p.set_defaults(func=cmd_optimize)

    p = sub.add_parser("periodic-sweep",
                       help="deterministic stopping-time cost sweep")
    _add_scenario_args(p, "flyby")
    p.add_argument("--kmax", type=int)
    p.add_argument("--rollouts", type=int, default=500)
    p.add_argument("--params", help="compare against trained params JSON")
    p.set_defaults(func=cmd_periodic_sweep)

    p = sub.add_parser("validate-linearization",
                       help="Jacobian drift and Taylor-ratio tables")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seeds", type=int, default=100,
                   help="true-track realizations per table cell")
    p.set_defaults(func=cmd_validate_linearization)

    p = sub.add_parser("dp-threshold",
                       help="value-iteration oracle and threshold curve")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--grid", type=int, default=128)
    p.add_argument("--f", type=float, default=1.0)
    p.add_argument("--q", type=float, default=1.0)
    p.add_argument("--r", type=float, default=1.0)
    p.add_argument("--pd", type=float)
    p.add_argument("--c-nu", dest="c_nu", type=float)
    p.set_defaults(func=cmd_dp_threshold)

    p = sub.add_parser("verify-properties",
                       help="sampled monotonicity property suites")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--samples", type=int, default=1000)
    p.set_defaults(func=cmd_verify_properties)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ContractError as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
