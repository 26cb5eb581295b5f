"""Batch command-line front end.

Verbs: gen-teacher, train, eval, sweep, export-scatter, check-grad.
Every command is driven by one config file (all fields defaulted) and
the single global seed; reruns in single-thread mode are byte-identical.
Delimited report outputs get a rendered figure written alongside.

Exit codes: 0 success, 1 config/contract error, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import (
    discretize,
    figures,
    gradcheck,
    metrics,
    mixture,
    network,
    optim,
    rngs,
    solvers,
    textio,
    training,
)
from .config import HEURISTIC_STRATEGIES, LEARNED_STRATEGIES, STRATEGIES, ExperimentConfig
from .errors import ConfigError, ContractError, NumericalError, TrainingError

END_TO_END_TOL = 1e-4
PRIMITIVE_TOL = 1e-6


# -- artifact paths -----------------------------------------------------


def _dataset_path(cfg) -> Path:
    return Path(cfg.data["paths"]["dataset"])


def _checkpoint_path(cfg, strategy: str, nfe: int) -> Path:
    return Path(cfg.data["paths"]["checkpoints"]) / f"{strategy}-nfe{nfe}.json"


def _trace_path(cfg, strategy: str, nfe: int) -> Path:
    return Path(cfg.data["paths"]["checkpoints"]) / f"{strategy}-nfe{nfe}-trace.csv"


def _report_path(cfg, strategy: str, nfe: int) -> Path:
    return Path(cfg.data["paths"]["reports"]) / f"report-{strategy}-nfe{nfe}.json"


def _scatter_path(cfg, strategy: str, nfe: int) -> Path:
    return Path(cfg.data["paths"]["reports"]) / f"scatter-{strategy}-nfe{nfe}.csv"


def _sweep_path(cfg) -> Path:
    return Path(cfg.data["paths"]["reports"]) / "sweep.csv"


def _ensure_dir(path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)


# -- dataset ------------------------------------------------------------


def _write_dataset(cfg, records) -> Path:
    path = _dataset_path(cfg)
    _ensure_dir(path)
    header = {
        "kind": "teacher-dataset",
        "oracle_hash": cfg.oracle_hash(),
        "count": len(records),
        "teacher_nfe": int(cfg.data["solver"]["teacher_nfe"]),
        "prior_mode": cfg.data["teacher"]["prior_mode"],
    }
    lines = [textio.canonical_json(header)]
    lines.extend(textio.canonical_json(r.to_dict()) for r in records)
    textio.write_text(path, "\n".join(lines))
    return path


def _load_dataset(cfg):
    path = _dataset_path(cfg)
    if not path.exists():
        raise ConfigError(f"dataset {path} not found; run gen-teacher first")
    with open(path) as fh:
        lines = [ln for ln in fh.read().splitlines() if ln]
    header = json.loads(lines[0])
    if header.get("kind") != "teacher-dataset":
        raise ContractError(f"{path} is not a teacher dataset")
    if header["oracle_hash"] != cfg.oracle_hash():
        raise ContractError(
            f"dataset {path} was generated under a different oracle config "
            f"(hash {header['oracle_hash']} != {cfg.oracle_hash()})"
        )
    records = [training.TeacherRecord.from_dict(json.loads(ln)) for ln in lines[1:]]
    if len(records) != int(header["count"]):
        raise ContractError(f"dataset {path} holds {len(records)} records, header says {header['count']}")
    return header, records


def _dataset_arrays(cfg, gmm, schedule, records):
    return training.records_to_arrays(
        records, schedule, cfg.data["teacher"]["prior_mode"], gmm
    )


# -- checkpoints --------------------------------------------------------


def _write_checkpoint(path: Path, payload: dict) -> None:
    _ensure_dir(path)
    textio.write_text(path, textio.canonical_json(payload))


def _load_checkpoint(cfg, strategy: str, nfe: int) -> dict:
    path = _checkpoint_path(cfg, strategy, nfe)
    if not path.exists():
        raise ConfigError(f"checkpoint {path} not found; run train first")
    with open(path) as fh:
        ck = json.load(fh)
    if ck.get("strategy") != strategy or int(ck.get("nfe", -1)) != nfe:
        raise ContractError(f"checkpoint {path} does not match strategy={strategy} nfe={nfe}")
    if ck.get("oracle_hash") != cfg.oracle_hash():
        raise ContractError(f"checkpoint {path} was trained under a different oracle config")
    return ck


def _write_trace(path: Path, rows, header: str, append: bool) -> None:
    _ensure_dir(path)
    lines = [] if append else [header]
    lines.extend(textio.format_row(r) for r in rows)
    mode = "a" if append else "w"
    with open(path, mode, newline="\n") as fh:
        for ln in lines:
            fh.write(ln + "\n")


# -- strategy resolution ------------------------------------------------


def _resolve_strategy(cfg, gmm, schedule, strategy: str, nfe: int, records):
    """The object evaluate_strategy consumes for a named strategy."""
    if strategy in HEURISTIC_STRATEGIES:
        rho = float(cfg.data["strategy"]["polynomial_rho"])
        return discretize.heuristic(strategy, schedule, nfe, rho=rho)
    ck = _load_checkpoint(cfg, strategy, nfe)
    if strategy == "global":
        return solvers.GeneralDiscretization.from_dict(ck["xi"])
    if strategy == "instance":
        return network.PhiNetwork.from_dict(ck["net_averaged"])
    # overfit: per-record raw heads, realigned to the dataset order
    seed_to_row = {int(s): i for i, s in enumerate(ck["seeds"])}
    try:
        order = [seed_to_row[r.seed] for r in records]
    except KeyError as exc:
        raise ContractError(f"overfit checkpoint is missing record seed {exc}") from exc
    raw = {
        name: np.asarray(arr, dtype=float)[order]
        for name, arr in ck["raw"].items()
    }
    return discretize.OverfitFit(
        raw=raw,
        bounds=discretize.Bounds(**ck["bounds"]),
        schedule=schedule,
        n_steps=int(ck["n_steps"]),
        initial_losses=np.asarray(ck["initial_losses"], dtype=float)[order],
        final_losses=np.asarray(ck["final_losses"], dtype=float)[order],
        traces=[],
    )


def _evaluate_cell(cfg, gmm, schedule, strategy: str, nfe: int, records, starts, targets):
    obj = _resolve_strategy(cfg, gmm, schedule, strategy, nfe, records)
    result = training.evaluate_strategy(
        cfg.solver_spec(), gmm, schedule, starts, targets, obj, bounds=cfg.bounds()
    )
    blk = cfg.data["metrics"]
    return metrics.build_report(
        strategy,
        nfe,
        starts,
        result.endpoints,
        targets,
        reference_cloud=targets,
        grid_cfg=cfg.grid(),
        n_projections=int(blk["n_projections"]),
        seed=cfg.seed,
    )


# -- commands -----------------------------------------------------------


def cmd_gen_teacher(cfg, args) -> int:
    path = _dataset_path(cfg)
    if path.exists() and not args.force:
        raise ConfigError(f"dataset {path} exists; pass --force to overwrite")
    gmm = mixture.build_tree_mixture(cfg.tree_config())
    schedule = cfg.schedule()
    records = training.generate_teacher(
        gmm,
        schedule,
        int(cfg.data["teacher"]["count"]),
        int(cfg.data["solver"]["teacher_nfe"]),
        cfg.seed,
        cfg.data["teacher"]["prior_mode"],
    )
    _write_dataset(cfg, records)
    print(
        f"[gen-teacher] wrote {path} ({len(records)} records, "
        f"oracle hash {cfg.oracle_hash()})"
    )
    return 0


def cmd_train(cfg, args) -> int:
    strategy = args.strategy
    nfe = args.nfe
    if strategy not in LEARNED_STRATEGIES:
        raise ConfigError(f"train expects one of {LEARNED_STRATEGIES}, got {strategy!r}")
    gmm = mixture.build_tree_mixture(cfg.tree_config())
    schedule = cfg.schedule()
    _, records = _load_dataset(cfg)
    starts, targets, _conds = _dataset_arrays(cfg, gmm, schedule, records)
    spec = cfg.solver_spec()
    tcfg = cfg.train_for(strategy, nfe)
    bounds = cfg.bounds()
    switches = cfg.switches()
    ck_path = _checkpoint_path(cfg, strategy, nfe)
    trace_path = _trace_path(cfg, strategy, nfe)
    base = {
        "kind": "checkpoint",
        "strategy": strategy,
        "nfe": nfe,
        "oracle_hash": cfg.oracle_hash(),
        "bounds": bounds.to_dict(),
        "heads": switches.to_dict(),
    }

    if strategy == "global":
        if args.resume:
            raise ConfigError("resume is supported for the instance strategy only")
        fit = discretize.optimize_global(
            spec, gmm, schedule, (starts, targets), nfe, tcfg,
            bounds=bounds, switches=switches,
        )
        ck = dict(
            base,
            raw={k: v.tolist() for k, v in fit.raw.items()},
            xi=fit.xi.to_dict(),
            initial_loss=fit.initial_loss,
            final_loss=fit.final_loss,
            state=fit.state.to_dict(),
        )
        _write_checkpoint(ck_path, ck)
        _write_trace(trace_path, fit.trace, "iteration,lr,batch_loss,smoothed_loss", False)
        figures.trace_figure(fit.trace, trace_path.with_suffix(".png"), f"global nfe={nfe}")
        print(
            f"[train] global nfe={nfe}: loss "
            f"{textio.format_number(fit.initial_loss)} -> {textio.format_number(fit.final_loss)}; "
            f"wrote {ck_path}"
        )
        return 0

    if strategy == "overfit":
        if args.resume:
            raise ConfigError("resume is supported for the instance strategy only")
        fit = discretize.optimize_overfit(
            spec, gmm, schedule, (starts, targets), nfe, tcfg,
            bounds=bounds, switches=switches,
            chunk_size=int(cfg.data["strategy"]["overfit_chunk"]),
        )
        xi_by_seed = {
            str(records[i].seed): fit.xi_for(i).to_dict() for i in range(len(records))
        }
        ck = dict(
            base,
            seeds=[r.seed for r in records],
            raw={k: v.tolist() for k, v in fit.raw.items()},
            n_steps=nfe,
            initial_losses=fit.initial_losses.tolist(),
            final_losses=fit.final_losses.tolist(),
            xi_by_seed=xi_by_seed,
        )
        _write_checkpoint(ck_path, ck)
        rows = [
            (chunk, *row) for chunk, trace in enumerate(fit.traces) for row in trace
        ]
        _write_trace(
            trace_path, rows, "chunk,iteration,lr,batch_loss,smoothed_loss", False
        )
        figures.trace_figure(
            fit.traces[0], trace_path.with_suffix(".png"), f"overfit nfe={nfe} (chunk 0)"
        )
        print(
            f"[train] overfit nfe={nfe}: mean loss "
            f"{textio.format_number(fit.mean_initial_loss)} -> "
            f"{textio.format_number(fit.mean_final_loss)}; wrote {ck_path}"
        )
        return 0

    # instance: the head network
    sigma_T = cfg.schedule().sigma_T
    start_state = None
    if args.resume:
        ck_old = _load_checkpoint(cfg, strategy, nfe)
        net = network.PhiNetwork.from_dict(ck_old["net"])
        start_state = optim.LoopState.from_dict(ck_old["state"])
        if start_state.iteration >= tcfg.iterations:
            raise ConfigError(
                f"checkpoint already at iteration {start_state.iteration}; "
                "raise train.iterations to resume"
            )
        if not trace_path.exists():
            raise ConfigError(f"trace {trace_path} missing; cannot resume its curve")
    else:
        net = network.init(
            rngs.derive_seed(cfg.seed, f"net:{nfe}"),
            nfe,
            hidden=int(cfg.data["strategy"]["hidden"]),
            input_scale=1.0 / sigma_T,
        )
    try:
        result = training.train_instance(
            spec, gmm, schedule, (starts, targets), net, tcfg,
            bounds=bounds, switches=switches, start_state=start_state,
        )
    except TrainingError as exc:
        if exc.checkpoint is not None:
            ck = dict(base, diverged=True, state=exc.checkpoint.to_dict(), net=net.to_dict())
            _write_checkpoint(ck_path, ck)
            print(f"[train] diverged; last good state saved to {ck_path}", file=sys.stderr)
        raise
    ck = dict(
        base,
        net=result.net.to_dict(),
        net_averaged=result.net_averaged.to_dict(),
        state=result.state.to_dict(),
    )
    _write_checkpoint(ck_path, ck)
    _write_trace(
        trace_path,
        result.trace,
        "iteration,lr,batch_loss,smoothed_loss",
        append=args.resume,
    )
    with open(trace_path) as fh:
        all_rows = [
            tuple(float(v) for v in ln.split(","))
            for ln in fh.read().splitlines()[1:]
            if ln
        ]
    figures.trace_figure(all_rows, trace_path.with_suffix(".png"), f"instance nfe={nfe}")
    last = result.trace[-1]
    print(
        f"[train] instance nfe={nfe}: iterations {last[0] + 1}, smoothed loss "
        f"{textio.format_number(last[3])}; wrote {ck_path}"
    )
    return 0


def cmd_eval(cfg, args) -> int:
    strategy = args.strategy
    nfe = args.nfe
    if strategy not in STRATEGIES:
        raise ConfigError(f"unknown strategy {strategy!r}; expected one of {STRATEGIES}")
    gmm = mixture.build_tree_mixture(cfg.tree_config())
    schedule = cfg.schedule()
    _, records = _load_dataset(cfg)
    starts, targets, _conds = _dataset_arrays(cfg, gmm, schedule, records)
    report = _evaluate_cell(cfg, gmm, schedule, strategy, nfe, records, starts, targets)
    path = _report_path(cfg, strategy, nfe)
    _ensure_dir(path)
    textio.write_text(path, textio.canonical_json(report.to_dict()))
    print(
        f"[eval] {strategy} nfe={nfe}: mse {textio.format_number(report.mean_mse)} "
        f"kl {textio.format_number(report.kl)} "
        f"w2 {textio.format_number(report.wasserstein)}; wrote {path}"
    )
    return 0


def cmd_export_scatter(cfg, args) -> int:
    strategy = args.strategy
    nfe = args.nfe
    if strategy not in STRATEGIES:
        raise ConfigError(f"unknown strategy {strategy!r}; expected one of {STRATEGIES}")
    gmm = mixture.build_tree_mixture(cfg.tree_config())
    schedule = cfg.schedule()
    _, records = _load_dataset(cfg)
    starts, targets, _conds = _dataset_arrays(cfg, gmm, schedule, records)
    report = _evaluate_cell(cfg, gmm, schedule, strategy, nfe, records, starts, targets)
    path = _scatter_path(cfg, strategy, nfe)
    _ensure_dir(path)
    metrics.export_scatter(report, path)
    rows = [(x0, x1, err) for (x0, x1), err in report.per_sample_errors]
    figures.scatter_figure(
        rows, path.with_suffix(".png"), f"{strategy} nfe={nfe} endpoint error"
    )
    print(f"[export-scatter] wrote {path} and {path.with_suffix('.png')} ({len(rows)} rows)")
    return 0


def _parse_nfe_list(text: str) -> list[int]:
    text = text.strip()
    if ".." in text:
        lo, hi = text.split("..", 1)
        out = list(range(int(lo), int(hi) + 1))
    else:
        out = [int(part) for part in text.split(",") if part.strip()]
    if not out or any(n < 1 for n in out):
        raise ConfigError(f"bad nfe list {text!r}")
    return out


def cmd_sweep(cfg, args) -> int:
    gmm = mixture.build_tree_mixture(cfg.tree_config())
    schedule = cfg.schedule()
    _, records = _load_dataset(cfg)
    starts, targets, _conds = _dataset_arrays(cfg, gmm, schedule, records)
    nfes = (
        _parse_nfe_list(args.nfe_list)
        if args.nfe_list
        else [int(n) for n in cfg.data["solver"]["student_steps"]]
    )
    strategies = list(cfg.data["strategy"]["strategies"])
    cells = [(nfe, strat) for nfe in nfes for strat in strategies]

    def run_cell(cell):
        nfe, strat = cell
        try:
            report = _evaluate_cell(cfg, gmm, schedule, strat, nfe, records, starts, targets)
        except ConfigError as exc:
            return cell, None, str(exc)
        return cell, report, None

    if args.jobs > 1:
        with ThreadPoolExecutor(max_workers=args.jobs) as pool:
            outcomes = list(pool.map(run_cell, cells))
    else:
        outcomes = [run_cell(c) for c in cells]

    rows = []
    skipped = []
    for (nfe, strat), report, err in outcomes:  # fixed-order reduction
        if report is None:
            print(f"warning: skipping nfe={nfe} {strat}: {err}", file=sys.stderr)
            skipped.append((nfe, strat))
            continue
        rows.append(
            {
                "nfe": nfe,
                "strategy": strat,
                "mse": report.mean_mse,
                "kl": report.kl,
                "wasserstein": report.wasserstein,
            }
        )
    path = _sweep_path(cfg)
    _ensure_dir(path)
    lines = ["nfe,strategy,mse,kl,wasserstein"]
    for r in rows:
        lines.append(
            textio.format_row((r["nfe"], r["strategy"], r["mse"], r["kl"], r["wasserstein"]))
        )
    textio.write_text(path, "\n".join(lines))
    for ln in lines:
        print(ln)
    if rows:
        figures.sweep_figure(rows, path.with_suffix(".png"))
    print(f"[sweep] wrote {path} ({len(rows)} rows, {len(skipped)} skipped)")
    return 1 if skipped else 0


def cmd_check_grad(cfg, args) -> int:
    prim = gradcheck.check_primitives(seed=cfg.seed)
    ete = gradcheck.check_end_to_end(seed=cfg.seed)
    for res in sorted(prim, key=lambda r: -r.max_rel_err):
        status = "ok" if res.max_rel_err < PRIMITIVE_TOL else "FAIL"
        print(
            f"[check-grad] primitive {res.name}: max rel err "
            f"{textio.format_number(res.max_rel_err)} over {res.points} points [{status}]"
        )
    print(
        f"[check-grad] end-to-end: max rel err {textio.format_number(ete.max_rel_err)} "
        f"over {ete.n_weights} weights (worst {ete.worst_param}, "
        f"{ete.tape_nodes} tape nodes)"
    )
    ok = ete.max_rel_err < END_TO_END_TOL and all(
        r.max_rel_err < PRIMITIVE_TOL for r in prim
    )
    print(f"[check-grad] {'PASS' if ok else 'FAIL'}")
    return 0 if ok else 2


# -- entry point --------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="stepfit",
        description="Fit and evaluate few-step sampling discretizations on a 2-D toy task.",
    )
    parser.add_argument("-c", "--config", default=None, help="YAML config path (defaults apply)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-teacher", help="solve the teacher set and write the dataset")
    p.add_argument("--force", action="store_true", help="overwrite an existing dataset")
    p.set_defaults(func=cmd_gen_teacher)

    p = sub.add_parser("train", help="fit a learned strategy at one step count")
    p.add_argument("--strategy", required=True, choices=LEARNED_STRATEGIES)
    p.add_argument("--nfe", required=True, type=int)
    p.add_argument("--resume", action="store_true", help="continue from the checkpoint")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score one strategy at one step count")
    p.add_argument("--strategy", required=True, choices=STRATEGIES)
    p.add_argument("--nfe", required=True, type=int)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="score every (step count, strategy) cell")
    p.add_argument("--nfe-list", default=None, help="e.g. 3,4,5 or 3..10")
    p.add_argument("--jobs", type=int, default=1, help="parallel cells (results stay ordered)")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("export-scatter", help="write the per-sample error scatter")
    p.add_argument("--strategy", required=True, choices=STRATEGIES)
    p.add_argument("--nfe", required=True, type=int)
    p.set_defaults(func=cmd_export_scatter)

    p = sub.add_parser("check-grad", help="verify gradients against finite differences")
    p.set_defaults(func=cmd_check_grad)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.config:
            cfg = ExperimentConfig.from_yaml(args.config)
        else:
            cfg = ExperimentConfig.from_dict({})
        return args.func(cfg, args)
    except (ConfigError, ContractError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return 1
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
