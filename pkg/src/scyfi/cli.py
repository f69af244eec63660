"""Command-line front end.

Exit codes: 0 success, 1 a check ran and failed, 2 bad input, 3 budget guard,
4 internal error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .core import ParamsError, load_params, params_from_dict
from .oracle2d import Pwl2dParams, scan_grid, stable_inventory, write_scan_csv
from .scaling import case1_scaling, embedding_scaling, order_scaling
from .search import (
    BudgetGuardError,
    SearchBudget,
    SearchContext,
    exhaustive_oracle,
    libraries_match,
    required_initializations,
    scyfi_find_all,
)
from .sweep import (
    SweepAxis,
    SweepSpec,
    analyze_training_trace,
    run_sweep,
    write_events_jsonl,
    write_rows_csv,
)
from .training import (
    GtfConfig,
    LossSpec,
    SgdConfig,
    default_trainable,
    gtf_alpha_bound,
    read_trace,
    tent_cycle_task,
    train,
    trainable_from_targets,
)

EXIT_OK, EXIT_FAILED, EXIT_INPUT, EXIT_GUARD, EXIT_INTERNAL = 0, 1, 2, 3, 4


class InputError(Exception):
    """Bad command-line input; reported with exit code 2."""


# --- helpers -----------------------------------------------------------------

def _plural(n: int, word: str) -> str:
    return f"{n} {word}" + ("" if n == 1 else "s")


def summary_line(lib) -> str:
    """E.g. ``"1 stable fixed point, 0 cycles"``, followed by the cycle breakdown."""
    fps = lib.cycles(1)
    cyc = [c for c in lib.cycles() if c.order > 1]
    st_fp = sum(c.is_stable for c in fps)
    line = f"{st_fp} stable fixed point{'' if st_fp == 1 else 's'}, {_plural(len(cyc), 'cycle')}"
    extra = []
    if len(fps) > st_fp:
        extra.append(_plural(len(fps) - st_fp, "non-stable fixed point"))
    extra += [f"{c.stability} {c.order}-cycle" for c in sorted(cyc, key=lambda c: (c.order, c.key))]
    return line + (f" ({'; '.join(extra)})" if extra else "")


def summary_table(lib, k_max: int) -> str:
    rows = ["order  stable  unstable  marginal  evaluations"]
    summ = lib.summary()
    for k in range(1, k_max + 1):
        s = summ.get(k, {"stable": 0, "unstable": 0, "marginal": 0})
        rows.append(f"{k:>5}  {s['stable']:>6}  {s['unstable']:>8}  {s['marginal']:>8}  "
                    f"{lib.evaluations.get(k, 0):>11}")
    return "\n".join(rows)


def _load_params(path) -> object:
    if path is None:
        raise InputError("--params is required")
    if not Path(path).exists():
        raise InputError(f"{path}: no such file")
    return load_params(path)


def _load_json(path) -> dict:
    if path is None:
        raise InputError("--spec is required")
    if not Path(path).exists():
        raise InputError(f"{path}: no such file")
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: invalid JSON: {exc}") from None


def _budget(args, n_active: int, k_max: int) -> SearchBudget | None:
    """Explicit budget from --nout, else None after checking the eps-derived one fits the guard."""
    if args.nout is not None:
        return SearchBudget(args.nout, args.nin, args.seed)
    need = required_initializations(max(1, n_active), k_max, args.eps)
    if need > args.max_nout:
        raise BudgetGuardError(
            f"eps={args.eps} needs {need} initializations at order {k_max}, above --max-nout {args.max_nout}")
    return None


def _out_dir(args) -> Path:
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    return out


# --- commands ----------------------------------------------------------------

def cmd_find(args) -> int:
    params = _load_params(args.params)
    ctx = SearchContext(params)
    if args.nin != 100 and args.nout is None:
        raise InputError("--nin needs --nout")
    budget = _budget(args, ctx.ix.n_active, args.kmax)
    lib = scyfi_find_all(params, args.kmax, budget, eps=args.eps, seed=args.seed, context=ctx)
    if args.out:
        out = Path(args.out)
        if out.suffix != ".jsonl":
            out.mkdir(parents=True, exist_ok=True)
            out = out / "library.jsonl"
        lib.to_jsonl(out)
    print(summary_table(lib, args.kmax))
    print(summary_line(lib))
    return EXIT_OK


def _sweep_spec_from_dict(d: dict, args) -> SweepSpec:
    if "params" in d:
        try:
            base = params_from_dict(d["params"])
        except ParamsError as exc:
            raise ParamsError(f"params.{exc}") from None
    elif "params_file" in d:
        base = _load_params(d["params_file"])
    else:
        raise InputError("spec: needs \"params\" or \"params_file\"")
    try:
        axes = tuple(SweepAxis(a["target"], float(a["lo"]), float(a["hi"]), int(a["n_steps"]))
                     for a in d["axes"])
    except KeyError as exc:
        raise InputError(f"axes: missing field {exc}") from None
    except (TypeError, ValueError) as exc:
        raise InputError(f"axes: {exc}") from None
    k_max = int(d.get("k_max", args.kmax))
    seed = int(d.get("seed", args.seed))
    n_out = d.get("n_out", args.nout)
    budget = SearchBudget(int(n_out), int(d.get("n_in", args.nin)), seed) if n_out is not None else None
    return SweepSpec(base, axes, k_max, budget, float(d.get("eps", args.eps)), seed)


def cmd_sweep(args) -> int:
    spec = _sweep_spec_from_dict(_load_json(args.spec), args)
    if spec.budget is None:
        need = required_initializations(max(1, int(spec.base_params.n_active)), spec.k_max, spec.eps)
        if need > args.max_nout:
            raise BudgetGuardError(f"eps={spec.eps} needs {need} initializations, above --max-nout")
    res = run_sweep(spec, threads=args.threads)
    out = _out_dir(args)
    write_events_jsonl(res.events, out / "events.jsonl")
    write_rows_csv(res.inventory_rows(), out / "grid.csv")
    kinds: dict = {}
    for e in res.events:
        kinds[e.kind] = kinds.get(e.kind, 0) + 1
    print(f"{len(res.libraries)} cells, {_plural(len(res.events), 'event')}"
          + (": " + ", ".join(f"{k} {v}" for k, v in sorted(kinds.items())) if kinds else ""))
    for e in res.events:
        lo, hi = e.interval
        print(f"  {e.kind:<16} order {e.order}  key {''.join(map(str, e.key))}  in [{lo:.9g}, {hi:.9g}]")
    return EXIT_OK


def _pwl2d_from_dict(d: dict) -> tuple[Pwl2dParams, np.ndarray, np.ndarray]:
    """2-D scan spec: fixed ``b_l, b_r, c, d, h1, h2``, ranges for ``a_l`` and ``a_r``, grid size ``n``."""
    try:
        fixed = {k: float(d[k]) for k in ("b_l", "b_r", "c", "d", "h1", "h2")}
        (x0, x1), (y0, y1) = d["a_l_range"], d["a_r_range"]
        n = int(d.get("n", 50))
    except KeyError as exc:
        raise InputError(f"2-D spec: missing field {exc}") from None
    except (TypeError, ValueError) as exc:
        raise InputError(f"2-D spec: {exc}") from None
    base = Pwl2dParams(a_l=float(x0), a_r=float(y0), **fixed)
    return base, np.linspace(x0, x1, n), np.linspace(y0, y1, n)


def cmd_oracle_check(args) -> int:
    """With --params: SCYFI against exhaustive enumeration. With --spec: against the 2-D closed forms."""
    if args.spec:
        base, xs, ys = _pwl2d_from_dict(_load_json(args.spec))
        cells = scan_grid(base, xs, ys)
        out = _out_dir(args)
        write_scan_csv(cells, out / "oracle_scan.csv")
        bad = 0
        for cell in cells:
            p = base.replace(a_l=cell.a_l, a_r=cell.a_r)
            lib = scyfi_find_all(p.to_plrnn(), 3, eps=args.eps, seed=args.seed)
            if tuple(sorted(c.key for c in lib.stable())) != stable_inventory(p):
                bad += 1
        frac = 1 - bad / len(cells)
        print(f"{len(cells)} cells, {bad} disagreements, agreement {frac:.4f}")
        return EXIT_OK if frac >= 0.99 else EXIT_FAILED
    params = _load_params(args.params)
    ctx = SearchContext(params)
    budget = _budget(args, ctx.ix.n_active, args.kmax)
    oracle = exhaustive_oracle(params, args.kmax)
    lib = scyfi_find_all(params, args.kmax, budget, eps=args.eps, seed=args.seed, context=ctx)
    ok = libraries_match(lib, oracle)
    print(summary_table(oracle, args.kmax))
    print(("match: " if ok else "MISMATCH: ") + summary_line(lib))
    return EXIT_OK if ok else EXIT_FAILED


def _int_list(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise InputError(f"expected comma-separated integers, got {text!r}") from None


def cmd_scaling(args) -> int:
    if args.mode == "cycle-order":
        rows = order_scaling(args.dim, args.kmax, args.systems, args.seeds, seed=args.seed)
    elif args.mode == "dimension":
        rows = case1_scaling(_int_list(args.dims), args.seeds, seed=args.seed)
    else:
        rows = embedding_scaling(_int_list(args.dims), args.systems, args.seeds, args.init_scale,
                                 seed=args.seed)
    out = _out_dir(args) / f"scaling_{args.mode}.csv"
    write_rows_csv(rows, out)
    for r in rows:
        print(", ".join(f"{k}={v}" for k, v in r.items()))
    return EXIT_OK


def _load_targets(path) -> LossSpec:
    p = Path(path)
    if not p.exists():
        raise InputError(f"{path}: no such file")
    try:
        if p.suffix == ".json":
            d = json.loads(p.read_text())
            x = d["targets"] if isinstance(d, dict) else d
        else:
            x = np.loadtxt(p, delimiter=",", ndmin=2)
        return LossSpec(np.asarray(x, dtype=float))
    except (KeyError, ValueError, json.JSONDecodeError) as exc:
        raise InputError(f"targets: {exc}") from None


def cmd_train(args) -> int:
    if args.demo:
        task = tent_cycle_task()
        params, loss, masks = task.init_params(args.seed), task.loss, task.trainable
    else:
        params = _load_params(args.params)
        if args.targets is None:
            raise InputError("--targets is required without --demo")
        loss = _load_targets(args.targets)
        if loss.targets.shape[1] != params.M:
            raise InputError(f"targets: expected {params.M} columns, got {loss.targets.shape[1]}")
        masks = (trainable_from_targets(params, args.trainable.split(";"))
                 if args.trainable else default_trainable(params))
    opt = SgdConfig(args.lr, args.epochs, args.clip)
    trace = train(params, loss, opt, GtfConfig(args.alpha), args.anneal, trainable=masks)
    out = _out_dir(args)
    trace.write(out)
    print(f"{len(trace.losses)} epochs, loss {trace.losses[0]:.6g} -> {trace.losses[-1]:.6g}"
          if trace.losses else "no epochs completed")
    if trace.stopped:
        print(trace.stopped)
    return EXIT_OK


def cmd_analyze_trace(args) -> int:
    if args.trace is None:
        raise InputError("--trace is required")
    if not (Path(args.trace) / "trace.jsonl").exists():
        raise InputError(f"{args.trace}: no trace.jsonl")
    trace = read_trace(args.trace)
    direction = None
    if args.direction:
        try:
            direction = [float(v) for v in args.direction.split(",")]
        except ValueError:
            raise InputError("--direction: expected comma-separated numbers") from None
    budget = SearchBudget(args.nout, args.nin, args.seed) if args.nout is not None else None
    an = analyze_training_trace(trace.snapshots, args.kmax, budget, eps=args.eps, seed=args.seed,
                                direction=direction, threads=args.threads)
    out = _out_dir(args)
    write_events_jsonl(an.events, out / "events.jsonl")
    write_rows_csv(an.diagram, out / "diagram.csv")
    print(f"{len(trace.snapshots)} snapshots, {_plural(len(an.events), 'event')}")
    for e in an.events:
        print(f"  epoch {e.loc[0]}->{e.loc[1]}  {e.kind:<16} order {e.order}")
    return EXIT_OK


def cmd_alpha_bound(args) -> int:
    b = gtf_alpha_bound(_load_params(args.params))
    print(json.dumps({"r": b.r, "alpha_star": b.alpha_star}))
    return EXIT_OK


# --- argument parsing --------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--params", help="parameter JSON file")
    common.add_argument("--spec", help="sweep or 2-D scan JSON file")
    common.add_argument("--out", help="output directory (or .jsonl file for find)")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--kmax", type=int, default=3)
    common.add_argument("--nout", type=int, default=None, help="outer initializations per order")
    common.add_argument("--nin", type=int, default=100, help="inner flip iterations")
    common.add_argument("--eps", type=float, default=1e-3, help="miss probability for the default budget")
    common.add_argument("--max-nout", type=int, default=10**6, help="guard on the eps-derived budget")
    common.add_argument("--alpha", type=float, default=0.0, help="teacher-forcing weight")
    common.add_argument("--threads", type=int, default=None, help="worker processes (env SCYFI_THREADS)")

    ap = argparse.ArgumentParser(prog="scyfi", description="Fixed points, cycles and bifurcations of ReLU RNNs.")
    sub = ap.add_subparsers(dest="command", required=True)
    sub.add_parser("find", parents=[common], help="find all cycles up to --kmax")
    sub.add_parser("sweep", parents=[common], help="parameter sweep with event detection")
    sub.add_parser("oracle-check", parents=[common], help="compare against exhaustive or 2-D oracles")
    sc = sub.add_parser("scaling", parents=[common], help="search cost benchmarks")
    sc.add_argument("--mode", choices=("cycle-order", "dimension", "embedding"), default="cycle-order")
    sc.add_argument("--dim", type=int, default=2)
    sc.add_argument("--dims", default="2,8,16,32,64")
    sc.add_argument("--systems", type=int, default=5)
    sc.add_argument("--seeds", type=int, default=50)
    sc.add_argument("--init-scale", type=float, default=0.2)
    tr = sub.add_parser("train", parents=[common], help="SGD training with optional teacher forcing")
    tr.add_argument("--targets", help="CSV or JSON of T x M observations")
    tr.add_argument("--demo", action="store_true", help="two-slope skew-tent task with a 2-cycle teacher")
    tr.add_argument("--lr", type=float, default=1e-2)
    tr.add_argument("--epochs", type=int, default=150)
    tr.add_argument("--clip", type=float, default=10.0)
    tr.add_argument("--anneal", choices=("none", "linear"), default="none")
    tr.add_argument("--trainable", help="semicolon-separated coordinates, e.g. 'A[0];W[0,1]'")
    at = sub.add_parser("analyze-trace", parents=[common], help="bifurcations along a training run")
    at.add_argument("--trace", help="run directory written by train")
    at.add_argument("--direction", help="comma-separated projection vector")
    sub.add_parser("alpha-bound", parents=[common], help="teacher-forcing bound for given parameters")
    return ap


COMMANDS = {
    "find": cmd_find,
    "sweep": cmd_sweep,
    "oracle-check": cmd_oracle_check,
    "scaling": cmd_scaling,
    "train": cmd_train,
    "analyze-trace": cmd_analyze_trace,
    "alpha-bound": cmd_alpha_bound,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INPUT if exc.code else EXIT_OK
    try:
        if args.kmax < 1:
            raise InputError("--kmax must be >= 1")
        if not 0.0 <= args.alpha <= 1.0:
            raise InputError("--alpha must lie in [0, 1]")
        return COMMANDS[args.command](args)
    except BudgetGuardError as exc:
        print(f"error: budget guard: {exc}", file=sys.stderr)
        return EXIT_GUARD
    except (InputError, ParamsError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except Exception as exc:  # noqa: BLE001
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
