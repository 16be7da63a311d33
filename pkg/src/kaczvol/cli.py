"""Command-line entry point.

Subcommands: solve (one system from files), bench (JSON-defined experiment
suites, bundled presets included), consensus (graph averaging), sample-check
(empirical vs exact pair distribution), preprocess (warm the table cache).

Conventions: stdout carries only machine-readable payloads (JSON or CSV),
every diagnostic including the resolved seed goes to stderr, unknown flags
are errors.  Exit codes: 0 success, 1 input error, 2 non-convergence.
"""

from __future__ import annotations

import argparse
import json
import sys
from importlib import resources
from pathlib import Path

import numpy as np

from . import _kernels
from .decomp import ConvergenceError, RankDeficiencyError
from .experiments import GraphSpec, run_bench_spec, run_consensus, validate_bench_spec
from .matrices import CsrMatrix, MatrixMarketError, matvec, read_matrix_market
from .rng import RngStream
from .solvers import ReferenceSolution, SolverConfig, solve
from .volume import EnumSampler, content_hash, load_tables, save_tables, vs_preprocess_s2

__all__ = ["main"]

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_NO_CONVERGENCE = 2

# smallest namespace separation so a planted solution never shares a stream
# with the solver's own draws under the same --seed
PLANT_SALT = 0x706C616E

_METHOD_ALIASES = {"rk": "RK", "rbk": "RBK", "gtrk": "GTRK",
                   "rbkvs": "RBKVS", "mrbkvs": "mRBKVS"}


class CliError(Exception):
    """Input-level failure: message to stderr, exit code 1."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError(message)


def _diag(msg: str) -> None:
    print(msg, file=sys.stderr)


def _load_matrix(path: str):
    if not Path(path).exists():
        raise CliError(f"matrix file not found: {path}")
    return read_matrix_market(path)


def _load_rhs(path: str, m: int) -> np.ndarray:
    if not Path(path).exists():
        raise CliError(f"rhs file not found: {path}")
    vals = []
    with open(path, "r", encoding="ascii", errors="replace") as fh:
        for lineno, line in enumerate(fh, start=1):
            tok = line.strip()
            if not tok or tok.startswith("%") or tok.startswith("#"):
                continue
            try:
                vals.append(float(tok))
            except ValueError:
                raise CliError(f"{path}:{lineno}: not a real number: {tok!r}")
    if len(vals) != m:
        raise CliError(f"{path}: rhs has {len(vals)} entries, matrix has {m} rows")
    return np.array(vals)


def _planted_system(a, seed: int):
    """Plant a solution in the row space (x* = A^T w, normalized) so the
    system is consistent and the plant is the method limit from x0 = 0."""
    m = a.rows if isinstance(a, CsrMatrix) else a.shape[0]
    w = RngStream(seed ^ PLANT_SALT).normal(m)
    if isinstance(a, CsrMatrix):
        x_star = np.zeros(a.cols)
        for i in range(m):
            cols, vals = a.row(i)
            x_star[cols] += w[i] * vals
    else:
        x_star = a.T @ w
    norm = float(np.sqrt(x_star @ x_star))
    if norm <= 0.0:
        raise CliError("cannot plant a solution: matrix is zero")
    x_star /= norm
    b = matvec(a, x_star)
    return x_star, b


def _method_config(args) -> SolverConfig:
    method = _METHOD_ALIASES.get(args.method.lower())
    if method is None:
        raise CliError(f"unknown method {args.method!r}; expected one of {sorted(_METHOD_ALIASES)}")
    try:
        return SolverConfig(
            method=method, s=args.s, p=args.p, omega=args.omega, beta=args.beta,
            max_iters=args.max_iters, rse_tol=args.tol, seed=args.seed,
            history_stride=args.history_stride)
    except ValueError as exc:
        raise CliError(str(exc))


def _cached_tables(a, cache_dir: str):
    key = content_hash(a)
    path = Path(cache_dir) / f"{key}.npz"
    if path.exists():
        _diag(f"tables: cache hit {path}")
        return load_tables(str(path), expect_hash=key)
    pre = vs_preprocess_s2(a)
    path.parent.mkdir(parents=True, exist_ok=True)
    save_tables(pre, str(path))
    _diag(f"tables: built and cached {path}")
    return pre


def cmd_solve(args) -> int:
    a = _load_matrix(args.matrix)
    config = _method_config(args)
    if args.planted:
        if args.rhs is not None:
            raise CliError("give either an rhs file or --planted, not both")
        x_star, b = _planted_system(a, args.seed)
        ref = ReferenceSolution.planted(x_star)
    else:
        if args.rhs is None:
            raise CliError("need an rhs file or --planted")
        m = a.rows if isinstance(a, CsrMatrix) else a.shape[0]
        b = _load_rhs(args.rhs, m)
        ref = ReferenceSolution.pseudoinverse(a, b)
    pre = None
    if args.cache_dir and config.method in ("RBKVS", "mRBKVS") and config.s == 2:
        pre = _cached_tables(a, args.cache_dir)
    _diag(f"seed: {args.seed}")
    rec = solve(a, b, config, pre=pre, ref=ref)
    print(rec.to_json(include_timing=args.timing))
    _diag(f"{rec.method}: {rec.iterations} iterations, rse {rec.final_rse:.3e}, "
          f"converged={rec.converged}")
    return EXIT_OK if rec.converged else EXIT_NO_CONVERGENCE


def _resolve_bench_config(name: str) -> dict:
    p = Path(name)
    if p.exists():
        text = p.read_text()
        label = str(p)
    else:
        stem = name[:-5] if name.endswith(".json") else name
        try:
            res = resources.files("kaczvol").joinpath(f"presets/{stem}.json")
            text = res.read_text()
        except (FileNotFoundError, ModuleNotFoundError):
            raise CliError(f"no such config file or bundled preset: {name}")
        label = f"preset {stem}"
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CliError(f"{label}: invalid JSON: {exc}")
    return obj


def cmd_bench(args) -> int:
    obj = _resolve_bench_config(args.config)
    errs = validate_bench_spec(obj)
    if errs:
        for e in errs:
            _diag(f"config error: {e}")
        return EXIT_INPUT
    seed = args.seed if args.seed is not None else obj["seed"]
    trials = args.trials if args.trials is not None else obj["trials"]
    _diag(f"seed: {seed}")
    _diag(f"running {obj['name']}: {trials} trials x {len(obj['methods'])} methods, "
          f"jobs={args.jobs}")
    report = run_bench_spec(obj, trials=trials, seed=seed, jobs=args.jobs)
    csv_text = report.to_csv(include_timing=args.timing)
    if args.out_dir:
        out = Path(args.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / f"{obj['name']}.csv").write_text(csv_text)
        (out / f"{obj['name']}.json").write_text(
            report.to_json(include_timing=args.timing) + "\n")
        _diag(f"wrote {out / (obj['name'] + '.csv')} and .json")
    sys.stdout.write(csv_text)
    if report.partial:
        for e in report.errors:
            _diag(f"trial error: {e}")
        _diag("partial results: run aborted early")
        return EXIT_INPUT
    if any(not ms.all_converged for ms in report.methods):
        _diag("some trials hit the iteration budget")
        return EXIT_NO_CONVERGENCE
    return EXIT_OK


def cmd_consensus(args) -> int:
    try:
        spec = GraphSpec(topology=args.topology, n_vertices=args.n)
    except ValueError as exc:
        raise CliError(str(exc))
    config = _method_config(args)
    c = RngStream(args.values_seed).normal(args.n)
    _diag(f"seed: {args.seed} (values seed: {args.values_seed})")
    rec = run_consensus(spec, c, config)
    payload = json.loads(rec.to_json(include_timing=args.timing))
    c_mean = float(c.mean())
    payload["c_mean"] = c_mean
    payload["max_abs_dev"] = float(np.abs(rec.x_final - c_mean).max())
    payload["topology"] = args.topology
    payload["n_vertices"] = args.n
    print(json.dumps(payload, sort_keys=True, separators=(",", ":")))
    _diag(f"{rec.method}: {rec.iterations} iterations, rse {rec.final_rse:.3e}, "
          f"max deviation {payload['max_abs_dev']:.3e}")
    return EXIT_OK if rec.converged else EXIT_NO_CONVERGENCE


def cmd_sample_check(args) -> int:
    a = _load_matrix(args.matrix)
    try:
        enum = EnumSampler(a, 2)
        pre = vs_preprocess_s2(a)
    except ValueError as exc:
        msg = str(exc)
        if "budget" in msg:
            raise CliError(f"{msg}; sample-check needs a small matrix "
                           "(enumeration of all row pairs must be feasible)")
        raise CliError(msg)
    draws = args.draws
    _diag(f"seed: {args.seed}")
    u = RngStream(args.seed).uniform(2 * draws)
    out = np.empty((draws, 2), dtype=np.int64)
    _kernels.vs_pair_batch(pre.psi, pre.zeta, pre.row_norms_sq, pre.nbr_offsets,
                           pre.nbr_cols, pre.phi, pre.alpha_nbr, pre.alpha_row,
                           pre.m, u, out)
    m = pre.m
    keys, counts = np.unique(out[:, 0] * m + out[:, 1], return_counts=True)
    emp = {int(k): int(c) for k, c in zip(keys, counts)}
    tv = 0.0
    max_dev = 0.0
    for row in range(enum.subsets.shape[0]):
        i, j = int(enum.subsets[row, 0]), int(enum.subsets[row, 1])
        p_exact = float(enum.probs[row])
        p_emp = emp.pop(i * m + j, 0) / draws
        dev = abs(p_emp - p_exact)
        tv += dev
        max_dev = max(max_dev, dev)
    if emp:
        raise CliError("sampler produced a pair outside the enumeration (internal error)")
    tv *= 0.5
    payload = {"draws": draws, "pairs": int(enum.subsets.shape[0]),
               "tv_distance": tv, "max_pair_deviation": max_dev,
               "threshold": args.threshold, "pass": bool(tv < args.threshold)}
    print(json.dumps(payload, sort_keys=True, separators=(",", ":")))
    _diag(f"tv {tv:.5f} vs threshold {args.threshold} over {draws} draws -> "
          f"{'pass' if payload['pass'] else 'FAIL'}")
    return EXIT_OK if payload["pass"] else EXIT_NO_CONVERGENCE


def cmd_preprocess(args) -> int:
    a = _load_matrix(args.matrix)
    key = content_hash(a)
    path = Path(args.cache_dir) / f"{key}.npz"
    path.parent.mkdir(parents=True, exist_ok=True)
    pre = vs_preprocess_s2(a)
    save_tables(pre, str(path))
    payload = {"matrix_hash": key, "path": str(path), "rows": pre.m,
               "op_count": pre.op_count, "gram_mults": pre.gram_mults}
    print(json.dumps(payload, sort_keys=True, separators=(",", ":")))
    _diag(f"cached tables for {pre.m} rows at {path}")
    return EXIT_OK


def _add_method_flags(p: _Parser, default_method: str) -> None:
    p.add_argument("--method", default=default_method,
                   help=f"rk | rbk | gtrk | rbkvs | mrbkvs (default {default_method})")
    p.add_argument("--s", type=int, default=2, help="volume-sampling block size (default 2)")
    p.add_argument("--p", type=int, default=2, help="partition block size for rbk (default 2)")
    p.add_argument("--omega", type=float, default=1.0, help="step size (default 1.0)")
    p.add_argument("--beta", type=float, default=0.0, help="momentum (mrbkvs, default 0.0)")
    p.add_argument("--tol", type=float, default=1e-12, help="relative squared error target")
    p.add_argument("--max-iters", type=int, default=200_000_000, help="iteration budget")
    p.add_argument("--seed", type=int, default=0, help="run seed (default 0)")
    p.add_argument("--history-stride", type=int, default=100,
                   help="record rse every this many iterations (default 100)")
    p.add_argument("--timing", action="store_true",
                   help="include wall-clock fields in the output payload")


def build_parser() -> _Parser:
    parser = _Parser(prog="kaczvol",
                     description="Randomized block Kaczmarz solvers with exact "
                                 "volume sampling.")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p_solve = sub.add_parser("solve", help="solve one system from Matrix Market input")
    p_solve.add_argument("matrix", help="Matrix Market file (.mtx)")
    p_solve.add_argument("rhs", nargs="?", default=None,
                         help="rhs file, one real per line (or use --planted)")
    p_solve.add_argument("--planted", action="store_true",
                         help="generate a consistent rhs from a planted solution")
    p_solve.add_argument("--cache-dir", default=None,
                         help="directory of preprocessing tables keyed by content hash")
    _add_method_flags(p_solve, "rbkvs")
    p_solve.set_defaults(func=cmd_solve)

    p_bench = sub.add_parser("bench", help="run a JSON-defined experiment suite")
    p_bench.add_argument("config", help="config file path or bundled preset name "
                                        "(table1_row1, table2_row1, desk_type1_m200, "
                                        "desk_type2_m200)")
    p_bench.add_argument("--out-dir", default=None, help="write CSV/JSON report files here")
    p_bench.add_argument("--trials", type=int, default=None, help="override config trial count")
    p_bench.add_argument("--seed", type=int, default=None, help="override config seed")
    p_bench.add_argument("--jobs", type=int, default=1, help="worker threads (default 1)")
    p_bench.add_argument("--timing", action="store_true",
                         help="include wall-clock columns in reports")
    p_bench.set_defaults(func=cmd_bench)

    p_cons = sub.add_parser("consensus", help="average random vertex values on a graph")
    p_cons.add_argument("--topology", choices=("line", "cycle"), required=True)
    p_cons.add_argument("--n", type=int, required=True, help="vertex count")
    p_cons.add_argument("--values-seed", type=int, default=1,
                        help="seed for the random vertex values (default 1)")
    _add_method_flags(p_cons, "mrbkvs")
    p_cons.set_defaults(func=cmd_consensus)

    p_check = sub.add_parser("sample-check",
                             help="empirical pair distribution vs exact enumeration")
    p_check.add_argument("matrix", help="Matrix Market file (.mtx)")
    p_check.add_argument("--draws", type=int, default=100_000,
                         help="number of sampled pairs (default 100000)")
    p_check.add_argument("--seed", type=int, default=0, help="sampling seed (default 0)")
    p_check.add_argument("--threshold", type=float, default=0.02,
                         help="total-variation pass threshold (default 0.02)")
    p_check.set_defaults(func=cmd_sample_check)

    p_pre = sub.add_parser("preprocess", help="build and cache sampling tables")
    p_pre.add_argument("matrix", help="Matrix Market file (.mtx)")
    p_pre.add_argument("--cache-dir", required=True,
                       help="directory to store the tables in")
    p_pre.set_defaults(func=cmd_preprocess)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except CliError as exc:
        _diag(f"error: {exc}")
        return EXIT_INPUT
    except (MatrixMarketError, RankDeficiencyError, ConvergenceError,
            ValueError, TypeError, OSError) as exc:
        _diag(f"error: {exc}")
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
