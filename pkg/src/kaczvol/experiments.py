"""Instance generators and the benchmark/consensus harnesses.

Type I instances have a fully prescribed spectrum (sigma1, sigma2, then
delta repeated), Type II a uniformly random spectrum inside (1, kappa];
both are built as U D V^T with Gaussian-seeded orthonormal factors so the
generated singular values match the prescription to rounding.  Graph
instances are signed incidence matrices whose null space (for connected
graphs) is the constant vector, which makes solving Ax = 0 from x0 = c a
gossip-style averaging process.

The bench harness repeats each configured method over seeded trials
(trial seed = base seed XOR trial index), averages iteration counts, and
derives the RK-to-volume-sampled acceleration together with its
theory-normalized percentage.  Wall-clock columns are collected but
zeroed in serialized artifacts unless explicitly requested, so seeded
reports are byte-stable.
"""

from __future__ import annotations

import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .matrices import CsrMatrix, check_dense
from .rng import RngStream
from .solvers import METHODS, ReferenceSolution, RunRecord, SolverConfig, solve
from .spectral import SpectralProfile, convergence_rate, spectral_profile
from .volume import vs_preprocess_s2

__all__ = [
    "BenchInstance",
    "BenchReport",
    "GraphSpec",
    "MethodSummary",
    "TypeISpec",
    "TypeIISpec",
    "build_instance",
    "gen_incidence",
    "gen_type1",
    "gen_type2",
    "run_bench",
    "run_bench_spec",
    "run_consensus",
    "validate_bench_spec",
]


@dataclass
class TypeISpec:
    """Three-level spectrum: sigma1 >= sigma2 >= delta, the tail all delta."""

    m: int
    n: int
    r: int
    sigma1: float
    sigma2: float
    delta: float

    def __post_init__(self):
        if self.m < 1 or self.n < 1:
            raise ValueError("matrix dimensions must be positive")
        if not 2 <= self.r <= min(self.m, self.n):
            raise ValueError("need 2 <= r <= min(m, n)")
        if not self.sigma1 >= self.sigma2 >= self.delta > 0.0:
            raise ValueError("need sigma1 >= sigma2 >= delta > 0")


@dataclass
class TypeIISpec:
    """Uniform random spectrum in (1, kappa]: condition number <= kappa."""

    m: int
    n: int
    r: int
    kappa: float

    def __post_init__(self):
        if self.m < 1 or self.n < 1:
            raise ValueError("matrix dimensions must be positive")
        if not 1 <= self.r <= min(self.m, self.n):
            raise ValueError("need 1 <= r <= min(m, n)")
        if not self.kappa > 1.0:
            raise ValueError("need kappa > 1")


@dataclass
class GraphSpec:
    """Signed incidence instance of a line or cycle graph."""

    topology: str
    n_vertices: int

    def __post_init__(self):
        if self.topology not in ("line", "cycle"):
            raise ValueError(f"unknown topology {self.topology!r}")
        least = 2 if self.topology == "line" else 3
        if self.n_vertices < least:
            raise ValueError(f"{self.topology} graph needs at least {least} vertices")

    @property
    def n_edges(self) -> int:
        return self.n_vertices - 1 if self.topology == "line" else self.n_vertices


def _orthonormal_pair(spec_m, spec_n, r, rng: RngStream):
    """Gaussian-seeded orthonormal U (m x r) and V (n x r), one retry."""
    from .decomp import RankDeficiencyError, qr_householder

    for attempt in (0, 1):
        gu = rng.normal_matrix(spec_m, r)
        gv = rng.normal_matrix(spec_n, r)
        try:
            u, _ = qr_householder(gu)
            v, _ = qr_householder(gv)
            return u, v
        except RankDeficiencyError:
            if attempt == 1:
                raise
    raise AssertionError("unreachable")


def _planted_from_factors(a, v, r, n, rng: RngStream):
    """Plant x*, projecting onto Range(A^T) when the matrix is column-rank
    deficient so that the plant coincides with the least-norm solution."""
    x_star = rng.normal(n)
    if r < n:
        x_star = v @ (v.T @ x_star)
    b = a @ x_star
    return x_star, b


def gen_type1(spec: TypeISpec, rng: RngStream):
    """Dense instance with spectrum (sigma1, sigma2, delta, ..., delta)."""
    u, v = _orthonormal_pair(spec.m, spec.n, spec.r, rng)
    d = np.full(spec.r, spec.delta)
    d[0] = spec.sigma1
    d[1] = spec.sigma2
    a = (u * d) @ v.T
    x_star, b = _planted_from_factors(a, v, spec.r, spec.n, rng)
    return a, x_star, b


def gen_type2(spec: TypeIISpec, rng: RngStream):
    """Dense instance with singular values 1 + (kappa-1)*uniform, inside
    (1, kappa], so both rank and condition number are controlled."""
    u, v = _orthonormal_pair(spec.m, spec.n, spec.r, rng)
    uu = rng.uniform(spec.r)
    uu = np.maximum(uu, 2.0 ** -53)   # keep every value strictly above 1
    d = 1.0 + (spec.kappa - 1.0) * uu
    d = -np.sort(-d)
    a = (u * d) @ v.T
    x_star, b = _planted_from_factors(a, v, spec.r, spec.n, rng)
    return a, x_star, b


def gen_incidence(spec: GraphSpec) -> CsrMatrix:
    """Signed incidence matrix: each edge row has +1 and -1 at its endpoints."""
    n = spec.n_vertices
    m = spec.n_edges
    indptr = np.arange(0, 2 * m + 1, 2, dtype=np.int64)
    indices = np.empty(2 * m, dtype=np.int64)
    values = np.empty(2 * m)
    for e in range(n - 1):
        indices[2 * e] = e
        indices[2 * e + 1] = e + 1
        values[2 * e] = 1.0
        values[2 * e + 1] = -1.0
    if spec.topology == "cycle":
        e = n - 1
        # wrap edge (n-1, 0); columns stored in ascending order
        indices[2 * e] = 0
        indices[2 * e + 1] = n - 1
        values[2 * e] = -1.0
        values[2 * e + 1] = 1.0
    return CsrMatrix(row_ptr=indptr, col_idx=indices, values=values,
                     rows=m, cols=n)


def run_consensus(spec: GraphSpec, c, config: SolverConfig) -> RunRecord:
    """Average the vertex values c by solving Ax = 0 from x0 = c.

    The reference is the constant mean vector (the projection of c onto
    the incidence null space), so RSE measures distance to consensus;
    record.x_final carries the final vertex values.
    """
    c = np.asarray(c, dtype=np.float64).ravel()
    if c.shape[0] != spec.n_vertices:
        raise ValueError(f"value vector length {c.shape[0]} != {spec.n_vertices} vertices")
    a = gen_incidence(spec)
    b = np.zeros(a.rows)
    ref = ReferenceSolution.consensus_mean(c)
    return solve(a, b, config, ref=ref, x0=c)


# ---------------------------------------------------------------------------
# benchmark harness

class BenchInstance:
    """One linear system plus the shared machinery trials reuse: spectral
    profile (for theory columns) and sampling tables (timed once)."""

    def __init__(self, a, b, ref: ReferenceSolution, name: str = "instance"):
        self.a = a if isinstance(a, CsrMatrix) else check_dense(a)
        self.b = np.asarray(b, dtype=np.float64).ravel()
        self.ref = ref
        self.name = name
        self._profile = None
        self._pre = None
        self.preproc_seconds = 0.0

    @property
    def profile(self) -> SpectralProfile:
        if self._profile is None:
            self._profile = spectral_profile(self.a)
        return self._profile

    @property
    def pre(self):
        if self._pre is None:
            t0 = time.perf_counter()
            self._pre = vs_preprocess_s2(self.a)
            self.preproc_seconds = time.perf_counter() - t0
        return self._pre


@dataclass
class MethodSummary:
    """Aggregated trials of one configured method."""

    label: str
    trials: int
    mean_iters: float
    std_iters: float
    mean_seconds: float
    preproc_seconds: float
    all_converged: bool


@dataclass
class BenchReport:
    """Per-method averages plus the RK-normalized acceleration columns."""

    instance: str
    trials: int
    seed: int
    methods: list
    acc: float | None = None
    ptt: float | None = None
    partial: bool = False
    errors: list = None

    CSV_COLUMNS = ("method", "trials", "mean_iters", "std_iters",
                   "mean_seconds", "acc", "ptt", "preproc_seconds")

    def _acc_cell(self, label):
        if self.acc is not None and label == "RBKVS":
            return repr(float(self.acc)), repr(float(self.ptt))
        return "", ""

    def to_csv(self, include_timing: bool = False) -> str:
        lines = [",".join(self.CSV_COLUMNS)]
        for ms in self.methods:
            acc_s, ptt_s = self._acc_cell(ms.label)
            mean_sec = ms.mean_seconds if include_timing else 0.0
            pre_sec = ms.preproc_seconds if include_timing else 0.0
            lines.append(",".join([
                ms.label, str(ms.trials), repr(float(ms.mean_iters)),
                repr(float(ms.std_iters)), repr(float(mean_sec)),
                acc_s, ptt_s, repr(float(pre_sec)),
            ]))
        return "\n".join(lines) + "\n"

    def to_json(self, include_timing: bool = False) -> str:
        payload = {
            "instance": self.instance,
            "trials": self.trials,
            "seed": self.seed,
            "acc": self.acc,
            "ptt": self.ptt,
            "partial": self.partial,
            "errors": self.errors or [],
            "methods": [
                {
                    "label": ms.label,
                    "trials": ms.trials,
                    "mean_iters": ms.mean_iters,
                    "std_iters": ms.std_iters,
                    "mean_seconds": ms.mean_seconds if include_timing else 0.0,
                    "preproc_seconds": ms.preproc_seconds if include_timing else 0.0,
                    "all_converged": ms.all_converged,
                }
                for ms in self.methods
            ],
        }
        return json.dumps(payload, sort_keys=True, separators=(",", ":"))


def _unique_labels(configs):
    labels = []
    seen = {}
    for cfg in configs:
        base = cfg.method
        count = seen.get(base, 0)
        seen[base] = count + 1
        labels.append(base if count == 0 else f"{base}-{count + 1}")
    return labels


def _run_trial(instance: BenchInstance, cfg: SolverConfig, trial_seed: int) -> RunRecord:
    cfg_t = SolverConfig(**{**cfg.__dict__, "seed": trial_seed})
    pre = None
    if cfg.method in ("RBKVS", "mRBKVS") and cfg_t.s == 2:
        pre = instance.pre
    return solve(instance.a, instance.b, cfg_t, pre=pre, ref=instance.ref)


def run_bench(instance: BenchInstance, methods, trials: int, seed: int,
              jobs: int = 1) -> BenchReport:
    """Repeat every configured method over seeded trials and aggregate.

    Trial t runs with seed XOR t; aggregation reads a (method, trial)
    grid, so the thread schedule cannot change any reported number.  The
    first trial failure stops the run and flags the report as partial.
    """
    if trials < 1:
        raise ValueError("need at least 1 trial")
    methods = list(methods)
    if not methods:
        raise ValueError("need at least one method configuration")
    labels = _unique_labels(methods)
    needs_tables = any(c.method in ("RBKVS", "mRBKVS") and c.s == 2 for c in methods)
    if needs_tables:
        instance.pre   # built and timed once, ahead of the pool

    grid = [[None] * trials for _ in methods]
    errors = []
    tasks = [(mi, ti) for mi in range(len(methods)) for ti in range(trials)]
    if jobs <= 1:
        for mi, ti in tasks:
            try:
                grid[mi][ti] = _run_trial(instance, methods[mi], seed ^ ti)
            except Exception as exc:   # noqa: BLE001 - reported, not swallowed
                errors.append(f"{labels[mi]} trial {ti}: {exc}")
                break
    else:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            futures = {pool.submit(_run_trial, instance, methods[mi], seed ^ ti): (mi, ti)
                       for mi, ti in tasks}
            for fut, (mi, ti) in futures.items():
                try:
                    grid[mi][ti] = fut.result()
                except Exception as exc:   # noqa: BLE001
                    errors.append(f"{labels[mi]} trial {ti}: {exc}")
                    for other in futures:
                        other.cancel()
                    break

    summaries = []
    for mi, cfg in enumerate(methods):
        recs = [r for r in grid[mi] if r is not None]
        if not recs:
            continue
        iters = np.array([r.iterations for r in recs], dtype=np.float64)
        secs = np.array([r.wall_time for r in recs])
        std = float(iters.std(ddof=1)) if iters.shape[0] > 1 else 0.0
        pre_sec = instance.preproc_seconds if cfg.method in ("RBKVS", "mRBKVS") and cfg.s == 2 else 0.0
        summaries.append(MethodSummary(
            label=labels[mi],
            trials=len(recs),
            mean_iters=float(iters.mean()),
            std_iters=std,
            mean_seconds=float(secs.mean()),
            preproc_seconds=pre_sec,
            all_converged=all(r.converged for r in recs),
        ))

    report = BenchReport(instance=instance.name, trials=trials, seed=seed,
                         methods=summaries, partial=bool(errors),
                         errors=errors or [])
    by_label = {ms.label: ms for ms in summaries}
    if "RK" in by_label and "RBKVS" in by_label and by_label["RBKVS"].mean_iters > 0:
        acc = by_label["RK"].mean_iters / by_label["RBKVS"].mean_iters
        rho1 = convergence_rate(instance.profile, 1)
        rho2 = convergence_rate(instance.profile, 2)
        report.acc = acc
        report.ptt = acc * (rho1 / rho2) * 100.0
    return report


# ---------------------------------------------------------------------------
# JSON experiment definitions

_INSTANCE_FIELDS = {
    "type1": {"kind": str, "m": int, "n": int, "r": int, "sigma1": (int, float),
              "sigma2": (int, float), "delta": (int, float), "gen_seed": int},
    "type2": {"kind": str, "m": int, "n": int, "r": int, "kappa": (int, float),
              "gen_seed": int},
}

_METHOD_FIELDS = {
    "method": str, "s": int, "p": int, "omega": (int, float),
    "beta": (int, float), "max_iters": int, "rse_tol": (int, float),
    "history_stride": int,
}

_TOP_FIELDS = {"name": str, "instance": dict, "methods": list,
               "trials": int, "seed": int}


def validate_bench_spec(obj) -> list:
    """Every schema violation in one pass; an empty list means valid."""
    errs = []
    if not isinstance(obj, dict):
        return ["top level: expected a JSON object"]
    for key, typ in _TOP_FIELDS.items():
        if key not in obj:
            errs.append(f"missing required key {key!r}")
        elif not isinstance(obj[key], typ) or isinstance(obj[key], bool):
            errs.append(f"{key!r}: expected {typ.__name__}")
    for key in obj:
        if key not in _TOP_FIELDS:
            errs.append(f"unknown key {key!r}")
    inst = obj.get("instance")
    if isinstance(inst, dict):
        kind = inst.get("kind")
        if kind not in _INSTANCE_FIELDS:
            errs.append(f"instance.kind: expected one of {sorted(_INSTANCE_FIELDS)}, got {kind!r}")
        else:
            fields = _INSTANCE_FIELDS[kind]
            for key, typ in fields.items():
                if key not in inst:
                    errs.append(f"instance missing key {key!r}")
                elif not isinstance(inst[key], typ) or isinstance(inst[key], bool):
                    name = typ.__name__ if isinstance(typ, type) else "number"
                    errs.append(f"instance.{key}: expected {name}")
            for key in inst:
                if key not in fields:
                    errs.append(f"instance: unknown key {key!r}")
    meths = obj.get("methods")
    if isinstance(meths, list):
        if not meths:
            errs.append("methods: need at least one entry")
        for idx, mc in enumerate(meths):
            if not isinstance(mc, dict):
                errs.append(f"methods[{idx}]: expected an object")
                continue
            if "method" not in mc:
                errs.append(f"methods[{idx}]: missing key 'method'")
            elif mc["method"] not in METHODS:
                errs.append(f"methods[{idx}].method: expected one of {list(METHODS)}")
            for key, typ in _METHOD_FIELDS.items():
                if key in mc and (not isinstance(mc[key], typ) or isinstance(mc[key], bool)):
                    name = typ.__name__ if isinstance(typ, type) else "number"
                    errs.append(f"methods[{idx}].{key}: expected {name}")
            for key in mc:
                if key not in _METHOD_FIELDS:
                    errs.append(f"methods[{idx}]: unknown key {key!r}")
    if isinstance(obj.get("trials"), int) and not isinstance(obj.get("trials"), bool):
        if obj["trials"] < 1:
            errs.append("trials: must be >= 1")
    return errs


def build_instance(inst: dict) -> BenchInstance:
    """Generate the system a validated instance block describes."""
    rng = RngStream(inst["gen_seed"])
    if inst["kind"] == "type1":
        spec = TypeISpec(m=inst["m"], n=inst["n"], r=inst["r"],
                         sigma1=float(inst["sigma1"]), sigma2=float(inst["sigma2"]),
                         delta=float(inst["delta"]))
        a, x_star, b = gen_type1(spec, rng)
    else:
        spec = TypeIISpec(m=inst["m"], n=inst["n"], r=inst["r"],
                          kappa=float(inst["kappa"]))
        a, x_star, b = gen_type2(spec, rng)
    name = f"{inst['kind']}-m{inst['m']}-n{inst['n']}-r{inst['r']}"
    return BenchInstance(a, b, ReferenceSolution.planted(x_star), name=name)


def run_bench_spec(spec: dict, trials: int = None, seed: int = None,
                   jobs: int = 1) -> BenchReport:
    """Run a validated experiment definition (dict form of the JSON file)."""
    errs = validate_bench_spec(spec)
    if errs:
        raise ValueError("invalid experiment definition: " + "; ".join(errs))
    instance = build_instance(spec["instance"])
    instance.name = spec["name"]
    configs = []
    for mc in spec["methods"]:
        kwargs = {k: v for k, v in mc.items()}
        configs.append(SolverConfig(**kwargs))
    return run_bench(instance, configs,
                     trials if trials is not None else spec["trials"],
                     seed if seed is not None else spec["seed"],
                     jobs=jobs)
