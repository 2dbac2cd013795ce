"""Top-level log-determinant estimators for SDD matrices.

Every estimator Kelner-reduces A to the Laplacians L_tilde and L_hat, works
per connected component of each (single vertices contribute nothing), and
reports n^-1 (pld(L_tilde) - pld(L_hat)) = n^-1 ln|A| together with the
deterministic stretch sandwich built from low-stretch spanning trees.

Within a component with grounded dimension N,

    pld(L) = ln(N + 1) + log det F_L
    log det F_L = (exactly computed terms) + sum_tasks N_task * r_task

where each r_task = N_task^-1 ln det(B^-1 A) is a Monte Carlo remainder.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Tuple

from sddlogdet.config.environments import config
from sddlogdet.core.errors import ChainStalled, NotPositiveDefinite
from sddlogdet.core.sparse import SymmetricSparse, graph_of, laplacian_of
from sddlogdet.models.reports import EstimateReport, LevelDiagnostics, Method, PlanDiagnostics
from sddlogdet.services.direct_solvers import (
    DenseCholesky,
    DirectSolver,
    dense_logdet,
    estimate_condition_number,
    pencil_extremes,
    tree_factorize,
    tree_solve,
)
from sddlogdet.services.reduction import float_laplacian, kelner_reduce, laplacian_components
from sddlogdet.services.sparsifiers import build_chain, low_stretch_tree, spectral_sparsify
from sddlogdet.services.stretch import pld_bounds_from_stretch
from sddlogdet.services.trace_estimator import (
    CountingSolver,
    RemainderProblem,
    SamplePlan,
    mc_logdet_remainder,
    mc_logdet_remainder_pilot,
    pilot_work,
    plan_samples,
    required_nu,
)
from sddlogdet.telemetry.error_handler import default_error_handler

logger = logging.getLogger(__name__)

_LAPLACIANS = (("tilde", 0, 1.0), ("hat", 1, -1.0))


@dataclass
class _Task:
    """One Monte Carlo remainder ln det(B^-1 A) of grounded dimension ``dim``."""

    level: int
    dim: int
    edges: int
    kappa: float
    certification: str
    build: Callable[[float], RemainderProblem]  # nu -> problem
    exact_solver: bool
    kappa_B: Optional[Callable[[], float]] = None
    pivot_logsum: float = 0.0
    plan: Optional[SamplePlan] = None
    nu: float = 0.0


@dataclass
class _Component:
    laplacian: str
    lap_id: int
    index: int
    vertices: int
    exact: float = 0.0  # exactly computed part of log det F_L
    tasks: List[_Task] = field(default_factory=list)
    lower: float = 0.0
    upper: float = 0.0
    flags: List[str] = field(default_factory=list)
    remainder: float = 0.0
    degraded: bool = False

    @property
    def grounded_dim(self) -> int:
        return max(self.vertices - 1, 0)

    @property
    def pld(self) -> float:
        if self.vertices <= 1:
            return 0.0
        return math.log(self.vertices) + self.exact + self.remainder


def _grounded(L: SymmetricSparse) -> SymmetricSparse:
    return float_laplacian(L).F


def _components(A: SymmetricSparse) -> List[Tuple[str, int, float, List[SymmetricSparse]]]:
    pair = kelner_reduce(A)
    tilde = [sub for _, sub in laplacian_components(pair.L_tilde)]
    hat = [sub for _, sub in laplacian_components(pair.L_hat)]
    # eigenvalues of L_tilde are those of A and L_hat together
    if len(tilde) != len(hat):
        raise NotPositiveDefinite(f"matrix is singular ({len(tilde) - len(hat)} zero eigenvalues)")
    return [("tilde", 0, 1.0, tilde), ("hat", 1, -1.0, hat)]


def _tree_sandwich(L: SymmetricSparse, seed: int, stream: Tuple[int, ...]):
    G = graph_of(L)
    T, report = low_stretch_tree(G, seed, stream=stream)
    factor = tree_factorize(T)
    lower, upper = pld_bounds_from_stretch(factor.pld, report.value, L.n)
    return G, T, report, factor, lower, upper


def _tree_component(comp: _Component, L: SymmetricSparse, seed: int) -> None:
    G, T, report, factor, comp.lower, comp.upper = _tree_sandwich(L, seed, (comp.lap_id, comp.index))
    if G.m == L.n - 1:
        comp.exact = factor.logdet
        return
    F_G = _grounded(L)
    F_T = _grounded(laplacian_of(T))
    _, mu_max, method = pencil_extremes(F_G, F_T, seed=seed)
    if method == "dense":
        kappa = min(report.value, mu_max * (1.0 + 1e-9))
    else:
        kappa = min(report.value, float(config.get("estimation.kappa_inflation", 2.0)) * mu_max)
    kappa = max(kappa, 1.0)
    N = comp.grounded_dim
    comp.exact = N * math.log(kappa) + factor.logdet

    def build(nu: float, kappa: float = kappa) -> RemainderProblem:
        solver = CountingSolver(lambda b: (tree_solve(factor, b) / kappa, True))
        return RemainderProblem(A_op=F_G.matvec, B_solver=solver, n=N, kappa=kappa, nu=0.0)

    comp.tasks.append(
        _Task(level=0, dim=N, edges=G.m, kappa=kappa, certification=method, build=build, exact_solver=True)
    )


def _chain_component(
    comp: _Component, L: SymmetricSparse, seed: int, threshold: int, bounds: bool = True
) -> None:
    G = graph_of(L)
    if bounds:
        *_, comp.lower, comp.upper = _tree_sandwich(L, seed, (comp.lap_id, comp.index))
    if L.n < threshold:
        comp.exact = DenseCholesky(_grounded(L)).logdet
        return
    chain = build_chain(G, seed, dense_threshold=threshold, stream=(comp.lap_id, comp.index))
    comp.exact = chain.pivot_logsum + chain.base_factor.logdet
    for i, level in enumerate(chain.levels):
        F_A = chain.grounded(i)
        F_B = _grounded(level.B)
        exact = chain.inner_is_exact(i)

        def build(nu: float, i: int = i, F_A: SymmetricSparse = F_A, kappa: float = level.kappa_bound) -> RemainderProblem:
            return RemainderProblem(
                A_op=F_A.matvec, B_solver=chain.level_solver(i, nu), n=F_A.n, kappa=kappa, nu=nu
            )

        def kappa_B(F_B: SymmetricSparse = F_B) -> float:
            return estimate_condition_number(F_B, solver=DirectSolver(F_B).solve)

        comp.tasks.append(
            _Task(
                level=i,
                dim=F_A.n,
                edges=level.edges_A,
                kappa=level.kappa_bound,
                certification=level.sparsifier.certification,
                build=build,
                exact_solver=exact,
                kappa_B=None if exact else kappa_B,
                pivot_logsum=level.partial.pivot_logsum,
            )
        )


def _allocate(components: List[_Component], n: int, eps: float, eta: float, allowance: Optional[dict] = None) -> None:
    """Split eps and eta over the Monte Carlo tasks of each Laplacian.

    Each Laplacian may contribute n * eps / 2 to the error of ln|A| and fail
    with probability eta / 2; tasks share the error uniformly per vertex and
    the failure probability equally.
    """
    for name, _, _ in _LAPLACIANS:
        tasks = [t for c in components if c.laplacian == name for t in c.tasks if t.kappa > 1.0]
        if not tasks:
            continue
        budget = n * eps / 2.0 if allowance is None else allowance[name]
        total_dim = sum(t.dim for t in tasks)
        eps_task = budget / total_dim
        eta_task = eta / 2.0 / len(tasks)
        for task in tasks:
            task.plan = plan_samples(eps_task, eta_task, 1.0 / task.kappa, task.dim)
            if task.exact_solver:
                task.nu = 0.0
            else:
                kappa_B = task.kappa_B() if task.kappa_B is not None else task.kappa
                task.nu = required_nu(eps_task, task.kappa, kappa_B)


def _pilot_ceiling(components: List[_Component]) -> int:
    """Largest per-task sample count that keeps pilot plans under the pilot cap."""
    cap = float(config.get("estimation.pilot_cap", 4.0e9))
    per_sample = sum(pilot_work(t.plan, 1) for c in components for t in c.tasks if t.plan is not None and t.kappa > 1.0)
    return max(1, int(cap // per_sample)) if per_sample > 0 else 1


def _run(
    components: List[_Component], seed: int, threads: Optional[int], mode: str = "theorem"
) -> Tuple[int, List[LevelDiagnostics]]:
    samples = 0
    levels: List[LevelDiagnostics] = []
    ceiling = _pilot_ceiling(components) if mode == "pilot" else None
    for comp in components:
        for task in comp.tasks:
            diag = LevelDiagnostics(
                laplacian=comp.laplacian,  # type: ignore[arg-type]
                component=comp.index,
                level=task.level,
                dim=task.dim,
                edges=task.edges,
                kappa=task.kappa,
                certification=task.certification,  # type: ignore[arg-type]
                pivot_logsum=task.pivot_logsum,
            )
            if task.plan is not None and task.kappa > 1.0:
                problem = task.build(task.nu)
                stream = (comp.lap_id, comp.index, task.level)
                if mode == "pilot":
                    result = mc_logdet_remainder_pilot(
                        problem, task.plan, seed, stream=stream, threads=threads, max_samples=ceiling
                    )
                else:
                    result = mc_logdet_remainder(problem, task.plan, seed, stream=stream, threads=threads)
                plan = result.plan if result.plan is not None else task.plan
                comp.remainder += task.dim * result.value
                comp.degraded = comp.degraded or result.degraded
                samples += result.samples
                diag.remainder = task.dim * result.value
                diag.degraded = result.degraded
                diag.plan = PlanDiagnostics(
                    p=plan.p,
                    l=plan.l,
                    eps=plan.eps,
                    eta=plan.eta,
                    delta=plan.delta,
                    kappa=task.kappa,
                    nu=task.nu,
                    variance_term=plan.variance_term,
                    small_n_term=plan.small_n_term,
                    truncation_bias=plan.truncation_bias,
                    mode=plan.mode,  # type: ignore[arg-type]
                    sample_std=plan.sample_std,
                    theorem_p=plan.theorem_p,
                    theorem_l=plan.theorem_l,
                )
            levels.append(diag)
    return samples, levels


def _work(components: List[_Component]) -> float:
    return sum(t.plan.work for c in components for t in c.tasks if t.plan is not None and t.kappa > 1.0)


def _assemble(
    A: SymmetricSparse,
    components: List[_Component],
    method: Method,
    eps: Optional[float],
    eta: Optional[float],
    seed: int,
    started: float,
    samples: int = 0,
    levels: Optional[List[LevelDiagnostics]] = None,
    flags: Optional[List[str]] = None,
    degraded: bool = False,
    raw: Optional[float] = None,
) -> EstimateReport:
    n = A.n
    tilde = [c for c in components if c.lap_id == 0]
    hat = [c for c in components if c.lap_id == 1]
    lower = (sum(c.lower for c in tilde) - sum(c.upper for c in hat)) / n
    upper = (sum(c.upper for c in tilde) - sum(c.lower for c in hat)) / n
    if raw is None:
        raw = sum(c.pld for c in tilde) - sum(c.pld for c in hat)
    all_flags = list(flags or [])
    for c in components:
        all_flags.extend(c.flags)
    estimate = raw / n
    if estimate < lower or estimate > upper:
        # the sandwich is deterministic; a Monte Carlo value outside it is pulled back
        estimate = min(max(estimate, lower), upper)
        all_flags.append("clipped-to-bounds")
    if any(c.degraded for c in components):
        degraded = True
        all_flags.append("solver-tolerance")
    return EstimateReport(
        estimate=estimate,
        raw_logdet=estimate * n,
        lower=lower,
        upper=upper,
        eps=eps,
        eta=eta,
        seed=seed,
        method=method,
        n=n,
        m=int((A.rows != A.cols).sum()),
        levels=levels or [],
        samples=samples,
        degraded=degraded,
        flags=all_flags,
        time_ms=(time.perf_counter() - started) * 1000.0,
    )


def _defaults(eps: Optional[float], eta: Optional[float], seed: Optional[int]) -> Tuple[float, float, int]:
    return (
        float(eps if eps is not None else config.get("estimation.eps", 0.1)),
        float(eta if eta is not None else config.get("estimation.eta", 0.1)),
        int(seed if seed is not None else config.get("estimation.seed", 42)),
    )


def _new_components(A: SymmetricSparse) -> List[Tuple[_Component, SymmetricSparse]]:
    out = []
    for name, lap_id, _, parts in _components(A):
        for index, sub in enumerate(parts):
            out.append((_Component(laplacian=name, lap_id=lap_id, index=index, vertices=sub.n), sub))
    return out


def _plan_mode(components: List[_Component]) -> Optional[str]:
    """"theorem" when the theorem plans fit the compute cap, else "pilot" when
    the pilot batches fit the pilot cap, else None (bounds only)."""
    cap = float(config.get("estimation.compute_cap", 1.0e9))
    work = _work(components)
    if work <= cap:
        return "theorem"
    if bool(config.get("estimation.pilot_plans", True)):
        pilot_cap = float(config.get("estimation.pilot_cap", 4.0e9))
        minimum = sum(
            pilot_work(t.plan) for c in components for t in c.tasks if t.plan is not None and t.kappa > 1.0
        )
        if minimum <= pilot_cap:
            logger.info("Theorem plans need %.3e work units (cap %.3e); sizing samples from pilot batches", work, cap)
            return "pilot"
        work, cap = minimum, pilot_cap
    logger.warning("Sample plans need %.3e work units (cap %.3e); reporting bounds only", work, cap)
    default_error_handler.handle_estimate_error(
        RuntimeError(f"plan work {work:.3e} exceeds compute cap {cap:.3e}"), method="plan"
    )
    return None


def _sample(
    A: SymmetricSparse,
    components: List[_Component],
    method: Method,
    eps: float,
    eta: float,
    seed: int,
    started: float,
    threads: Optional[int],
) -> Tuple[EstimateReport, int]:
    mode = _plan_mode(components)
    if mode is None:
        return _bounds_only(A, components, method, eps, eta, seed, started), 0
    samples, levels = _run(components, seed, threads, mode)
    flags = ["pilot-plan"] if mode == "pilot" else []
    if method == "fast":
        for diag in levels:
            diag.laplacian = "sparsified"
    return _assemble(A, components, method, eps, eta, seed, started, samples, levels, flags=flags), samples


def _bounds_only(
    A: SymmetricSparse, components: List[_Component], method: Method, eps: float, eta: float, seed: int, started: float
) -> EstimateReport:
    tilde = [c for c in components if c.lap_id == 0]
    hat = [c for c in components if c.lap_id == 1]
    lower = sum(c.lower for c in tilde) - sum(c.upper for c in hat)
    upper = sum(c.upper for c in tilde) - sum(c.lower for c in hat)
    return _assemble(
        A, components, method, eps, eta, seed, started,
        flags=["compute-cap"], degraded=True, raw=0.5 * (lower + upper),
    )


def tree_logdet(
    A: SymmetricSparse,
    eps: Optional[float] = None,
    eta: Optional[float] = None,
    seed: Optional[int] = None,
    threads: Optional[int] = None,
) -> EstimateReport:
    """Estimate n^-1 ln|A| with scaled low-stretch trees as preconditioners."""
    eps, eta, seed = _defaults(eps, eta, seed)
    started = time.perf_counter()
    components = []
    for comp, sub in _new_components(A):
        if sub.n > 1:
            _tree_component(comp, sub, seed)
        components.append(comp)
    _allocate(components, A.n, eps, eta)
    report, samples = _sample(A, components, "tree", eps, eta, seed, started, threads)
    logger.info("tree_logdet n=%d estimate=%.6f samples=%d", A.n, report.estimate, samples)
    return report


def ultra_logdet(
    A: SymmetricSparse,
    eps: Optional[float] = None,
    eta: Optional[float] = None,
    seed: Optional[int] = None,
    threads: Optional[int] = None,
    dense_threshold: Optional[int] = None,
) -> EstimateReport:
    """Estimate n^-1 ln|A| through preconditioning chains; small inputs are
    factorized densely."""
    eps, eta, seed = _defaults(eps, eta, seed)
    threshold = int(dense_threshold if dense_threshold is not None else config.get("solver.dense_threshold", 100))
    started = time.perf_counter()
    if A.n < threshold:
        report = dense_logdet_report(A, seed=seed, method="ultra")
        return report.model_copy(update={"eps": eps, "eta": eta, "time_ms": (time.perf_counter() - started) * 1000.0})
    components = []
    for comp, sub in _new_components(A):
        if sub.n > 1:
            try:
                _chain_component(comp, sub, seed, threshold)
            except ChainStalled as exc:
                logger.warning("Chain stalled on %s component %d: %s", comp.laplacian, comp.index, exc)
                default_error_handler.handle_estimate_error(exc, method="ultra", component=comp.index)
                comp.tasks.clear()
                _tree_component(comp, sub, seed)
                comp.flags.append("chain-stalled")
        components.append(comp)
    _allocate(components, A.n, eps, eta)
    report, samples = _sample(A, components, "ultra", eps, eta, seed, started, threads)
    logger.info(
        "ultra_logdet n=%d estimate=%.6f levels=%d samples=%d", A.n, report.estimate, len(report.levels), samples
    )
    return report


def fast_inexact_logdet(
    A: SymmetricSparse,
    seed: Optional[int] = None,
    threads: Optional[int] = None,
    dense_threshold: Optional[int] = None,
) -> EstimateReport:
    """n^-1 ln|A| to within 1/2: sparsify each Laplacian G to H with
    (1-e) G <= H' <= G after rescaling, then report the midpoint of
    [pld(H'), pld(H') + (N) ln((1+e)/(1-e))]."""
    _, eta, seed = _defaults(None, None, seed)
    precision = 0.5
    sparsify_eps = float(config.get("sparsify.fast_eps", 1.0 / 16.0))
    threshold = int(dense_threshold if dense_threshold is not None else config.get("solver.dense_threshold", 100))
    started = time.perf_counter()
    width = math.log((1.0 + sparsify_eps) / (1.0 - sparsify_eps))
    components = []
    half_widths = {"tilde": 0.0, "hat": 0.0}
    for comp, sub in _new_components(A):
        if sub.n > 1:
            *_, comp.lower, comp.upper = _tree_sandwich(sub, seed, (comp.lap_id, comp.index))
            G = graph_of(sub)
            H = spectral_sparsify(G, sparsify_eps, seed, stream=(comp.lap_id, comp.index))
            H_scaled = laplacian_of(H.scaled(1.0 / (1.0 + sparsify_eps)))
            _chain_component(comp, H_scaled, seed, threshold, bounds=False)
            half = 0.5 * comp.grounded_dim * width
            comp.exact += half
            half_widths[comp.laplacian] += half
        components.append(comp)
    # the sparsification half-width comes out of each Laplacian's share
    allowance = {
        name: max(A.n * precision / 2.0 - half_widths[name], A.n * precision / 20.0) for name in half_widths
    }
    _allocate(components, A.n, precision, eta, allowance=allowance)
    report, _ = _sample(A, components, "fast", precision, eta, seed, started, threads)
    logger.info("fast_inexact_logdet n=%d estimate=%.6f", A.n, report.estimate)
    return report


def logdet_bounds(A: SymmetricSparse, seed: Optional[int] = None) -> Tuple[float, float]:
    """Deterministic (lower, upper) on n^-1 ln|A| from tree plds and tree stretch."""
    report = bounds_report(A, seed=seed)
    assert report.lower is not None and report.upper is not None
    return report.lower, report.upper


def bounds_report(A: SymmetricSparse, seed: Optional[int] = None) -> EstimateReport:
    _, _, seed = _defaults(None, None, seed)
    started = time.perf_counter()
    components = []
    for comp, sub in _new_components(A):
        if sub.n > 1:
            *_, comp.lower, comp.upper = _tree_sandwich(sub, seed, (comp.lap_id, comp.index))
        components.append(comp)
    tilde = [c for c in components if c.lap_id == 0]
    hat = [c for c in components if c.lap_id == 1]
    lower = sum(c.lower for c in tilde) - sum(c.upper for c in hat)
    upper = sum(c.upper for c in tilde) - sum(c.lower for c in hat)
    return _assemble(A, components, "bounds", None, None, seed, started, raw=0.5 * (lower + upper))


def dense_logdet_report(A: SymmetricSparse, seed: Optional[int] = None, method: Method = "dense") -> EstimateReport:
    """Exact n^-1 ln|A| by dense Cholesky, with the stretch bounds attached."""
    _, _, seed = _defaults(None, None, seed)
    started = time.perf_counter()
    value = dense_logdet(A)
    lower, upper = logdet_bounds(A, seed=seed) if A.n > 0 else (0.0, 0.0)
    estimate = value / A.n if A.n else 0.0
    return EstimateReport(
        estimate=estimate,
        raw_logdet=value,
        lower=min(lower, estimate),
        upper=max(upper, estimate),
        seed=seed,
        method=method,
        n=A.n,
        m=int((A.rows != A.cols).sum()),
        time_ms=(time.perf_counter() - started) * 1000.0,
    )


def estimate(
    A: SymmetricSparse,
    method: Method = "tree",
    eps: Optional[float] = None,
    eta: Optional[float] = None,
    seed: Optional[int] = None,
    threads: Optional[int] = None,
    dense_threshold: Optional[int] = None,
) -> EstimateReport:
    """Dispatch by method name."""
    if method == "tree":
        return tree_logdet(A, eps, eta, seed, threads)
    if method == "ultra":
        return ultra_logdet(A, eps, eta, seed, threads, dense_threshold)
    if method == "fast":
        return fast_inexact_logdet(A, seed, threads, dense_threshold)
    if method == "bounds":
        return bounds_report(A, seed)
    if method == "dense":
        return dense_logdet_report(A, seed)
    raise ValueError(f"unknown method {method!r}")


__all__ = [
    "tree_logdet",
    "ultra_logdet",
    "fast_inexact_logdet",
    "logdet_bounds",
    "bounds_report",
    "dense_logdet_report",
    "estimate",
]
