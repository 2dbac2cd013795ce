"""Monte Carlo estimation of n^-1 ln det(B^-1 A) through the truncated series

    ln det(B^-1 A) = ln det(I - R) = -sum_k Tr(R^k) / k,   R = I - B^-1 A,

with Rayleigh-quotient trace probes drawn from Gaussian vectors.

Sample ``j`` always draws from its own Philox substream and samples are
processed in fixed blocks, so the estimate does not depend on how many
threads run the blocks.

Two sample plans exist. The theorem plan fixes p and l from eps, eta and
kappa alone. The pilot plan keeps the truncation length from the tail bound
and sizes p from the spread of a pilot batch; the pilot samples are the
first samples of the final estimate.
"""

from __future__ import annotations

import concurrent.futures
import logging
import math
import threading
from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
from scipy import stats

from sddlogdet.config.environments import config
from sddlogdet.core.errors import InvalidParameter
from sddlogdet.core.rng import pairwise_sum, sample_generator
from sddlogdet.telemetry.error_handler import default_error_handler

logger = logging.getLogger(__name__)

BlockOperator = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class SamplePlan:
    p: int
    l: int
    eps: float
    eta: float
    delta: float
    n: int
    variance_term: float = 0.0  # 16/eps part of the sample count
    small_n_term: float = 0.0  # 16/(n eps^2) part
    truncation_bias: float = 0.0
    mode: str = "theorem"
    sample_std: Optional[float] = None  # pilot plans only
    theorem_p: Optional[int] = None
    theorem_l: Optional[int] = None

    @property
    def kappa(self) -> float:
        return 1.0 / self.delta

    @property
    def work(self) -> float:
        """Operator applications the plan needs, times the dimension."""
        return float(self.p) * float(self.l) * float(self.n)


def truncation_tail_bound(delta: float, l: int) -> float:
    """Bias bound (1 - delta)^(l + 1) / delta of a series truncated after l terms."""
    return (1.0 - delta) ** (l + 1) / delta


def truncation_length(delta: float, bias: float) -> int:
    """Smallest l >= 1 with (1 - delta)^(l + 1) / delta <= bias."""
    if not 0.0 < delta < 1.0:
        raise InvalidParameter(f"delta must lie in (0, 1), got {delta}")
    if not bias > 0:
        raise InvalidParameter(f"bias must be positive, got {bias}")
    if bias * delta >= 1.0:
        return 1
    l = max(1, math.ceil(math.log(bias * delta) / math.log1p(-delta) - 1.0))
    while truncation_tail_bound(delta, l) > bias:
        l += 1
    while l > 1 and truncation_tail_bound(delta, l - 1) <= bias:
        l -= 1
    return l


def plan_samples(eps: float, eta: float, delta: float, n: int) -> SamplePlan:
    """Smallest p and l with

        p >= 16 (1/eps + 1/(n eps^2)) ln(2/eta) ln^2(1/delta)
        l >= 2 delta^-1 ln(n / (delta eps))
    """
    if not eps > 0:
        raise InvalidParameter(f"eps must be positive, got {eps}")
    if not 0.0 < eta < 1.0:
        raise InvalidParameter(f"eta must lie in (0, 1), got {eta}")
    if not 0.0 < delta < 1.0:
        raise InvalidParameter(f"delta must lie in (0, 1), got {delta}")
    if n < 1:
        raise InvalidParameter(f"dimension must be positive, got {n}")
    scale = math.log(2.0 / eta) * math.log(1.0 / delta) ** 2
    variance_term = 16.0 / eps
    small_n_term = 16.0 / (n * eps * eps)
    p = max(1, math.ceil((variance_term + small_n_term) * scale))
    l = max(1, math.ceil(2.0 / delta * math.log(n / (delta * eps))))
    return SamplePlan(
        p=p,
        l=l,
        eps=eps,
        eta=eta,
        delta=delta,
        n=n,
        variance_term=variance_term * scale,
        small_n_term=small_n_term * scale,
        truncation_bias=truncation_tail_bound(delta, l),
    )


def plan_from_pilot(
    theorem: SamplePlan,
    sample_std: float,
    pilot: int,
    max_samples: Optional[int] = None,
    inflation: Optional[float] = None,
) -> SamplePlan:
    """Pilot plan with the same eps, eta and delta as ``theorem``.

    Half of eps goes to truncation: l is the smallest length whose tail bound
    is eps / 2. The other half goes to sampling error at confidence 1 - eta:

        p = ceil(inflation * (z_{1 - eta/2} * s / (eps / 2))^2)

    clamped to [pilot, theorem.p] and then to ``max_samples``.
    """
    factor = float(inflation if inflation is not None else config.get("estimation.pilot_inflation", 1.5))
    half = theorem.eps / 2.0
    l = truncation_length(theorem.delta, half)
    z = float(stats.norm.ppf(1.0 - theorem.eta / 2.0))
    p = math.ceil(factor * (z * sample_std / half) ** 2) if sample_std > 0 else 1
    p = max(min(p, theorem.p), pilot)
    if max_samples is not None:
        p = max(min(p, int(max_samples)), pilot)
    return SamplePlan(
        p=p,
        l=l,
        eps=theorem.eps,
        eta=theorem.eta,
        delta=theorem.delta,
        n=theorem.n,
        truncation_bias=truncation_tail_bound(theorem.delta, l),
        mode="pilot",
        sample_std=sample_std,
        theorem_p=theorem.p,
        theorem_l=theorem.l,
    )


def pilot_work(theorem: SamplePlan, pilot: Optional[int] = None) -> float:
    """Work of the pilot batch alone under the pilot truncation length."""
    count = int(pilot if pilot is not None else config.get("estimation.pilot_samples", 64))
    l = truncation_length(theorem.delta, theorem.eps / 2.0)
    return float(count) * float(l) * float(theorem.n)


def required_nu(eps: float, kappa: float, kappa_B: float, strict: Optional[bool] = None) -> float:
    """Solver tolerance for the remainder estimate.

    Default: min(eps / (8 kappa^2 sqrt(kappa_B)), 1 / (2 kappa)).
    Strict:  eps / (8 kappa^3 kappa_B).
    """
    use_strict = bool(config.get("estimation.strict_nu", False)) if strict is None else strict
    if use_strict:
        return eps / (8.0 * kappa**3 * kappa_B)
    return min(eps / (8.0 * kappa**2 * math.sqrt(kappa_B)), 1.0 / (2.0 * kappa))


def rayleigh_variance(eigenvalues: np.ndarray) -> float:
    """Variance of one Gaussian Rayleigh-quotient probe of diag(eigenvalues)."""
    lam = np.asarray(eigenvalues, dtype=np.float64)
    n = lam.size
    return float(2.0 * np.sum((lam - lam.mean()) ** 2) / (n * (n + 2)))


@dataclass(frozen=True, eq=False)
class RemainderProblem:
    """ln det(B^-1 A) with A <= B <= kappa A and a nu-accurate B solver."""

    A_op: BlockOperator
    B_solver: BlockOperator
    n: int
    kappa: float
    nu: float = 0.0
    kappa_B: Optional[float] = None

    @property
    def delta(self) -> float:
        return 1.0 / self.kappa


@dataclass(frozen=True)
class RemainderEstimate:
    value: float
    degraded: bool
    failures: int
    samples: int
    plan: Optional[SamplePlan] = None


def _blocks(start: int, stop: int, block: int) -> List[Tuple[int, int]]:
    return [(a, min(a + block, stop)) for a in range(start, stop, block)]


def _gaussian_block(n: int, seed: int, stream: Sequence[int], start: int, stop: int) -> np.ndarray:
    U = np.empty((n, stop - start))
    for col, j in enumerate(range(start, stop)):
        U[:, col] = sample_generator(seed, stream, j).standard_normal(n)
    return U


def _run_blocks(
    start: int,
    stop: int,
    block: int,
    threads: int,
    work: Callable[[int, int], np.ndarray],
) -> np.ndarray:
    """Values of samples start..stop-1, block by block."""
    values = np.empty(stop - start)
    spans = _blocks(start, stop, block)
    if threads <= 1 or len(spans) <= 1:
        for a, b in spans:
            values[a - start : b - start] = work(a, b)
        return values
    with concurrent.futures.ThreadPoolExecutor(max_workers=threads) as executor:
        futures = {executor.submit(work, a, b): (a, b) for a, b in spans}
        for future in concurrent.futures.as_completed(futures):
            a, b = futures[future]
            values[a - start : b - start] = future.result()
    return values


def _settings(threads: Optional[int], block: Optional[int]) -> Tuple[int, int]:
    t = int(threads if threads is not None else config.get("estimation.threads", 1))
    b = int(block if block is not None else config.get("estimation.sample_block", 64))
    return max(t, 1), max(b, 1)


def hutchinson_trace(
    H_op: BlockOperator,
    n: int,
    p: int,
    seed: int,
    stream: Sequence[int] = (),
    threads: Optional[int] = None,
    block: Optional[int] = None,
) -> float:
    """(1/p) sum_j u_j^T H u_j / u_j^T u_j with Gaussian u_j; estimates Tr(H)/n."""
    if p < 1:
        raise InvalidParameter(f"sample count must be positive, got {p}")
    t, b = _settings(threads, block)

    def work(start: int, stop: int) -> np.ndarray:
        U = _gaussian_block(n, seed, stream, start, stop)
        HU = np.asarray(H_op(U)).reshape(n, stop - start)
        return np.einsum("ij,ij->j", U, HU) / np.einsum("ij,ij->j", U, U)

    values = _run_blocks(0, p, b, t, work)
    return pairwise_sum(values) / p


def approximate_power_sequence(
    A_op: BlockOperator,
    B_solver: BlockOperator,
    x0: np.ndarray,
    l: int,
) -> List[np.ndarray]:
    """x_0, ..., x_l with x_{k+1} = x_k - B_solver(A_op(x_k)); x0 may be a block."""
    xs = [np.asarray(x0, dtype=np.float64)]
    for _ in range(l):
        x = xs[-1]
        xs.append(x - np.asarray(B_solver(A_op(x))).reshape(x.shape))
    return xs


def remainder_samples(
    prob: RemainderProblem,
    l: int,
    seed: int,
    stream: Sequence[int],
    start: int,
    stop: int,
    threads: Optional[int] = None,
    block: Optional[int] = None,
) -> np.ndarray:
    """Per-sample values -sum_{k<=l} x0_j^T x_k / k for samples start..stop-1."""
    t, b = _settings(threads, block)
    n = prob.n
    weights = 1.0 / np.arange(1, l + 1)

    def work(a: int, c: int) -> np.ndarray:
        U = _gaussian_block(n, seed, stream, a, c)
        X0 = U / np.linalg.norm(U, axis=0)
        X = X0
        acc = np.zeros((l, c - a))
        for k in range(l):
            X = X - np.asarray(prob.B_solver(prob.A_op(X))).reshape(X.shape)
            acc[k] = np.einsum("ij,ij->j", X0, X)
        # fixed summation order over k for every sample
        return -np.array([pairwise_sum(weights * acc[:, j]) for j in range(c - a)])

    return _run_blocks(start, stop, b, t, work)


def _finish(prob: RemainderProblem, values: np.ndarray, plan: SamplePlan, before: int) -> RemainderEstimate:
    estimate = pairwise_sum(values) / plan.p
    failures = int(getattr(prob.B_solver, "failures", 0)) - before
    degraded = failures > 0 or not math.isfinite(estimate)
    if not math.isfinite(estimate):
        estimate = 0.0
    if degraded:
        logger.warning("Remainder estimate degraded: %d solver failures", failures)
        default_error_handler.handle_estimate_error(
            RuntimeError(f"{failures} inexact solves missed their tolerance"),
            method="remainder",
            dim=prob.n,
        )
    logger.debug(
        "Remainder n=%d kappa=%.3f %s p=%d l=%d -> %.6e",
        prob.n, prob.kappa, plan.mode, plan.p, plan.l, estimate,
    )
    return RemainderEstimate(value=estimate, degraded=degraded, failures=failures, samples=plan.p, plan=plan)


def mc_logdet_remainder(
    prob: RemainderProblem,
    plan: SamplePlan,
    seed: int,
    stream: Sequence[int] = (),
    threads: Optional[int] = None,
    block: Optional[int] = None,
) -> RemainderEstimate:
    """Estimate n^-1 ln det(B^-1 A) as -(1/p) sum_j sum_{k<=l} x0_j^T x_k / k."""
    if prob.kappa <= 1.0:
        return RemainderEstimate(value=0.0, degraded=False, failures=0, samples=0, plan=plan)
    before = int(getattr(prob.B_solver, "failures", 0))
    values = remainder_samples(prob, plan.l, seed, stream, 0, plan.p, threads, block)
    return _finish(prob, values, plan, before)


def mc_logdet_remainder_pilot(
    prob: RemainderProblem,
    theorem: SamplePlan,
    seed: int,
    stream: Sequence[int] = (),
    threads: Optional[int] = None,
    block: Optional[int] = None,
    pilot: Optional[int] = None,
    max_samples: Optional[int] = None,
) -> RemainderEstimate:
    """Remainder estimate under a pilot plan: samples 0..pilot-1 fix the
    sample count, and samples pilot..p-1 extend the same stream."""
    if prob.kappa <= 1.0:
        return RemainderEstimate(value=0.0, degraded=False, failures=0, samples=0, plan=theorem)
    count = max(2, int(pilot if pilot is not None else config.get("estimation.pilot_samples", 64)))
    before = int(getattr(prob.B_solver, "failures", 0))
    l = truncation_length(theorem.delta, theorem.eps / 2.0)
    head = remainder_samples(prob, l, seed, stream, 0, count, threads, block)
    finite = head[np.isfinite(head)]
    spread = float(np.std(finite, ddof=1)) if finite.size > 1 else 0.0
    plan = plan_from_pilot(theorem, spread, count, max_samples)
    values = head
    if plan.p > count:
        tail = remainder_samples(prob, l, seed, stream, count, plan.p, threads, block)
        values = np.concatenate([head, tail])
    logger.debug("Pilot of %d samples: std=%.4e, p=%d (theorem p=%d)", count, spread, plan.p, theorem.p)
    return _finish(prob, values, plan, before)


class CountingSolver:
    """Wraps an inexact solver that reports success, counting missed tolerances."""

    def __init__(self, solve: Callable[[np.ndarray], Tuple[np.ndarray, bool]]) -> None:
        self._solve = solve
        self._lock = threading.Lock()
        self.failures = 0
        self.calls = 0

    def __call__(self, b: np.ndarray) -> np.ndarray:
        x, ok = self._solve(b)
        with self._lock:
            self.calls += 1
            if not ok:
                self.failures += 1
        return x


__all__ = [
    "SamplePlan",
    "plan_samples",
    "plan_from_pilot",
    "pilot_work",
    "truncation_tail_bound",
    "truncation_length",
    "required_nu",
    "rayleigh_variance",
    "RemainderProblem",
    "RemainderEstimate",
    "hutchinson_trace",
    "approximate_power_sequence",
    "remainder_samples",
    "mc_logdet_remainder",
    "mc_logdet_remainder_pilot",
    "CountingSolver",
]
