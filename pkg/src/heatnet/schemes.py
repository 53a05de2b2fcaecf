"""Constant-neighbour (CN) and linear-neighbour (LN) time integrators.

Each cell is advanced by solving its own scalar ODE analytically while its
neighbours are frozen (CN) or assumed to vary linearly over the step (LN).
With ``z = m_ii h`` the per-cell updates are

    CN:  u' = u E + a(w) P1
    LN:  u' = u E + a(u) P1 + s P2

where ``E = exp(z)``, ``P1 = h phi1(z)``, ``P2 = h^2 phi2(z)``,
``a(w) = sum_j m_ij w_j + Q`` and ``s = sum_j m_ij (w_pred_j - u_j) / h``.
Every stage reads full snapshots and writes a fresh vector, so per-cell work
is an independent map and may be split across workers.
"""

from __future__ import annotations

import math
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .network import CellNetwork, CoefficientSet, TemperatureState, assemble

TAYLOR_THRESHOLD = 1e-2
_TAYLOR_TERMS = 10
MAX_STAGES = 16
# Above this stage count reports carry a warning flag: iterating too much
# does not pay off for these schemes.
RECOMMENDED_MAX_STAGES = 7


class NumericalBlowup(RuntimeError):
    def __init__(self, step_index: int, t: float):
        super().__init__(f"non-finite temperature after step {step_index} (t={t:g})")
        self.step_index = step_index
        self.t = t


def _phi_taylor(z, order):
    # phi_n(z) = sum_k z^k / (k+n)!, Horner from the highest term.
    acc = np.zeros_like(z)
    for k in range(_TAYLOR_TERMS - 1, -1, -1):
        acc = acc * z + 1.0 / math.factorial(k + order)
    return acc


def _phi(z, order, direct):
    z = np.asarray(z, dtype=float)
    out = np.empty_like(z)
    small = np.abs(z) < TAYLOR_THRESHOLD
    out[small] = _phi_taylor(z[small], order)
    out[~small] = direct(z[~small])
    return out[()] if out.ndim == 0 else out


def phi1(z):
    """(e^z - 1)/z, with the removable singularity at 0 filled in."""
    return _phi(z, 1, lambda x: np.expm1(x) / x)


def phi2(z):
    """(e^z - 1 - z)/z^2, with phi2(0) = 1/2."""
    # Divide twice so that z*z cannot overflow for huge |z|.
    return _phi(z, 2, lambda x: (np.expm1(x) - x) / x / x)


@dataclass(frozen=True)
class StepPlan:
    h: float
    z: np.ndarray
    E: np.ndarray
    P1: np.ndarray
    P2: np.ndarray


def make_plan(coeffs: CoefficientSet, h: float) -> StepPlan:
    if not (h > 0 and math.isfinite(h)):
        raise ValueError(f"stepsize must be positive and finite, got h={h}")
    z = coeffs.diag * h
    return StepPlan(h=h, z=z, E=np.exp(z), P1=h * phi1(z), P2=h * h * phi2(z))


@dataclass(frozen=True)
class SchemeSpec:
    """A scheme family (``"cn"``, ``"ln"`` or ``"euler"``) with its stage count.

    For CN, ``stages`` counts constant-neighbour passes. For LN it is one CN
    predictor followed by ``stages - 1`` LN correctors, so LN1 is CN1.
    """

    family: str
    stages: int = 1

    def __post_init__(self):
        if self.family not in ("cn", "ln", "euler"):
            raise ValueError(f"unknown scheme family {self.family!r}")
        if self.family == "euler":
            object.__setattr__(self, "stages", 1)
        elif not 1 <= self.stages <= MAX_STAGES:
            raise ValueError(f"stage count must be in [1, {MAX_STAGES}], got {self.stages}")

    @property
    def name(self) -> str:
        return "euler" if self.family == "euler" else f"{self.family}{self.stages}"

    @property
    def over_iterated(self) -> bool:
        return self.stages > RECOMMENDED_MAX_STAGES

    def __str__(self):
        return self.name


_TOKEN = re.compile(r"^(cn|ln)(\d+)$")


def parse_scheme(token: str) -> SchemeSpec:
    """Parse ``euler``, ``cnK`` or ``lnK`` (K in 1..16), case-insensitive."""
    tok = token.strip().lower()
    if tok == "euler":
        return SchemeSpec("euler")
    m = _TOKEN.match(tok)
    if not m:
        raise ValueError(f"bad scheme token {token!r}; expected euler, cnK or lnK")
    return SchemeSpec(m.group(1), int(m.group(2)))


def CN(k: int = 1) -> SchemeSpec:
    return SchemeSpec("cn", k)


def LN(k: int = 2) -> SchemeSpec:
    return SchemeSpec("ln", k)


EULER = SchemeSpec("euler")


def neighbour_sum(coeffs: CoefficientSet, w: np.ndarray, workers: int = 1) -> np.ndarray:
    """``sum_j m_ij w_j`` for every cell, optionally split by row blocks."""
    if workers <= 1:
        return coeffs.offdiag @ w
    blocks = coeffs.row_blocks(workers)
    out = np.empty(coeffs.n_cells)

    def run(block):
        lo, hi, mat = block
        out[lo:hi] = mat @ w

    with ThreadPoolExecutor(max_workers=len(blocks)) as pool:
        list(pool.map(run, blocks))
    return out


def _check_sizes(coeffs, *vectors):
    n = coeffs.n_cells
    for v in vectors:
        if np.shape(v) != (n,):
            raise ValueError(f"vector of shape {np.shape(v)} does not match {n} cells")


def _hold_pinned(coeffs: CoefficientSet, u_start, out):
    if coeffs.pinned_mask.any():
        out[coeffs.pinned_mask] = u_start[coeffs.pinned_mask]
    return out


def cn_stage(u_start, w, plan: StepPlan, coeffs: CoefficientSet, Q=None, workers: int = 1):
    """One constant-neighbour pass: decay from ``u_start`` toward neighbours ``w``."""
    Q = coeffs.source if Q is None else Q
    _check_sizes(coeffs, u_start, w, Q)
    a = neighbour_sum(coeffs, w, workers) + Q
    out = u_start * plan.E + a * plan.P1
    return _hold_pinned(coeffs, u_start, out)


def ln_stage(u_start, w_pred, plan: StepPlan, coeffs: CoefficientSet, Q=None, workers: int = 1):
    """One linear-neighbour pass using predicted end-of-step neighbours ``w_pred``.

    Q cancels in the neighbour slope, so it is formed from the neighbour sums
    of ``w_pred - u_start`` alone.
    """
    Q = coeffs.source if Q is None else Q
    _check_sizes(coeffs, u_start, w_pred, Q)
    a = neighbour_sum(coeffs, u_start, workers) + Q
    s = neighbour_sum(coeffs, w_pred - u_start, workers) / plan.h
    out = u_start * plan.E + a * plan.P1 + s * plan.P2
    return _hold_pinned(coeffs, u_start, out)


def euler_update(u, h, coeffs: CoefficientSet, Q=None, workers: int = 1):
    Q = coeffs.source if Q is None else Q
    _check_sizes(coeffs, u, Q)
    du = neighbour_sum(coeffs, u, workers) + coeffs.diag * u + Q
    return _hold_pinned(coeffs, u, u + h * du)


def step(state: TemperatureState, scheme: SchemeSpec, plan: StepPlan,
         coeffs: CoefficientSet, Q=None, workers: int = 1) -> TemperatureState:
    u = state.u
    if scheme.family == "euler":
        new = euler_update(u, plan.h, coeffs, Q, workers)
    elif scheme.family == "cn":
        new = u
        for _ in range(scheme.stages):
            new = cn_stage(u, new, plan, coeffs, Q, workers)
    else:
        new = cn_stage(u, u, plan, coeffs, Q, workers)
        for _ in range(scheme.stages - 1):
            new = ln_stage(u, new, plan, coeffs, Q, workers)
    return TemperatureState(new, state.t + plan.h)


def step_schedule(h: float, t_final: float) -> list[tuple[int, float]]:
    """``[(count, length), ...]``: full steps of ``h`` then at most one shorter step."""
    if not (h > 0 and math.isfinite(h)):
        raise ValueError(f"stepsize must be positive and finite, got h={h}")
    if not (t_final > 0 and math.isfinite(t_final)):
        raise ValueError(f"t_final must be positive and finite, got {t_final}")
    ratio = t_final / h
    n_full = math.floor(ratio)
    # Absorb rounding in t_final/h so that e.g. 1/0.1 gives 10 steps, not 9 + sliver.
    if ratio - n_full > 1.0 - 1e-9:
        n_full += 1
    rest = t_final - n_full * h
    schedule = []
    if n_full > 0:
        schedule.append((n_full, h))
    if rest > 1e-12 * t_final:
        schedule.append((1, rest))
    return schedule


def integrate(network: CellNetwork | CoefficientSet, scheme: SchemeSpec, h: float,
              t_final: float, observer: Optional[Callable[[TemperatureState], None]] = None,
              initial: Optional[TemperatureState] = None, workers: int = 1) -> TemperatureState:
    """Advance from t=0 (or from ``initial.t``) to exactly ``t_final``.

    Takes ceil(t_final/h) steps; the last one is shortened to land on
    ``t_final``. ``observer`` is called with the state after every step.
    Raises :class:`NumericalBlowup` if the state stops being finite.
    """
    if isinstance(network, CellNetwork):
        coeffs = assemble(network)
        state = initial or network.initial_state()
    else:
        coeffs = network
        if initial is None:
            raise ValueError("an initial state is required when passing coefficients")
        state = initial
    index = 0
    with np.errstate(over="ignore", invalid="ignore"):
        for count, length in step_schedule(h, t_final - state.t):
            plan = make_plan(coeffs, length)
            for _ in range(count):
                state = step(state, scheme, plan, coeffs, workers=workers)
                index += 1
                if not np.all(np.isfinite(state.u)):
                    raise NumericalBlowup(index, state.t)
                if observer is not None:
                    observer(state)
    return TemperatureState(state.u, t_final)


def stage_evaluations(scheme: SchemeSpec, h: float, t_final: float) -> int:
    steps = sum(count for count, _ in step_schedule(h, t_final))
    return steps * scheme.stages


def euler_max_step(spectrum) -> float:
    """Largest stable explicit-Euler stepsize, ``2/|lambda_max|``.

    Accepts a :class:`heatnet.reference.Spectrum` or a plain array of
    eigenvalues.
    """
    eig = getattr(spectrum, "eigenvalues", spectrum)
    eig = np.asarray(eig, dtype=float)
    if eig.size == 0:
        raise ValueError("empty spectrum")
    lam = np.max(np.abs(eig))
    return math.inf if lam == 0 else 2.0 / lam


POWERING_LIMIT = 2000


def step_operator(coeffs: CoefficientSet, scheme: SchemeSpec, plan: StepPlan) -> np.ndarray:
    """Augmented ``(N+1, N+1)`` matrix ``[[A, b], [0, 1]]`` of one step ``u -> A u + b``.

    Every scheme here is affine in the state, so the columns of A are the
    responses to unit vectors minus the response to zero.
    """
    n = coeffs.n_cells
    if n > POWERING_LIMIT:
        raise ValueError(f"step operator is dense; N={n} exceeds {POWERING_LIMIT}")

    def apply(v):
        return step(TemperatureState(v, 0.0), scheme, plan, coeffs).u

    b = apply(np.zeros(n))
    g = np.zeros((n + 1, n + 1))
    for j in range(n):
        e = np.zeros(n)
        e[j] = 1.0
        g[:n, j] = apply(e) - b
    g[:n, n] = b
    g[n, n] = 1.0
    return g


def integrate_powered(network: CellNetwork, scheme: SchemeSpec, h: float,
                      t_final: float) -> TemperatureState:
    """Same result as :func:`integrate` via repeated squaring of the step operator.

    Cost is O(N^3 log(steps)) instead of O(steps), which makes very small
    stepsizes on small networks affordable.
    """
    coeffs = assemble(network)
    u = network.initial_state().u
    for count, length in step_schedule(h, t_final):
        g = np.linalg.matrix_power(step_operator(coeffs, scheme, make_plan(coeffs, length)), count)
        u = g[:-1, :-1] @ u + g[:-1, -1]
    if not np.all(np.isfinite(u)):
        raise NumericalBlowup(-1, t_final)
    return TemperatureState(u, t_final)
