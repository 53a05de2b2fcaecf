"""Reference solutions and spectral analysis.

Two independent routes to the exact solution of ``du/dt = M u + Q``:

* :func:`exact_solve` diagonalizes M through the capacity-weighted
  symmetrization ``S = C^(1/2) M C^(-1/2)`` (symmetric because
  ``m_ij C_i = m_ji C_j``) and evaluates ``e^{Mt} u0 + t phi1(Mt) Q``
  mode by mode, so the singular M of a closed network needs no inverse.
* :func:`ode_oracle` integrates the same system with an adaptive implicit
  Runge-Kutta method (Radau IIA, order 5) at tight tolerance.

Pinned cells are eliminated before either route: their constant values are
folded into the source of adjacent free cells.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.sparse as sp
from scipy.integrate import solve_ivp
from scipy.sparse.csgraph import connected_components

from .network import CellNetwork, TemperatureState, assemble
from .schemes import phi1

DENSE_LIMIT = 6000
ZERO_EIGENVALUE_CUTOFF = 1e-9


class ReferenceError(RuntimeError):
    pass


@dataclass(frozen=True)
class ReducedSystem:
    """The free-cell subsystem ``du_f/dt = M_ff u_f + q_eff``."""

    free: np.ndarray
    matrix: sp.csr_matrix
    source: np.ndarray
    sqrt_capacity: np.ndarray
    pinned_values: np.ndarray
    n_cells: int

    def expand(self, u_free: np.ndarray) -> np.ndarray:
        u = self.pinned_values.copy()
        u[self.free] = u_free
        return u


def reduce_system(network: CellNetwork) -> ReducedSystem:
    coeffs = assemble(network)
    m = coeffs.matrix()
    free = np.flatnonzero(~coeffs.pinned_mask)
    pinned = np.flatnonzero(coeffs.pinned_mask)
    q = coeffs.source[free].astype(float)
    if pinned.size:
        q = q + m[free][:, pinned] @ coeffs.pinned_values[pinned]
    return ReducedSystem(
        free=free,
        matrix=m[free][:, free].tocsr(),
        source=q,
        sqrt_capacity=np.sqrt(coeffs.capacity[free]),
        pinned_values=np.where(coeffs.pinned_mask, coeffs.pinned_values, 0.0),
        n_cells=network.n_cells,
    )


def _symmetrized(red: ReducedSystem) -> np.ndarray:
    d = red.sqrt_capacity
    s = red.matrix.toarray() * d[:, None] / d[None, :]
    # Exact symmetry up to rounding; average the two triangles.
    return 0.5 * (s + s.T)


class ExactSolver:
    """Eigendecomposition-based exact solution, reusable across times."""

    def __init__(self, network: CellNetwork):
        n = network.n_cells
        if n > DENSE_LIMIT:
            raise ReferenceError(f"exact solve is dense; N={n} exceeds guard {DENSE_LIMIT}")
        self.network = network
        self.red = reduce_system(network)
        if self.red.free.size:
            self.eigenvalues, self.vectors = np.linalg.eigh(_symmetrized(self.red))
        else:
            self.eigenvalues, self.vectors = np.zeros(0), np.zeros((0, 0))
        # Eigenvalues of M are <= 0; clip the positive rounding noise.
        self.eigenvalues = np.minimum(self.eigenvalues, 0.0)

    def solve(self, t: float, u0: Optional[np.ndarray] = None) -> TemperatureState:
        if not (t >= 0 and math.isfinite(t)):
            raise ValueError(f"time must be finite and nonnegative, got {t}")
        u_init = self.network.initial_state().u if u0 is None else np.asarray(u0, float)
        if t == 0:
            return TemperatureState(u_init.copy(), 0.0)
        red = self.red
        d = red.sqrt_capacity
        v = self.vectors
        lam_t = self.eigenvalues * t
        y0 = v.T @ (d * u_init[red.free])
        yq = v.T @ (d * red.source)
        y = np.exp(lam_t) * y0 + t * phi1(lam_t) * yq
        u_free = (v @ y) / d
        u = red.expand(u_free)
        if not np.all(np.isfinite(u)):
            raise ReferenceError("non-finite exact solution")
        return TemperatureState(u, t)


def exact_solve(network: CellNetwork, t: float, u0: Optional[np.ndarray] = None) -> TemperatureState:
    return ExactSolver(network).solve(t, u0)


def ode_oracle(network: CellNetwork, t: float, tol: float = 1e-10,
               max_evaluations: int = 2_000_000, info: Optional[dict] = None) -> TemperatureState:
    """Adaptive Radau IIA solution with relative and absolute tolerance ``tol``.

    The absolute tolerance is scaled by the size of the state so ``tol``
    reads as relative to ``||u||``. Solver counters (``nfev``, ``njev``,
    ``nlu``) are stored in ``info`` when given.
    """
    if not (1e-12 <= tol <= 1e-6):
        raise ValueError(f"oracle tolerance must lie in [1e-12, 1e-6], got {tol}")
    u_init = network.initial_state().u
    if info is not None:
        info.update(nfev=0, njev=0, nlu=0)
    if t == 0:
        return TemperatureState(u_init.copy(), 0.0)
    red = reduce_system(network)
    if red.free.size == 0:
        return TemperatureState(u_init.copy(), t)
    m, q = red.matrix, red.source
    jac = m.toarray() if m.shape[0] <= 400 else m.tocsc()
    calls = 0

    def rhs(_, y):
        nonlocal calls
        calls += 1
        if calls > max_evaluations:
            raise _BudgetExceeded
        return m @ y + q

    y0 = u_init[red.free]
    scale = max(1.0, float(np.max(np.abs(y0))), float(np.max(np.abs(q))) * t)
    try:
        sol = solve_ivp(rhs, (0.0, t), y0, method="Radau", jac=jac,
                        rtol=tol, atol=tol * scale)
    except _BudgetExceeded:
        msg = f"ode oracle exceeded {max_evaluations} right-hand-side evaluations"
        if network.n_cells <= DENSE_LIMIT:
            msg += f" (stiffness ratio {spectrum(network).stiffness_ratio:.3g})"
        raise ReferenceError(msg) from None
    if not sol.success:
        raise ReferenceError(f"ode oracle failed: {sol.message}")
    if info is not None:
        info.update(nfev=sol.nfev, njev=sol.njev, nlu=sol.nlu)
    return TemperatureState(red.expand(sol.y[:, -1]), t)


class _BudgetExceeded(Exception):
    pass


def analytic_sine(x, t):
    """Closed-form solution of the sine test problem on [0, pi]."""
    x = np.asarray(x, dtype=float)
    return 10.0 * np.sin(x) * np.exp(-t) + 77.0 * np.sin(2.0 * x) * np.exp(-4.0 * t)


@dataclass(frozen=True)
class Spectrum:
    eigenvalues: np.ndarray
    lambda_max: float
    lambda_min_nonzero: float
    stiffness_ratio: float
    trace: float
    n_zero: int


def floating_components(network: CellNetwork) -> int:
    """Number of connected groups of free cells with no pinned neighbour.

    Each such group contributes exactly one zero eigenvalue (its mean
    temperature is conserved); every other mode decays.
    """
    n = network.n_cells
    if network.n_edges == 0:
        return int((~network.is_pinned).sum())
    i, j = network.edges[:, 0], network.edges[:, 1]
    graph = sp.coo_matrix((np.ones(len(i)), (i, j)), shape=(n, n))
    _, labels = connected_components(graph, directed=False)
    anchored = np.unique(labels[network.is_pinned])
    free_labels = np.unique(labels[~network.is_pinned])
    return int(np.setdiff1d(free_labels, anchored).size)


def spectrum(network: CellNetwork) -> Spectrum:
    """Eigenvalues of the matrix that drives the free cells.

    The number of zero eigenvalues is known from the graph (see
    :func:`floating_components`); that many smallest-magnitude eigenvalues
    are discarded before picking the smallest nonzero one. They must lie
    below ``1e-9 |lambda_max|``, otherwise :class:`ReferenceError` is raised.
    """
    n = network.n_cells
    if n > DENSE_LIMIT:
        raise ReferenceError(f"dense eigensolve limited to N <= {DENSE_LIMIT}, got {n}")
    red = reduce_system(network)
    if red.free.size == 0:
        return Spectrum(np.zeros(0), 0.0, 0.0, 1.0, 0.0, 0)
    try:
        eig = np.linalg.eigvalsh(_symmetrized(red))
    except np.linalg.LinAlgError as exc:
        raise ReferenceError(f"eigensolver failed: {exc}") from exc
    mags = np.sort(np.abs(eig))
    lam_max = float(mags[-1])
    n_zero = floating_components(network)
    if n_zero and mags[n_zero - 1] > ZERO_EIGENVALUE_CUTOFF * lam_max:
        raise ReferenceError(
            f"expected {n_zero} zero eigenvalue(s) but |lambda|={mags[n_zero - 1]:.3g} "
            f"exceeds the noise bound {ZERO_EIGENVALUE_CUTOFF * lam_max:.3g}")
    nonzero = mags[n_zero:]
    lam_min = float(nonzero[0]) if nonzero.size else 0.0
    ratio = lam_max / lam_min if lam_min > 0 else 1.0
    return Spectrum(eig, lam_max, lam_min, ratio, float(red.matrix.diagonal().sum()), n_zero)
