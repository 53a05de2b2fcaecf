"""Cell-network problem model.

A network is a set of lumped cells (heat capacity ``C`` in J/K, source
``Q`` in K/s, initial temperature ``u0`` in K, optionally pinned to a
fixed temperature) joined by undirected thermal resistances ``R`` in K/W.
Assembling it gives the linear system ``du/dt = M u + Q`` with

    m_ij = 1 / (R_ij C_i),    m_ii = -sum_j m_ij.

Pinned cells implement Dirichlet boundaries: they keep their value for the
whole run but still act as neighbours of adjacent free cells.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence, Union

import numpy as np
import scipy.sparse as sp

FORMAT_NAME = "heatnet-network"
FORMAT_VERSION = 1

# Lattice draws use numpy's PCG64 bit generator seeded with an integer.
# The algorithm and the draw order below are part of the file contract.
LATTICE_BIT_GENERATOR = "PCG64"


class NetworkError(ValueError):
    """Raised when a network violates one of its invariants."""


@dataclass(frozen=True)
class Cell:
    capacity: float
    source: float = 0.0
    u0: float = 0.0
    pinned: float | None = None


@dataclass(frozen=True)
class Edge:
    i: int
    j: int
    resistance: float


@dataclass(frozen=True, eq=False)
class CellNetwork:
    """Immutable array-backed cell network.

    ``pinned`` holds the fixed temperature of pinned cells and NaN for
    free cells. ``edges`` is an ``(E, 2)`` integer array of endpoints with
    matching ``resistance``.
    """

    capacity: np.ndarray
    source: np.ndarray
    u0: np.ndarray
    pinned: np.ndarray
    edges: np.ndarray
    resistance: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("capacity", "source", "u0", "pinned", "resistance"):
            arr = np.array(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        edges = np.array(self.edges, dtype=np.int64).reshape(-1, 2)
        edges.setflags(write=False)
        object.__setattr__(self, "edges", edges)

    @property
    def n_cells(self) -> int:
        return len(self.capacity)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @property
    def is_pinned(self) -> np.ndarray:
        return ~np.isnan(self.pinned)

    def initial_state(self) -> "TemperatureState":
        u = np.array(self.u0, dtype=float)
        mask = self.is_pinned
        u[mask] = self.pinned[mask]
        return TemperatureState(u, 0.0)

    @classmethod
    def from_cells(cls, cells: Sequence[Cell], edges: Sequence[Edge], meta=None):
        pinned = [np.nan if c.pinned is None else c.pinned for c in cells]
        return cls(
            capacity=[c.capacity for c in cells],
            source=[c.source for c in cells],
            u0=[c.u0 for c in cells],
            pinned=pinned,
            edges=[(e.i, e.j) for e in edges],
            resistance=[e.resistance for e in edges],
            meta=dict(meta or {}),
        )

    def cells(self) -> list[Cell]:
        out = []
        for k in range(self.n_cells):
            p = None if np.isnan(self.pinned[k]) else float(self.pinned[k])
            out.append(Cell(float(self.capacity[k]), float(self.source[k]),
                            float(self.u0[k]), p))
        return out

    def edge_list(self) -> list[Edge]:
        return [Edge(int(i), int(j), float(r))
                for (i, j), r in zip(self.edges, self.resistance)]


@dataclass(frozen=True)
class TemperatureState:
    u: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "u", np.asarray(self.u, dtype=float))


@dataclass(frozen=True, eq=False)
class CoefficientSet:
    """Assembled coefficients of ``du/dt = M u + Q``.

    ``offdiag`` is the CSR matrix of the neighbour couplings ``m_ij`` (row i
    holds the neighbours of cell i); ``diag`` holds ``m_ii`` and ``tau`` the
    time constants ``-1/m_ii`` (inf for isolated cells).
    """

    offdiag: sp.csr_matrix
    diag: np.ndarray
    tau: np.ndarray
    capacity: np.ndarray
    source: np.ndarray
    pinned_mask: np.ndarray
    pinned_values: np.ndarray
    _blocks: dict = field(default_factory=dict, repr=False)

    @property
    def n_cells(self) -> int:
        return len(self.diag)

    def neighbours(self, i: int) -> np.ndarray:
        start, stop = self.offdiag.indptr[i], self.offdiag.indptr[i + 1]
        return self.offdiag.indices[start:stop]

    def coupling(self, i: int, j: int) -> float:
        return float(self.offdiag[i, j])

    def row_blocks(self, workers: int) -> list[tuple[int, int, sp.csr_matrix]]:
        """Contiguous row slices of ``offdiag`` for ``workers`` chunks (cached)."""
        workers = max(1, min(workers, self.n_cells))
        if workers not in self._blocks:
            bounds = np.linspace(0, self.n_cells, workers + 1).astype(int)
            self._blocks[workers] = [
                (lo, hi, self.offdiag[lo:hi]) for lo, hi in zip(bounds[:-1], bounds[1:])
            ]
        return self._blocks[workers]

    def matrix(self) -> sp.csr_matrix:
        """The full system matrix M (sparse)."""
        return (self.offdiag + sp.diags(self.diag)).tocsr()


def validate(network: CellNetwork) -> CellNetwork:
    n = network.n_cells
    if n == 0:
        raise NetworkError("network has no cells")
    for name in ("capacity", "source", "u0"):
        arr = getattr(network, name)
        if arr.shape != (n,):
            raise NetworkError(f"{name} has shape {arr.shape}, expected ({n},)")
    if network.pinned.shape != (n,):
        raise NetworkError(f"pinned has shape {network.pinned.shape}, expected ({n},)")
    for k, c in enumerate(network.capacity):
        if not (np.isfinite(c) and c > 0):
            raise NetworkError(f"non-positive capacity at cell {k}: C={c}")
    for name in ("source", "u0"):
        bad = np.flatnonzero(~np.isfinite(getattr(network, name)))
        if bad.size:
            raise NetworkError(f"non-finite {name} at cell {bad[0]}")
    if np.any(np.isinf(network.pinned)):
        k = int(np.flatnonzero(np.isinf(network.pinned))[0])
        raise NetworkError(f"non-finite pinned value at cell {k}")
    if len(network.resistance) != network.n_edges:
        raise NetworkError("edge and resistance counts differ")

    seen: dict[tuple[int, int], int] = {}
    for e, ((i, j), r) in enumerate(zip(network.edges.tolist(), network.resistance)):
        if not (0 <= i < n and 0 <= j < n):
            raise NetworkError(f"bad index in edge {e}: ({i}, {j}) with {n} cells")
        if i == j:
            raise NetworkError(f"self-edge {e} at cell {i}")
        if not (np.isfinite(r) and r > 0):
            raise NetworkError(f"non-positive resistance on edge {e} ({i}, {j}): R={r}")
        key = (min(i, j), max(i, j))
        if key in seen:
            raise NetworkError(f"duplicate edge {e} ({i}, {j}); first seen as edge {seen[key]}")
        seen[key] = e
    return network


def assemble(network: CellNetwork) -> CoefficientSet:
    validate(network)
    n = network.n_cells
    i, j = network.edges[:, 0], network.edges[:, 1]
    r = network.resistance
    rows = np.concatenate([i, j])
    cols = np.concatenate([j, i])
    vals = np.concatenate([1.0 / (r * network.capacity[i]), 1.0 / (r * network.capacity[j])])
    offdiag = sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
    offdiag.sort_indices()
    # Sequential row sums of the stored couplings: m_ii + sum_j m_ij == 0 exactly.
    row_of = np.repeat(np.arange(n), np.diff(offdiag.indptr))
    diag = -np.bincount(row_of, weights=offdiag.data, minlength=n)
    diag[diag == 0.0] = 0.0
    tau = np.full(n, np.inf)
    coupled = diag < 0
    tau[coupled] = -1.0 / diag[coupled]
    mask = network.is_pinned
    return CoefficientSet(
        offdiag=offdiag,
        diag=diag,
        tau=tau,
        capacity=network.capacity,
        source=network.source,
        pinned_mask=mask,
        pinned_values=np.where(mask, network.pinned, 0.0),
    )


def build_sine_line(n: int = 101, pin_ends: bool = True, alpha: float = 1.0) -> CellNetwork:
    """1D chain on [0, pi] with cell centres at x_i = i*pi/(n-1).

    Homogeneous medium with unit capacities and R = dx^2/alpha, initial
    profile 10 sin(x) + 77 sin(2x), no sources.
    """
    if n < 3:
        raise NetworkError(f"sine line needs at least 3 cells, got {n}")
    dx = math.pi / (n - 1)
    x = np.arange(n) * dx
    u0 = 10.0 * np.sin(x) + 77.0 * np.sin(2.0 * x)
    pinned = np.full(n, np.nan)
    if pin_ends:
        u0[0] = u0[-1] = 0.0
        pinned[0] = pinned[-1] = 0.0
    edges = np.column_stack([np.arange(n - 1), np.arange(1, n)])
    return CellNetwork(
        capacity=np.ones(n),
        source=np.zeros(n),
        u0=u0,
        pinned=pinned,
        edges=edges,
        resistance=np.full(n - 1, dx * dx / alpha),
        meta={"builder": "sine_line", "n": n, "pin_ends": pin_ends, "alpha": alpha, "dx": dx},
    )


def sine_line_positions(network: CellNetwork) -> np.ndarray:
    n = network.n_cells
    return np.arange(n) * (math.pi / (n - 1))


Spec = Union[float, tuple[float, float]]


def _draw(rng: np.random.Generator, spec: Spec, n: int) -> np.ndarray:
    if isinstance(spec, (tuple, list)):
        lo, hi = spec
        return rng.uniform(lo, hi, n)
    return np.full(n, float(spec))


def build_random_lattice(
    nx: int,
    ny: int,
    exponent_range: tuple[float, float] = (-1.0, 1.0),
    u0_spec: Spec = (0.0, 1000.0),
    q_spec: Spec = (-500.0, 500.0),
    seed: int = 0,
) -> CellNetwork:
    """Rectangular lattice with log-uniform capacities and resistances.

    Cells are numbered row-major, ``k = iy*nx + ix``. Per cell, in this
    order of draws: C, R_x, R_y (each ``10**U(lo, hi)``), then u0, then Q.
    R_x of cell k labels the edge to its east neighbour and R_y the edge
    to its north neighbour; draws that face the boundary are discarded.
    A ``(lo, hi)`` tuple for ``u0_spec``/``q_spec`` means uniform draws, a
    scalar means a constant (no draws consumed).
    """
    if nx < 1 or ny < 1:
        raise NetworkError(f"empty lattice {nx}x{ny}")
    n = nx * ny
    lo, hi = exponent_range
    rng = np.random.Generator(np.random.PCG64(seed))
    capacity = 10.0 ** rng.uniform(lo, hi, n)
    rx = 10.0 ** rng.uniform(lo, hi, n)
    ry = 10.0 ** rng.uniform(lo, hi, n)
    u0 = _draw(rng, u0_spec, n)
    q = _draw(rng, q_spec, n)

    k = np.arange(n).reshape(ny, nx)
    east = np.column_stack([k[:, :-1].ravel(), k[:, 1:].ravel()])
    north = np.column_stack([k[:-1, :].ravel(), k[1:, :].ravel()])
    edges = np.concatenate([east, north]).reshape(-1, 2)
    resistance = np.concatenate([rx[east[:, 0]], ry[north[:, 0]]])
    return CellNetwork(
        capacity=capacity,
        source=q,
        u0=u0,
        pinned=np.full(n, np.nan),
        edges=edges,
        resistance=resistance,
        meta={
            "builder": "random_lattice", "nx": nx, "ny": ny,
            "exponent_range": list(exponent_range),
            "u0_spec": list(u0_spec) if isinstance(u0_spec, (tuple, list)) else u0_spec,
            "q_spec": list(q_spec) if isinstance(q_spec, (tuple, list)) else q_spec,
            "seed": seed, "bit_generator": LATTICE_BIT_GENERATOR,
        },
    )


# Configurations of the two random-lattice studies.
LATTICE_PRESETS = {
    "moderate": dict(nx=50, ny=20, exponent_range=(-1.0, 1.0),
                     u0_spec=(0.0, 1000.0), q_spec=(-500.0, 500.0)),
    "stiff": dict(nx=250, ny=20, exponent_range=(-3.0, 3.0),
                  u0_spec=0.0, q_spec=(-500.0, 500.0)),
}


def two_cell_network(u0=(0.0, 1.0), capacity=(1.0, 1.0), resistance=1.0, source=(0.0, 0.0)):
    return CellNetwork(capacity=capacity, source=source, u0=u0, pinned=[np.nan, np.nan],
                       edges=[(0, 1)], resistance=[resistance])


# ---------------------------------------------------------------------------
# file format


def to_dict(network: CellNetwork) -> dict:
    cells = []
    for k, c in enumerate(network.cells()):
        d = {"id": k, "C": c.capacity, "Q": c.source, "u0": c.u0}
        if c.pinned is not None:
            d["pinned"] = c.pinned
        cells.append(d)
    edges = [{"i": e.i, "j": e.j, "R": e.resistance} for e in network.edge_list()]
    return {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "meta": network.meta,
        "cells": cells,
        "edges": edges,
    }


def from_dict(doc: dict) -> CellNetwork:
    if doc.get("format", FORMAT_NAME) != FORMAT_NAME:
        raise NetworkError(f"unknown format {doc.get('format')!r}")
    if doc.get("version", FORMAT_VERSION) != FORMAT_VERSION:
        raise NetworkError(f"unsupported version {doc.get('version')!r}")
    try:
        raw_cells = sorted(doc["cells"], key=lambda c: c["id"])
        ids = [c["id"] for c in raw_cells]
        if ids != list(range(len(ids))):
            raise NetworkError("cell ids must be 0..N-1 without gaps")
        cells = [Cell(float(c["C"]), float(c.get("Q", 0.0)), float(c.get("u0", 0.0)),
                      None if c.get("pinned") is None else float(c["pinned"]))
                 for c in raw_cells]
        edges = [Edge(int(e["i"]), int(e["j"]), float(e["R"])) for e in doc["edges"]]
    except (KeyError, TypeError) as exc:
        raise NetworkError(f"malformed network document: {exc!r}") from exc
    return validate(CellNetwork.from_cells(cells, edges, doc.get("meta")))


def save_network(network: CellNetwork, path: str | Path) -> None:
    Path(path).write_text(json.dumps(to_dict(network), indent=1) + "\n")


def load_network(path: str | Path) -> CellNetwork:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise NetworkError(f"{path}: not valid JSON ({exc})") from exc
    return from_dict(doc)
