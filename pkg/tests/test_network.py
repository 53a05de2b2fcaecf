import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from heatnet.network import (Cell, CellNetwork, Edge, NetworkError, assemble,
                             build_random_lattice, build_sine_line, from_dict, load_network,
                             save_network, to_dict, two_cell_network, validate)

from conftest import random_network


def net_of(cells, edges):
    return CellNetwork.from_cells(cells, edges)


class TestValidate:
    def test_minimal_network_is_valid(self):
        net = net_of([Cell(1.0), Cell(1.0)], [Edge(0, 1, 1.0)])
        assert validate(net) is net

    def test_self_edge(self):
        with pytest.raises(NetworkError, match="self-edge"):
            validate(net_of([Cell(1.0), Cell(1.0)], [Edge(0, 0, 1.0)]))

    def test_negative_capacity(self):
        with pytest.raises(NetworkError, match="non-positive capacity at cell 0"):
            validate(net_of([Cell(-1.0), Cell(1.0)], [Edge(0, 1, 1.0)]))

    @pytest.mark.parametrize("r", [0.0, -2.0, math.inf, math.nan])
    def test_bad_resistance(self, r):
        with pytest.raises(NetworkError, match="non-positive resistance on edge 0"):
            validate(net_of([Cell(1.0), Cell(1.0)], [Edge(0, 1, r)]))

    def test_duplicate_edge_either_orientation(self):
        with pytest.raises(NetworkError, match="duplicate edge 1"):
            validate(net_of([Cell(1.0), Cell(1.0)], [Edge(0, 1, 1.0), Edge(1, 0, 2.0)]))

    def test_bad_index(self):
        with pytest.raises(NetworkError, match="bad index in edge 0"):
            validate(net_of([Cell(1.0), Cell(1.0)], [Edge(0, 2, 1.0)]))

    def test_empty(self):
        with pytest.raises(NetworkError):
            validate(net_of([], []))


class TestAssemble:
    def test_two_unit_cells(self, two_cell):
        c = assemble(two_cell)
        assert c.coupling(0, 1) == 1.0 and c.coupling(1, 0) == 1.0
        assert list(c.diag) == [-1.0, -1.0]
        assert list(c.tau) == [1.0, 1.0]

    def test_isolated_cell(self):
        c = assemble(net_of([Cell(3.0)], []))
        assert c.diag[0] == 0.0
        assert c.tau[0] == math.inf

    def test_asymmetric_capacities(self):
        c = assemble(two_cell_network(capacity=(2.0, 1.0)))
        assert c.coupling(0, 1) == 0.5
        assert c.coupling(1, 0) == 1.0
        assert c.coupling(0, 1) * 2.0 == c.coupling(1, 0) * 1.0 == 1.0

    def test_pinned_cells_keep_coefficients(self, sine101):
        c = assemble(sine101)
        assert c.pinned_mask[0] and c.pinned_mask[-1]
        assert c.diag[0] < 0 and len(c.neighbours(0)) == 1

    @settings(max_examples=40, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1), n=st.integers(2, 40))
    def test_row_structure(self, seed, n):
        net = random_network(np.random.default_rng(seed), n, exp_range=(-3, 3))
        c = assemble(net)
        for i in range(n):
            row = c.offdiag.getrow(i)
            assert np.all(row.data > 0)
            # Same summation order as assembly: exact cancellation.
            assert c.diag[i] + sum(row.data) == 0.0
            assert c.tau[i] > 0
        for (i, j), r in zip(net.edges, net.resistance):
            a = c.coupling(i, j) * net.capacity[i]
            b = c.coupling(j, i) * net.capacity[j]
            assert a == pytest.approx(b, rel=1e-14)
            assert c.coupling(i, j) == 1.0 / (r * net.capacity[i])


class TestSineLine:
    def test_spacing_and_coupling(self, sine101):
        dx = sine101.meta["dx"]
        assert dx == pytest.approx(math.pi / 100)
        assert round(dx, 4) == 0.0314
        c = assemble(sine101)
        assert c.coupling(50, 51) == pytest.approx((100 / math.pi) ** 2, rel=1e-12)
        assert c.coupling(50, 51) == pytest.approx(1013.2, abs=0.05)

    def test_initial_profile(self, sine101):
        assert sine101.u0[50] == pytest.approx(10.0, abs=1e-12)
        assert sine101.u0[0] == 0.0 and sine101.u0[100] == 0.0
        assert sine101.pinned[0] == 0.0 and sine101.pinned[100] == 0.0
        assert np.isnan(sine101.pinned[1:100]).all()

    def test_reproduces_homogeneous_stencil(self, sine101):
        c = assemble(sine101)
        u = sine101.u0
        dudt = c.matrix() @ u
        dx = sine101.meta["dx"]
        stencil = (u[:-2] - 2 * u[1:-1] + u[2:]) / dx**2
        np.testing.assert_allclose(dudt[1:-1], stencil, rtol=1e-12, atol=1e-9)

    def test_unpinned_variant(self):
        net = build_sine_line(11, pin_ends=False)
        assert not net.is_pinned.any()

    def test_too_short(self):
        with pytest.raises(NetworkError):
            build_sine_line(2)


class TestLattice:
    def test_moderate_size_and_ranges(self):
        net = build_random_lattice(50, 20, (-1, 1), seed=3)
        assert net.n_cells == 1000
        assert net.n_edges == 49 * 20 + 50 * 19
        for arr in (net.capacity, net.resistance):
            assert arr.min() >= 0.1 and arr.max() <= 10.0
        assert 0 <= net.u0.min() and net.u0.max() <= 1000
        assert -500 <= net.source.min() and net.source.max() <= 500

    def test_stiff_preset(self):
        net = build_random_lattice(250, 20, (-3, 3), u0_spec=0.0, seed=1)
        assert net.n_cells == 5000
        assert np.all(net.u0 == 0.0)
        assert net.capacity.min() >= 1e-3 and net.capacity.max() <= 1e3

    def test_deterministic(self):
        a = build_random_lattice(7, 5, seed=11)
        b = build_random_lattice(7, 5, seed=11)
        for name in ("capacity", "source", "u0", "resistance", "edges"):
            assert np.array_equal(getattr(a, name), getattr(b, name))
        c = build_random_lattice(7, 5, seed=12)
        assert not np.array_equal(a.capacity, c.capacity)

    def test_edge_convention(self):
        nx, ny = 4, 3
        net = build_random_lattice(nx, ny, seed=5)
        rng = np.random.Generator(np.random.PCG64(5))
        n = nx * ny
        rng.uniform(-1, 1, n)
        rx = 10.0 ** rng.uniform(-1, 1, n)
        ry = 10.0 ** rng.uniform(-1, 1, n)
        lookup = {tuple(e): r for e, r in zip(net.edges.tolist(), net.resistance)}
        for iy in range(ny):
            for ix in range(nx):
                k = iy * nx + ix
                if ix < nx - 1:
                    assert lookup[(k, k + 1)] == rx[k]
                if iy < ny - 1:
                    assert lookup[(k, k + nx)] == ry[k]

    def test_empty(self):
        with pytest.raises(NetworkError):
            build_random_lattice(0, 4)


class TestFileFormat:
    def test_round_trip(self, tmp_path, sine101):
        path = tmp_path / "sine.json"
        save_network(sine101, path)
        back = load_network(path)
        for name in ("capacity", "source", "u0", "resistance", "edges"):
            assert np.array_equal(getattr(back, name), getattr(sine101, name))
        assert np.array_equal(np.isnan(back.pinned), np.isnan(sine101.pinned))

    def test_lattice_round_trip_is_bit_exact(self, tmp_path):
        net = build_random_lattice(6, 4, seed=9)
        path = tmp_path / "lat.json"
        save_network(net, path)
        back = load_network(path)
        assert np.array_equal(back.capacity, net.capacity)
        assert np.array_equal(back.resistance, net.resistance)
        assert back.meta["seed"] == 9

    def test_schema(self, two_cell):
        doc = to_dict(two_cell)
        assert doc["format"] == "heatnet-network" and doc["version"] == 1
        assert doc["cells"][0] == {"id": 0, "C": 1.0, "Q": 0.0, "u0": 0.0}
        assert doc["edges"] == [{"i": 0, "j": 1, "R": 1.0}]

    def test_rejects_invalid_documents(self, two_cell):
        doc = to_dict(two_cell)
        doc["edges"][0]["R"] = -1
        with pytest.raises(NetworkError):
            from_dict(doc)
        with pytest.raises(NetworkError):
            from_dict({"format": "heatnet-network", "version": 99, "cells": [], "edges": []})
        with pytest.raises(NetworkError):
            from_dict({"cells": [{"id": 0}], "edges": []})
