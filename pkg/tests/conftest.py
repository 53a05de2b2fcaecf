import math

import numpy as np
import pytest

from heatnet.network import CellNetwork, assemble, build_sine_line, two_cell_network
from heatnet.reference import spectrum
from heatnet.schemes import CN, LN, euler_max_step, make_plan, phi2, step

ACCEPTANCE_LINES: list[str] = []


def random_network(rng: np.random.Generator, n: int, *, exp_range=(-2.0, 2.0), p_extra=0.15,
                   source=False, pinned=0, u_range=(0.0, 100.0)) -> CellNetwork:
    """Connected random graph: a random spanning tree plus extra random edges."""
    order = rng.permutation(n)
    edges = {tuple(sorted((int(order[k]), int(order[rng.integers(0, k)])))) for k in range(1, n)}
    for i in range(n):
        for j in range(i + 1, n):
            if rng.random() < p_extra / max(1, n / 10):
                edges.add((i, j))
    edges = sorted(edges)
    lo, hi = exp_range
    pin = np.full(n, np.nan)
    u0 = rng.uniform(*u_range, n)
    if pinned:
        idx = rng.choice(n, size=pinned, replace=False)
        pin[idx] = u0[idx]
    return CellNetwork(
        capacity=10.0 ** rng.uniform(lo, hi, n),
        source=rng.uniform(-50, 50, n) if source else np.zeros(n),
        u0=u0,
        pinned=pin,
        edges=edges,
        resistance=10.0 ** rng.uniform(lo, hi, len(edges)),
    )


def max_min_case(seed):
    """One random (network, scheme, h, steps) case for the convexity property."""
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 40))
    net = random_network(rng, n, exp_range=(-3, 3), u_range=(0.0, 1000.0))
    c = assemble(net)
    schemes = [CN(k) for k in range(1, 7)] + [LN(k) for k in range(2, 7)]
    scheme = schemes[rng.integers(len(schemes))]
    tau = c.tau
    lo, hi = math.log10(1e-6 * tau.min()), math.log10(1e6 * tau.max())
    if rng.random() < 0.25:
        h = float(10.0 ** rng.uniform(0, 6)) * euler_max_step(spectrum(net))
    else:
        h = float(10.0 ** rng.uniform(lo, hi))
    return net, c, scheme, h, int(rng.integers(1, 40))


def max_min_violation(net, c, scheme, h, steps):
    u0 = net.u0
    lo, hi = u0.min(), u0.max()
    plan = make_plan(c, h)
    state = net.initial_state()
    worst = 0.0
    for _ in range(steps):
        state = step(state, scheme, plan, c)
        worst = max(worst, lo - state.u.min(), state.u.max() - hi)
    return worst / (hi - lo)


def bracket(z1, zj):
    """Nonnegative coefficient expression of the LN2 convexity argument."""
    # phi1(z) - 1 == z * phi2(z), without the cancellation near zero.
    return -np.expm1(z1) + (-np.expm1(zj)) * (z1 * phi2(z1))


def bracket_grid():
    neg = -np.logspace(-8, 8, 321)
    z1, zj = np.meshgrid(neg, np.concatenate([neg, [0.0]]), indexing="ij")
    return z1, zj

@pytest.fixture
def two_cell():
    return two_cell_network()


@pytest.fixture(scope="session")
def sine101():
    return build_sine_line(101)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
