import math

import numpy as np
import pytest

from supgdwr.discretization import build_space, uniform_slabs
from supgdwr.mesh import refine
from supgdwr.primal import (NO_STABILIZATION, StabilizationParams, assemble_slab_system,
                            cell_deltas, delta_K, solve_primal)
from supgdwr.problems import ProblemData

from conftest import random_adapted_slabs, unit_mesh

SUPG = StabilizationParams()


def test_delta_examples():
    h = math.sqrt(2) / 4
    assert math.sqrt(13) * h / 2 == pytest.approx(0.637, abs=1e-3)
    assert delta_K(h, math.sqrt(13), 1.0, SUPG) == 0.0
    h = 2 ** -5 * math.sqrt(2)
    d = delta_K(h, math.sqrt(13), 1e-6, StabilizationParams(delta0=0.5))
    assert d == pytest.approx(0.5 * h / math.sqrt(13), rel=1e-15)
    assert d == pytest.approx(6.13e-3, abs=5e-6)
    assert delta_K(h, math.sqrt(13), 1e-6, NO_STABILIZATION) == 0.0
    assert delta_K(h, 0.0, 1e-6, SUPG) == 0.0
    with pytest.raises(ValueError):
        StabilizationParams(delta0=-1.0)


# -- independent dense reference ------------------------------------------

_G = [0.5 - 0.5 / math.sqrt(3), 0.5 + 0.5 / math.sqrt(3)]


def _q1(i, s, t):
    """Bilinear basis on [0,1]^2, vertex i = (i % 2, i // 2); value, d/ds, d/dt."""
    a, b = i % 2, i // 2
    fs, ds = (s, 1.0) if a else (1 - s, -1.0)
    ft, dt = (t, 1.0) if b else (1 - t, -1.0)
    return fs * ft, ds * ft, fs * dt


def _dense_reference(mesh, nodes, tau, eps, b, alpha, delta):
    """Loop over cells and 2x2 Gauss points, all in plain Python."""
    n = len(nodes)
    A = np.zeros((n, n))
    index = {tuple(np.round(p, 12)): k for k, p in enumerate(nodes)}
    for c in range(mesh.n_cells):
        (x0, y0), (hx, hy) = mesh.cell_origin[c], mesh.cell_size[c]
        glob = [index[(round(x0 + hx * (i % 2), 12), round(y0 + hy * (i // 2), 12))]
                for i in range(4)]
        for s in _G:
            for t in _G:
                w = 0.25 * hx * hy
                vals = [_q1(i, s, t) for i in range(4)]
                for i in range(4):
                    vi, dxi, dyi = vals[i][0], vals[i][1] / hx, vals[i][2] / hy
                    sdi = b[0] * dxi + b[1] * dyi
                    for j in range(4):
                        vj, dxj, dyj = vals[j][0], vals[j][1] / hx, vals[j][2] / hy
                        sdj = b[0] * dxj + b[1] * dyj
                        m = vj * vi
                        k = dxj * dxi + dyj * dyi
                        val = m + tau * (eps * k + sdj * vi + alpha * m)
                        val += delta[c] * (vj * sdi + tau * (sdj + alpha * vj) * sdi)
                        A[glob[i], glob[j]] += w * val
    return A


def test_unstabilized_matrix_matches_dense_oracle():
    m = unit_mesh(2)
    p = ProblemData(eps=1.0, b=(2.0, 3.0), alpha=1.0)
    slab = uniform_slabs(m, 1.0, 8)[3]
    sys = assemble_slab_system(slab, None, p, NO_STABILIZATION)
    s = build_space(m, 1)
    ref = _dense_reference(m, s.nodes, slab.tau, 1.0, (2.0, 3.0), 1.0, np.zeros(4))
    np.testing.assert_allclose(sys.full_matrix.toarray(), ref, rtol=0, atol=1e-13)


def test_supg_terms_on_one_cell():
    m = unit_mesh(1)
    p = ProblemData(eps=1e-4, b=(1.0, 0.0), alpha=0.5)
    slab = uniform_slabs(m, 1.0, 4)[0]
    s = build_space(m, 1)
    delta = cell_deltas(s, p, SUPG)
    assert delta[0] == pytest.approx(0.5 * math.sqrt(2))
    with_s = assemble_slab_system(slab, None, p, SUPG).full_matrix.toarray()
    without = assemble_slab_system(slab, None, p, NO_STABILIZATION).full_matrix.toarray()
    extra = (_dense_reference(m, s.nodes, slab.tau, 1e-4, (1.0, 0.0), 0.5, delta)
             - _dense_reference(m, s.nodes, slab.tau, 1e-4, (1.0, 0.0), 0.5, np.zeros(1)))
    np.testing.assert_allclose(with_s - without, extra, rtol=0, atol=1e-14)
    assert np.abs(extra).max() > 0.01


def _solve(p, slabs, params=NO_STABILIZATION):
    return solve_primal(slabs, p, params)


def test_constant_state_is_kept():
    c = 2.5
    p = ProblemData(eps=1.0, g_D=lambda t, x, y: c + 0 * x, u0=lambda x, y: c + 0 * x)
    u = _solve(p, uniform_slabs(unit_mesh(4), 1.0, 5))
    for v in u.values:
        np.testing.assert_allclose(v, c, rtol=0, atol=1e-13)


@pytest.mark.parametrize("eps,params", [(1e-3, SUPG), (1e-6, SUPG), (1.0, NO_STABILIZATION)])
def test_discrete_maximum_principle_smoke(eps, params):
    p = ProblemData(eps=eps, b=(2.0, 3.0), g_D=lambda t, x, y: 1 + 0 * x,
                    u0=lambda x, y: 1 + 0 * x)
    u = _solve(p, random_adapted_slabs(seed=5), params)
    for v in u.values:
        assert v.min() >= 1 - 1e-10 and v.max() <= 1 + 1e-10


def test_zero_data_gives_zero():
    p = ProblemData(eps=1e-2, b=(2.0, 3.0), alpha=1.0)
    u = _solve(p, random_adapted_slabs(seed=1), SUPG)
    assert all(np.abs(v).max() == 0.0 for v in u.values)


def test_linear_in_time_solution():
    p = ProblemData(eps=1.0, f=lambda t, x, y: 1 + 0 * x, g_D=lambda t, x, y: t + 0 * x)
    slabs = uniform_slabs(refine(unit_mesh(3), [4]), 1.0, 8)
    u = _solve(p, slabs)
    for v, sl in zip(u.values, slabs):
        np.testing.assert_allclose(v, sl.t1, rtol=0, atol=1e-12)
        # distance from the slab mean of the exact solution is tau / 2
        assert abs(v.mean() - 0.5 * (sl.t0 + sl.t1)) <= sl.tau / 2 + 1e-12


def test_causality():
    base = dict(eps=1e-3, b=(2.0, 3.0), alpha=1.0, u0=lambda x, y: x * y)
    slabs = random_adapted_slabs(seed=2)
    cut = slabs[3].t1
    p1 = ProblemData(f=lambda t, x, y: 1 + 0 * x, **base)
    p2 = ProblemData(f=lambda t, x, y: 1 + 5 * (t > cut) * x, **base)
    u1, u2 = _solve(p1, slabs, SUPG), _solve(p2, slabs, SUPG)
    for n in range(4):
        np.testing.assert_array_equal(u1.values[n], u2.values[n])
    assert np.abs(u1.values[-1] - u2.values[-1]).max() > 1e-3


def test_degenerate_slab_rejected():
    from supgdwr.discretization import DiscretizationError, SpaceTimeSlab
    with pytest.raises(DiscretizationError):
        SpaceTimeSlab(0.5, 0.5, unit_mesh(1))
