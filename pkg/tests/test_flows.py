import math

import numpy as np
import pytest

import cyclewalk as cw
from conftest import random_chain


class TestFlowBasics:
    def test_edge_value_antisymmetric(self, dw_gen16):
        es = cw.edge_space(dw_gen16)
        phi = cw.Flow(es)
        phi.add_edge(3, 4, 2.5)
        assert phi.value(3, 4) == 2.5
        assert phi.value(4, 3) == -2.5

    def test_single_edge_divergence(self, dw_gen16):
        es = cw.edge_space(dw_gen16)
        phi = cw.Flow(es)
        phi.add_edge(3, 4, 1.5)
        d = phi.div()
        assert d[3] == 1.5 and d[4] == -1.5
        assert np.count_nonzero(d) == 2

    def test_global_divergence_sums_to_zero(self, dw_gen16_3):
        es = cw.edge_space(dw_gen16_3)
        rng = np.random.default_rng(30)
        phi = cw.Flow(es, rng.standard_normal(es.m))
        assert abs(phi.div().sum()) <= 1e-10 * np.abs(phi.vec).max()

    def test_arithmetic(self, dw_gen16):
        es = cw.edge_space(dw_gen16)
        rng = np.random.default_rng(31)
        a = cw.Flow(es, rng.standard_normal(es.m))
        b = cw.Flow(es, rng.standard_normal(es.m))
        assert np.allclose((a + b - b).vec, a.vec)
        assert np.allclose(a.scaled(2.0).vec, 2.0 * a.vec)

    def test_cauchy_schwarz(self, dw_gen16_3):
        es = cw.edge_space(dw_gen16_3)
        rng = np.random.default_rng(32)
        a = cw.Flow(es, rng.standard_normal(es.m))
        b = cw.Flow(es, rng.standard_normal(es.m))
        assert abs(a.inner(b)) <= math.sqrt(a.norm2() * b.norm2()) + 1e-12


class TestFieldFlows:
    def test_psi_norm_is_dirichlet(self, dw_gen16_3):
        g = dw_gen16_3
        rng = np.random.default_rng(33)
        f = rng.standard_normal(g.n)
        _, _, psi = cw.field_flows(g, f)
        assert psi.norm2() == pytest.approx(g.dirichlet(f), rel=1e-12)

    def test_duality_identities(self):
        ch = random_chain(np.random.default_rng(34), 9)
        rng = np.random.default_rng(35)
        f = rng.standard_normal(ch.n)
        h = rng.standard_normal(ch.n)
        _, _, psi_f = cw.field_flows(ch, f)
        phi_h, phistar_h, _ = cw.field_flows(ch, h)
        Qd = ch.Q.toarray()
        Qstar = ch.adjoint().Q.toarray()
        assert psi_f.inner(phi_h) == pytest.approx(
            float(np.dot(ch.w * -(Qd @ f), h)), rel=1e-10)
        assert psi_f.inner(phistar_h) == pytest.approx(
            float(np.dot(ch.w * -(Qstar @ f), h)), rel=1e-10)

    def test_phi_of_constant_is_stationary_flux(self, dw_gen16_3):
        # Phi_1 has edge values c(x,y) - c(y,x); its divergence is w Q = 0
        g = dw_gen16_3
        phi, _, psi = cw.field_flows(g, np.ones(g.n))
        assert np.abs(phi.div()).max() <= 1e-13 * g.w.max()
        assert psi.norm2() == 0.0


class TestCycleAndPathFlows:
    def test_cycle_flow_divergence_formula(self, dw_gen16_3):
        # summed over every covering translate, div Phi*_{f,z} = -w (Qf)
        g = dw_gen16_3
        rng = np.random.default_rng(36)
        f = rng.standard_normal(g.n)
        es = cw.edge_space(g)
        total = cw.Flow(es)
        for z in g.lat.interiors[0]:
            total = total + cw.cycle_flow(g, f, int(z), star=True)
        target = -g.w * (g.Q @ f)
        d = total.div()
        # states covered by all three translates of the length-3 cycle
        for x in range(2, g.n - 2):
            assert d[x] == pytest.approx(target[x], rel=1e-10, abs=1e-16)

    def test_cycle_flow_net_divergence_zero(self, dw_gen16_3):
        g = dw_gen16_3
        f = np.random.default_rng(37).standard_normal(g.n)
        z = int(g.lat.interiors[0][4])
        for star in (True, False):
            phi = cw.cycle_flow(g, f, z, star=star)
            assert abs(phi.div().sum()) <= 1e-14 * np.abs(phi.vec).max()
            # supported on the single translate only
            assert np.count_nonzero(phi.vec) <= 3

    def test_path_flow_divergence(self, dw_gen16):
        es = cw.edge_space(dw_gen16)
        path = [2, 3, 4, 5]
        phi = cw.path_flow(es, path, 0.7)
        d = phi.div()
        assert d[2] == pytest.approx(0.7)
        assert d[5] == pytest.approx(-0.7)
        assert np.allclose(d[[3, 4]], 0.0)

    def test_good_path_validation(self, dw_gen16):
        g = dw_gen16
        p = cw.GoodPath([2, 3, 4])
        p.validate(g)
        assert p.slack >= 0.0
        with pytest.raises(ValueError):
            cw.GoodPath([2, 3, 2]).validate(g)
        with pytest.raises(ValueError):
            cw.GoodPath([2, 7]).validate(g)  # not a lattice edge

    def test_transfer_divergence(self, dw_gen16):
        g = dw_gen16
        es = cw.edge_space(g)
        phi = cw.Flow(es)
        phi.add_edge(4, 5, 1.0)  # divergence +1 at 4, -1 at 5
        paths = {4: cw.GoodPath([4, 3, 2]), 5: cw.GoodPath([5, 6])}
        chi = cw.transfer_divergence(g, phi, [4, 5], [2, 6], paths)
        d = (phi + chi).div()
        assert np.allclose(d[[4, 5]], 0.0, atol=1e-14)
        assert d[2] == pytest.approx(1.0)
        assert d[6] == pytest.approx(-1.0)

    def test_transfer_missing_path_raises(self, dw_gen16):
        g = dw_gen16
        es = cw.edge_space(g)
        phi = cw.Flow(es)
        phi.add_edge(4, 5, 1.0)
        with pytest.raises(ValueError):
            cw.transfer_divergence(g, phi, [4, 5], [2], {4: cw.GoodPath([4, 3, 2])})


@pytest.fixture(scope="module")
def setup(dw_gen16_3):
    g = dw_gen16_3
    x = g.lat.coords()[:, 0]
    A = [int(np.argmin(np.abs(x + 1.0)))]
    B = [int(np.argmin(np.abs(x - 1.0)))]
    hd = cw.equilibrium_potential(g, A, B)
    return g, A, B, hd


class TestVariationalPrinciples:
    def test_optimizers_attain_capacity(self, setup):
        g, A, B, hd = setup
        f0, phi0 = cw.dirichlet_optimizers(g, hd)
        assert cw.dirichlet_value(g, f0, phi0, A, B,
                                  class_tol=1e-8) == pytest.approx(
            hd.cap, rel=1e-8)
        g0, psi0 = cw.thomson_optimizers(g, hd)
        assert cw.thomson_value(g, g0, psi0, A, B,
                                class_tol=1e-8) == pytest.approx(
            hd.cap, rel=1e-8)

    def test_principles_bracket_capacity(self, setup):
        # any admissible competitor sits on the correct side of the capacity
        g, A, B, hd = setup
        rng = np.random.default_rng(38)
        es = cw.edge_space(g)
        f = hd.V.copy()
        bulk = np.ones(g.n, dtype=bool)
        bulk[A] = bulk[B] = False
        f[bulk] = np.clip(f[bulk] + 0.1 * rng.standard_normal(bulk.sum()), 0, 1)
        assert cw.dirichlet_value(g, f, cw.Flow(es), A, B) >= hd.cap * (1 - 1e-10)
        g0, psi0 = cw.thomson_optimizers(g, hd)
        h = 0.05 * rng.standard_normal(g.n)
        h[A] = h[B] = 0.0
        val = cw.thomson_value(g, h, psi0, A, B, class_tol=1e-8)
        assert val <= hd.cap * (1 + 1e-10)

    def test_admissibility_enforced(self, setup):
        g, A, B, hd = setup
        es = cw.edge_space(g)
        bad_f = np.zeros(g.n)  # not 1 on A
        with pytest.raises(ValueError):
            cw.dirichlet_value(g, bad_f, cw.Flow(es), A, B)
        with pytest.raises(ValueError):
            # zero flow is not a unit A -> B flow
            cw.thomson_value(g, np.zeros(g.n), cw.Flow(es), A, B)


class TestCollapseFlow:
    def test_norm_preserved_outside_collapsed_set(self):
        ch = random_chain(np.random.default_rng(39), 10)
        E1 = [7, 8, 9]
        gc = cw.collapse(ch, E1)
        es = cw.edge_space(ch)
        rng = np.random.default_rng(40)
        phi = cw.Flow(es, rng.standard_normal(es.m))
        # zero the flow on all edges touching E1 except one per endpoint so
        # no two E1-edges merge onto the same collapsed edge
        inE1 = np.isin(es.ei, E1) | np.isin(es.ej, E1)
        phi.vec[inE1] = 0.0
        out = cw.collapse_flow(phi, gc)
        assert out.norm2() == pytest.approx(phi.norm2(), rel=1e-12)

    def test_norm_non_increasing(self):
        ch = random_chain(np.random.default_rng(41), 10)
        gc = cw.collapse(ch, [6, 7, 8, 9])
        es = cw.edge_space(ch)
        rng = np.random.default_rng(42)
        for _ in range(10):
            phi = cw.Flow(es, rng.standard_normal(es.m))
            assert cw.collapse_flow(phi, gc).norm2() <= phi.norm2() * (1 + 1e-12)

    def test_commutes_with_field_flow(self):
        # for f constant on the collapsed set, Phi_f collapses to Phi of the
        # pushed-forward function
        ch = random_chain(np.random.default_rng(43), 10)
        E1 = [7, 8, 9]
        gc = cw.collapse(ch, E1)
        f = np.random.default_rng(44).standard_normal(ch.n)
        f[E1] = 0.6
        phi, _, _ = cw.field_flows(ch, f)
        fc = np.append(f[gc.keep], 0.6)
        phic, _, _ = cw.field_flows(gc, fc)
        diff = cw.collapse_flow(phi, gc) - phic
        assert np.abs(diff.vec).max() <= 1e-12 * np.abs(phic.vec).max()

    def test_divergence_pushed_forward(self):
        ch = random_chain(np.random.default_rng(45), 9)
        E1 = [6, 7, 8]
        gc = cw.collapse(ch, E1)
        es = cw.edge_space(ch)
        phi = cw.Flow(es, np.random.default_rng(46).standard_normal(es.m))
        d = phi.div()
        dc = cw.collapse_flow(phi, gc).div()
        for k, orig in enumerate(gc.keep):
            assert dc[k] == pytest.approx(d[orig], rel=1e-10, abs=1e-12)
        assert dc[gc.o] == pytest.approx(d[E1].sum(), rel=1e-10, abs=1e-12)
