import math

import numpy as np
import pytest

import cyclewalk as cw
from cyclewalk.landscape import depth_partition, well_weights


class TestCriticalPoints:
    def test_double_well_1d(self, dw_crit):
        kinds = [(c.kind, c.location[0], c.value) for c in dw_crit]
        assert len(dw_crit) == 3
        assert kinds[0][0] == "minimum"
        assert kinds[0][1] == pytest.approx(-1.0, abs=1e-9)
        assert kinds[0][2] == pytest.approx(-0.25, abs=1e-12)
        assert kinds[1][0] == "saddle"
        assert kinds[1][1] == pytest.approx(0.0, abs=1e-9)
        assert kinds[2][1] == pytest.approx(1.0, abs=1e-9)

    def test_double_well_1d_curvatures(self, dw_crit):
        assert dw_crit[0].eigenvalues[0] == pytest.approx(2.0, abs=1e-8)
        assert dw_crit[1].eigenvalues[0] == pytest.approx(-1.0, abs=1e-8)

    def test_triple_well_1d(self, tw_crit):
        locs = [c.location[0] for c in tw_crit]
        kinds = [c.kind for c in tw_crit]
        assert len(tw_crit) == 5
        s = 1.0 / math.sqrt(3.0)
        assert locs == pytest.approx([-1.0, -s, 0.0, s, 1.0], abs=1e-8)
        assert kinds == ["minimum", "saddle", "minimum", "saddle", "minimum"]
        # saddle height 4/27 and curvature -8/3
        for c in (tw_crit[1], tw_crit[3]):
            assert c.value == pytest.approx(4.0 / 27.0, abs=1e-10)
            assert c.eigenvalues[0] == pytest.approx(-8.0 / 3.0, abs=1e-7)

    def test_double_well_2d(self, dw2_crit):
        kinds = sorted(c.kind for c in dw2_crit)
        assert kinds == ["minimum", "minimum", "saddle"]
        sad = next(c for c in dw2_crit if c.kind == "saddle")
        assert np.allclose(sad.location, [0.0, 0.0], atol=1e-9)
        H = np.atleast_2d(cw.double_well_2d().hess(sad.location))
        assert np.allclose(H, np.diag([-1.0, 1.0]), atol=1e-9)

    def test_degenerate_raises(self):
        field = cw.polynomial_field([(0.25, (4,))], [(-1.0, 1.0)])
        with pytest.raises(cw.landscape.DegenerateCriticalPointError):
            cw.find_critical_points(field)

    def test_deterministic(self, dw_field):
        a = cw.find_critical_points(dw_field)
        b = cw.find_critical_points(dw_field)
        for ca, cb in zip(a, b):
            assert np.array_equal(ca.location, cb.location)


class TestLandscapeStructure:
    def test_double_well(self, dw_ls):
        assert dw_ls.n_wells == 2
        assert np.allclose(dw_ls.h, [-0.25, -0.25])
        assert dw_ls.m[0][0] == pytest.approx(-1.0, abs=1e-8)
        assert dw_ls.m[1][0] == pytest.approx(1.0, abs=1e-8)
        assert (0, 1) in dw_ls.saddles
        assert len(dw_ls.saddles[(0, 1)]) == 1

    def test_double_well_targets(self, dw_ls):
        # from well 0, the target is the other deepest minimum at +1
        assert len(dw_ls.targets[0]) == 1
        assert dw_ls.targets[0][0][0] == pytest.approx(1.0, abs=1e-8)

    def test_triple_well(self, tw_ls):
        assert tw_ls.n_wells == 3
        assert np.allclose(tw_ls.h, [0.0, 0.0, 0.0], atol=1e-10)
        assert (0, 1) in tw_ls.saddles and (1, 2) in tw_ls.saddles
        assert (0, 2) not in tw_ls.saddles

    def test_classify_descent(self, dw_ls):
        assert dw_ls.classify(np.array([-0.4])) == 0
        assert dw_ls.classify(np.array([0.4])) == 1
        assert dw_ls.classify(np.array([1.55])) is None  # F >= H there

    def test_no_saddle_at_height_raises(self, dw_field, dw_crit):
        with pytest.raises(ValueError):
            cw.build_landscape(dw_field, 0.1, None, dw_crit)

    def test_epsilon_auto_half_gap(self, dw_ls):
        # gap between H=0 and the next critical value -0.25 is 0.25
        assert dw_ls.epsilon == pytest.approx(0.125)


class TestWeightsAndDepths:
    def test_well_weights_double(self, dw_ls, dw_field):
        nu = well_weights(dw_ls, dw_field)
        assert np.allclose(nu, [1.0 / math.sqrt(2.0)] * 2, atol=1e-10)

    def test_well_weights_triple(self, tw_ls, tw_field):
        nu = well_weights(tw_ls, tw_field)
        assert nu[0] == pytest.approx(1.0 / math.sqrt(8.0), abs=1e-9)
        assert nu[1] == pytest.approx(1.0 / math.sqrt(2.0), abs=1e-9)
        assert nu[2] == pytest.approx(1.0 / math.sqrt(8.0), abs=1e-9)

    def test_depth_partition_equal(self, dw_ls):
        theta, T, S = depth_partition(dw_ls)
        assert theta == pytest.approx([0.25])
        assert T == [{0, 1}]
        assert S == [{0, 1}]

    def test_depth_partition_mixed(self):
        # depths {0.25, 0.25, 0.40} -> theta (0.25, 0.40), T1={0,1}, T2={2}
        import dataclasses

        class Stub:
            n_wells = 3
            theta_hat = np.array([0.25, 0.25, 0.40])

        theta, T, S = depth_partition(Stub())
        assert theta == pytest.approx([0.25, 0.40])
        assert T == [{0, 1}, {2}]
        assert S == [{0, 1, 2}, {2}]

    def test_perturbation_enters_weights(self):
        field = cw.double_well_1d(g_monomials=[(1.0, (1,))])  # G(x) = x
        crit = cw.find_critical_points(field)
        ls = cw.build_landscape(field, 0.0, None, crit)
        nu = well_weights(ls, field)
        # e^{-G(-1)}/sqrt(2) and e^{-G(1)}/sqrt(2)
        assert nu[0] == pytest.approx(math.e / math.sqrt(2.0), rel=1e-9)
        assert nu[1] == pytest.approx(1.0 / (math.e * math.sqrt(2.0)), rel=1e-9)


class TestPotentialField:
    def test_f_n(self, dw_field):
        field = cw.double_well_1d(g_monomials=[(2.0, (0,))])  # G = 2
        x = np.array([0.5])
        assert field.f_n(x, 10) == pytest.approx(field.f(x) + 0.2)

    def test_hessian_symmetry(self, dw2_field):
        assert dw2_field.check_hessian_symmetry(np.array([0.3, -0.2]))

    def test_boundary_outflow(self, dw_field, dw2_field):
        assert dw_field.boundary_outflow_ok()
        assert dw2_field.boundary_outflow_ok()

    def test_polynomial_grad_hess_fd(self):
        field = cw.polynomial_field(
            [(1.0, (2, 1)), (-0.5, (0, 3)), (0.25, (4, 0))],
            [(-1.0, 1.0), (-1.0, 1.0)])
        rng = np.random.default_rng(0)
        for _ in range(5):
            x = rng.uniform(-0.9, 0.9, 2)
            h = 1e-6
            for k in range(2):
                e = np.zeros(2)
                e[k] = h
                fd = (field.f(x + e) - field.f(x - e)) / (2 * h)
                assert field.grad(x)[k] == pytest.approx(fd, abs=1e-7)
                gd = (field.grad(x + e) - field.grad(x - e)) / (2 * h)
                assert np.allclose(field.hess(x)[:, k], gd, atol=1e-6)
