import numpy as np
import pytest

import cyclewalk as cw


@pytest.fixture(scope="session")
def cyc2():
    return cw.Cycle(((0,), (1,), (0,)))


@pytest.fixture(scope="session")
def cyc3():
    return cw.Cycle(((0,), (1,), (2,), (0,)))


@pytest.fixture(scope="session")
def cyc2d():
    return cw.Cycle(((0, 0), (0, 1), (1, 1), (0, 0)))


@pytest.fixture(scope="session")
def dw_field():
    return cw.double_well_1d()


@pytest.fixture(scope="session")
def tw_field():
    return cw.triple_well_1d()


@pytest.fixture(scope="session")
def dw2_field():
    return cw.double_well_2d()


@pytest.fixture(scope="session")
def dw_crit(dw_field):
    return cw.find_critical_points(dw_field)


@pytest.fixture(scope="session")
def dw_ls(dw_field, dw_crit):
    return cw.build_landscape(dw_field, 0.0, None, dw_crit)


@pytest.fixture(scope="session")
def tw_crit(tw_field):
    return cw.find_critical_points(tw_field)


@pytest.fixture(scope="session")
def tw_ls(tw_field, tw_crit):
    return cw.build_landscape(tw_field, 4.0 / 27.0, None, tw_crit)


@pytest.fixture(scope="session")
def dw2_crit(dw2_field):
    return cw.find_critical_points(dw2_field)


@pytest.fixture(scope="session")
def dw2_ls(dw2_field, dw2_crit):
    return cw.build_landscape(dw2_field, 0.0, None, dw2_crit)


@pytest.fixture(scope="session")
def dw_gen16(dw_field, cyc2):
    lat = cw.discretize(dw_field, 16, [cyc2])
    return cw.build_generator(lat, dw_field)


@pytest.fixture(scope="session")
def dw_gen16_3(dw_field, cyc3):
    lat = cw.discretize(dw_field, 16, [cyc3])
    return cw.build_generator(lat, dw_field)


@pytest.fixture(scope="session")
def dw_wells16(dw_gen16, dw_ls):
    return cw.metastable_sets(dw_gen16.lat, dw_ls)


def ring3():
    """3-state ring with unit rates 0 -> 1 -> 2 -> 0 and unit weights."""
    from scipy import sparse

    off = sparse.csr_matrix(
        np.array([[0.0, 1.0, 0.0], [0.0, 0.0, 1.0], [1.0, 0.0, 0.0]]))
    lam = np.asarray(off.sum(axis=1)).ravel()
    Q = off - sparse.diags(lam)
    return cw.FiniteChain(Q, np.ones(3))


def random_chain(rng, n):
    """Random irreducible chain with a known stationary measure.

    Built reversible-plus-cycle: symmetric conductances plus a rotation along
    the cycle 0 -> 1 -> ... -> n-1 -> 0, so w is stationary by construction.
    """
    from scipy import sparse

    w = rng.uniform(0.5, 2.0, n)
    C = rng.uniform(0.1, 1.0, (n, n))
    C = 0.5 * (C + C.T)
    np.fill_diagonal(C, 0.0)
    theta = rng.uniform(0.1, 1.0)
    for i in range(n):
        C[i, (i + 1) % n] += theta
    # rows of C are conductances c(x,y); c antisymmetric part is divergence
    # free along the added cycle, so w Q has zero column sums
    R = C / w[:, None]
    off = sparse.csr_matrix(R)
    lam = np.asarray(off.sum(axis=1)).ravel()
    Q = off - sparse.diags(lam)
    return cw.FiniteChain(Q, w)
