"""Family constructors against hand-computed values and invariants."""

import math

import numpy as np
import pytest

from homlab.ergodic import ErgodicSystem
from homlab.families import (FieldTriple, add_families, cell_resample, glue,
                             implicit_eta, make_almost_periodic,
                             make_locally_periodic, make_random, make_regular,
                             make_sparse, make_stabilizing, negate,
                             scale_left)
from homlab.fields import (constant_field, interval, scalar_field, zero_field)
from homlab.lattice import cell_integral, cells_inside, unit_lattice

UNIT = interval(0.0, 1.0)


def _regular_sin():
    def at(eps):
        return scalar_field(1, lambda p: eps * np.sin(p[:, 0]), eps, UNIT)

    return make_regular(at, zero_field(1, 1, UNIT), lambda eps: eps, UNIT)


def test_regular_family_deviations_match_definition():
    fam = _regular_sin()
    pts = np.linspace(0.1, 0.9, 7)[:, None]
    devs = dict(fam.deviations(0.25))
    got = devs["v"](pts)[:, 0, 0]
    assert np.allclose(got, 0.25 * np.sin(pts[:, 0]), atol=1e-15)
    assert fam.rate(0.25) == pytest.approx(0.25)


def test_regular_family_rejects_shape_mismatch():
    with pytest.raises(ValueError):
        make_regular(lambda eps: zero_field(1, 2, UNIT),
                     zero_field(1, 1, UNIT), lambda eps: eps, UNIT)


def test_identical_family_has_zero_deviations():
    v0 = constant_field(1, 3.0, UNIT)
    fam = make_regular(lambda eps: v0, v0, lambda eps: 0.0, UNIT)
    pts = np.linspace(0.0, 1.0, 11)[:, None]
    for _, dev in fam.deviations(0.01):
        assert np.abs(dev(pts)).max() == 0.0


def test_stabilizing_profile_value():
    # V(x, xi) = 2 + exp(-xi); at eps the value at x is 2 + exp(-x/eps)
    def vfun(x, xi):
        return (2.0 + np.exp(-np.abs(xi[:, 0])))[:, None, None]

    fam = make_stabilizing(vfun, constant_field(1, 2.0, UNIT),
                           rho6=lambda eps: math.exp(-eps ** (-1.0 / 3.0)),
                           domain=UNIT, sup_bound=3.0)
    eps = 0.05
    pts = np.array([[0.2], [0.7]])
    vals = fam.at(eps).v(pts)[:, 0, 0]
    assert np.allclose(vals, 2.0 + np.exp(-pts[:, 0] / eps), atol=1e-15)
    assert fam.rate(eps) == pytest.approx(
        math.exp(-eps ** (-1.0 / 3.0)) + eps ** (1.0 / 3.0))


def test_locally_periodic_single_scale_rate():
    def vfun(x, xi):
        return (x[:, 0] * (1.0 + np.cos(2 * math.pi * xi[:, 0])))[:, None, None]

    fam = make_locally_periodic(
        vfun, [lambda eps: eps],
        scalar_field(1, lambda p: p[:, 0], 1.0, UNIT),
        rho8=lambda r: r, domain=UNIT, sup_bound=2.0, periods=[1.0])
    # m = 1: no separation penalty, rate is sqrt of the single scale
    assert fam.rate(0.04) == pytest.approx(0.2)
    pts = np.array([[0.5]])
    eps = 0.125
    val = fam.at(eps).v(pts)[0, 0, 0]
    assert val == pytest.approx(0.5 * (1.0 + math.cos(2 * math.pi * 0.5 / eps)))


def test_locally_periodic_two_scale_separation_penalty():
    def vfun(x, xi1, xi2):
        return (np.cos(2 * math.pi * xi1[:, 0])
                + np.cos(2 * math.pi * xi2[:, 0]))[:, None, None]

    rho8 = lambda r: 2.0 * r
    fam = make_locally_periodic(
        vfun, [lambda eps: eps, lambda eps: eps ** 2],
        zero_field(1, 1, UNIT), rho8=rho8, domain=UNIT, sup_bound=2.0)
    eps = 0.1
    expected = 2.0 * (math.sqrt(2.0) * 1.0 * eps ** 2 / eps) + math.sqrt(eps)
    assert fam.rate(eps) == pytest.approx(expected)
    assert fam.finest_scale(eps) == pytest.approx(eps ** 2)


def test_almost_periodic_box_average_oracle():
    # single frequency alpha: the mean over (0, r) of e^{i alpha x / eps}
    # has magnitude |2 eps sin(r alpha / (2 eps)) / (r alpha)| <= 2 eps/(r alpha)
    fam = make_almost_periodic([(np.array([3.0]), np.array([[1.0]]))], UNIT)
    eps = 0.01
    r = 0.2
    trip = fam.at(eps)
    n = 40001
    xs = np.linspace(0.0, r, n)[:, None]
    vals = trip.v(xs)[:, 0, 0]
    measured = np.abs(np.trapezoid(vals, dx=r / (n - 1)) / r)
    exact = abs(2 * eps * math.sin(r * 3.0 / (2 * eps)) / (r * 3.0))
    assert measured == pytest.approx(exact, abs=5e-6)
    decay = fam.meta["mean_decay"](r / eps)
    assert measured <= decay + 1e-12


def test_almost_periodic_limit_collects_zero_frequency():
    fam = make_almost_periodic(
        [(np.array([0.0]), np.array([[1.5]])),
         (np.array([2.0]), np.array([[0.5]]))], UNIT)
    pts = np.array([[0.3]])
    assert fam.limit.v(pts)[0, 0, 0] == pytest.approx(1.5)
    # rate at eps: cell eta = sqrt(eps) covers eta/eps periods
    eps = 0.04
    eta = math.sqrt(eps)
    expected = min(1.0, 2.0 / (2.0 * eta / eps)) * 0.5 + eta
    assert fam.rate(eps) == pytest.approx(expected)


def test_sparse_bumps_vanish_off_support():
    fam = make_sparse(
        centers=lambda eps: np.array([[0.25], [0.75]]),
        rho4=lambda eps: 0.4,
        rho5=lambda eps: 0.1,
        bump_profile=lambda r: 1.0 - r,
        amplitude=np.array([[2.0]]),
        domain=UNIT,
    )
    trip = fam.at(0.1)
    # radius 0.04 around each center
    vals = trip.v(np.array([[0.25], [0.27], [0.5], [0.75]]))[:, 0, 0]
    assert vals[0] == pytest.approx(2.0)
    assert vals[1] == pytest.approx(2.0 * (1.0 - 0.02 / 0.04))
    assert vals[2] == 0.0
    assert vals[3] == pytest.approx(2.0)
    assert fam.rate(0.1) == pytest.approx(0.1 + 0.4)


def test_sparse_rejects_close_centers():
    fam = make_sparse(
        centers=lambda eps: np.array([[0.5], [0.6]]),
        rho4=lambda eps: 0.4,
        rho5=lambda eps: 0.1,
        bump_profile=lambda r: 1.0 - r,
        amplitude=1.0,
        domain=UNIT,
    )
    with pytest.raises(ValueError):
        fam.at(0.1)


def test_implicit_eta_closed_form():
    # p0(t) = sqrt(t): p1(r) = min(r^2, r^2) = r^2, threshold sqrt(eps)
    eps = 0.01
    eta = implicit_eta(lambda t: math.sqrt(t), eps)
    assert eta == pytest.approx(eps ** 0.25, abs=1e-10)


def test_implicit_eta_degenerate_raises():
    with pytest.raises(ValueError):
        implicit_eta(lambda t: 1e-6, 0.25)


def test_random_family_deterministic_in_seed():
    def obs(pts):
        return np.cos(2 * math.pi * pts[:, 0])[:, None, None]

    sys1 = ErgodicSystem(k=1, dim=1, flow=np.array([[1.0 / math.sqrt(3)]]),
                         observable=obs, ncomp=1, sup_bound=1.0)
    fam_a = make_random(sys1, UNIT, seed=42)
    fam_b = make_random(sys1, UNIT, seed=42)
    fam_c = make_random(sys1, UNIT, seed=43)
    pts = np.linspace(0, 1, 9)[:, None]
    va = fam_a.at(0.03).v(pts)
    vb = fam_b.at(0.03).v(pts)
    vc = fam_c.at(0.03).v(pts)
    assert np.array_equal(va, vb)
    assert not np.allclose(va, vc)
    # limit is the torus expectation of cos, which vanishes
    assert abs(fam_a.limit.v(pts)[0, 0, 0]) < 1e-14


def test_add_families_values_and_rates_add():
    fam = add_families(_regular_sin(), _regular_sin())
    pts = np.array([[0.4]])
    assert fam.at(0.2).v(pts)[0, 0, 0] == pytest.approx(
        2 * 0.2 * math.sin(0.4))
    assert fam.rate(0.2) == pytest.approx(0.4)


def test_negate_flips_sign():
    fam = negate(_regular_sin())
    pts = np.array([[0.4]])
    assert fam.at(0.2).v(pts)[0, 0, 0] == pytest.approx(-0.2 * math.sin(0.4))


def test_scale_left_multiplies_pointwise():
    psi = scalar_field(1, lambda p: 1.0 + p[:, 0], 2.0, UNIT)
    fam = scale_left(psi, _regular_sin(), w1_bound=2.0)
    pts = np.array([[0.4]])
    assert fam.at(0.2).v(pts)[0, 0, 0] == pytest.approx(
        1.4 * 0.2 * math.sin(0.4))
    assert fam.rate(0.2) == pytest.approx(4.0 * 0.2)


def test_glue_joins_adjacent_boxes():
    left = interval(0.0, 1.0)
    right = interval(1.0, 2.0)
    f1 = make_regular(lambda eps: constant_field(1, 1.0, left),
                      constant_field(1, 1.0, left), lambda eps: 0.0, left)
    f2 = make_regular(lambda eps: constant_field(1, 2.0, right),
                      constant_field(1, 2.0, right), lambda eps: 0.0, right)
    fam = glue(f1, f2)
    assert fam.domain == interval(0.0, 2.0)
    vals = fam.at(0.1).v(np.array([[0.5], [1.5]]))[:, 0, 0]
    assert vals[0] == pytest.approx(1.0)
    assert vals[1] == pytest.approx(2.0)


def test_glue_rejects_overlapping_domains():
    a = interval(0.0, 1.2)
    b = interval(1.0, 2.0)
    f1 = make_regular(lambda eps: zero_field(1, 1, a), zero_field(1, 1, a),
                      lambda eps: 0.0, a)
    f2 = make_regular(lambda eps: zero_field(1, 1, b), zero_field(1, 1, b),
                      lambda eps: 0.0, b)
    with pytest.raises(ValueError):
        glue(f1, f2)


def test_cell_resample_preserves_cell_integrals():
    def at(eps):
        return scalar_field(
            1, lambda p: np.sin(p[:, 0] / eps), 1.0, UNIT)

    fam = make_regular(at, zero_field(1, 1, UNIT), _sqrt := (lambda e: e ** 0.5),
                       UNIT, finest_scale=lambda eps: eps)
    res = cell_resample(fam, seed=7, amplitude=0.5)
    eps = 0.04
    eta = fam.eta_rule(eps)
    cells = cells_inside(unit_lattice(1), eta, UNIT)
    refine = 512
    for z in cells.gammas:
        orig, _ = cell_integral(unit_lattice(1), np.array(z), eta,
                                fam.at(eps).v, refine)
        new, _ = cell_integral(unit_lattice(1), np.array(z), eta,
                               res.at(eps).v, refine)
        assert abs(new[0, 0] - orig[0, 0]) < 1e-10


def test_field_triple_component_labels():
    v = zero_field(1, 1, UNIT)
    trip = FieldTriple(v=v, q=(v,), p=(v, v))
    labels = [lab for lab, _ in trip.components()]
    assert labels == ["v", "q0", "p0", "p1"]
