"""Cell enumeration and quadrature against closed-form integrals."""

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from homlab.fields import Box, constant_field, interval, scalar_field
from homlab.lattice import (Lattice, box_integral, cell_integral, cell_mean,
                            cells_inside, default_refine, margin_boxes,
                            unit_lattice)

UNIT = interval(0.0, 1.0)


def sin_field(eps):
    return scalar_field(1, lambda pts: np.sin(pts[:, 0] / eps), 1.0, UNIT)


def test_singular_basis_rejected():
    with pytest.raises(ValueError):
        Lattice(2, basis=np.array([[1.0, 1.0], [1.0, 1.0]]))


def test_cells_inside_unit_interval():
    cells = cells_inside(unit_lattice(1), 0.25, UNIT)
    assert cells.gammas == ((0,), (1,), (2,), (3,))
    assert cells.covered_measure() == pytest.approx(1.0)


def test_cells_inside_partial_cover():
    cells = cells_inside(unit_lattice(1), 0.3, UNIT)
    # 3 cells of length 0.3 fit in (0,1), the fourth sticks out
    assert len(cells) == 3
    assert cells.covered_measure() == pytest.approx(0.9)


def test_cells_inside_2d_offset_lattice():
    lat = Lattice(2, basis=2.0 * np.eye(2), offset=(-1.0, -1.0))
    box = Box((0.0, 0.0), (2.0, 2.0))
    cells = cells_inside(lat, 1.0, box)
    # cells are 1 * (2 (0,1)^2 + 2 z - 1): side 2, corners at odd integers
    assert len(cells) == 0
    # at eta 0.5 the cells are [z - 1/2, z + 1/2]^2; only z = (1, 1) fits
    cells2 = cells_inside(lat, 0.5, box)
    assert len(cells2) == 1
    assert cells2.gammas == ((1, 1),)
    # at eta 0.25 the corners move to half-integers, z in {1, 2, 3}^2
    cells3 = cells_inside(lat, 0.25, box)
    assert len(cells3) == 9


def test_sine_cell_integral_closed_form():
    # int_0^h sin(x / eps) dx = eps (1 - cos(h / eps))
    eps = 0.05
    h = 0.3
    val, err = cell_integral(unit_lattice(1), (0,), h, sin_field(eps), 64)
    exact = eps * (1.0 - math.cos(h / eps))
    assert val[0, 0] == pytest.approx(exact, abs=1e-12)
    assert err < 1e-10


def test_shifted_cell_integral_closed_form():
    eps = 0.07
    h = 0.2
    val, _ = cell_integral(unit_lattice(1), (2,), h, sin_field(eps), 64)
    exact = eps * (math.cos(2 * h / eps) - math.cos(3 * h / eps))
    assert val[0, 0] == pytest.approx(exact, abs=1e-12)


def test_cell_mean_of_constant():
    lat = Lattice(2, basis=np.diag([1.0, 2.0]))
    mean, err = cell_mean(lat, (0, 0), 0.37,
                          constant_field(2, 3.25, Box((0, 0), (4, 4))), 3)
    assert mean[0, 0] == pytest.approx(3.25, abs=1e-13)
    assert err < 1e-12


def test_error_estimate_majorizes_refinement_change():
    eps = 0.013
    field_ = sin_field(eps)
    val8, err8 = cell_integral(unit_lattice(1), (0,), 0.5, field_, 8)
    val16, _ = cell_integral(unit_lattice(1), (0,), 0.5, field_, 16)
    assert abs(val16[0, 0] - val8[0, 0]) <= err8


def test_partition_consistency_1d():
    # cells + margin boxes must reproduce the whole-box integral
    field_ = sin_field(0.09)
    cells = cells_inside(unit_lattice(1), 0.3, UNIT)
    total = 0.0
    for z in cells.gammas:
        val, _ = cell_integral(unit_lattice(1), z, 0.3, field_, 128)
        total += val[0, 0]
    for mbox in margin_boxes(UNIT, cells):
        total += box_integral(mbox, field_, 512)[0, 0]
    whole = box_integral(UNIT, field_, 512)[0, 0]
    assert total == pytest.approx(whole, abs=1e-11)


def test_margin_boxes_measure():
    cells = cells_inside(unit_lattice(1), 0.3, UNIT)
    margins = margin_boxes(UNIT, cells)
    covered = cells.covered_measure() + sum(b.measure for b in margins)
    assert covered == pytest.approx(1.0)


def test_box_integral_2d_product():
    box = Box((0.0, 0.0), (1.0, 2.0))
    f = scalar_field(2, lambda pts: pts[:, 0] * pts[:, 1], 2.0, box)
    val = box_integral(box, f, 16)
    assert val[0, 0] == pytest.approx(0.5 * 2.0, abs=1e-12)


def test_default_refine_rule():
    assert default_refine(1.0, 0.125) == 64
    assert default_refine(0.1, 1.0) == 1
    assert default_refine(1.0, 1e-9) == 4096
    assert default_refine(1.0, 0.0) == 4096


def test_affine_lattice_point():
    lat = Lattice(1, basis=[[2.0]], offset=[0.5])
    assert lat.point([3]) == pytest.approx(6.5)
    verts = lat.cell_vertices(np.array([0]), 0.1)
    assert verts.min() == pytest.approx(0.05)
    assert verts.max() == pytest.approx(0.25)


@settings(max_examples=40, deadline=None)
@given(
    a=st.floats(-2.0, 2.0, allow_nan=False),
    b=st.floats(-2.0, 2.0, allow_nan=False),
    h=st.floats(0.05, 0.9, allow_nan=False),
)
def test_cell_integral_linearity(a, b, h):
    f = scalar_field(1, lambda pts: np.cos(5.0 * pts[:, 0]), 1.0, UNIT)
    g = scalar_field(1, lambda pts: pts[:, 0] ** 2, 1.0, UNIT)
    comb = scalar_field(
        1, lambda pts: a * np.cos(5.0 * pts[:, 0]) + b * pts[:, 0] ** 2,
        abs(a) + abs(b), UNIT,
    )
    vf, _ = cell_integral(unit_lattice(1), (0,), h, f, 16)
    vg, _ = cell_integral(unit_lattice(1), (0,), h, g, 16)
    vc, _ = cell_integral(unit_lattice(1), (0,), h, comb, 16)
    assert vc[0, 0] == pytest.approx(a * vf[0, 0] + b * vg[0, 0], abs=1e-12)
