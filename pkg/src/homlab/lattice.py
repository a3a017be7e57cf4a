"""Scaled lattice cells and cell quadrature.

Cells are the scaled translates eta * (cell + gamma) of a reference
parallelotope, where gamma runs over the points of an affine lattice
B Z^d + offset.  Cell integrals use composite Gauss-Legendre rules of
order 4 per subcell, with an error estimate from comparing against the
half-resolution rule.
"""

from dataclasses import dataclass
from typing import List

import numpy as np
from numpy.polynomial.legendre import leggauss

from .fields import Box, matrix_abs

MAX_REFINE = 4096
GAUSS_ORDER = 4


@dataclass(frozen=True)
class Lattice:
    """Affine lattice B Z^d + offset with reference cell B (0,1)^d."""

    dim: int
    basis: np.ndarray = None
    offset: np.ndarray = None

    def __post_init__(self):
        basis = self.basis
        if basis is None:
            basis = np.eye(self.dim)
        basis = np.asarray(basis, dtype=float).reshape(self.dim, self.dim)
        offset = self.offset
        if offset is None:
            offset = np.zeros(self.dim)
        offset = np.asarray(offset, dtype=float).reshape(self.dim)
        if abs(np.linalg.det(basis)) < 1e-14:
            raise ValueError("lattice basis is singular")
        object.__setattr__(self, "basis", basis)
        object.__setattr__(self, "offset", offset)

    @property
    def cell_measure(self):
        return abs(float(np.linalg.det(self.basis)))

    def point(self, z):
        """Lattice point for integer index z."""
        return self.basis @ np.asarray(z, dtype=float) + self.offset

    def cell_vertices(self, z, eta):
        """Vertices of eta * (cell + point(z)), shape (2^d, d)."""
        corners = np.array(
            np.meshgrid(*[[0.0, 1.0]] * self.dim, indexing="ij")
        ).reshape(self.dim, -1).T
        verts = (corners @ self.basis.T) + self.point(z)
        return eta * verts

    def cell_box(self, z, eta):
        """Bounding box of the cell (exact for diagonal bases)."""
        verts = self.cell_vertices(z, eta)
        return Box(tuple(verts.min(axis=0)), tuple(verts.max(axis=0)))


def unit_lattice(dim):
    return Lattice(dim)


@dataclass(frozen=True)
class CellIndexSet:
    """Integer indices z of the cells eta*(cell + point(z)) inside a box."""

    lattice: Lattice
    eta: float
    domain: Box
    gammas: tuple

    def __len__(self):
        return len(self.gammas)

    def covered_measure(self):
        return len(self.gammas) * self.lattice.cell_measure * self.eta ** self.lattice.dim


def cells_inside(lattice, eta, box):
    """All lattice cells at scale eta contained in the box.

    Containment is decided by testing every cell vertex against the closed
    box with a relative tolerance, so cells touching the boundary count.
    """
    eta = float(eta)
    if eta <= 0:
        raise ValueError("eta must be positive")
    if box.dim != lattice.dim:
        raise ValueError("box dimension does not match lattice")
    lo = np.array(box.lower)
    hi = np.array(box.upper)
    # integer search window from the preimage of the box corners
    binv = np.linalg.inv(lattice.basis)
    corners = np.array(
        np.meshgrid(*zip(lo / eta, hi / eta), indexing="ij")
    ).reshape(lattice.dim, -1).T
    zimg = (corners - lattice.offset) @ binv.T
    zlo = np.floor(zimg.min(axis=0)).astype(int) - 1
    zhi = np.ceil(zimg.max(axis=0)).astype(int) + 1
    pad = 1e-12 * max(1.0, float(np.max(np.abs(np.concatenate([lo, hi])))))
    gammas = []
    for z in np.ndindex(*(zhi - zlo + 1)):
        zz = np.array(z) + zlo
        verts = lattice.cell_vertices(zz, eta)
        if np.all(verts >= lo - pad) and np.all(verts <= hi + pad):
            gammas.append(tuple(int(v) for v in zz))
    gammas.sort()
    return CellIndexSet(lattice, eta, box, tuple(gammas))


def _panel_rule(refine):
    """Composite order-4 Gauss rule on [0,1] with `refine` subcells."""
    nodes, weights = leggauss(GAUSS_ORDER)
    h = 1.0 / refine
    starts = np.arange(refine) * h
    pts = (starts[:, None] + (nodes[None, :] + 1.0) * (h / 2.0)).ravel()
    wts = np.tile(weights * (h / 2.0), refine)
    return pts, wts


def _tensor_rule(dim, refine):
    pts1, wts1 = _panel_rule(refine)
    if dim == 1:
        return pts1[:, None], wts1
    grids = np.meshgrid(*[pts1] * dim, indexing="ij")
    pts = np.stack([g.ravel() for g in grids], axis=1)
    wgrids = np.meshgrid(*[wts1] * dim, indexing="ij")
    wts = np.prod(np.stack([w.ravel() for w in wgrids], axis=1), axis=1)
    return pts, wts


def default_refine(eta, finest_scale):
    """Subcells per axis so panels resolve the finest oscillation scale.

    Targets at least 8 panels per length `finest_scale`, capped at 4096.
    """
    if finest_scale <= 0:
        return MAX_REFINE
    r = int(np.ceil(eta / (finest_scale / 8.0)))
    return int(min(max(r, 1), MAX_REFINE))


def _integrate_points(field_, origin, span_matrix, refine):
    """Integral of field over origin + span_matrix (0,1)^d at given refine."""
    dim = span_matrix.shape[0]
    pts_ref, wts = _tensor_rule(dim, refine)
    pts = origin[None, :] + pts_ref @ span_matrix.T
    vals = field_(pts)
    jac = abs(float(np.linalg.det(span_matrix)))
    return jac * np.einsum("m,mij->ij", wts, vals)


def cell_integral(lattice, z, eta, field_, refine):
    """Integral of a coefficient field over one cell with error estimate.

    Returns (integral matrix, error estimate).  The estimate compares the
    requested resolution against the half-resolution rule; doubling the
    refine changes the result by less than the reported estimate.
    """
    refine = int(max(1, refine))
    origin = eta * (lattice.point(z))
    span = eta * lattice.basis
    fine = _integrate_points(field_, origin, span, refine)
    coarse_refine = max(1, refine // 2)
    if coarse_refine == refine:
        # compare against a single order-2 panel instead
        nodes, weights = leggauss(2)
        pts1 = ((nodes + 1.0) / 2.0)
        wts1 = weights / 2.0
        if lattice.dim == 1:
            pts = origin[None, :] + pts1[:, None] @ span.T
            coarse = abs(float(np.linalg.det(span))) * np.einsum(
                "m,mij->ij", wts1, field_(pts)
            )
        else:
            grids = np.meshgrid(*[pts1] * lattice.dim, indexing="ij")
            ptsr = np.stack([g.ravel() for g in grids], axis=1)
            wg = np.meshgrid(*[wts1] * lattice.dim, indexing="ij")
            wtsr = np.prod(np.stack([w.ravel() for w in wg], axis=1), axis=1)
            pts = origin[None, :] + ptsr @ span.T
            coarse = abs(float(np.linalg.det(span))) * np.einsum(
                "m,mij->ij", wtsr, field_(pts)
            )
    else:
        coarse = _integrate_points(field_, origin, span, coarse_refine)
    err = float(matrix_abs(fine - coarse)) + 1e-300
    return fine, err


def cell_mean(lattice, z, eta, field_, refine):
    """Mean of the field over one cell, with error estimate."""
    integral, err = cell_integral(lattice, z, eta, field_, refine)
    measure = lattice.cell_measure * eta ** lattice.dim
    return integral / measure, err / measure


def box_integral(box, field_, refine):
    """Integral over a whole box at the given per-axis refine."""
    origin = np.array(box.lower)
    span = np.diag(np.array(box.upper) - np.array(box.lower))
    fine = _integrate_points(field_, origin, span, int(max(1, refine)))
    return fine


def margin_boxes(box, cells: CellIndexSet) -> List[Box]:
    """Decompose box minus the covered cell block into boxes.

    Only supports the case where the covered cells form a full rectangular
    block (always true for diagonal lattices on an interval or rectangle).
    """
    if len(cells) == 0:
        return [box]
    verts = np.concatenate(
        [cells.lattice.cell_vertices(np.array(z), cells.eta) for z in cells.gammas]
    )
    clo = verts.min(axis=0)
    chi = verts.max(axis=0)
    # verify the block is filled
    block_measure = float(np.prod(chi - clo))
    if abs(block_measure - cells.covered_measure()) > 1e-9 * max(block_measure, 1.0):
        raise ValueError("covered cells do not form a rectangular block")
    out = []
    lo = list(box.lower)
    hi = list(box.upper)
    for axis in range(box.dim):
        if clo[axis] - lo[axis] > 1e-14:
            low = lo.copy()
            high = hi.copy()
            high[axis] = clo[axis]
            out.append(Box(tuple(low), tuple(high)))
            lo = lo.copy()
            lo[axis] = clo[axis]
        if hi[axis] - chi[axis] > 1e-14:
            low = lo.copy()
            high = hi.copy()
            low[axis] = chi[axis]
            out.append(Box(tuple(low), tuple(high)))
            hi = hi.copy()
            hi[axis] = chi[axis]
    return out


def cells_to_csv_rows(cells: CellIndexSet, means=None):
    """Rows (gamma, corner, mean entries) for report serialization."""
    rows = []
    for k, z in enumerate(cells.gammas):
        corner = cells.eta * cells.lattice.point(np.array(z))
        row = {
            "gamma": ";".join(str(v) for v in z),
            "corner": ";".join(repr(float(c)) for c in corner),
        }
        if means is not None:
            mean = np.atleast_2d(means[k])
            for i in range(mean.shape[0]):
                for j in range(mean.shape[1]):
                    row[f"mean_{i}{j}_re"] = float(mean[i, j].real)
                    row[f"mean_{i}{j}_im"] = float(mean[i, j].imag)
        rows.append(row)
    return rows
