"""Cell-mean criteria that certify smallness of multiplier norms.

The two computable quantities are the worst cell-mean deviation (rho1,
which certifies the form-norm of a potential) and the worst cell mean of
the squared deviation (rho3, which certifies the product norm of a
first-order weight).  Both come with the predicted bounds rho1 + eta and
sqrt(rho3) + sqrt(eta).
"""

import math
from dataclasses import dataclass, field as dc_field
from typing import Optional

import numpy as np

from .fields import matrix_abs, CoefficientField, scalar_field
from .lattice import Lattice, cells_inside, cell_integral, default_refine


@dataclass(frozen=True)
class CriterionReport:
    """Cell-criterion measurements at one (eps, eta) pair."""

    eps: float
    eta: float
    rho1: float
    rho3: float
    bound_m1m1: float
    bound_m10: float
    argmax_cell: tuple
    quad_error: float = 0.0
    cell_count: int = 0
    meta: dict = dc_field(default_factory=dict)


def _family_refine(family, eps, eta, refine):
    if refine is not None:
        return int(refine)
    r = default_refine(eta, family.finest_scale(eps))
    if family.meta.get("needs_even_refine"):
        r += r % 2
    return r


def _deviation_cells(family, eps, eta, lattice, refine):
    lat = lattice or Lattice(family.dim)
    cells = cells_inside(lat, eta, family.domain)
    if len(cells) == 0:
        raise ValueError(
            f"no lattice cells of size {eta} fit inside the domain"
        )
    r = _family_refine(family, eps, eta, refine)
    return lat, cells, r


def criterion_report(family, eps, eta, lattice=None, refine=None):
    """Evaluate both cell criteria for a family at one (eps, eta).

    rho1 is the max over cells of the entrywise norm of the cell mean of
    the deviation (each perturbation component separately, worst one
    reported); rho3 is the max over cells of the cell mean of the squared
    entrywise norm of the deviation.
    """
    eps = float(eps)
    eta = float(eta)
    lat, cells, r = _deviation_cells(family, eps, eta, lattice, refine)
    measure = lat.cell_measure * eta ** family.dim
    rho1 = 0.0
    rho3 = 0.0
    argmax = cells.gammas[0]
    quad_err = 0.0
    for label, dev in family.deviations(eps):
        sq = _abs_squared_field(dev)
        for z in cells.gammas:
            integral, err = cell_integral(lat, np.array(z), eta, dev, r)
            val = float(matrix_abs(integral)) / measure
            quad_err = max(quad_err, err / measure)
            if val > rho1:
                rho1 = val
                argmax = z
            sq_int, sq_err = cell_integral(lat, np.array(z), eta, sq, r)
            rho3 = max(rho3, complex(sq_int.item()).real / measure)
            quad_err = max(quad_err, sq_err / measure)
    return CriterionReport(
        eps=eps,
        eta=eta,
        rho1=rho1,
        rho3=rho3,
        bound_m1m1=rho1 + eta,
        bound_m10=math.sqrt(max(rho3, 0.0)) + math.sqrt(eta),
        argmax_cell=tuple(argmax),
        quad_error=quad_err,
        cell_count=len(cells),
    )


def _abs_squared_field(dev):
    """Scalar field |dev(x)|^2 with the entrywise matrix norm."""

    def func(pts):
        return matrix_abs(dev(pts)) ** 2

    return scalar_field(dev.dim, func, dev.sup_bound ** 2, dev.domain)


def rho1(family, eps, eta, lattice=None, refine=None):
    """Worst cell-mean deviation at scale eta."""
    return criterion_report(family, eps, eta, lattice, refine).rho1


def rho3(family, eps, eta, lattice=None, refine=None):
    """Worst cell mean of the squared deviation at scale eta."""
    return criterion_report(family, eps, eta, lattice, refine).rho3


DEFAULT_ETA_EXPONENTS = (0.3, 0.4, 0.5, 0.6, 0.7)


def optimize_eta(family, eps, exponents=DEFAULT_ETA_EXPONENTS, lattice=None,
                 refine=None, objective="m1m1"):
    """Pick eta from the grid {eps^a} minimizing the certified bound.

    objective "m1m1" minimizes rho1 + eta, "m10" minimizes
    sqrt(rho3) + sqrt(eta).  Grid values whose cells do not fit in the
    domain are skipped; ties prefer the larger eta (cheaper quadrature).
    """
    if objective not in ("m1m1", "m10"):
        raise ValueError("objective must be 'm1m1' or 'm10'")
    candidates = sorted({float(eps) ** a for a in exponents}, reverse=True)
    best = None
    best_val = None
    for eta in candidates:
        try:
            rep = criterion_report(family, eps, eta, lattice, refine)
        except ValueError:
            continue
        val = rep.bound_m1m1 if objective == "m1m1" else rep.bound_m10
        if best_val is None or val < best_val * (1 - 1e-12):
            best, best_val = rep, val
    if best is None:
        raise ValueError("no eta on the grid admits any cell inside the domain")
    return best.eta, best


def local_mean_limit(family, eps_schedule, mu_rule=None, sample_points=33,
                     window=None, refine=None):
    """Reconstruct the limit potential from shrinking local means.

    For each scheduled eps the candidate limit at x is the mean of the
    eps-field over the window x + mu * (0,1)^d with mu = mu_rule(eps).
    rho2 is the largest deviation between candidates at successive
    schedule entries over the sample grid; the returned candidate field
    evaluates the finest-eps local mean on demand.
    """
    if len(eps_schedule) < 2:
        raise ValueError("local mean limit needs at least two eps entries")
    mu_rule = mu_rule or (lambda eps: math.sqrt(eps))
    box = window or family.domain
    dim = family.dim
    axes = [
        np.linspace(box.lower[j], box.upper[j], sample_points + 2)[1:-1]
        for j in range(dim)
    ]
    mesh = np.meshgrid(*axes, indexing="ij")
    grid = np.stack([m.ravel() for m in mesh], axis=1)

    def local_mean(eps, mu, pts, r):
        lat = Lattice(dim)
        vals = []
        skipped = []
        for x in pts:
            top = x + mu
            if np.any(x < np.array(family.domain.lower) - 1e-12) or np.any(
                top > np.array(family.domain.upper) + 1e-12
            ):
                skipped.append(tuple(float(v) for v in x))
                vals.append(None)
                continue
            # mean over x + mu*(0,1)^d as a unit lattice cell at scale mu
            integral, _ = cell_integral(
                lat, x / mu, mu, family.at(eps).v, r
            )
            vals.append(integral / mu ** dim)
        return vals, skipped

    samples = []
    skipped_all = []
    for eps in eps_schedule:
        mu = float(mu_rule(eps))
        r = refine or default_refine(mu, family.finest_scale(eps))
        vals, skipped = local_mean(eps, mu, grid, r)
        samples.append(vals)
        skipped_all.extend(skipped)

    rho2 = 0.0
    for a, b in zip(samples[:-1], samples[1:]):
        for va, vb in zip(a, b):
            if va is None or vb is None:
                continue
            rho2 = max(rho2, float(matrix_abs(va - vb)))

    eps_fin = float(eps_schedule[-1])
    mu_fin = float(mu_rule(eps_fin))
    r_fin = refine or default_refine(mu_fin, family.finest_scale(eps_fin))

    def cand_func(pts):
        out = np.zeros((pts.shape[0], family.ncomp, family.ncomp),
                       dtype=complex)
        vals, _ = local_mean(eps_fin, mu_fin, pts, r_fin)
        for i, v in enumerate(vals):
            if v is None:
                raise ValueError(
                    f"window at {tuple(pts[i])} leaves the domain"
                )
            out[i] = v
        return out

    candidate = CoefficientField(
        dim, family.ncomp, cand_func,
        family.at(eps_fin).v.sup_bound, family.domain, "local mean limit",
    )
    report = {
        "rho2": rho2,
        "mu_final": mu_fin,
        "bound": rho2 + math.sqrt(mu_fin),
        "grid": grid,
        "samples": samples,
        "skipped": tuple(skipped_all),
    }
    return candidate, report


def weyl_mean(trig_terms, r_schedule, lattice=None, gamma_samples=None):
    """Box averages of a trigonometric sum over growing boxes.

    trig_terms is a list of (alpha, amplitude); the average over the box
    r * (cell + gamma) is computed exactly per frequency.  Returns the
    zero-frequency amplitude and a table of worst deviations per r,
    which certifies uniform-in-gamma convergence of the means.
    """
    dim = len(np.atleast_1d(trig_terms[0][0]))
    lat = lattice or Lattice(dim)
    if not np.allclose(lat.basis, np.diag(np.diag(lat.basis))):
        raise ValueError("weyl_mean needs a diagonal lattice basis")
    sides = np.diag(lat.basis)
    gammas = gamma_samples
    if gammas is None:
        gammas = [np.zeros(dim, dtype=int)]
        rng = np.random.default_rng(7)
        for _ in range(8):
            gammas.append(rng.integers(-5, 6, size=dim))
    mean0 = None
    for alpha, ampl in trig_terms:
        a = np.asarray(alpha, dtype=float).reshape(dim)
        mat = np.atleast_2d(np.asarray(ampl, dtype=complex))
        if np.all(a == 0.0):
            mean0 = mat if mean0 is None else mean0 + mat
    n = np.atleast_2d(np.asarray(trig_terms[0][1], dtype=complex)).shape[0]
    if mean0 is None:
        mean0 = np.zeros((n, n), dtype=complex)

    def box_average(r, gamma):
        total = np.zeros((n, n), dtype=complex)
        offset = lat.offset + lat.basis @ np.asarray(gamma, dtype=float)
        for alpha, ampl in trig_terms:
            a = np.asarray(alpha, dtype=float).reshape(dim)
            mat = np.atleast_2d(np.asarray(ampl, dtype=complex))
            factor = 1.0 + 0.0j
            for j in range(dim):
                lo = r * offset[j]
                length = r * sides[j]
                if a[j] == 0.0:
                    continue
                factor *= (
                    np.exp(1j * a[j] * (lo + length)) - np.exp(1j * a[j] * lo)
                ) / (1j * a[j] * length)
            total += factor * mat
        return total

    table = []
    for r in r_schedule:
        worst = 0.0
        for g in gammas:
            dev = matrix_abs(box_average(float(r), g) - mean0)
            worst = max(worst, float(dev))
        table.append((float(r), worst))
    return mean0, table
