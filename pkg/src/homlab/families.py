"""Generators and combinators for perturbation families.

A perturbation family is an eps-indexed triple of coefficient fields
(potential V, first-order weights Q_j, P_j) together with its declared
limit triple and a predicted convergence-rate function.  Generators cover
the catalogue of oscillation mechanisms: uniform convergence, sparse
bumps, stabilizing tails, locally periodic multi-scale oscillation,
almost periodic sums, modulated phases, fractal-type products, and
ergodic torus rotations.  Combinators build new families out of old ones.
"""

import math
from dataclasses import dataclass, field as dc_field
from typing import Callable, Optional

import numpy as np

from .fields import (
    Box,
    CoefficientField,
    add_fields,
    constant_field,
    matrix_field,
    matmul_fields,
    scale_field,
    scalar_field,
    sub_fields,
    zero_field,
)
from .lattice import Lattice, cells_inside, cell_mean, default_refine
from .ergodic import ErgodicSystem, expectation


@dataclass(frozen=True)
class FieldTriple:
    """Potential and first-order perturbation weights (V, Q_j, P_j)."""

    v: CoefficientField
    q: tuple = ()
    p: tuple = ()

    def components(self):
        out = [("v", self.v)]
        out += [(f"q{j}", f) for j, f in enumerate(self.q)]
        out += [(f"p{j}", f) for j, f in enumerate(self.p)]
        return out


@dataclass(frozen=True)
class PerturbationFamily:
    """eps-indexed perturbation with declared limit and predicted rate."""

    name: str
    dim: int
    ncomp: int
    domain: Box
    at: Callable[[float], FieldTriple]
    limit: FieldTriple
    rate: Callable[[float], float]
    finest_scale: Callable[[float], float]
    eta_rule: Callable[[float], float]
    meta: dict = dc_field(default_factory=dict)

    def deviations(self, eps):
        """Deviation fields (eps components minus limit components)."""
        trip = self.at(eps)
        eps_parts = dict(trip.components())
        lim_parts = dict(self.limit.components())
        labels = sorted(set(eps_parts) | set(lim_parts))
        out = []
        for lab in labels:
            a = eps_parts.get(lab)
            b = lim_parts.get(lab)
            if a is None:
                a = zero_field(self.dim, self.ncomp, self.domain)
            if b is None:
                b = zero_field(self.dim, self.ncomp, self.domain)
            out.append((lab, sub_fields(a, b)))
        return out


def _sqrt_rule(eps):
    return math.sqrt(eps)


def _cbrt_rule(eps):
    return eps ** (1.0 / 3.0)


def _as_triple(v_or_triple):
    if isinstance(v_or_triple, FieldTriple):
        return v_or_triple
    return FieldTriple(v=v_or_triple)


def make_regular(v_of_eps, v0, rate, domain, name="regular",
                 finest_scale=None, eta_rule=None):
    """Family converging uniformly, with the rate declared by the caller.

    v_of_eps maps eps to a CoefficientField (or FieldTriple); v0 is the
    uniform limit.  The declared rate should dominate the uniform norm of
    the deviation.
    """
    lim = _as_triple(v0)
    probe = _as_triple(v_of_eps(0.5))
    if (probe.v.dim, probe.v.ncomp) != (lim.v.dim, lim.v.ncomp):
        raise ValueError("limit shape does not match the family fields")
    return PerturbationFamily(
        name=name,
        dim=lim.v.dim,
        ncomp=lim.v.ncomp,
        domain=domain,
        at=lambda eps: _as_triple(v_of_eps(eps)),
        limit=lim,
        rate=rate,
        finest_scale=finest_scale or (lambda eps: 1.0),
        eta_rule=eta_rule or _sqrt_rule,
    )


def make_sparse(centers, rho4, rho5, bump_profile, amplitude, domain,
                name="sparse"):
    """Sparse bump potentials vanishing in the limit.

    centers(eps) returns bump centers (k, d); bumps have radius
    rho4(eps) * rho5(eps) and profile bump_profile(r) for r in [0, 1].
    Pairwise center distances below rho4 raise.  amplitude is the common
    n x n matrix amplitude.
    """
    dim = domain.dim
    amp = np.atleast_2d(np.asarray(amplitude, dtype=complex))
    n = amp.shape[0]
    prof_sup = float(np.max(np.abs([bump_profile(np.linspace(0, 1, 201))])))
    amp_norm = float(np.abs(amp).sum())

    def build(eps):
        pts_c = np.atleast_2d(np.asarray(centers(eps), dtype=float))
        r4 = float(rho4(eps))
        r5 = float(rho5(eps))
        radius = r4 * r5
        if len(pts_c) > 1:
            diff = pts_c[:, None, :] - pts_c[None, :, :]
            dist = np.sqrt((diff ** 2).sum(axis=2))
            np.fill_diagonal(dist, np.inf)
            if dist.min() < r4 * (1 - 1e-12):
                raise ValueError(
                    f"sparse centers too close: {dist.min()} < rho4 = {r4}"
                )

        def func(pts):
            out = np.zeros((pts.shape[0], n, n), dtype=complex)
            for c in pts_c:
                r = np.sqrt(((pts - c[None, :]) ** 2).sum(axis=1)) / radius
                mask = r <= 1.0
                if mask.any():
                    out[mask] += bump_profile(r[mask])[:, None, None] * amp
            return out

        v = CoefficientField(dim, n, func, amp_norm * prof_sup, domain,
                             "sparse bumps")
        return FieldTriple(v=v)

    zero = zero_field(dim, n, domain)
    return PerturbationFamily(
        name=name,
        dim=dim,
        ncomp=n,
        domain=domain,
        at=build,
        limit=FieldTriple(v=zero),
        rate=lambda eps: float(rho5(eps)) ** dim + float(rho4(eps)),
        finest_scale=lambda eps: max(float(rho4(eps)) * float(rho5(eps)), 1e-12),
        eta_rule=lambda eps: float(rho4(eps)) / 3.0,
    )


def make_stabilizing(vfun, v0, rho6, domain, ncomp=1, sup_bound=1.0,
                     name="stabilizing", finest_scale=None):
    """Potentials V(x, x/eps) whose profile stabilizes at infinity.

    vfun(x_pts, xi_pts) -> (m, n, n); the limit v0 is the stable value at
    infinity, and rho6(eps) bounds the profile deviation outside the ball
    of radius eps^(-1/3).
    """
    lim = _as_triple(v0)

    def build(eps):
        def func(pts):
            return vfun(pts, pts / eps)

        v = CoefficientField(domain.dim, ncomp, func, sup_bound, domain,
                             "stabilizing")
        return FieldTriple(v=v)

    return PerturbationFamily(
        name=name,
        dim=domain.dim,
        ncomp=ncomp,
        domain=domain,
        at=build,
        limit=lim,
        rate=lambda eps: float(rho6(eps)) + eps ** (1.0 / 3.0),
        finest_scale=finest_scale or (lambda eps: max(eps, 1e-12)),
        eta_rule=_cbrt_rule,
    )


def make_locally_periodic(vfun, scales, v0, rho8, domain, ncomp=1,
                          sup_bound=1.0, periods=None,
                          name="locally_periodic"):
    """Multi-scale locally periodic potentials V(x, x/eps_1, ..., x/eps_m).

    scales is a list of callables eps -> eps_j, decreasing in j; vfun takes
    (x_pts, xi_1, ..., xi_m) and is periodic in each xi.  The limit v0 is
    the mean over all periodicity cells.  The predicted rate combines the
    scale-separation penalties with the coarsest-scale cell penalty.
    """
    m = len(scales)
    periods = periods or [1.0] * m
    lim = _as_triple(v0)

    def build(eps):
        svals = [float(s(eps)) for s in scales]

        def func(pts):
            xis = [pts / sv for sv in svals]
            return vfun(pts, *xis)

        v = CoefficientField(domain.dim, ncomp, func, sup_bound, domain,
                             "locally periodic")
        return FieldTriple(v=v)

    def rate(eps):
        svals = [float(s(eps)) for s in scales]
        sep = 0.0
        for j in range(1, m):
            kj = math.sqrt(domain.dim) * periods[j]
            sep += float(rho8(math.sqrt(j + 1) * kj * svals[j] / svals[j - 1]))
        return sep + math.sqrt(svals[0])

    return PerturbationFamily(
        name=name,
        dim=domain.dim,
        ncomp=ncomp,
        domain=domain,
        at=build,
        limit=lim,
        rate=rate,
        finest_scale=lambda eps: max(
            min(float(s(eps)) * p for s, p in zip(scales, periods)), 1e-14
        ),
        eta_rule=lambda eps: math.sqrt(float(scales[0](eps))),
    )


def make_almost_periodic(terms, domain, ncomp=1, rho9=None,
                         name="almost_periodic"):
    """Trigonometric-sum potentials sum_a T_a exp(i a . x / eps).

    terms is a list of (alpha, amplitude) with alpha a d-vector of real
    frequencies and amplitude an n x n matrix.  The limit collects the
    alpha = 0 terms.  The predicted rate uses the exact box-average decay
    of each nonzero frequency at the matched cell size eta = sqrt(eps).
    """
    dim = domain.dim
    parsed = []
    for alpha, ampl in terms:
        a = np.asarray(alpha, dtype=float).reshape(dim)
        mat = np.atleast_2d(np.asarray(ampl, dtype=complex))
        parsed.append((a, mat))
    n = parsed[0][1].shape[0] if parsed else ncomp
    lim_mat = np.zeros((n, n), dtype=complex)
    osc = []
    for a, mat in parsed:
        if np.all(a == 0.0):
            lim_mat = lim_mat + mat
        else:
            osc.append((a, mat))
    sup = float(sum(np.abs(mat).sum() for _, mat in parsed))

    def build(eps):
        def func(pts):
            out = np.zeros((pts.shape[0], n, n), dtype=complex)
            for a, mat in parsed:
                phase = np.exp(1j * (pts @ a) / eps)
                out += phase[:, None, None] * mat
            return out

        v = CoefficientField(dim, n, func, sup, domain, "almost periodic")
        return FieldTriple(v=v)

    def mean_decay(r):
        """Worst box-average magnitude of the oscillating part at size r."""
        total = 0.0
        for a, mat in osc:
            factor = 1.0
            for aj in a:
                if aj != 0.0:
                    factor *= min(1.0, 2.0 / (abs(aj) * r))
            total += factor * float(np.abs(mat).sum())
        return total

    def rate(eps):
        extra = float(rho9(eps)) if rho9 is not None else 0.0
        return _ap_rate(osc, eps) + extra

    max_alpha = max((float(np.max(np.abs(a))) for a, _ in osc), default=1.0)

    return PerturbationFamily(
        name=name,
        dim=dim,
        ncomp=n,
        domain=domain,
        at=build,
        limit=FieldTriple(v=constant_field(dim, lim_mat, domain)),
        rate=rate,
        finest_scale=lambda eps: 2 * math.pi * eps / max_alpha,
        eta_rule=_sqrt_rule,
        meta={"mean_decay": mean_decay},
    )


def _ap_rate(osc, eps):
    """Cell penalty eta plus box-average decay at the matched size."""
    eta = math.sqrt(eps)
    total = 0.0
    for a, mat in osc:
        factor = 1.0
        for aj in a:
            if aj != 0.0:
                # cell of physical size eta covers eta/eps frequency units
                factor *= min(1.0, 2.0 / (abs(aj) * eta / eps))
        total += factor * float(np.abs(mat).sum())
    return total + eta


def implicit_eta(p0, eps, r_max=1.0, iters=80):
    """Smallest r with min(r p0(r^2), p0(r^2)^2) >= sqrt(eps).

    p0 must be nondecreasing.  Raises if even r_max fails, which signals a
    degeneracy too strong for the phase to homogenize at this eps.
    """
    target = math.sqrt(eps)

    def p1(r):
        v = float(p0(r * r))
        return min(r * v, v * v)

    if p1(r_max) < target:
        raise ValueError("phase degeneracy too strong: no admissible eta")
    lo, hi = 0.0, r_max
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if p1(mid) >= target:
            hi = mid
        else:
            lo = mid
    return hi


def make_modulated(vfun, phi, phi_jacobian, domain, kind, v0, rho8,
                   ncomp=1, sup_bound=1.0, p0=None, name="modulated",
                   jacobian_tol=1e-8):
    """Phase-modulated potentials V(x, phi(x)/eps).

    vfun(x_pts, xi_pts) is 1-periodic in xi (after rescaling by the
    caller); phi maps the domain into R^d with Jacobian phi_jacobian.
    kind is "diffeo" (Jacobian bounded away from zero, checked on a
    sample grid) or "periodic" (degenerate set allowed, with the margin
    function p0(r) = inf of |det J| away from the degenerate set).
    """
    if kind not in ("diffeo", "periodic"):
        raise ValueError("kind must be 'diffeo' or 'periodic'")
    if kind == "periodic" and p0 is None:
        raise ValueError("periodic modulation needs the margin function p0")
    dim = domain.dim
    lim = _as_triple(v0)

    if kind == "diffeo":
        grid = np.linspace(domain.lower[0], domain.upper[0], 513)
        pts = np.stack(np.meshgrid(
            *[np.linspace(domain.lower[j], domain.upper[j], 65 if dim > 1 else 513)
              for j in range(dim)], indexing="ij"),
            axis=-1).reshape(-1, dim)
        dets = np.abs(phi_jacobian(pts))
        if float(dets.min()) < jacobian_tol:
            raise ValueError(
                f"modulating phase is not a diffeomorphism: |det J| min = {dets.min()}"
            )
        jac_min = float(dets.min())
        jac_max = float(dets.max())
    else:
        sample = domain.sample(4096, np.random.default_rng(0))
        jac_max = float(np.max(np.abs(phi_jacobian(sample))))
        jac_min = 0.0

    def build(eps):
        def func(pts):
            return vfun(pts, phi(pts) / eps)

        v = CoefficientField(dim, ncomp, func, sup_bound, domain, "modulated")
        return FieldTriple(v=v)

    if kind == "diffeo":
        def rate(eps):
            return math.sqrt(eps) + float(rho8(math.sqrt(dim) * math.sqrt(eps)))

        def eta_rule(eps):
            return math.sqrt(eps)
    else:
        def rate(eps):
            eta = implicit_eta(p0, eps)
            return math.sqrt(eps) + eta + float(rho8(math.sqrt(dim) * eta))

        def eta_rule(eps):
            return implicit_eta(p0, eps)

    return PerturbationFamily(
        name=name,
        dim=dim,
        ncomp=ncomp,
        domain=domain,
        at=build,
        limit=lim,
        rate=rate,
        finest_scale=lambda eps: max(eps / max(jac_max, 1e-12), 1e-14),
        eta_rule=eta_rule,
        meta={"kind": kind, "jacobian_range": (jac_min, jac_max)},
    )


def make_fractal(vfun, v0, rho8, domain, ncomp=1, sup_bound=1.0,
                 periods=None, name="fractal"):
    """Products-of-coordinates phases V(x, x1/eps, x1 x2/eps^2, ...).

    The j-th phase argument is (x1 ... xj) / eps^j; vfun takes
    (x_pts, xi_1, ..., xi_d) and is periodic in each xi with the given
    periods.  In d = 1 this degenerates to plain periodic oscillation.
    """
    dim = domain.dim
    periods = periods or [2 * math.pi] * dim
    lim = _as_triple(v0)

    def build(eps):
        def func(pts):
            xis = []
            prod = np.ones(pts.shape[0])
            for j in range(dim):
                prod = prod * pts[:, j]
                xis.append(prod / eps ** (j + 1))
            return vfun(pts, *xis)

        v = CoefficientField(dim, ncomp, func, sup_bound, domain, "fractal")
        return FieldTriple(v=v)

    # worst oscillation length: deepest phase at the largest coordinates
    coord_max = np.maximum(np.abs(np.array(domain.lower)),
                           np.abs(np.array(domain.upper)))
    denom = float(np.prod(coord_max[: dim - 1])) if dim > 1 else 1.0
    denom = max(denom, 1e-12)
    min_period = min(periods)

    return PerturbationFamily(
        name=name,
        dim=dim,
        ncomp=ncomp,
        domain=domain,
        at=build,
        limit=lim,
        rate=lambda eps: float(rho8(2 * math.sqrt(dim) * math.sqrt(eps)))
        + math.sqrt(eps),
        finest_scale=lambda eps: min_period * eps ** dim / (2 * math.pi * denom),
        eta_rule=_sqrt_rule,
        meta={
            "suggested_lattice": Lattice(
                dim, 2.0 * np.eye(dim), -np.ones(dim)
            ),
        },
    )


def make_random(system: ErgodicSystem, domain, seed, rate=None,
                name="random"):
    """Random potentials driven by an ergodic torus rotation.

    One realization (a torus point) is drawn from the seed at build time
    and reused for every eps, so the family is a deterministic function of
    the seed.  The limit is the expectation of the observable.
    """
    if system.dim != domain.dim:
        raise ValueError("ergodic flow dimension does not match the domain")
    rng = np.random.default_rng(seed)
    omega0 = system.draw(rng)
    mean = expectation(system)

    def build(eps):
        def func(pts):
            om = np.mod(
                omega0[None, :] + (pts / eps) @ system.flow.T, 1.0
            )
            return system.observe(om)

        v = CoefficientField(domain.dim, system.ncomp, func,
                             system.sup_bound, domain, "random rotation")
        return FieldTriple(v=v)

    max_flow = float(np.max(np.abs(system.flow)))

    return PerturbationFamily(
        name=name,
        dim=domain.dim,
        ncomp=system.ncomp,
        domain=domain,
        at=build,
        limit=FieldTriple(v=constant_field(domain.dim, mean, domain)),
        rate=rate or (lambda eps: math.sqrt(eps)),
        finest_scale=lambda eps: eps / max(max_flow, 1e-12),
        eta_rule=_sqrt_rule,
        meta={"omega0": omega0},
    )


# ---------------------------------------------------------------------------
# combinators


def _map_triple(trip, fn):
    return FieldTriple(
        v=fn(trip.v),
        q=tuple(fn(f) for f in trip.q),
        p=tuple(fn(f) for f in trip.p),
    )


def scale_left(psi, family, w1_bound):
    """Multiply every field by psi(x) from the left.

    w1_bound must dominate the W^1,inf norm of psi; the predicted rate is
    scaled by 2 * w1_bound, which covers the potential term's product rule.
    """
    factor = 2.0 * float(w1_bound)
    return PerturbationFamily(
        name=f"{family.name}*left",
        dim=family.dim,
        ncomp=family.ncomp,
        domain=family.domain,
        at=lambda eps: _map_triple(family.at(eps), lambda f: matmul_fields(psi, f)),
        limit=_map_triple(family.limit, lambda f: matmul_fields(psi, f)),
        rate=lambda eps: factor * family.rate(eps),
        finest_scale=family.finest_scale,
        eta_rule=family.eta_rule,
        meta=dict(family.meta),
    )


def scale_right(family, psi, w1_bound):
    """Multiply every field by psi(x) from the right."""
    factor = 2.0 * float(w1_bound)
    return PerturbationFamily(
        name=f"{family.name}*right",
        dim=family.dim,
        ncomp=family.ncomp,
        domain=family.domain,
        at=lambda eps: _map_triple(family.at(eps), lambda f: matmul_fields(f, psi)),
        limit=_map_triple(family.limit, lambda f: matmul_fields(f, psi)),
        rate=lambda eps: factor * family.rate(eps),
        finest_scale=family.finest_scale,
        eta_rule=family.eta_rule,
        meta=dict(family.meta),
    )


def _pad(fields_tuple, count, dim, ncomp, domain):
    out = list(fields_tuple)
    while len(out) < count:
        out.append(zero_field(dim, ncomp, domain))
    return tuple(out)


def add_families(fam1, fam2, name=None):
    """Sum of two families on the same domain; rates add."""
    if (fam1.dim, fam1.ncomp) != (fam2.dim, fam2.ncomp):
        raise ValueError("family shapes differ in add")
    if fam1.domain != fam2.domain:
        raise ValueError("family domains differ in add")

    def combine(t1, t2):
        nq = max(len(t1.q), len(t2.q))
        np_ = max(len(t1.p), len(t2.p))
        q1 = _pad(t1.q, nq, fam1.dim, fam1.ncomp, fam1.domain)
        q2 = _pad(t2.q, nq, fam1.dim, fam1.ncomp, fam1.domain)
        p1 = _pad(t1.p, np_, fam1.dim, fam1.ncomp, fam1.domain)
        p2 = _pad(t2.p, np_, fam1.dim, fam1.ncomp, fam1.domain)
        return FieldTriple(
            v=add_fields(t1.v, t2.v),
            q=tuple(add_fields(a, b) for a, b in zip(q1, q2)),
            p=tuple(add_fields(a, b) for a, b in zip(p1, p2)),
        )

    return PerturbationFamily(
        name=name or f"{fam1.name}+{fam2.name}",
        dim=fam1.dim,
        ncomp=fam1.ncomp,
        domain=fam1.domain,
        at=lambda eps: combine(fam1.at(eps), fam2.at(eps)),
        limit=combine(fam1.limit, fam2.limit),
        rate=lambda eps: fam1.rate(eps) + fam2.rate(eps),
        finest_scale=lambda eps: min(fam1.finest_scale(eps), fam2.finest_scale(eps)),
        eta_rule=fam1.eta_rule,
    )


def negate(family):
    """Flip the sign of every field in the family."""
    return PerturbationFamily(
        name=f"-{family.name}",
        dim=family.dim,
        ncomp=family.ncomp,
        domain=family.domain,
        at=lambda eps: _map_triple(family.at(eps), lambda f: scale_field(-1.0, f)),
        limit=_map_triple(family.limit, lambda f: scale_field(-1.0, f)),
        rate=family.rate,
        finest_scale=family.finest_scale,
        eta_rule=family.eta_rule,
        meta=dict(family.meta),
    )


def cell_resample(family, seed, amplitude=0.5, lattice=None):
    """Replace the potential inside each cell by a mean-preserving surrogate.

    Within every cell of size eta_rule(eps) the potential becomes its cell
    mean plus a random two-level square wave with exactly zero cell mean,
    so all cell averages (and hence the cell criteria) are unchanged.
    """
    lat = lattice or Lattice(family.dim)

    def build(eps):
        trip = family.at(eps)
        eta = family.eta_rule(eps)
        cells = cells_inside(lat, eta, family.domain)
        refine = default_refine(eta, family.finest_scale(eps))
        refine += refine % 2  # keep the half-cell split on a panel boundary
        rng = np.random.default_rng([seed, int(1e9 * eps) & 0x7FFFFFFF])
        means = []
        bumps = []
        for z in cells.gammas:
            m, _ = cell_mean(lat, np.array(z), eta, trip.v, refine)
            means.append(m)
            bumps.append(rng.uniform(-amplitude, amplitude))
        corners = np.array(
            [eta * lat.point(np.array(z)) for z in cells.gammas]
        ).reshape(len(cells.gammas), family.dim)
        widths = eta * np.diag(lat.basis)

        def func(pts):
            out = trip.v(pts)
            for k in range(len(cells.gammas)):
                lo = corners[k]
                hi = corners[k] + widths
                inside = np.all((pts >= lo) & (pts < hi), axis=1)
                if inside.any():
                    t0 = (pts[inside, 0] - lo[0]) / widths[0]
                    sign = np.where(t0 < 0.5, 1.0, -1.0)
                    vals = means[k][None, :, :] + (
                        bumps[k] * sign
                    )[:, None, None] * np.eye(family.ncomp)
                    out[inside] = vals
            return out

        v = CoefficientField(
            family.dim, family.ncomp, func,
            trip.v.sup_bound + amplitude * family.ncomp,
            family.domain, "cell resample",
        )
        return FieldTriple(v=v, q=trip.q, p=trip.p)

    return PerturbationFamily(
        name=f"{family.name}#resampled",
        dim=family.dim,
        ncomp=family.ncomp,
        domain=family.domain,
        at=build,
        limit=family.limit,
        rate=family.rate,
        finest_scale=family.finest_scale,
        eta_rule=family.eta_rule,
        meta={**family.meta, "needs_even_refine": True},
    )


def glue(fam1, fam2, name=None):
    """Join families living on adjacent boxes into one family.

    The boxes must have disjoint interiors and their union must again be a
    box.  Cell criteria see each piece separately, so the glued criterion
    bounds add; the construction is independent of boundary conditions.
    """
    if (fam1.dim, fam1.ncomp) != (fam2.dim, fam2.ncomp):
        raise ValueError("family shapes differ in glue")
    b1, b2 = fam1.domain, fam2.domain
    lo = np.minimum(b1.lower, b2.lower)
    hi = np.maximum(b1.upper, b2.upper)
    union = Box(tuple(lo), tuple(hi))
    inter_lo = np.maximum(b1.lower, b2.lower)
    inter_hi = np.minimum(b1.upper, b2.upper)
    if np.all(inter_lo < inter_hi):
        raise ValueError("glued domains overlap")
    if abs(union.measure - (b1.measure + b2.measure)) > 1e-12 * union.measure:
        raise ValueError("glued domains do not tile a box")

    def piece(f1, f2):
        from .fields import piecewise_field

        return piecewise_field([(f1, b1), (f2, b2)], fam1.dim, fam1.ncomp,
                               union)

    def combine(t1, t2):
        nq = max(len(t1.q), len(t2.q))
        np_ = max(len(t1.p), len(t2.p))
        q1 = _pad(t1.q, nq, fam1.dim, fam1.ncomp, b1)
        q2 = _pad(t2.q, nq, fam1.dim, fam1.ncomp, b2)
        p1 = _pad(t1.p, np_, fam1.dim, fam1.ncomp, b1)
        p2 = _pad(t2.p, np_, fam1.dim, fam1.ncomp, b2)
        return FieldTriple(
            v=piece(t1.v, t2.v),
            q=tuple(piece(a, b) for a, b in zip(q1, q2)),
            p=tuple(piece(a, b) for a, b in zip(p1, p2)),
        )

    return PerturbationFamily(
        name=name or f"{fam1.name}|{fam2.name}",
        dim=fam1.dim,
        ncomp=fam1.ncomp,
        domain=union,
        at=lambda eps: combine(fam1.at(eps), fam2.at(eps)),
        limit=combine(fam1.limit, fam2.limit),
        rate=lambda eps: fam1.rate(eps) + fam2.rate(eps),
        finest_scale=lambda eps: min(fam1.finest_scale(eps), fam2.finest_scale(eps)),
        eta_rule=fam1.eta_rule,
    )
