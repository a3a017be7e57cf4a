"""Induced operator norms in discrete Sobolev metrics, via power iteration.

Every norm here is a largest singular value of a map between Hilbert
spaces whose Grams are the H1 matrix S, its inverse (the dual space), or
the mass matrix.  The iteration runs on the self-adjoint product operator
using only multiplications and solves with the Grams, never forming
matrix square roots.  Each value is recomputed from a second seed; the
two runs must agree or the report is flagged.
"""

import math
from dataclasses import dataclass, field as dc_field
from typing import Callable

import numpy as np

from .fem import LinearSolver, NumericalBreach, assemble_perturbation
from .fields import gram_field

MAX_POWER_ITER = 10000
POWER_BLOCK = 6


class PowerIterationError(RuntimeError):
    """Power iteration failed to converge; carries the last iterate."""

    def __init__(self, message, last_iterate=None, last_value=None):
        super().__init__(message)
        self.last_iterate = last_iterate
        self.last_value = last_value


@dataclass(frozen=True)
class Metric:
    """Hilbert-space Gram action: multiply by the Gram and solve with it."""

    mul: Callable[[np.ndarray], np.ndarray]
    solve: Callable[[np.ndarray], np.ndarray]
    label: str = ""


def h1_metric(S, s_solver=None):
    solver = s_solver or LinearSolver(S)
    return Metric(mul=lambda v: S @ v, solve=solver.quick, label="H1")


def dual_metric(S, s_solver=None):
    solver = s_solver or LinearSolver(S)
    return Metric(mul=solver.quick, solve=lambda v: S @ v, label="H1*")


def l2_metric(M, m_solver=None):
    solver = m_solver or LinearSolver(M)
    return Metric(mul=lambda v: M @ v, solve=solver.quick, label="L2")


@dataclass(frozen=True)
class NormReport:
    """Computed operator norm with iteration metadata."""

    value: float
    method: dict
    matrices_involved: tuple
    flagged: bool = False


def _metric_norm(w, metric):
    return math.sqrt(max(float(np.real(np.vdot(w, metric.mul(w)))), 0.0))


def _metric_orth(Z, metric, rng):
    """Metric-orthonormal basis spanning range(Z), padding lost rank.

    Two Gram passes; directions whose Gram eigenvalue falls below 1e-28
    of the dominant one have collapsed onto the leading ones and are
    replaced with fresh random vectors so the block keeps its width.
    """
    dim, b = Z.shape
    for _ in range(2):
        G = Z.conj().T @ np.column_stack(
            [metric.mul(Z[:, j]) for j in range(b)])
        d, V = np.linalg.eigh((G + G.conj().T) * 0.5)
        good = d > max(float(d[-1]), 0.0) * 1e-28
        if good.all():
            Z = Z @ (V / np.sqrt(d))
        else:
            n_bad = b - int(good.sum())
            fresh = (rng.standard_normal((dim, n_bad))
                     + 1j * rng.standard_normal((dim, n_bad)))
            Z = np.column_stack([Z @ (V[:, good] / np.sqrt(d[good])), fresh])
    return Z


def _power_singular(apply_, apply_adj, m_in, m_out, dim, seed,
                    rel_tol=1e-8, max_iter=MAX_POWER_ITER,
                    block=POWER_BLOCK):
    """Largest singular value of A between (in, out) metric spaces.

    Block power iteration on w <- Gin^{-1} A* Gout A w, whose top
    eigenvalue is the squared singular value, with a Rayleigh-Ritz
    projection each sweep.  A single power vector crawls whenever the
    top singular values cluster, which is the generic situation for
    resolvent differences; carrying a small block makes convergence
    depend on the gap to the first value outside the block, so the
    residual certificate is reached at realistic sweep counts.  Exits on
    a small eigen-residual for the top Ritz pair, on Ritz-value
    stagnation once the residual has stopped shrinking, or on a
    long-run residual plateau.  Returns (value, sweeps, residual, mode).
    """
    rng = np.random.default_rng(seed)
    b = min(block, dim)
    W = rng.standard_normal((dim, b)) + 1j * rng.standard_normal((dim, b))
    W = _metric_orth(W, m_in, rng)
    lam = 0.0
    lam_prev = None
    stall = 0
    res = math.inf
    res_prev = math.inf
    res_checkpoint = math.inf
    it = 0
    scale = 0.0
    for it in range(1, max_iter + 1):
        T = np.column_stack(
            [apply_adj(m_out.mul(apply_(W[:, j]))) for j in range(b)])
        H = W.conj().T @ T
        theta, U = np.linalg.eigh((H + H.conj().T) * 0.5)
        lam = float(theta[-1])
        u = U[:, -1]
        value = math.sqrt(max(lam, 0.0))
        scale = max(scale, value)
        if value <= 1e-12:
            return 0.0, it, 0.0, "zero"
        Z = np.column_stack([m_in.solve(T[:, j]) for j in range(b)])
        y = W @ u
        r = Z @ u - lam * y
        res = _metric_norm(r, m_in)
        target = rel_tol * min(value, lam)
        if res <= target or res <= 1e-13 * max(scale, scale * scale):
            return value, it, res, "residual"
        if lam_prev is not None and abs(lam - lam_prev) <= 1e-13 * lam:
            stall += 1
            if stall >= 3 and (res <= rel_tol * value or res >= 0.9 * res_prev):
                return value, it, res, "stagnation"
        else:
            stall = 0
        lam_prev = lam
        res_prev = res
        if it % 50 == 0:
            # a residual shrinking under 1% per 50 sweeps means values
            # outside the block hug the top one; the Ritz value is
            # converged to within res
            if res > 0.99 * res_checkpoint:
                return value, it, res, "plateau"
            res_checkpoint = res
        W = _metric_orth(Z, m_in, rng)
    if res <= 1e-2 * min(value, lam):
        return value, it, res, "max_iter"
    raise PowerIterationError(
        f"power iteration did not converge in {max_iter} sweeps "
        f"(value {math.sqrt(max(lam, 0.0))}, residual {res})",
        last_iterate=y,
        last_value=math.sqrt(max(lam, 0.0)),
    )


def induced_norm(apply_, apply_adj, m_in, m_out, dim, seed=1234,
                 labels=(), rel_tol=1e-8, restart_check=True):
    """Operator norm between metric spaces, with a restart cross-check."""
    v1, it1, res1, mode = _power_singular(apply_, apply_adj, m_in, m_out,
                                          dim, seed, rel_tol)
    unc1 = res1 / (2.0 * v1) if v1 > 0 else 0.0
    flagged = False
    agreement = 0.0
    unc = unc1
    if restart_check:
        v2, _, res2, _ = _power_singular(apply_, apply_adj, m_in, m_out, dim,
                                         seed + 1, rel_tol)
        unc2 = res2 / (2.0 * v2) if v2 > 0 else 0.0
        agreement = abs(v1 - v2)
        # unc bounds the Rayleigh bias on a clustered plateau, so two
        # honest runs may differ by about that much
        if agreement > 1e-6 * max(v1, v2, 1e-12) + unc1 + unc2:
            flagged = True
        v1 = max(v1, v2)
        unc = max(unc1, unc2)
    return NormReport(
        value=v1,
        method={
            "iterations": it1,
            "residual": res1,
            "seed": seed,
            "converged": mode,
            "uncertainty": unc,
            "restart_agreement": agreement,
        },
        matrices_involved=tuple(labels),
        flagged=flagged,
    )


def _csr_apply(mat):
    math_h = mat.getH().tocsr()
    return (lambda v: mat @ v), (lambda v: math_h @ v)


def norm_v_to_vstar(X, S, s_solver=None, seed=1234, restart_check=True,
                    rel_tol=1e-8):
    """Norm of a form matrix as an operator from H1 to its dual."""
    solver = s_solver or LinearSolver(S)
    apply_, apply_adj = _csr_apply(X.tocsr())
    return induced_norm(
        apply_, apply_adj,
        m_in=h1_metric(S, solver),
        m_out=dual_metric(S, solver),
        dim=X.shape[0],
        seed=seed,
        labels=("form", "gram_h1"),
        restart_check=restart_check,
        rel_tol=rel_tol,
    )


def norm_m1m1(op, v_field, refine=1, s_solver=None, seed=1234):
    """Discrete form-norm of a potential: sup |(V u, v)| / |u|_V |v|_V."""
    pert = assemble_perturbation(op.space, v=v_field, refine=refine)
    return norm_v_to_vstar(pert.matrix, op.gram_h1, s_solver, seed)


def norm_m10(op, q_field, refine=1, s_solver=None, seed=1234):
    """Discrete product-norm of a weight: sup |Q u|_L2 / |u|_V.

    Uses the mass matrix weighted by Q* Q; the norm is the square root of
    the top generalized eigenvalue against the H1 Gram.
    """
    weight = gram_field(q_field)
    pert = assemble_perturbation(op.space, v=weight, refine=refine)
    rep = norm_v_to_vstar(pert.matrix, op.gram_h1, s_solver, seed)
    return NormReport(
        value=math.sqrt(max(rep.value, 0.0)),
        method=rep.method,
        matrices_involved=("weighted_mass", "gram_h1"),
        flagged=rep.flagged,
    )


def kappa(solve_eps, solve_0, S, dim, s_solver=None, seed=1234,
          restart_check=True):
    """Resolvent-difference norm from dual H1 to H1.

    solve_eps / solve_0 are callables (rhs, adjoint=False) -> solution.
    """
    solver = s_solver or LinearSolver(S)

    def apply_(f):
        return solve_eps(f) - solve_0(f)

    def apply_adj(g):
        return solve_eps(g, True) - solve_0(g, True)

    return induced_norm(
        apply_, apply_adj,
        m_in=dual_metric(S, solver),
        m_out=h1_metric(S, solver),
        dim=dim,
        seed=seed,
        labels=("resolvent_eps", "resolvent_0", "gram_h1"),
        restart_check=restart_check,
    )


def _symmetric_power(mul_T, metric, dim, seed, rel_tol=1e-10,
                     max_iter=MAX_POWER_ITER):
    """Top eigenvalue of a metric-self-adjoint PSD operator.

    Same stagnation escape as the singular-value iteration: clustered
    top eigenvalues converge in value long before the vector settles.
    """
    rng = np.random.default_rng(seed)
    w = rng.standard_normal(dim) + 1j * rng.standard_normal(dim)
    w = w / _metric_norm(w, metric)
    lam = 0.0
    lam_prev = None
    stall = 0
    res = math.inf
    res_checkpoint = math.inf
    for it in range(1, max_iter + 1):
        tw = mul_T(w)
        lam = float(np.real(np.vdot(w, metric.mul(tw))))
        r = tw - lam * w
        res = _metric_norm(r, metric)
        if res <= rel_tol * max(abs(lam), 1e-30) or res <= 1e-14:
            return lam, it
        if lam_prev is not None and abs(lam - lam_prev) <= 1e-13 * abs(lam):
            stall += 1
            if stall >= 3:
                return lam, it
        else:
            stall = 0
        lam_prev = lam
        if it % 250 == 0:
            if res > 0.99 * res_checkpoint:
                return lam, it
            res_checkpoint = res
        nw = _metric_norm(tw, metric)
        if nw == 0.0:
            return 0.0, it
        w = tw / nw
    if res <= 1e-2 * abs(lam):
        return lam, it
    raise PowerIterationError(f"eigen iteration stalled after {max_iter} steps",
                              last_value=lam)


def smallest_eigenvalue(H, S, s_solver=None, seed=1234):
    """Smallest eigenvalue of the pencil (H, S) for Hermitian H, S > 0.

    Shift-inverted power iteration: the shift sits below the whole
    spectrum thanks to the a-priori bound |eig| <= |H|_{V -> V*}.  The
    bound run is deliberately coarse; the Hermitian residual it returns
    certifies how far the top eigenvalue can sit above the Rayleigh
    value, and the shift is padded past that.
    """
    solver = s_solver or LinearSolver(S)
    rep = norm_v_to_vstar(H, S, solver, seed=seed, restart_check=False,
                          rel_tol=1e-2)
    bound = math.sqrt(rep.value ** 2 + rep.method["residual"])
    sigma = -1.05 * bound - 1e-3 * max(bound, 1.0)
    shifted = LinearSolver((H - sigma * S).tocsc())
    metric = h1_metric(S, solver)

    def mul_T(w):
        return shifted.quick(S @ w)

    mu, _ = _symmetric_power(mul_T, metric, H.shape[0], seed)
    if mu <= 0.0:
        raise NumericalBreach("shift-inverted iteration lost positivity")
    return sigma + 1.0 / mu


@dataclass(frozen=True)
class CoercivityReport:
    """Shift making the whole schedule coercive in the H1 metric."""

    lambda0: float
    c4: float
    cone_check: dict
    per_eps: tuple = ()
    meta: dict = dc_field(default_factory=dict)


class CoercivityError(RuntimeError):
    pass


def _hermitian_part(G):
    return ((G + G.getH()) * 0.5).tocsr()


def find_lambda(forms, gram_l2s, S_list, lambda_start=-1.0, c4_min=0.05,
                lambda_abort=-1e6, seed=1234, cone_samples=1000):
    """Doubling descent to a shift coercive for every assembled form.

    forms[i] is the full form matrix (base plus perturbation, without the
    shift term); the candidate form is forms[i] - lam * gram_l2s[i].
    Returns the first lam on the doubling path whose Hermitian parts keep
    all smallest S-metric eigenvalues at or above c4_min.
    """
    lam = float(lambda_start)
    if lam >= 0:
        raise ValueError("descent starts from a negative shift")
    solvers = [LinearSolver(S) for S in S_list]
    while lam > lambda_abort:
        c4s = []
        for G, M, S, solver in zip(forms, gram_l2s, S_list, solvers):
            H = _hermitian_part(G - lam * M)
            c4s.append(smallest_eigenvalue(H, S, solver, seed=seed))
        c4 = min(c4s)
        if c4 >= c4_min:
            cone = _cone_check(forms[0] - lam * gram_l2s[0], S_list[0],
                               seed, cone_samples, c4)
            return CoercivityReport(
                lambda0=lam,
                c4=c4,
                cone_check=cone,
                per_eps=tuple(c4s),
            )
        lam *= 2.0
    raise CoercivityError(
        f"no coercive shift above {lambda_abort}: the numerical range "
        "cone never cleared the threshold"
    )


def _cone_check(G, S, seed, samples, c4):
    """Numerical-range sector data over random trial vectors."""
    rng = np.random.default_rng(seed)
    dim = G.shape[0]
    worst_tan = 0.0
    min_ratio = math.inf
    for _ in range(samples):
        u = rng.standard_normal(dim) + 1j * rng.standard_normal(dim)
        gu = complex(np.vdot(u, G @ u))
        su = float(np.real(np.vdot(u, S @ u)))
        re = gu.real
        if re <= 0:
            min_ratio = min(min_ratio, re / su)
            worst_tan = math.inf
            continue
        worst_tan = max(worst_tan, abs(gu.imag) / re)
        min_ratio = min(min_ratio, re / su)
    if min_ratio < c4 * (1 - 1e-8):
        raise NumericalBreach(
            f"sampled coercivity {min_ratio} fell below the certified {c4}"
        )
    return {
        "sector_tangent": worst_tan,
        "sampled_min_ratio": min_ratio,
        "samples": samples,
    }
