"""
Small dense convex kernels used by the beamforming algorithms.

- ``solve_sdp``: primal-dual path-following interior point (HKM direction,
  Mehrotra predictor-corrector) for complex Hermitian SDPs of the form
  min tr(C X) s.t. tr(A_k X) >= b_k, X PSD. Complex problems are solved
  through the real symmetric embedding of order 2n.
- ``solve_nnqp``: accelerated projected gradient for the SCA dual
  max -l'Ql + l'r over l >= 0, with monotone restart and an active-set
  polish.
- ``gaussian_randomization``: rank-one extraction from a relaxed solution.
"""
import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, List, Optional, Sequence, Union

import numpy as np
from scipy import linalg

from .aircomp_core import DEGENERATE_GAIN
from .error_handler import ExtractionError, InfeasibleSubproblemError, InvalidArgumentError
from .schemas import SolverOptions

logger = logging.getLogger(__name__)

HERMITIAN_TOL = 1e-12
PSD_TOL = 1e-10
STEP_FRACTION = 0.95
DIVERGENCE_BOUND = 1e12
TIKHONOV_WEIGHT = 1e-10


class SdpStatus(str, Enum):
    OPTIMAL = "optimal"
    MAX_ITERATIONS = "max-iterations"
    INFEASIBLE = "infeasible-detected"


@dataclass(frozen=True)
class SdpProblem:
    """min tr(C X) s.t. tr(A_k X) >= b_k for all k, X Hermitian PSD of order n."""

    objective: np.ndarray
    constraints: Sequence[np.ndarray]
    rhs: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.objective, dtype=complex)
        if c.ndim != 2 or c.shape[0] != c.shape[1] or c.shape[0] < 1:
            raise InvalidArgumentError(f"objective must be a non-empty square matrix, got shape {c.shape}")
        n = c.shape[0]
        a = np.asarray(self.constraints, dtype=complex)
        if a.ndim != 3 or a.shape[1:] != (n, n):
            raise InvalidArgumentError(f"constraint matrices must have shape (m, {n}, {n}), got {a.shape}")
        b = np.asarray(self.rhs, dtype=float).reshape(-1)
        if b.shape[0] != a.shape[0]:
            raise InvalidArgumentError(f"{a.shape[0]} constraint matrices but {b.shape[0]} right-hand sides")
        for name, matrix in [("objective", c)] + [(f"constraint {k}", a[k]) for k in range(a.shape[0])]:
            if np.linalg.norm(matrix - matrix.conj().T) > HERMITIAN_TOL * max(1.0, np.linalg.norm(matrix)):
                raise InvalidArgumentError(f"{name} matrix is not Hermitian")
        object.__setattr__(self, 'objective', c)
        object.__setattr__(self, 'constraints', a)
        object.__setattr__(self, 'rhs', b)

    @property
    def order(self) -> int:
        return self.objective.shape[0]

    @property
    def num_constraints(self) -> int:
        return self.rhs.shape[0]


@dataclass
class SdpSolution:
    """Primal X, constraint multipliers and the duality certificate."""

    x: np.ndarray
    duals: np.ndarray
    primal_objective: float
    dual_objective: float
    gap: float
    status: SdpStatus
    iterations: int = 0
    primal_residual: float = 0.0
    dual_residual: float = 0.0


# --- Complex Hermitian <-> real symmetric embedding ---

def hermitian_to_real(matrix: np.ndarray) -> np.ndarray:
    """[[Re, -Im], [Im, Re]]; PSD-ness and eigenvalues (doubled) are preserved."""
    re, im = matrix.real, matrix.imag
    return np.block([[re, -im], [im, re]])


def real_to_hermitian(matrix: np.ndarray) -> np.ndarray:
    """Inverse of the embedding, averaging the redundant blocks."""
    n = matrix.shape[0] // 2
    y11, y12 = matrix[:n, :n], matrix[:n, n:]
    y21, y22 = matrix[n:, :n], matrix[n:, n:]
    x = 0.5 * (y11 + y22) + 0.5j * (y21 - y12)
    return 0.5 * (x + x.conj().T)


def _sym(matrix: np.ndarray) -> np.ndarray:
    return 0.5 * (matrix + matrix.T)


def _max_step(x: np.ndarray, dx: np.ndarray) -> float:
    """Largest alpha with x + alpha*dx PSD (inf if unbounded)."""
    try:
        chol = linalg.cholesky(x, lower=True)
    except linalg.LinAlgError:
        return 0.0
    tmp = linalg.solve_triangular(chol, dx, lower=True)
    scaled = linalg.solve_triangular(chol, tmp.T, lower=True)
    smallest = linalg.eigvalsh(_sym(scaled))[0]
    return np.inf if smallest >= 0 else -1.0 / smallest


def _max_step_vec(v: np.ndarray, dv: np.ndarray) -> float:
    shrinking = dv < 0
    if not np.any(shrinking):
        return np.inf
    return float(np.min(-v[shrinking] / dv[shrinking]))


def solve_sdp(problem: SdpProblem, options: Optional[SolverOptions] = None) -> SdpSolution:
    """
    Solves the Hermitian SDP with an infeasible-start primal-dual method.

    Inequalities carry explicit slacks s >= 0 whose dual slacks equal the
    multipliers. Data are row- and objective-normalized internally; the
    returned objectives and multipliers are in the caller's units.
    """
    options = options or SolverOptions()
    tol = options.sdp_tolerance

    # Real embedding: tr(M X) = tr(emb(M) emb(X)) / 2.
    c_full = 0.5 * hermitian_to_real(problem.objective)
    a_full = np.stack([0.5 * hermitian_to_real(a) for a in problem.constraints])
    b = problem.rhs.copy()
    p = c_full.shape[0]
    m = b.shape[0]

    row_scale = np.linalg.norm(a_full.reshape(m, -1), axis=1)
    if np.any(row_scale == 0):
        raise InvalidArgumentError("constraint matrices must be nonzero")
    obj_scale = max(np.linalg.norm(c_full), 1e-300)
    a_mat = a_full / row_scale[:, None, None]
    b_s = b / row_scale
    c_mat = c_full / obj_scale

    def a_op(matrix):
        return np.einsum('kab,ba->k', a_mat, matrix)

    def a_adj(vector):
        return np.tensordot(vector, a_mat, axes=1)

    traces = np.einsum('kaa->k', a_mat)
    with np.errstate(divide='ignore', invalid='ignore'):
        needed = np.where(traces > 0, 2.0 * b_s / traces, 0.0)
    t0 = max(1.0, float(np.max(needed, initial=0.0)))
    x = t0 * np.eye(p)
    s = np.maximum(a_op(x) - b_s, 1.0)
    y = np.ones(m)
    w = y.copy()
    z = max(1.0, np.sqrt(p) * np.linalg.norm(c_mat)) * np.eye(p)

    b_norm = 1.0 + np.linalg.norm(b_s)
    c_norm = 1.0 + np.linalg.norm(c_mat)
    status = SdpStatus.MAX_ITERATIONS
    iteration = 0
    r_p = r_d_norm = rel_gap = np.inf

    for iteration in range(1, options.sdp_max_iterations + 1):
        r_p_vec = b_s - a_op(x) + s
        r_d = c_mat - a_adj(y) - z
        r_w = y - w
        pobj = float(np.sum(c_mat * x))
        dobj = float(b_s @ y)
        mu = (float(np.sum(x * z)) + float(s @ w)) / (p + m)
        r_p = np.linalg.norm(r_p_vec) / b_norm
        r_d_norm = (np.linalg.norm(r_d) + np.linalg.norm(r_w)) / c_norm
        rel_gap = abs(pobj - dobj) / (1.0 + abs(pobj) + abs(dobj))
        logger.debug("sdp iter %d: pobj=%.10g dobj=%.10g gap=%.2e rp=%.2e rd=%.2e",
                     iteration, pobj, dobj, rel_gap, r_p, r_d_norm)

        if rel_gap <= tol and r_p <= tol and r_d_norm <= tol:
            status = SdpStatus.OPTIMAL
            break
        if np.linalg.norm(x) > DIVERGENCE_BOUND or np.linalg.norm(y) > DIVERGENCE_BOUND:
            status = SdpStatus.INFEASIBLE
            break

        try:
            z_chol = linalg.cho_factor(z, lower=True)
        except linalg.LinAlgError:
            logger.warning("SDP dual slack lost definiteness at iteration %d", iteration)
            break
        z_inv = _sym(linalg.cho_solve(z_chol, np.eye(p)))

        # Schur complement M_ij = tr(A_i Z^-1 A_j X) plus the slack block.
        za = np.matmul(z_inv, a_mat)
        zax = np.matmul(za, x)
        schur = np.einsum('iab,jba->ij', a_mat, zax)
        schur = 0.5 * (schur + schur.T) + np.diag(s / w)
        try:
            schur_factor = linalg.cho_factor(schur, lower=True)

            def schur_solve(rhs):
                return linalg.cho_solve(schur_factor, rhs)
        except linalg.LinAlgError:
            def schur_solve(rhs):
                return np.linalg.lstsq(schur, rhs, rcond=None)[0]

        zrx = z_inv @ r_d @ x

        def direction(rc_x, rc_s):
            rhs = r_p_vec - a_op(rc_x) + a_op(zrx) + rc_s - (s / w) * r_w
            dy = schur_solve(rhs)
            dz = r_d - a_adj(dy)
            dx = _sym(rc_x) - _sym(z_inv @ dz @ x)
            dw = r_w + dy
            ds = rc_s - (s / w) * dw
            return dx, ds, dy, dz, dw

        def step_lengths(dx, ds, dz, dw):
            alpha_p = min(1.0, STEP_FRACTION * min(_max_step(x, dx), _max_step_vec(s, ds)))
            alpha_d = min(1.0, STEP_FRACTION * min(_max_step(z, dz), _max_step_vec(w, dw)))
            return alpha_p, alpha_d

        # Predictor
        dx_a, ds_a, dy_a, dz_a, dw_a = direction(-x, -s)
        ap_a, ad_a = step_lengths(dx_a, ds_a, dz_a, dw_a)
        mu_aff = (float(np.sum((x + ap_a * dx_a) * (z + ad_a * dz_a)))
                  + float((s + ap_a * ds_a) @ (w + ad_a * dw_a))) / (p + m)
        sigma = min(1.0, max(0.0, (mu_aff / mu) ** 3)) if mu > 0 else 0.0

        # Corrector
        rc_x = sigma * mu * z_inv - x - z_inv @ dz_a @ dx_a
        rc_s = (sigma * mu - ds_a * dw_a) / w - s
        dx, ds, dy, dz, dw = direction(rc_x, rc_s)
        alpha_p, alpha_d = step_lengths(dx, ds, dz, dw)
        if alpha_p < 1e-12 and alpha_d < 1e-12:
            logger.warning("SDP stalled at iteration %d (gap %.2e)", iteration, rel_gap)
            break

        x = _sym(x + alpha_p * dx)
        s = s + alpha_p * ds
        y = y + alpha_d * dy
        z = _sym(z + alpha_d * dz)
        w = w + alpha_d * dw

    x_complex = real_to_hermitian(x)
    duals = np.maximum(y, 0.0) * obj_scale / row_scale
    primal_objective = float(np.real(np.sum(problem.objective.T * x_complex)))
    dual_objective = float(problem.rhs @ duals)
    solution = SdpSolution(
        x=x_complex,
        duals=duals,
        primal_objective=primal_objective,
        dual_objective=dual_objective,
        gap=primal_objective - dual_objective,
        status=status,
        iterations=iteration,
        primal_residual=float(r_p),
        dual_residual=float(r_d_norm),
    )
    if status is not SdpStatus.OPTIMAL:
        logger.warning("SDP finished with status %s after %d iterations (gap %.2e, residuals %.2e/%.2e)",
                       status.value, iteration, rel_gap, solution.primal_residual, solution.dual_residual)
    else:
        logger.debug("SDP optimal in %d iterations, objective %.10g", iteration, primal_objective)
    return solution


# --- SCA subproblem and its dual ---

@dataclass
class ScaSubproblem:
    """
    Dual data of min m^H M m s.t. 2Re{c_k m^H v_k} >= 1 + |c_k|^2.

    ``coefficients`` holds c_k = v_k^H z; ``hessian`` is None for M = I.
    """

    gram: np.ndarray
    linear: np.ndarray
    coefficients: Optional[np.ndarray] = None
    basis: Optional[np.ndarray] = None
    hessian: Optional[np.ndarray] = None
    _factor: Optional[tuple] = field(default=None, repr=False)

    def apply_inverse_hessian(self, vector: np.ndarray) -> np.ndarray:
        if self.hessian is None:
            return vector
        return linalg.cho_solve(self._factor, vector)

    def primal_objective(self, m: np.ndarray) -> float:
        """m^H M m for a candidate primal point."""
        if self.hessian is None:
            return float(np.real(np.vdot(m, m)))
        return float(np.real(np.vdot(m, self.hessian @ m)))

    def dual_objective(self, lam: np.ndarray) -> float:
        """g(lambda) = -lambda' Q lambda + lambda' r."""
        return float(-lam @ self.gram @ lam + lam @ self.linear)

    def constraint_values(self, m: np.ndarray) -> np.ndarray:
        """2Re{c_k m^H v_k} - r_k; feasible points are non-negative."""
        return 2.0 * np.real(self.coefficients * (np.conj(m) @ self.basis)) - self.linear


def _regularized_factor(hessian: np.ndarray):
    n = hessian.shape[0]
    weight = TIKHONOV_WEIGHT * max(np.real(np.trace(hessian)) / n, 1e-300)
    return linalg.cho_factor(hessian + weight * np.eye(n), lower=True)


def build_sca_subproblem(z: np.ndarray, basis_vectors: np.ndarray, hessian: Optional[np.ndarray] = None) -> ScaSubproblem:
    """
    Dual quadratic of the convexified problem linearized at ``z``.

    Q_jk = Re{c_j^* v_j^H M^-1 v_k c_k} and r_k = 1 + |c_k|^2. Basis vectors
    are the columns of ``basis_vectors`` (channels h_k, or f_k in the
    reduced problem with M = D).
    """
    v = np.asarray(basis_vectors, dtype=complex)
    if v.ndim == 1:
        v = v[:, np.newaxis]
    z = np.asarray(z, dtype=complex).reshape(-1)
    if z.shape[0] != v.shape[0]:
        raise InvalidArgumentError(f"point has dimension {z.shape[0]}, basis vectors have {v.shape[0]}")

    factor = None
    if hessian is not None:
        hessian = np.asarray(hessian, dtype=complex)
        if hessian.shape != (v.shape[0], v.shape[0]):
            raise InvalidArgumentError(f"Hessian must be {v.shape[0]}x{v.shape[0]}, got {hessian.shape}")
        hessian = 0.5 * (hessian + hessian.conj().T)
        factor = _regularized_factor(hessian)
        inner = v.conj().T @ linalg.cho_solve(factor, v)
    else:
        inner = v.conj().T @ v

    coefficients = v.conj().T @ z
    gram = np.real(np.conj(coefficients)[:, None] * inner * coefficients[None, :])
    gram = 0.5 * (gram + gram.T)
    linear = 1.0 + np.abs(coefficients) ** 2
    return ScaSubproblem(gram=gram, linear=linear, coefficients=coefficients, basis=v,
                         hessian=hessian, _factor=factor)


def kkt_residual(gram: np.ndarray, linear: np.ndarray, lam: np.ndarray) -> float:
    """||min(lambda, 2 Q lambda - r)||_inf, zero exactly at the dual optimum."""
    return float(np.max(np.abs(np.minimum(lam, 2.0 * gram @ lam - linear)), initial=0.0))


def _polish(gram: np.ndarray, linear: np.ndarray, lam: np.ndarray, rounds: int = 3) -> np.ndarray:
    """Solves the KKT system on the identified support; keeps the better point."""
    best, best_residual = lam, kkt_residual(gram, linear, lam)
    scale = max(1.0, float(np.max(lam, initial=0.0)))
    current = lam
    for _ in range(rounds):
        gradient = 2.0 * gram @ current - linear
        support = (current > 1e-12 * scale) | (gradient < -1e-12 * scale)
        if not np.any(support):
            break
        candidate = np.zeros_like(current)
        idx = np.flatnonzero(support)
        candidate[idx] = np.linalg.lstsq(2.0 * gram[np.ix_(idx, idx)], linear[idx], rcond=None)[0]
        candidate = np.maximum(candidate, 0.0)
        residual = kkt_residual(gram, linear, candidate)
        if residual < best_residual:
            best, best_residual = candidate, residual
        if np.array_equal(candidate > 0, current > 0):
            break
        current = candidate
    return best


def solve_nnqp(
    sub: ScaSubproblem,
    options: Optional[SolverOptions] = None,
    objective_trace: Optional[List[float]] = None,
) -> np.ndarray:
    """
    Maximizes -l'Ql + l'r over l >= 0.

    ``objective_trace``, when given, receives the dual objective after each
    accepted iterate; it never decreases.
    """
    options = options or SolverOptions()
    gram = np.asarray(sub.gram, dtype=float)
    linear = np.asarray(sub.linear, dtype=float)
    k = linear.shape[0]
    if gram.shape != (k, k):
        raise InvalidArgumentError(f"gram must be {k}x{k}, got {gram.shape}")

    eigenvalues = np.linalg.eigvalsh(gram)
    top = max(float(eigenvalues[-1]), 0.0)
    if eigenvalues[0] < -PSD_TOL * max(1.0, top):
        raise InvalidArgumentError(f"gram matrix is not PSD (smallest eigenvalue {eigenvalues[0]:.3e})")

    unbounded = (np.diag(gram) <= PSD_TOL * max(1.0, top)) & (linear > 0)
    if np.any(unbounded):
        raise InfeasibleSubproblemError(f"dual is unbounded along multipliers {np.flatnonzero(unbounded).tolist()}")

    lam = np.zeros(k)
    if top == 0.0:
        return lam

    def cost(v):
        return float(v @ gram @ v - linear @ v)

    step = 1.0 / (2.0 * top)
    y = lam.copy()
    t = 1.0
    f_lam = cost(lam)
    iteration = 0
    for iteration in range(1, options.nnqp_max_iterations + 1):
        candidate = np.maximum(y - step * (2.0 * gram @ y - linear), 0.0)
        f_candidate = cost(candidate)
        t_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
        if f_candidate <= f_lam:
            previous = lam
            lam, f_lam = candidate, f_candidate
            y = lam + ((t - 1.0) / t_next) * (lam - previous)
            t = t_next
        else:
            # Monotone restart from the last accepted point.
            y = lam.copy()
            t = 1.0
        if objective_trace is not None:
            objective_trace.append(-f_lam)
        if kkt_residual(gram, linear, lam) <= options.nnqp_tolerance:
            break

    polished = _polish(gram, linear, lam)
    if polished is not lam:
        if cost(polished) > f_lam + 1e-12 * max(1.0, abs(f_lam)):
            polished = lam
        elif objective_trace is not None:
            objective_trace.append(-cost(polished))
    logger.debug("nnqp finished after %d iterations, kkt residual %.2e",
                 iteration, kkt_residual(gram, linear, polished))
    return polished


def reconstruct_primal(sub: ScaSubproblem, lam: np.ndarray) -> np.ndarray:
    """Stationary point m = M^-1 sum_k lambda_k c_k v_k of the Lagrangian."""
    lam = np.asarray(lam, dtype=float)
    combination = sub.basis @ (lam * sub.coefficients)
    return sub.apply_inverse_hessian(combination)


# --- Rank-one extraction ---

def _min_gain(candidates: np.ndarray, constraint_vectors: np.ndarray) -> np.ndarray:
    gains = np.abs(candidates.conj().T @ constraint_vectors)
    scale = np.linalg.norm(candidates, axis=0)[:, None] * np.linalg.norm(constraint_vectors, axis=0)[None, :]
    gains = np.where(gains < DEGENERATE_GAIN * scale, 0.0, gains)
    return gains.min(axis=1)


def eigen_rank_ratio(x: np.ndarray) -> float:
    """lambda_2 / lambda_1 of a PSD matrix; zero for an exactly rank-one X."""
    eigenvalues = np.clip(np.linalg.eigvalsh(x)[::-1], 0.0, None)
    if eigenvalues.size < 2 or eigenvalues[0] <= 0:
        return 0.0
    return float(eigenvalues[1] / eigenvalues[0])


def gaussian_randomization(
    x: Union[SdpSolution, np.ndarray],
    constraint_vectors: np.ndarray,
    objective_metric: Optional[Union[np.ndarray, Callable[[np.ndarray], float]]] = None,
    num_candidates: int = 100,
    rng: Optional[np.random.Generator] = None,
) -> np.ndarray:
    """
    Extracts a feasible vector from a relaxed solution X.

    Candidate 0 is the scaled dominant eigenvector, candidate 1 has
    magnitudes sqrt(diag X) with the dominant eigenvector's phases, the rest
    are drawn from CN(0, X). Each is rescaled so min_k |xi^H v_k| = 1 and the
    one with the smallest metric wins (lowest index on ties). The metric is
    a Hermitian matrix M (xi^H M xi), a callable, or None for ||xi||^2.
    """
    if num_candidates < 1:
        raise InvalidArgumentError(f"candidate budget must be at least 1, got {num_candidates}")
    matrix = x.x if isinstance(x, SdpSolution) else np.asarray(x, dtype=complex)
    v = np.asarray(constraint_vectors, dtype=complex)
    if v.ndim == 1:
        v = v[:, np.newaxis]
    n = matrix.shape[0]
    if v.shape[0] != n:
        raise InvalidArgumentError(f"X has order {n}, constraint vectors have dimension {v.shape[0]}")
    rng = rng or np.random.default_rng()

    eigenvalues, eigenvectors = np.linalg.eigh(0.5 * (matrix + matrix.conj().T))
    eigenvalues = np.clip(eigenvalues, 0.0, None)
    dominant = eigenvectors[:, -1] * np.sqrt(eigenvalues[-1])
    phases = np.exp(1j * np.angle(dominant))
    diagonal = np.sqrt(np.clip(np.real(np.diag(matrix)), 0.0, None)) * phases

    draws = (rng.standard_normal((n, num_candidates)) + 1j * rng.standard_normal((n, num_candidates))) / np.sqrt(2.0)
    gaussian = (eigenvectors * np.sqrt(eigenvalues)[None, :]) @ draws
    candidates = np.column_stack([dominant, diagonal, gaussian])

    min_gain = _min_gain(candidates, v)
    usable = min_gain > 0
    if not np.any(usable):
        raise ExtractionError(
            f"all {candidates.shape[1]} candidates have zero gain on some device "
            f"(rank ratio {eigen_rank_ratio(matrix):.3e})"
        )
    scaled = candidates[:, usable] / min_gain[usable][None, :]

    if objective_metric is None:
        values = np.sum(np.abs(scaled) ** 2, axis=0)
    elif callable(objective_metric):
        values = np.array([objective_metric(scaled[:, i]) for i in range(scaled.shape[1])])
    else:
        metric = np.asarray(objective_metric, dtype=complex)
        values = np.real(np.einsum('ai,ab,bi->i', scaled.conj(), metric, scaled))
    best = int(np.argmin(values))
    logger.debug("randomization kept candidate %d of %d usable", best, scaled.shape[1])
    return scaled[:, best]
