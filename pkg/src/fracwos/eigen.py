"""Inexact Arnoldi iteration for the smallest fractional-Laplacian eigenvalue.

The solution operator maps vertex values v to the solved field u of the
exterior-value problem with zero exterior data and source equal to the
piecewise-linear interpolant of v; its largest eigenvalue is the reciprocal
of the smallest eigenvalue of the discretized operator.  Each Arnoldi step
applies this operator by a multilevel walk solve, so the matrix-vector
products are inexact.  The per-step solve tolerance starts at tol/(B*m) and
is relaxed by the ratio of the current spectral gap to the previous
residual proxy, which is what makes later (cheaper) steps possible without
losing eigenvalue accuracy.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dfield

import numpy as np
from scipy import linalg

from . import mlmc
from .mesh import FieldVector, MeshHierarchy, interpolate
from .problems import Problem, _ConstantField

_BREAKDOWN = 1e-14
RELAX_CAP = 100.0


class ComplexLeadingRitzError(RuntimeError):
    """The leading Ritz value came out genuinely complex (diagnostic abort)."""


def leading_ritz(H: np.ndarray):
    """Leading (largest real part) eigenpair of a small dense matrix.

    The inverse operator is positivity-preserving, so the leading Ritz value
    is real in practice; a complex leading value aborts with a diagnostic.
    The eigenvector is normalized with a deterministic sign.
    """
    vals, vecs = linalg.eig(H)
    idx = int(np.argmax(vals.real))
    theta = vals[idx]
    if abs(theta.imag) > 1e-9 * max(1.0, abs(theta.real)):
        raise ComplexLeadingRitzError(f"leading Ritz value {theta} is complex")
    w = vecs[:, idx]
    if np.abs(w.imag).max() > 1e-9:
        raise ComplexLeadingRitzError("leading Ritz vector is complex")
    w = w.real
    w = w / np.linalg.norm(w)
    pivot = int(np.argmax(np.abs(w)))
    if w[pivot] < 0:
        w = -w
    return float(theta.real), w


def spectral_gap(H: np.ndarray) -> float:
    """Distance from the leading Ritz value to the nearest other Ritz value."""
    H = np.atleast_2d(H)
    if H.shape[0] < 2:
        raise ValueError("no gap available for a 1x1 Ritz problem")
    vals = linalg.eigvals(H)
    idx = int(np.argmax(vals.real))
    others = np.delete(vals, idx)
    return float(np.abs(others - vals[idx]).min())


def wos_tolerance(k: int, tol: float, B: float, m: int,
                  gap: float | None, r_prev: float | None,
                  relax_cap: float = RELAX_CAP) -> float:
    """Per-step solve tolerance: base tol/(B m), relaxed by gap/residual.

    The relaxation factor is floored at 1 (never tighter than the base) and
    capped at `relax_cap` so one noisy residual cannot blow up a run.
    """
    if tol <= 0 or B <= 0 or m <= 0:
        raise ValueError("tol, B, m must be positive")
    base = tol / (B * m)
    if k <= 1 or gap is None or r_prev is None:
        return base
    with np.errstate(divide="ignore"):
        ratio = gap / r_prev if r_prev > 0 else np.inf
    return base * float(min(max(ratio, 1.0), relax_cap))


@dataclass
class ArnoldiState:
    """Orthonormal Krylov basis, growing Hessenberg matrix, and history."""

    m: int
    tol: float
    B: float
    basis: list = dfield(default_factory=list)
    H: np.ndarray | None = None
    k: int = 0
    theta: float | None = None
    w: np.ndarray | None = None
    residual_history: list = dfield(default_factory=list)
    gap_history: list = dfield(default_factory=list)
    tol_history: list = dfield(default_factory=list)
    cost_history: list = dfield(default_factory=list)
    variable: bool = True
    relax_cap: float = RELAX_CAP
    breakdown: bool = False

    @property
    def residual(self) -> float:
        return self.residual_history[-1]


def start_state(v0: np.ndarray, m: int, tol: float, B: float,
                variable: bool = True, relax_cap: float = RELAX_CAP) -> ArnoldiState:
    if m < 2:
        raise ValueError("need at least two iterations")
    v0 = np.asarray(v0, dtype=np.float64)
    nrm = np.linalg.norm(v0)
    if nrm == 0:
        raise ValueError("zero start vector")
    state = ArnoldiState(m=m, tol=tol, B=B, variable=variable,
                         relax_cap=relax_cap)
    state.basis.append(v0 / nrm)
    state.H = np.zeros((m + 1, m))
    return state


def arnoldi_step(state: ArnoldiState, apply_op) -> ArnoldiState:
    """One inexact Arnoldi step: apply, orthogonalize, update Ritz data.

    `apply_op(v, wos_tol, k)` must return (A^{-1} v estimate, cost).
    Classical Gram-Schmidt with one reorthogonalization pass keeps the
    basis orthonormal; a vanishing continuation norm declares a converged
    invariant subspace.
    """
    if state.breakdown or state.k >= state.m:
        raise RuntimeError("Arnoldi iteration already finished")
    k = state.k + 1
    gap = None
    if state.variable and k >= 3:
        gap = spectral_gap(state.H[:k - 1, :k - 1])
    r_prev = state.residual_history[-1] if state.residual_history else None
    if state.variable:
        wtol = wos_tolerance(k, state.tol, state.B, state.m, gap, r_prev,
                             state.relax_cap)
    else:
        wtol = state.tol / (state.B * state.m)

    u, cost = apply_op(state.basis[k - 1], wtol, k)
    u = np.asarray(u, dtype=np.float64)

    V = np.column_stack(state.basis)
    h = V.T @ u
    u = u - V @ h
    h2 = V.T @ u          # one reorthogonalization pass
    u = u - V @ h2
    h = h + h2
    state.H[:k, k - 1] = h
    h_next = float(np.linalg.norm(u))
    state.H[k, k - 1] = h_next

    state.theta, state.w = leading_ritz(state.H[:k, :k])
    residual = h_next * abs(state.w[-1])
    state.k = k
    state.residual_history.append(residual)
    state.gap_history.append(gap)
    state.tol_history.append(wtol)
    state.cost_history.append(cost)
    if h_next < _BREAKDOWN:
        state.breakdown = True
    else:
        state.basis.append(u / h_next)
    return state


@dataclass
class EigenResult:
    lam: float
    theta: float
    residual: float
    iterations: int
    total_cost: int
    state: ArnoldiState

    @property
    def history(self):
        s = self.state
        rows = []
        for i in range(s.k):
            theta_i, _ = leading_ritz(s.H[:i + 1, :i + 1])
            rows.append({"k": i + 1, "theta": theta_i,
                         "lambda": 1.0 / theta_i,
                         "residual": s.residual_history[i],
                         "gap": s.gap_history[i],
                         "wos_tol": s.tol_history[i],
                         "cost": s.cost_history[i]})
        return rows


def run_arnoldi(apply_op, v0, m, tol, B, variable=True,
                relax_cap=RELAX_CAP) -> EigenResult:
    state = start_state(v0, m, tol, B, variable, relax_cap)
    while state.k < m and not state.breakdown:
        arnoldi_step(state, apply_op)
    return EigenResult(lam=1.0 / state.theta, theta=state.theta,
                       residual=state.residual, iterations=state.k,
                       total_cost=int(sum(state.cost_history)), state=state)


class _InterpolantField:
    """Picklable scalar field: the piecewise-linear interpolant of v."""

    def __init__(self, level, values: np.ndarray):
        self.level = level
        self.values = np.asarray(values, dtype=np.float64)

    def __call__(self, pts):
        return interpolate(self.level, self.values, pts)


def apply_inverse(v, alpha: float, hier: MeshHierarchy, rms_tol: float,
                  seed: int, l0: int | None = None, workers: int = 1,
                  pilot_M: int = 32):
    """Solve with source equal to the interpolant of v and zero exterior data.

    `rms_tol` is the per-vertex root-mean-square accuracy (the Euclidean
    norm of the error vector divided by sqrt(N)); the field solver's L2
    tolerance is rms_tol * sqrt(masked area), and both scales are reported
    for audit.  Returns (vertex values, cost, info).
    """
    if rms_tol <= 0:
        raise ValueError("rms_tol must be positive")
    level = hier.level(hier.finest)
    vals = v.values if isinstance(v, FieldVector) else np.asarray(v, dtype=np.float64)
    if vals.shape[0] != level.num_vertices:
        raise ValueError("vector length does not match the finest level")
    if not np.any(vals):
        return np.zeros_like(vals), 0, {"eps_l2": 0.0, "rms_tol": rms_tol}
    l0 = hier.coarsest if l0 is None else l0
    problem = Problem(alpha=alpha, domain=hier.domain,
                      f=_InterpolantField(level, vals), g=_ConstantField(0.0),
                      name="inverse-apply")
    eps_l2 = rms_tol * np.sqrt(hier.masked_area(hier.finest))
    res = mlmc.run(hier, problem, eps_l2, l0, seed, pilot_M=pilot_M,
                   fixed_L=hier.finest, workers=workers)
    info = {"eps_l2": eps_l2, "rms_tol": rms_tol,
            "stat_error_l2": res.stat_error_est}
    return res.solution.values, res.total_cost, info


def smallest_eigenvalue(alpha: float, hier: MeshHierarchy, tol: float,
                        B: float, m: int, seed: int, l0: int | None = None,
                        workers: int = 1, variable_accuracy: bool = True,
                        pilot_M: int = 32) -> EigenResult:
    """Smallest eigenvalue of the fractional Laplacian on the meshed domain.

    Runs m inexact Arnoldi steps from the normalized interior indicator
    (positive, hence overlapping the principal eigenfunction) and returns
    1/theta for the leading Ritz pair.
    """
    level = hier.level(hier.finest)
    if level.interior_mask is None or not level.interior_mask.any():
        raise ValueError("hierarchy has no interior vertices")
    v0 = level.interior_mask.astype(np.float64)

    def apply_op(vec, wtol, k):
        u, cost, _ = apply_inverse(vec, alpha, hier, wtol,
                                   derive_step_seed(seed, k), l0=l0,
                                   workers=workers, pilot_M=pilot_M)
        return u, cost

    return run_arnoldi(apply_op, v0, m, tol, B, variable=variable_accuracy)


def derive_step_seed(seed: int, k: int) -> int:
    """Independent solver seed for Arnoldi step k."""
    from .streams import derive_key
    return int(derive_key(seed, 0xA7, k))
