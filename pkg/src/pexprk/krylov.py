"""Adaptive Krylov approximation of phi_k(tau * L) v.

An incremental Arnoldi factorization of (L, v) is built with classical
Gram-Schmidt plus a reorthogonalization pass whenever the norm drop signals
cancellation, and the product is approximated in the reduced space,

    phi_k(tau L) v ~= ||v|| * V_M * phi_k(tau H_M) e_1.

The error is estimated only at pre-determined check indices, spaced so that
each check costs roughly as much as all preceding checks combined, and only
through the phi_1 surrogate

    est = |tau| * h_{M+1,M} * |e_M^T phi_1(tau H_M) e_1| / ||phi_k(tau H_M) e_1||,

the leading term of the error integral for the phi_1 product, which is
conservative for the faster-converging higher phi indices.  There is no
sub-stepping in tau: a product that does not converge by m_max is returned
with ``converged=False``.
"""

import math
from dataclasses import dataclass

import numpy as np

from .operators import LinearOperator
from .phi import phi_array, phi_cols_e1

try:
    from numba import njit as _njit

    @_njit(cache=True)
    def _gs_pass(basis, w):
        coeffs = basis.T @ w
        w = w - basis @ coeffs
        return coeffs, w

except ImportError:  # pragma: no cover - numba is optional
    def _gs_pass(basis, w):
        coeffs = basis.T @ w
        return coeffs, w - basis @ coeffs


_BREAKDOWN_RTOL = 1e-14
_SYMMETRY_RTOL = 1e-12


class KrylovError(RuntimeError):
    """Breakdown of the Arnoldi process (non-finite basis entries)."""


def default_check_schedule(m_max: int) -> list[int]:
    """Error-check indices with roughly cost-doubling spacing.

    Starting from m=1, the next check is the smallest m whose O(m^3)
    reduced-space evaluation costs at least as much as every earlier check
    combined; the schedule is capped and terminated at m_max.
    """
    if m_max < 1:
        raise ValueError(f"m_max must be >= 1, got {m_max}")
    schedule = [1]
    total = 1
    while schedule[-1] < m_max:
        m = schedule[-1] + 1
        while m**3 < total and m < m_max:
            m += 1
        schedule.append(m)
        total += m**3
    return schedule


@dataclass
class KrylovConfig:
    tol: float = 1e-12
    m_max: int = 100
    check_schedule: list[int] | None = None

    def __post_init__(self):
        if self.tol <= 0:
            raise ValueError(f"tol must be positive, got {self.tol}")
        if self.m_max < 1:
            raise ValueError(f"m_max must be >= 1, got {self.m_max}")
        if self.check_schedule is None:
            self.check_schedule = default_check_schedule(self.m_max)
        sched = self.check_schedule
        if any(b <= a for a, b in zip(sched, sched[1:])) or sched[-1] != self.m_max:
            raise ValueError("check schedule must be strictly increasing and end at m_max")


@dataclass
class KrylovResult:
    approximation: np.ndarray
    dim_used: int
    matvecs: int
    est_error: float
    converged: bool
    basis: np.ndarray | None = None       # N x M, orthonormal columns
    hessenberg: np.ndarray | None = None  # M x M
    h_next: float = 0.0                   # h_{M+1,M}
    v_next: np.ndarray | None = None      # (M+1)-th basis vector, if any


@dataclass
class KrylovStats:
    matvecs: int = 0
    krylov_dim_total: int = 0
    solves: int = 0

    def merge(self, other: "KrylovStats"):
        self.matvecs += other.matvecs
        self.krylov_dim_total += other.krylov_dim_total
        self.solves += other.solves


class EvalContext:
    """Per-step evaluation workspace.

    Shares Arnoldi factorizations between phi products on the same
    (operator, vector) pair -- the basis is independent of the phi index and
    of tau -- and memoizes coefficient-expression applications.  Holding the
    keyed objects keeps their ids stable for the context's lifetime.
    """

    def __init__(self):
        self._arnoldi: dict = {}
        self.memo: dict = {}
        self._memo_refs: list = []
        self.stats = KrylovStats()

    def arnoldi_state(self, op: LinearOperator, v: np.ndarray, m_hint: int = 0) -> "_ArnoldiState":
        key = (id(op), id(v))
        entry = self._arnoldi.get(key)
        if entry is None:
            entry = (_ArnoldiState(op, v, m_hint), op, v)
            self._arnoldi[key] = entry
        return entry[0]

    def keep(self, obj):
        self._memo_refs.append(obj)


class _ArnoldiState:
    """Incrementally extensible Arnoldi factorization of (L, v)."""

    def __init__(self, op: LinearOperator, v: np.ndarray, m_hint: int = 0):
        self.op = op
        self.n = op.dim
        self.m_hint = min(m_hint, self.n) if m_hint else 0
        self.vnorm = float(np.linalg.norm(v))
        cap = min(16, self.n)
        # column-major storage: every slice V[:, :j] stays BLAS-friendly
        self.V = np.empty((self.n, cap + 1), order="F")
        self.H = np.zeros((cap + 1, cap))
        if self.vnorm > 0.0:
            self.V[:, 0] = v / self.vnorm
        self.m = 0
        self.breakdown = False
        self.scale = 0.0
        self.matvecs_done = 0
        self._eig: dict = {}  # per-dimension eigendecompositions of symmetric H

    def _grow(self, cap: int):
        old = self.V.shape[1] - 1
        if cap <= old:
            return
        # aggressive growth, capped at the configured maximum dimension:
        # repeated large copies of the basis cost more than spare columns
        new_cap = max(cap, 8 * old)
        if self.m_hint:
            new_cap = min(new_cap, max(self.m_hint, cap))
        new_cap = min(new_cap, self.n)
        V = np.empty((self.n, new_cap + 1), order="F")
        V[:, : old + 1] = self.V
        H = np.zeros((new_cap + 1, new_cap))
        H[: old + 1, :old] = self.H
        self.V, self.H = V, H

    def extend(self, m_target: int):
        if self.breakdown or m_target <= self.m:
            return
        m_target = min(m_target, self.n)
        if m_target > self.V.shape[1] - 1:
            self._grow(m_target)
        while self.m < m_target and not self.breakdown:
            j = self.m
            w = self.op.apply(self.V[:, j])
            self.matvecs_done += 1
            w_norm = math.sqrt(float(w @ w))
            self.scale = max(self.scale, w_norm)
            # classical Gram-Schmidt with one reorthogonalization pass when
            # the norm drop signals loss of orthogonality
            basis = self.V[:, : j + 1]
            coeffs, w = _gs_pass(basis, w)
            h_next = math.sqrt(float(w @ w))
            if h_next < 0.7071 * w_norm:
                corr, w = _gs_pass(basis, w)
                coeffs += corr
                h_next = math.sqrt(float(w @ w))
            if not math.isfinite(h_next) or not np.all(np.isfinite(coeffs)):
                raise KrylovError("non-finite entries in the Arnoldi basis")
            self.H[: j + 1, j] = coeffs
            self.H[j + 1, j] = h_next
            self.m = j + 1
            if h_next <= _BREAKDOWN_RTOL * max(self.scale, 1e-300):
                # (near-)invariant subspace reached: the reduced problem is exact
                self.breakdown = True
            else:
                self.V[:, j + 1] = w / h_next

    def _eigendecomposition(self, m: int):
        """Eigendecomposition of H_m when it is numerically symmetric
        (symmetric operators make the Hessenberg matrix tridiagonal); None
        otherwise.  Lets every phi evaluation cost O(m^2) after one O(m^3)
        factorization instead of one scaled exponential per check."""
        if m in self._eig:
            return self._eig[m]
        h = self.H[:m, :m]
        hscale = float(np.max(np.abs(h))) if m else 0.0
        if float(np.max(np.abs(h - h.T))) <= _SYMMETRY_RTOL * max(hscale, 1e-300):
            lam, q = np.linalg.eigh(0.5 * (h + h.T))
            entry = (lam, q, np.ascontiguousarray(q[0, :]))
        else:
            entry = None
        self._eig[m] = entry
        return entry

    def reduced_phi(self, k: int, tau: float, m: int) -> tuple[np.ndarray, float]:
        """phi_k(tau H_m) e_1 and the phi_1-surrogate relative error estimate.

        Evaluated at an explicit dimension m <= self.m so that results do not
        depend on how far a shared factorization happens to have been built.
        """
        eig = self._eigendecomposition(m)
        if eig is not None:
            lam, q, q_row0 = eig
            vals = phi_array(max(k, 1), tau * lam)
            if not np.all(np.isfinite(vals)):
                raise KrylovError(
                    f"phi evaluation overflowed (spectral radius {np.max(np.abs(tau * lam)):.3g})"
                )
            w_red = q @ (vals[:, k - 1] * q_row0)
            phi1_last = float((q[m - 1, :] * vals[:, 0]) @ q_row0)
        else:
            cols = phi_cols_e1(max(k, 1), tau * self.H[:m, :m])
            w_red = cols[:, k - 1]
            phi1_last = float(cols[m - 1, 0])
        if self.breakdown and m == self.m:
            return w_red, 0.0
        h_next = self.H[m, m - 1]
        denom = max(math.sqrt(float(w_red @ w_red)), 1e-300)
        return w_red, abs(tau * h_next * phi1_last) / denom


def phi_times_vector(
    L: LinearOperator,
    k: int,
    tau: float,
    v: np.ndarray,
    cfg: KrylovConfig,
    ctx: EvalContext | None = None,
    keep_basis: bool = True,
) -> KrylovResult:
    """Approximate phi_k(tau * L) v to relative tolerance cfg.tol."""
    if k < 1:
        raise ValueError(f"phi index must be >= 1 for the Krylov route, got {k}")
    v = np.asarray(v, dtype=float)
    if v.shape != (L.dim,):
        raise ValueError(f"vector of shape {v.shape} does not match operator dim {L.dim}")
    vnorm = float(np.linalg.norm(v))
    if vnorm == 0.0:
        return _record(ctx, KrylovResult(np.zeros(L.dim), 0, 0, 0.0, True))
    if tau == 0.0 or L.kind == "zero":
        w = v / math.factorial(k)
        return _record(ctx, KrylovResult(w, 0, 0, 0.0, True))

    m_hint = min(cfg.m_max, L.dim)
    state = ctx.arnoldi_state(L, v, m_hint) if ctx is not None else _ArnoldiState(L, v, m_hint)
    mv_before = state.matvecs_done

    w_red = None
    est = math.inf
    converged = False
    m_used = 0
    for m_target in cfg.check_schedule:
        state.extend(m_target)
        m_eval = min(m_target, state.m)
        if m_eval <= m_used:
            break  # the factorization cannot grow any further
        m_used = m_eval
        w_red, est = state.reduced_phi(k, tau, m_eval)
        if est <= cfg.tol:
            converged = True
            break
    if w_red is None:  # pragma: no cover - schedule always has at least one entry
        raise KrylovError("empty check schedule")

    w = vnorm * (state.V[:, :m_used] @ w_red)
    at_end = m_used == state.m
    result = KrylovResult(
        approximation=w,
        dim_used=m_used,
        matvecs=state.matvecs_done - mv_before,
        est_error=est,
        converged=converged,
        basis=state.V[:, :m_used].copy() if keep_basis else None,
        hessenberg=state.H[:m_used, :m_used].copy() if keep_basis else None,
        h_next=float(state.H[m_used, m_used - 1]),
        v_next=(
            state.V[:, m_used].copy()
            if keep_basis and not (at_end and state.breakdown)
            else None
        ),
    )
    return _record(ctx, result)


def _record(ctx: EvalContext | None, result: KrylovResult) -> KrylovResult:
    if ctx is not None:
        ctx.stats.matvecs += result.matvecs
        ctx.stats.krylov_dim_total += result.dim_used
        ctx.stats.solves += 1
    return result
