"""Dense evaluation of the exponential integrator phi functions.

phi_0(z) = exp(z) and, for k >= 1,

    phi_k(z) = sum_{i>=0} z^i / (k + i)!,
    phi_{k+1}(z) = (phi_k(z) - 1/k!) / z,      phi_k(0) = 1/k!.

Everything above (Krylov engine, coefficient evaluation, order-condition
checks) is validated against this layer, so it favours accuracy over speed.
Small dense arguments only; large operators go through the Krylov engine.
"""

import math

import numpy as np
import scipy.linalg

try:
    from numba import njit as _njit

    def _jit(func):
        return _njit(cache=True)(func)

except ImportError:  # pragma: no cover - numba is optional
    def _jit(func):
        return func

MAX_PHI_INDEX = 8

# Below this magnitude the truncated series is exact to well under 1e-16
# relative; above it the augmented-matrix route avoids cancellation.
_SERIES_CUTOFF = 0.5
_SERIES_TERMS = 25


class PhiEvaluationError(ArithmeticError):
    """A matrix exponential overflowed or produced non-finite entries."""


def _check_square(a: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError("matrix contains non-finite entries")
    return a


def phi_scalar(k: int, z: float) -> float:
    """Evaluate phi_k(z) for a real scalar z with relative error <= 1e-14."""
    if not isinstance(k, (int, np.integer)) or k < 0 or k > MAX_PHI_INDEX:
        raise ValueError(f"phi index must be an integer in [0, {MAX_PHI_INDEX}], got {k}")
    z = float(z)
    if not math.isfinite(z):
        raise ValueError(f"phi argument must be finite, got {z}")
    if k == 0:
        return math.exp(z)
    if abs(z) < _SERIES_CUTOFF:
        acc = 0.0
        for i in reversed(range(_SERIES_TERMS)):
            acc = acc * z + 1.0 / math.factorial(k + i)
        return acc
    cols = phi_dense_times_e1(k, np.array([[z]]))
    return float(cols[k - 1][0])


def expm_dense(a: np.ndarray) -> np.ndarray:
    """Matrix exponential by scaling-and-squaring with a diagonal Pade approximant.

    Delegates to scipy.linalg.expm (degree-13 approximant with norm-based
    scaling); overflow or non-finite output is reported as an evaluation
    failure rather than returned.
    """
    a = _check_square(a)
    e = scipy.linalg.expm(a)
    if not np.all(np.isfinite(e)):
        raise PhiEvaluationError(
            f"matrix exponential produced non-finite entries (norm {np.linalg.norm(a, 1):.3g})"
        )
    return e


def phi_dense_times_e1(p: int, a: np.ndarray) -> list[np.ndarray]:
    """Columns w_k = phi_k(A) e_1 for k = 1..p via one augmented exponential.

    exp of the bordered matrix [[A, E], [0, J_p]] -- where E carries e_1 in
    its first column and J_p is the p x p nilpotent upper shift -- holds
    phi_1(A)e_1 ... phi_p(A)e_1 in its upper-right block.
    """
    a = _check_square(a)
    n = a.shape[0]
    e1 = np.zeros(n)
    e1[0] = 1.0
    return phi_dense_times_vector(p, a, e1)


def phi_dense_times_vector(p: int, a: np.ndarray, v: np.ndarray) -> list[np.ndarray]:
    """Columns phi_k(A) v for k = 1..p; the general augmented-matrix identity."""
    a = _check_square(a)
    if p < 1:
        raise ValueError(f"need p >= 1, got {p}")
    n = a.shape[0]
    v = np.asarray(v, dtype=float)
    if v.shape != (n,):
        raise ValueError(f"vector length {v.shape} does not match matrix dimension {n}")
    aug = np.zeros((n + p, n + p))
    aug[:n, :n] = a
    aug[:n, n] = v
    for i in range(p - 1):
        aug[n + i, n + i + 1] = 1.0
    e = expm_dense(aug)
    return [e[:n, n + j].copy() for j in range(p)]


# degree-13 diagonal Pade approximant with norm-based scaling; the hot
# reduced-space path, so it is jitted when numba is available
@_jit
def _expm_pade13(a):
    """Scaling-and-squaring exponential, lean path for the reduced-space
    evaluations inside the Krylov engine (no input validation)."""
    n = a.shape[0]
    norm1 = 0.0
    for j in range(n):
        col = 0.0
        for i in range(n):
            col += abs(a[i, j])
        if col > norm1:
            norm1 = col
    squarings = 0
    if norm1 > 5.371920351148152:
        squarings = int(math.ceil(math.log2(norm1 / 5.371920351148152)))
        a = a * (0.5**squarings)
    eye = np.eye(n)
    a2 = a @ a
    a4 = a2 @ a2
    a6 = a2 @ a4
    u = a @ (
        a6 @ (1.0 * a6 + 16380.0 * a4 + 40840800.0 * a2)
        + 33522128640.0 * a6 + 10559470521600.0 * a4
        + 1187353796428800.0 * a2 + 32382376266240000.0 * eye
    )
    v = (
        a6 @ (182.0 * a6 + 960960.0 * a4 + 1323241920.0 * a2)
        + 670442572800.0 * a6 + 129060195264000.0 * a4
        + 7771770303897600.0 * a2 + 64764752532480000.0 * eye
    )
    r = np.linalg.solve(v - u, v + u)
    for _ in range(squarings):
        r = r @ r
    return r


@_jit
def _phi_cols_core(p, a):
    n = a.shape[0]
    aug = np.zeros((n + p, n + p))
    aug[:n, :n] = a
    aug[0, n] = 1.0
    for i in range(p - 1):
        aug[n + i, n + i + 1] = 1.0
    return _expm_pade13(aug)[:n, n:]


def phi_cols_e1(p: int, a: np.ndarray) -> np.ndarray:
    """Lean variant of phi_dense_times_e1: an (n, p) array of columns
    phi_k(A) e_1, k = 1..p, via the augmented exponential; raises on
    overflow but performs no other validation."""
    cols = _phi_cols_core(p, np.ascontiguousarray(a))
    if not np.all(np.isfinite(cols)):
        raise PhiEvaluationError(
            f"phi evaluation overflowed (argument norm {np.linalg.norm(a, 1):.3g})"
        )
    return cols


@_jit
def phi_array(p, z):
    """phi_k at every entry of a real vector z, k = 1..p, as a (len(z), p)
    array.  Series below |z| = 0.5; the exponential-residual form
    (e^z - sum_{j<k} z^j/j!) / z^k elsewhere, which is cancellation-free
    away from the origin for the small indices used here."""
    n = z.shape[0]
    out = np.empty((n, p))
    fact = np.empty(p + 25)
    fact[0] = 1.0
    for j in range(1, p + 25):
        fact[j] = fact[j - 1] * j
    for i in range(n):
        zi = z[i]
        if abs(zi) < 0.5:
            for k in range(1, p + 1):
                acc = 1.0 / fact[k + 24]
                for idx in range(23, -1, -1):
                    acc = acc * zi + 1.0 / fact[k + idx]
                out[i, k - 1] = acc
        else:
            ez = math.exp(zi)
            partial = 1.0   # sum_{j<k} z^j / j!
            term = 1.0
            zpow = zi
            for k in range(1, p + 1):
                out[i, k - 1] = (ez - partial) / zpow
                term *= zi / k
                partial += term
                zpow *= zi
    return out


def phi_dense_matrices(p: int, a: np.ndarray) -> list[np.ndarray]:
    """Full matrices [phi_1(A), ..., phi_p(A)] via a block-bordered exponential.

    Only for small arguments (order-condition checks, dense references);
    the bordered matrix has dimension (p + 1) * n.
    """
    a = _check_square(a)
    if p < 1:
        raise ValueError(f"need p >= 1, got {p}")
    n = a.shape[0]
    eye = np.eye(n)
    aug = np.zeros(((p + 1) * n, (p + 1) * n))
    aug[:n, :n] = a
    for i in range(p):
        aug[i * n:(i + 1) * n, (i + 1) * n:(i + 2) * n] = eye
    e = expm_dense(aug)
    return [e[:n, (j + 1) * n:(j + 2) * n].copy() for j in range(p)]
