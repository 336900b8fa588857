"""Matrix-free linear operators.

Carriers for the linear parts of split right-hand sides: dense matrices,
sparse (compressed-row) matrices such as the discrete Laplacian, diagonals,
block-diagonal compositions, permuted principal sub-blocks, sums, scalings
and sub-block embeddings.  Operators are immutable after construction; the
only mutable state is a per-operator matvec tally.
"""

import numpy as np
import scipy.sparse


class OperatorContractError(ValueError):
    """A dimension mismatch or invalid construction argument."""


class LinearOperator:
    """Abstract matrix-free operator: a dimension plus apply-to-vector.

    ``apply`` increments a per-operator matvec counter readable as
    ``op.matvecs``; composites also advance the counters of their children.
    In CPython the plain-int tally is safe under concurrent apply calls.
    """

    kind = "abstract"

    def __init__(self, dim: int):
        if dim < 0:
            raise OperatorContractError(f"operator dimension must be >= 0, got {dim}")
        self.dim = dim
        self._matvecs = 0

    @property
    def matvecs(self) -> int:
        return self._matvecs

    def apply(self, v: np.ndarray) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        if v.shape != (self.dim,):
            raise OperatorContractError(
                f"{self.kind} operator of dim {self.dim} applied to vector of shape {v.shape}"
            )
        self._matvecs += 1
        return self._apply(v)

    def _apply(self, v: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def to_dense(self) -> np.ndarray:
        """Materialize as a dense matrix (tests and small diagnostics only)."""
        out = np.empty((self.dim, self.dim))
        e = np.zeros(self.dim)
        for j in range(self.dim):
            e[j] = 1.0
            out[:, j] = self.apply(e)
            e[j] = 0.0
        return out


class DenseOperator(LinearOperator):
    kind = "dense"

    def __init__(self, matrix: np.ndarray):
        matrix = np.asarray(matrix, dtype=float)
        if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
            raise OperatorContractError(f"dense operator needs a square matrix, got {matrix.shape}")
        super().__init__(matrix.shape[0])
        self.matrix = matrix

    def _apply(self, v):
        return self.matrix @ v


class SparseOperator(LinearOperator):
    """Compressed-sparse-row operator; O(nnz) apply."""

    kind = "sparse"

    def __init__(self, matrix):
        matrix = scipy.sparse.csr_matrix(matrix)
        if matrix.shape[0] != matrix.shape[1]:
            raise OperatorContractError(f"sparse operator needs a square matrix, got {matrix.shape}")
        super().__init__(matrix.shape[0])
        self.matrix = matrix

    def _apply(self, v):
        return self.matrix @ v


class DiagonalOperator(LinearOperator):
    kind = "diagonal"

    def __init__(self, diag: np.ndarray):
        diag = np.asarray(diag, dtype=float)
        if diag.ndim != 1:
            raise OperatorContractError("diagonal operator needs a 1-d array")
        super().__init__(diag.shape[0])
        self.diag = diag

    def _apply(self, v):
        return self.diag * v


class ZeroOperator(LinearOperator):
    kind = "zero"

    def _apply(self, v):
        return np.zeros_like(v)


class IdentityOperator(LinearOperator):
    kind = "identity"

    def _apply(self, v):
        return v.copy()


class ScaledOperator(LinearOperator):
    kind = "scaled"

    def __init__(self, factor: float, inner: LinearOperator):
        super().__init__(inner.dim)
        self.factor = float(factor)
        self.inner = inner

    def _apply(self, v):
        return self.factor * self.inner.apply(v)


class SumOperator(LinearOperator):
    kind = "sum"

    def __init__(self, *terms: LinearOperator):
        if not terms:
            raise OperatorContractError("sum operator needs at least one term")
        dims = {t.dim for t in terms}
        if len(dims) != 1:
            raise OperatorContractError(f"sum operator terms disagree on dimension: {dims}")
        super().__init__(terms[0].dim)
        self.terms = tuple(terms)

    def _apply(self, v):
        acc = self.terms[0].apply(v)
        for t in self.terms[1:]:
            acc = acc + t.apply(v)
        return acc


class BlockDiagonalOperator(LinearOperator):
    """Operators along the diagonal; offsets derived from the block dims."""

    kind = "block-diagonal"

    def __init__(self, *blocks: LinearOperator):
        if not blocks:
            raise OperatorContractError("block-diagonal operator needs at least one block")
        super().__init__(sum(b.dim for b in blocks))
        self.blocks = tuple(blocks)
        offsets = [0]
        for b in blocks:
            offsets.append(offsets[-1] + b.dim)
        self.offsets = tuple(offsets)

    def _apply(self, v):
        out = np.empty_like(v)
        for b, lo, hi in zip(self.blocks, self.offsets, self.offsets[1:]):
            out[lo:hi] = b.apply(v[lo:hi])
        return out


class PermutedSubblockOperator(LinearOperator):
    """Principal sub-block of a symmetrically permuted operator.

    With sigma the permutation (permuted[i] = full[sigma[i]]) and the index
    window [lo, hi), this is (P^T J P)[lo:hi, lo:hi] applied without ever
    materializing the permuted matrix: embed the input at the permuted
    positions, apply J in the full space, and read back the same positions.
    """

    kind = "permuted-sub-block"

    def __init__(self, inner: LinearOperator, perm: np.ndarray, window: tuple[int, int]):
        perm = np.asarray(perm, dtype=np.intp)
        if perm.shape != (inner.dim,) or not np.array_equal(np.sort(perm), np.arange(inner.dim)):
            raise OperatorContractError("perm must be a bijection on the operator's index set")
        lo, hi = window
        if not (0 <= lo < hi <= inner.dim):
            raise OperatorContractError(f"window {window} out of bounds for dim {inner.dim}")
        super().__init__(hi - lo)
        self.inner = inner
        self.indices = perm[lo:hi].copy()

    def _apply(self, v):
        full = np.zeros(self.inner.dim)
        full[self.indices] = v
        return self.inner.apply(full)[self.indices]


class EmbeddedOperator(LinearOperator):
    """A sub-space operator scattered into a larger space (zero elsewhere)."""

    kind = "embedded"

    def __init__(self, inner: LinearOperator, indices: np.ndarray, dim: int):
        indices = np.asarray(indices, dtype=np.intp)
        if indices.shape != (inner.dim,):
            raise OperatorContractError("index set must match inner operator dimension")
        if len(np.unique(indices)) != len(indices) or indices.min() < 0 or indices.max() >= dim:
            raise OperatorContractError("index set must be distinct and within the embedding space")
        super().__init__(dim)
        self.inner = inner
        self.indices = indices.copy()

    def _apply(self, v):
        out = np.zeros_like(v)
        out[self.indices] = self.inner.apply(v[self.indices])
        return out


def laplacian_2d_periodic(n: int, d: float) -> SparseOperator:
    """Five-point Laplacian on an n x n periodic grid over the unit square.

    Spacing is 1/n (cell centers), so the stencil carries a factor d * n**2.
    Grid nodes are row-major: flat index = iy * n + ix.
    """
    if n < 3:
        raise OperatorContractError(f"grid side must be >= 3, got {n}")
    ring = scipy.sparse.diags(
        [np.full(n - 1, 1.0), np.full(n, -2.0), np.full(n - 1, 1.0)], [-1, 0, 1], format="lil"
    )
    ring[0, n - 1] = 1.0
    ring[n - 1, 0] = 1.0
    ring = scipy.sparse.csr_matrix(ring)
    eye = scipy.sparse.identity(n, format="csr")
    lap = scipy.sparse.kron(eye, ring) + scipy.sparse.kron(ring, eye)
    return SparseOperator(lap * (d * n * n))


def permuted_subblock(op: LinearOperator, perm: np.ndarray, window: tuple[int, int]) -> PermutedSubblockOperator:
    return PermutedSubblockOperator(op, perm, window)
