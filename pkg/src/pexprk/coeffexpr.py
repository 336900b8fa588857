"""Symbolic coefficient functions of exponential Runge-Kutta methods.

A coefficient is an expression tree over the node set

    Phi(k, c)    phi_k(c z)
    Const(r)     r * identity
    Scale(r, e)  r * e(z)
    Sum(...)     e_1(z) + e_2(z) + ...
    Prod(f, g)   f(z) * g(z), composition order preserved
    ZMul(e)      z * e(z)

Trees can be evaluated three ways: at a real scalar z, at a small dense
matrix Z, or -- the production path -- applied to a vector through the
matrix-free Krylov engine without ever materializing phi of the operator.
Simplification is deliberately shallow (flattening sums, folding constant
scales); no phi identities are rewritten, so structural comparisons of
transformed coefficients stay deterministic.
"""

from dataclasses import dataclass

import numpy as np

from .krylov import EvalContext, KrylovConfig, phi_times_vector
from .operators import LinearOperator
from .phi import expm_dense, phi_dense_matrices, phi_scalar


class CoefficientEvalError(RuntimeError):
    """A Krylov product inside a coefficient failed to converge."""


class CoefficientExpr:
    """Base node; subclasses are immutable and compare structurally."""

    def key(self):
        cached = getattr(self, "_key", None)
        if cached is None:
            cached = self._build_key()
            object.__setattr__(self, "_key", cached)
        return cached

    def _build_key(self):
        raise NotImplementedError

    def __str__(self):
        raise NotImplementedError


@dataclass(frozen=True)
class Phi(CoefficientExpr):
    k: int
    c: float = 1.0

    def __post_init__(self):
        if self.k < 0:
            raise ValueError(f"phi index must be >= 0, got {self.k}")
        if not 0.0 < self.c <= 1.0:
            raise ValueError(f"abscissa scale must be in (0, 1], got {self.c}")

    def _build_key(self):
        return ("phi", self.k, self.c)

    def __str__(self):
        return f"phi({self.k}, {self.c!r})"


@dataclass(frozen=True)
class Const(CoefficientExpr):
    r: float

    def _build_key(self):
        return ("const", self.r)

    def __str__(self):
        return f"const({self.r!r})"


@dataclass(frozen=True)
class Scale(CoefficientExpr):
    r: float
    child: CoefficientExpr

    def _build_key(self):
        return ("scale", self.r, self.child.key())

    def __str__(self):
        return f"scale({self.r!r}, {self.child})"


@dataclass(frozen=True)
class Sum(CoefficientExpr):
    children: tuple

    def __init__(self, *children):
        if len(children) == 1 and isinstance(children[0], tuple):
            children = children[0]
        object.__setattr__(self, "children", tuple(children))

    def _build_key(self):
        return ("sum",) + tuple(ch.key() for ch in self.children)

    def __str__(self):
        return "sum(" + ", ".join(str(ch) for ch in self.children) + ")"


@dataclass(frozen=True)
class Prod(CoefficientExpr):
    left: CoefficientExpr
    right: CoefficientExpr

    def _build_key(self):
        return ("prod", self.left.key(), self.right.key())

    def __str__(self):
        return f"prod({self.left}, {self.right})"


@dataclass(frozen=True)
class ZMul(CoefficientExpr):
    child: CoefficientExpr

    def _build_key(self):
        return ("zmul", self.child.key())

    def __str__(self):
        return f"zmul({self.child})"


ZERO = Const(0.0)
ONE = Const(1.0)


def is_zero(expr) -> bool:
    return expr is None or (isinstance(expr, Const) and expr.r == 0.0)


def simplify(expr: CoefficientExpr) -> CoefficientExpr:
    """Flatten sums and fold constant scales; returns shared nodes unchanged."""
    if isinstance(expr, (Phi, Const)):
        return expr
    if isinstance(expr, Scale):
        child = simplify(expr.child)
        if expr.r == 0.0 or is_zero(child):
            return ZERO
        if isinstance(child, Const):
            return Const(expr.r * child.r)
        if isinstance(child, Scale):
            return simplify(Scale(expr.r * child.r, child.child))
        if expr.r == 1.0:
            return child
        if child is expr.child:
            return expr
        return Scale(expr.r, child)
    if isinstance(expr, Sum):
        flat = []
        changed = False
        for ch in expr.children:
            s = simplify(ch)
            changed = changed or s is not ch
            if is_zero(s):
                changed = True
                continue
            if isinstance(s, Sum):
                flat.extend(s.children)
                changed = True
            else:
                flat.append(s)
        if not flat:
            return ZERO
        if len(flat) == 1:
            return flat[0]
        return expr if not changed else Sum(tuple(flat))
    if isinstance(expr, Prod):
        left = simplify(expr.left)
        right = simplify(expr.right)
        if is_zero(left) or is_zero(right):
            return ZERO
        if isinstance(left, Const):
            return simplify(Scale(left.r, right))
        if isinstance(right, Const):
            return simplify(Scale(right.r, left))
        if left is expr.left and right is expr.right:
            return expr
        return Prod(left, right)
    if isinstance(expr, ZMul):
        child = simplify(expr.child)
        if is_zero(child):
            return ZERO
        if child is expr.child:
            return expr
        return ZMul(child)
    raise TypeError(f"not a coefficient expression: {expr!r}")


def eval_scalar(expr: CoefficientExpr, z: float) -> float:
    """Evaluate the coefficient at a real scalar argument."""
    if isinstance(expr, Phi):
        return phi_scalar(expr.k, expr.c * z)
    if isinstance(expr, Const):
        return expr.r
    if isinstance(expr, Scale):
        return expr.r * eval_scalar(expr.child, z)
    if isinstance(expr, Sum):
        return sum(eval_scalar(ch, z) for ch in expr.children)
    if isinstance(expr, Prod):
        return eval_scalar(expr.left, z) * eval_scalar(expr.right, z)
    if isinstance(expr, ZMul):
        return z * eval_scalar(expr.child, z)
    raise TypeError(f"not a coefficient expression: {expr!r}")


def phi_of_dense(k: int, z_mat: np.ndarray, memo: dict | None = None) -> np.ndarray:
    """phi_k of a small dense matrix, memoized per argument id."""
    key = (k, id(z_mat))
    if memo is not None and key in memo:
        return memo[key]
    if k == 0:
        out = expm_dense(z_mat)
    else:
        out = phi_dense_matrices(k, z_mat)[k - 1]
    if memo is not None:
        memo[key] = out
    return out


def eval_dense(expr: CoefficientExpr, z_mat: np.ndarray, memo: dict | None = None) -> np.ndarray:
    """Evaluate the coefficient at a small dense matrix argument Z = h L."""
    n = z_mat.shape[0]
    if isinstance(expr, Phi):
        if memo is None:
            memo = {}
        scaled = memo.setdefault(("arg", expr.c, id(z_mat)), expr.c * z_mat)
        return phi_of_dense(expr.k, scaled, memo)
    if isinstance(expr, Const):
        return expr.r * np.eye(n)
    if isinstance(expr, Scale):
        return expr.r * eval_dense(expr.child, z_mat, memo)
    if isinstance(expr, Sum):
        acc = np.zeros((n, n))
        for ch in expr.children:
            acc += eval_dense(ch, z_mat, memo)
        return acc
    if isinstance(expr, Prod):
        return eval_dense(expr.left, z_mat, memo) @ eval_dense(expr.right, z_mat, memo)
    if isinstance(expr, ZMul):
        return z_mat @ eval_dense(expr.child, z_mat, memo)
    raise TypeError(f"not a coefficient expression: {expr!r}")


def eval_coeff(
    expr: CoefficientExpr,
    L: LinearOperator,
    h: float,
    v: np.ndarray,
    cfg: KrylovConfig,
    ctx: EvalContext | None = None,
) -> np.ndarray:
    """Apply expr(h L) to v matrix-free, right to left through the tree.

    Phi nodes go through the Krylov engine with tau = c * h (phi_0 as
    I + c h L phi_1(c h L) compositionally); ZMul applies h L directly.  With
    a shared EvalContext, repeated subtree applications to the same vector
    are memoized and Arnoldi factorizations are reused across phi indices.
    """
    if ctx is not None:
        memo_key = (expr.key(), id(L), id(v))
        cached = ctx.memo.get(memo_key)
        if cached is not None:
            return cached
    out = _eval_coeff_node(expr, L, h, v, cfg, ctx)
    if ctx is not None:
        ctx.memo[memo_key] = out
        ctx.keep(v)
        ctx.keep(L)
    return out


def _eval_coeff_node(expr, L, h, v, cfg, ctx):
    if isinstance(expr, Phi):
        tau = expr.c * h
        k = expr.k if expr.k >= 1 else 1
        res = phi_times_vector(L, k, tau, v, cfg, ctx=ctx, keep_basis=False)
        if not res.converged:
            raise CoefficientEvalError(
                f"phi_{k}({tau:g} L) v did not converge within m_max={cfg.m_max} "
                f"(estimated error {res.est_error:.3g}, tol {cfg.tol:g})"
            )
        if expr.k == 0:
            return v + tau * L.apply(res.approximation)
        return res.approximation
    if isinstance(expr, Const):
        return expr.r * v
    if isinstance(expr, Scale):
        return expr.r * eval_coeff(expr.child, L, h, v, cfg, ctx)
    if isinstance(expr, Sum):
        acc = np.zeros_like(v)
        for ch in expr.children:
            acc = acc + eval_coeff(ch, L, h, v, cfg, ctx)
        return acc
    if isinstance(expr, Prod):
        inner = eval_coeff(expr.right, L, h, v, cfg, ctx)
        return eval_coeff(expr.left, L, h, inner, cfg, ctx)
    if isinstance(expr, ZMul):
        return h * L.apply(eval_coeff(expr.child, L, h, v, cfg, ctx))
    raise TypeError(f"not a coefficient expression: {expr!r}")
