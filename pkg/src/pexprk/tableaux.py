"""Method catalog and the transformation between coefficient forms.

Three stiffly accurate exponential Runge-Kutta methods (orders 2, 3, 4) are
provided in Butcher form (c, a, b).  ``transform`` rewrites a method into the
equivalent form that consumes only full right-hand-side evaluations: with
A the strictly lower triangular stage-coefficient block, the formal inverse

    E(z) = (I + z A(z))^{-1} = sum_{j=0}^{s-2} (-z A(z))^j

is expanded symbolically (exact, since z A is nilpotent), giving

    alpha_{2:s,1} = E [c_i phi_1(c_i z)],   alpha_{2:s,2:s} = E A,
    beta_1 = phi_1 - z sum_j b_j alpha_{j,1},   beta_{2:s}^T = b_{2:s}^T E.

Products are recorded as Prod/ZMul nodes and never evaluated here; the same
trees later drive matrix-free application in the steppers.

``check_order_conditions`` evaluates the stiff order conditions up to order
four as dense-matrix residuals on random instances; the conditions must hold
for any matrices L, J, K, so random dense draws falsify violations with
overwhelming probability.
"""

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .coeffexpr import (
    Const,
    Phi,
    Prod,
    Scale,
    Sum,
    ZMul,
    eval_dense,
    is_zero,
    phi_of_dense,
    simplify,
)


@dataclass(frozen=True)
class ExprkTableau:
    """Butcher-form method: abscissae c, stage grid a, weights b."""

    s: int
    c: tuple
    a: tuple  # s x s, entries CoefficientExpr or None; strictly lower triangular
    b: tuple  # s entries
    design_order: int

    def __post_init__(self):
        if len(self.c) != self.s or len(self.a) != self.s or len(self.b) != self.s:
            raise ValueError("tableau arrays must all have length s")
        if self.c[0] != 0.0:
            raise ValueError("the first abscissa must be 0")
        for i, row in enumerate(self.a):
            if len(row) != self.s:
                raise ValueError("stage grid must be s x s")
            for j, entry in enumerate(row):
                if j >= i and not is_zero(entry):
                    raise ValueError(f"stage grid must be strictly lower triangular (a[{i}][{j}])")
            if i >= 1 and row[0] is None:
                raise ValueError(f"a[{i}][0] must be present for every stage past the first")


@dataclass(frozen=True)
class TransformedTableau:
    """Full-rhs form: alpha grid and beta weights from the formal inverse."""

    s: int
    c: tuple
    alpha: tuple  # s x s, row 0 all None, strictly lower triangular
    beta: tuple   # s entries
    design_order: int

    def __post_init__(self):
        if any(not is_zero(e) for e in self.alpha[0]):
            raise ValueError("the first alpha row must vanish")
        for i, row in enumerate(self.alpha):
            for j, entry in enumerate(row):
                if j >= max(i, 1) and not is_zero(entry):
                    raise ValueError(f"alpha must be strictly lower triangular (a[{i}][{j}])")


def _grid(s, entries):
    """Build an s x s grid from {(i, j): expr} with None elsewhere."""
    return tuple(tuple(entries.get((i, j)) for j in range(s)) for i in range(s))


@lru_cache(maxsize=None)
def tableau_order2() -> ExprkTableau:
    phi1 = Phi(1, 1.0)
    phi2 = Phi(2, 1.0)
    return ExprkTableau(
        s=2,
        c=(0.0, 1.0),
        a=_grid(2, {(1, 0): phi1}),
        b=(Sum(phi1, Scale(-1.0, phi2)), phi2),
        design_order=2,
    )


@lru_cache(maxsize=None)
def tableau_order3() -> ExprkTableau:
    c2 = 2.0 / 3.0
    phi12 = Phi(1, c2)      # c3 == c2, so the stage-3 scaled nodes coincide
    phi22 = Phi(2, c2)
    a = _grid(3, {
        (1, 0): Scale(c2, phi12),
        (2, 0): Sum(Scale(2.0 / 3.0, phi12), Scale(-4.0 / (9.0 * c2), phi22)),
        (2, 1): Scale(4.0 / (9.0 * c2), phi22),
    })
    b = (
        Sum(Phi(1, 1.0), Scale(-1.5, Phi(2, 1.0))),
        Const(0.0),
        Scale(1.5, Phi(2, 1.0)),
    )
    return ExprkTableau(s=3, c=(0.0, c2, 2.0 / 3.0), a=a, b=b, design_order=3)


@lru_cache(maxsize=None)
def tableau_order4() -> ExprkTableau:
    half = 0.5
    phi1h = Phi(1, half)
    phi2h = Phi(2, half)
    phi3h = Phi(3, half)
    phi1f = Phi(1, 1.0)
    phi2f = Phi(2, 1.0)
    phi3f = Phi(3, 1.0)
    # the stage-5 coefficient pair is the standard companion choice; the
    # order-condition checker is its validation
    a52 = Sum(Scale(0.5, phi2h), Scale(-1.0, phi3f), Scale(0.25, phi2f), Scale(-0.5, phi3h))
    a54 = Sum(Scale(0.25, phi2h), Scale(-1.0, a52))
    a = _grid(5, {
        (1, 0): Scale(half, phi1h),
        (2, 0): Sum(Scale(half, phi1h), Scale(-1.0, phi2h)),
        (2, 1): phi2h,
        (3, 0): Sum(phi1f, Scale(-2.0, phi2f)),
        (3, 1): phi2f,
        (3, 2): phi2f,
        (4, 0): Sum(Scale(half, phi1h), Scale(-2.0, a52), Scale(-1.0, a54)),
        (4, 1): a52,
        (4, 2): a52,
        (4, 3): a54,
    })
    b = (
        Sum(phi1f, Scale(-3.0, phi2f), Scale(4.0, phi3f)),
        Const(0.0),
        Const(0.0),
        Sum(Scale(-1.0, phi2f), Scale(4.0, phi3f)),
        Sum(Scale(4.0, phi2f), Scale(-8.0, phi3f)),
    )
    return ExprkTableau(s=5, c=(0.0, half, half, 1.0, half), a=a, b=b, design_order=4)


def tableau(order: int) -> ExprkTableau:
    catalog = {2: tableau_order2, 3: tableau_order3, 4: tableau_order4}
    if order not in catalog:
        raise ValueError(f"no catalog method of order {order}")
    return catalog[order]()


def _sym_matmul(m1, m2):
    """Product of two symbolic matrices (None entries are zero)."""
    size = len(m1)
    out = []
    for i in range(size):
        row = []
        for k in range(size):
            terms = [
                Prod(m1[i][j], m2[j][k])
                for j in range(size)
                if m1[i][j] is not None and m2[j][k] is not None
            ]
            entry = simplify(Sum(tuple(terms))) if terms else None
            row.append(None if entry is None or is_zero(entry) else entry)
        out.append(row)
    return out


def _sym_add(m1, m2):
    size = len(m1)
    out = []
    for i in range(size):
        row = []
        for j in range(size):
            terms = [e for e in (m1[i][j], m2[i][j]) if e is not None]
            if not terms:
                row.append(None)
            elif len(terms) == 1:
                row.append(terms[0])
            else:
                row.append(simplify(Sum(tuple(terms))))
        out.append(row)
    return out


def transform(t: ExprkTableau) -> TransformedTableau:
    """Rewrite a Butcher-form method into the full-rhs (alpha, beta) form."""
    s = t.s
    size = s - 1  # the strict 2:s stage block

    a_block = [[t.a[i + 1][j + 1] for j in range(size)] for i in range(size)]
    neg_za = [
        [None if a_block[i][j] is None else Scale(-1.0, ZMul(a_block[i][j])) for j in range(size)]
        for i in range(size)
    ]

    # E = sum_{j=0}^{s-2} (-z A)^j, exact because z A is nilpotent
    identity = [[Const(1.0) if i == j else None for j in range(size)] for i in range(size)]
    e_mat = identity
    power = identity
    for _ in range(size - 1):
        power = _sym_matmul(power, neg_za)
        e_mat = _sym_add(e_mat, power)

    first_col = [
        Const(0.0) if t.c[i + 1] == 0.0 else Scale(t.c[i + 1], Phi(1, t.c[i + 1]))
        for i in range(size)
    ]
    alpha_col1 = []
    for i in range(size):
        terms = [
            Prod(e_mat[i][j], first_col[j]) for j in range(size)
            if e_mat[i][j] is not None and not is_zero(first_col[j])
        ]
        alpha_col1.append(simplify(Sum(tuple(terms))) if terms else Const(0.0))

    alpha_block = _sym_matmul(e_mat, a_block)

    # beta_1 = phi_1 - z * sum_{j>=2} b_j alpha_{j,1}
    weighted = [
        Prod(t.b[i + 1], alpha_col1[i])
        for i in range(size)
        if not is_zero(t.b[i + 1]) and not is_zero(alpha_col1[i])
    ]
    if weighted:
        beta1 = simplify(Sum(Phi(1, 1.0), Scale(-1.0, ZMul(simplify(Sum(tuple(weighted)))))))
    else:
        beta1 = Phi(1, 1.0)

    # beta_{2:s}^T = b_{2:s}^T E
    beta_rest = []
    for j in range(size):
        terms = [
            Prod(t.b[i + 1], e_mat[i][j])
            for i in range(size)
            if not is_zero(t.b[i + 1]) and e_mat[i][j] is not None
        ]
        beta_rest.append(simplify(Sum(tuple(terms))) if terms else Const(0.0))

    alpha = {}
    for i in range(size):
        alpha[(i + 1, 0)] = alpha_col1[i]
        for j in range(size):
            if alpha_block[i][j] is not None:
                alpha[(i + 1, j + 1)] = alpha_block[i][j]
    return TransformedTableau(
        s=s,
        c=t.c,
        alpha=_grid(s, alpha),
        beta=(beta1, *beta_rest),
        design_order=t.design_order,
    )


@lru_cache(maxsize=None)
def transformed(order: int) -> TransformedTableau:
    return transform(tableau(order))


CONDITION_ORDERS = {
    "1": 1, "2a": 2, "2b": 2, "3a": 3, "3b": 3, "4a": 4, "4b": 4, "4c": 4, "4d": 4,
}


def check_order_conditions(
    t: ExprkTableau, up_to: int, n: int = 6, seed: int = 0
) -> dict[str, float]:
    """Max-norm residuals of the stiff order conditions on random matrices.

    Draws dense L, J, K with entries in [-1, 1] (h = 1) and evaluates every
    condition of order <= up_to.  The stage defects are

        psi_{i,j} = sum_{k=2}^{j-1} a_{j,k}(hL) c_k^{i-1}/(i-1)! - c_j^i phi_i(c_j hL)

    and the stage consistency condition compares against c_i phi_1(c_i hL);
    both use the abscissa-scaled arguments under which the catalog methods
    are self-consistent.
    """
    if up_to > 4:
        raise ValueError("conditions are tabulated up to order four")
    rng = np.random.default_rng(seed)
    L = rng.uniform(-1, 1, size=(n, n))
    J = rng.uniform(-1, 1, size=(n, n))
    K = rng.uniform(-1, 1, size=(n, n))
    z = L  # h = 1
    memo: dict = {}
    eye = np.eye(n)

    def phi_scaled(k, c):
        if c == 0.0:
            return eye / math.factorial(k)
        scaled = memo.setdefault(("arg", c, id(z)), c * z)
        return phi_of_dense(k, scaled, memo)

    def ev(expr):
        return eval_dense(expr, z, memo)

    s = t.s
    c = t.c
    b = [ev(t.b[j]) for j in range(s)]
    a = [[None if t.a[i][j] is None else ev(t.a[i][j]) for j in range(s)] for i in range(s)]

    def psi(i, j):
        # stage defect psi_i for (0-based) stage j
        acc = -(c[j] ** i) * phi_scaled(i, c[j])
        for k in range(1, j):
            if a[j][k] is not None:
                acc = acc + a[j][k] * (c[k] ** (i - 1) / math.factorial(i - 1))
        return acc

    jmg = J - L
    residuals = {}
    residuals["1"] = sum(b) - phi_scaled(1, 1.0)
    residuals["2a"] = sum(b[j] * c[j] for j in range(1, s)) - phi_scaled(2, 1.0)
    residuals["2b"] = max(
        (
            np.max(np.abs(
                sum(a[i][j] for j in range(i) if a[i][j] is not None)
                - c[i] * phi_scaled(1, c[i])
            ))
            for i in range(1, s)
        ),
    )
    if up_to >= 3:
        residuals["3a"] = sum(b[j] * (c[j] ** 2 / 2.0) for j in range(1, s)) - phi_scaled(3, 1.0)
        residuals["3b"] = sum(b[j] @ jmg @ psi(2, j) for j in range(1, s))
    if up_to >= 4:
        residuals["4a"] = sum(b[j] * (c[j] ** 3 / 6.0) for j in range(1, s)) - phi_scaled(4, 1.0)
        residuals["4b"] = sum(b[j] @ jmg @ psi(3, j) for j in range(1, s))
        acc = np.zeros((n, n))
        for j in range(1, s):
            inner = np.zeros((n, n))
            for k in range(1, j):
                if a[j][k] is not None:
                    inner = inner + a[j][k] @ jmg @ psi(2, k)
            acc = acc + b[j] @ jmg @ inner
        residuals["4c"] = acc
        residuals["4d"] = sum(b[j] * c[j] @ K @ psi(2, j) for j in range(1, s))

    return {
        label: float(np.max(np.abs(res))) if not np.isscalar(res) else float(abs(res))
        for label, res in residuals.items()
    }


def dump_tableau(t: ExprkTableau | TransformedTableau) -> str:
    """Stable text form, one line per entry, prefix notation."""
    lines = [f"s = {t.s}", f"order = {t.design_order}", "c = [" + ", ".join(repr(ci) for ci in t.c) + "]"]
    if isinstance(t, ExprkTableau):
        grid, grid_name, weights, weight_name = t.a, "a", t.b, "b"
    else:
        grid, grid_name, weights, weight_name = t.alpha, "alpha", t.beta, "beta"
    for i in range(t.s):
        for j in range(t.s):
            entry = grid[i][j]
            if entry is not None and not is_zero(entry):
                lines.append(f"{grid_name}[{i + 1}][{j + 1}] = {entry}")
    for j in range(t.s):
        lines.append(f"{weight_name}[{j + 1}] = {weights[j]}")
    return "\n".join(lines) + "\n"
