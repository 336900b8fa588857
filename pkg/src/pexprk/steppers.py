"""Exponential Runge-Kutta steppers in four algebraically related forms.

``step_exprk_original``     stages on the nonlinear remainder g = f - L y:
    Y_i     = y_n + h c_i phi_1(c_i hL) f(y_n) + h sum_{j<i} a_ij(hL) (g(Y_j) - g(y_n))
    y_{n+1} = y_n + h phi_1(hL) f(y_n)         + h sum_j    b_j(hL)  (g(Y_j) - g(y_n))

``step_exprk_transformed``  the equivalent full-rhs form (alpha, beta):
    U_i     = y_n + h alpha_i1(hL) f(y_n) + h sum_{j<i} alpha_ij(hL) (f(U_j) - f(y_n))
    y_{n+1} = y_n + h beta_1(hL)  f(y_n)  + h sum_j    beta_j(hL)   (f(U_j) - f(y_n))

``step_pexprk``             the transformed form applied additively to a
P-way split f = sum_p f_p, where matrix functions of each partition operator
L_p touch only that partition's f_p terms.  Component stage vectors are never
materialized; only the summed stages U_i are carried.

``step_pexprk2_residual``   the order-2 partitioned method rewritten against
partition residuals g_p(U) - g_p(u_n) = f_p(U) - f_p(u_n) - L_p (U - u_n),
whose update couples the partition operators:
    u_{n+1} = u_n + h sum_p [prod_{p'!=p} phi_1(hL_p')] phi_1(hL_p) f_p(u_n)
                  + h sum_p phi_2(hL_p) (g_p(U_2) - g_p(u_n))

Partition operators are frozen at u_n and rebuilt each step, never within
stages.  All phi applications run matrix-free through the Krylov engine.
"""

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .coeffexpr import CoefficientEvalError, eval_coeff, is_zero
from .krylov import EvalContext, KrylovConfig, KrylovError, KrylovStats, phi_times_vector
from .operators import LinearOperator
from .phi import PhiEvaluationError, expm_dense
from .tableaux import ExprkTableau, TransformedTableau, tableau, transformed


class StepFailure(RuntimeError):
    """A phi product failed inside a stage; carries the stage context."""


class IntegrationFailure(RuntimeError):
    """A step failed during a fixed-step integration; carries the step index."""


@dataclass
class SplitProblem:
    """A P-way additively partitioned autonomous system u' = sum_p f_p(u).

    ``operator_builders[p]`` maps a state u_n to the frozen linear operator
    L_p of that partition (possibly a zero operator for explicitly treated
    partitions).  The full right-hand side is the sum of the parts.
    """

    dim: int
    f_parts: tuple
    operator_builders: tuple
    name: str = ""

    def __post_init__(self):
        self.f_parts = tuple(self.f_parts)
        self.operator_builders = tuple(self.operator_builders)
        if len(self.f_parts) != len(self.operator_builders) or not self.f_parts:
            raise ValueError("need one operator builder per right-hand-side part")

    @property
    def partitions(self) -> int:
        return len(self.f_parts)

    def f_full(self, u: np.ndarray) -> np.ndarray:
        acc = self.f_parts[0](u)
        for fp in self.f_parts[1:]:
            acc = acc + fp(u)
        return acc

    def build_operators(self, u: np.ndarray) -> list[LinearOperator]:
        return [build(u) for build in self.operator_builders]


_EVAL_ERRORS = (CoefficientEvalError, PhiEvaluationError, KrylovError)


def _apply_coeff(expr, L, h, v, cfg, ctx, where):
    try:
        return eval_coeff(expr, L, h, v, cfg, ctx)
    except _EVAL_ERRORS as exc:
        raise StepFailure(f"{where}: {exc}") from exc


def _phi(L, k, tau, v, cfg, ctx, where):
    try:
        res = phi_times_vector(L, k, tau, v, cfg, ctx=ctx, keep_basis=False)
    except _EVAL_ERRORS as exc:
        raise StepFailure(f"{where}: {exc}") from exc
    if not res.converged:
        raise StepFailure(
            f"{where}: phi_{k}({tau:g} L) v did not converge within m_max={cfg.m_max} "
            f"(estimated error {res.est_error:.3g}, tol {cfg.tol:g})"
        )
    return res.approximation


def step_exprk_original(
    t: ExprkTableau,
    L: LinearOperator,
    f: Callable[[np.ndarray], np.ndarray],
    y_n: np.ndarray,
    h: float,
    cfg: KrylovConfig,
    ctx: EvalContext | None = None,
) -> np.ndarray:
    if h <= 0:
        raise ValueError(f"step size must be positive, got {h}")
    ctx = ctx if ctx is not None else EvalContext()
    fn = f(y_n)
    gn = fn - L.apply(y_n)
    d: dict[int, np.ndarray] = {}
    for i in range(1, t.s):
        acc = t.c[i] * _phi(L, 1, t.c[i] * h, fn, cfg, ctx, f"stage {i + 1}, phi_1 term")
        for j in range(1, i):
            if not is_zero(t.a[i][j]):
                acc = acc + _apply_coeff(
                    t.a[i][j], L, h, d[j], cfg, ctx, f"stage {i + 1}, coefficient a[{i + 1}][{j + 1}]"
                )
        y_i = y_n + h * acc
        d[i] = f(y_i) - L.apply(y_i) - gn
    acc = _phi(L, 1, h, fn, cfg, ctx, "update, phi_1 term")
    for j in range(1, t.s):
        if not is_zero(t.b[j]):
            acc = acc + _apply_coeff(t.b[j], L, h, d[j], cfg, ctx, f"update, weight b[{j + 1}]")
    return y_n + h * acc


def step_exprk_transformed(
    tt: TransformedTableau,
    L: LinearOperator,
    f: Callable[[np.ndarray], np.ndarray],
    y_n: np.ndarray,
    h: float,
    cfg: KrylovConfig,
    ctx: EvalContext | None = None,
) -> np.ndarray:
    if h <= 0:
        raise ValueError(f"step size must be positive, got {h}")
    ctx = ctx if ctx is not None else EvalContext()
    fn = f(y_n)
    d: dict[int, np.ndarray] = {}
    for i in range(1, tt.s):
        acc = _apply_coeff(
            tt.alpha[i][0], L, h, fn, cfg, ctx, f"stage {i + 1}, coefficient alpha[{i + 1}][1]"
        )
        for j in range(1, i):
            entry = tt.alpha[i][j]
            if entry is not None and not is_zero(entry):
                acc = acc + _apply_coeff(
                    entry, L, h, d[j], cfg, ctx, f"stage {i + 1}, coefficient alpha[{i + 1}][{j + 1}]"
                )
        u_i = y_n + h * acc
        d[i] = f(u_i) - fn
    acc = _apply_coeff(tt.beta[0], L, h, fn, cfg, ctx, "update, weight beta[1]")
    for j in range(1, tt.s):
        if not is_zero(tt.beta[j]):
            acc = acc + _apply_coeff(tt.beta[j], L, h, d[j], cfg, ctx, f"update, weight beta[{j + 1}]")
    return y_n + h * acc


def step_pexprk(
    tt: TransformedTableau,
    prob: SplitProblem,
    u_n: np.ndarray,
    h: float,
    cfg: KrylovConfig,
    ctx: EvalContext | None = None,
    ops: Sequence[LinearOperator] | None = None,
) -> np.ndarray:
    if h <= 0:
        raise ValueError(f"step size must be positive, got {h}")
    ctx = ctx if ctx is not None else EvalContext()
    ops = list(ops) if ops is not None else prob.build_operators(u_n)
    fns = [fp(u_n) for fp in prob.f_parts]
    nparts = prob.partitions
    d: dict[tuple[int, int], np.ndarray] = {}
    for i in range(1, tt.s):
        acc = np.zeros_like(u_n)
        for p in range(nparts):
            acc = acc + _apply_coeff(
                tt.alpha[i][0], ops[p], h, fns[p], cfg, ctx,
                f"stage {i + 1}, partition {p + 1}, coefficient alpha[{i + 1}][1]",
            )
        for j in range(1, i):
            entry = tt.alpha[i][j]
            if entry is None or is_zero(entry):
                continue
            for p in range(nparts):
                acc = acc + _apply_coeff(
                    entry, ops[p], h, d[(p, j)], cfg, ctx,
                    f"stage {i + 1}, partition {p + 1}, coefficient alpha[{i + 1}][{j + 1}]",
                )
        u_i = u_n + h * acc
        for p in range(nparts):
            d[(p, i)] = prob.f_parts[p](u_i) - fns[p]
    acc = np.zeros_like(u_n)
    for p in range(nparts):
        acc = acc + _apply_coeff(
            tt.beta[0], ops[p], h, fns[p], cfg, ctx, f"update, partition {p + 1}, weight beta[1]"
        )
    for j in range(1, tt.s):
        if is_zero(tt.beta[j]):
            continue
        for p in range(nparts):
            acc = acc + _apply_coeff(
                tt.beta[j], ops[p], h, d[(p, j)], cfg, ctx,
                f"update, partition {p + 1}, weight beta[{j + 1}]",
            )
    return u_n + h * acc


def step_pexprk2_residual(
    prob: SplitProblem,
    u_n: np.ndarray,
    h: float,
    cfg: KrylovConfig,
    ctx: EvalContext | None = None,
    ops: Sequence[LinearOperator] | None = None,
) -> np.ndarray:
    """Order-2 partitioned step written against partition residuals."""
    if prob.partitions != 2:
        raise ValueError("the residual form is implemented for exactly two partitions")
    if h <= 0:
        raise ValueError(f"step size must be positive, got {h}")
    ctx = ctx if ctx is not None else EvalContext()
    ops = list(ops) if ops is not None else prob.build_operators(u_n)
    fns = [fp(u_n) for fp in prob.f_parts]

    stage_terms = [
        _phi(ops[p], 1, h, fns[p], cfg, ctx, f"stage 2, partition {p + 1}") for p in range(2)
    ]
    u_2 = u_n + h * (stage_terms[0] + stage_terms[1])
    du = u_2 - u_n

    out = u_n.copy()
    for p in range(2):
        other = 1 - p
        crossed = _phi(
            ops[other], 1, h, stage_terms[p], cfg, ctx, f"update, cross term, partition {p + 1}"
        )
        residual = prob.f_parts[p](u_2) - fns[p] - ops[p].apply(du)
        out = out + h * crossed + h * _phi(
            ops[p], 2, h, residual, cfg, ctx, f"update, residual term, partition {p + 1}"
        )
    return out


# stepper factories with a uniform (prob, u, h, cfg, ctx) -> u_next signature;
# each builds the frozen partition operators at u_n and reports the complete
# per-step matvec tally (Krylov plus direct applies) through ctx.stats

Stepper = Callable[[SplitProblem, np.ndarray, float, KrylovConfig, EvalContext], np.ndarray]


def _tally(ctx: EvalContext, ops: Sequence[LinearOperator]):
    ctx.stats.matvecs = sum(op.matvecs for op in ops)


def original_stepper(order: int) -> Stepper:
    t = tableau(order)

    def step(prob, u, h, cfg, ctx):
        if prob.partitions != 1:
            raise ValueError("the unpartitioned forms take a single-partition problem")
        (L,) = prob.build_operators(u)
        out = step_exprk_original(t, L, prob.f_parts[0], u, h, cfg, ctx)
        _tally(ctx, [L])
        return out

    return step


def transformed_stepper(order: int) -> Stepper:
    tt = transformed(order)

    def step(prob, u, h, cfg, ctx):
        if prob.partitions != 1:
            raise ValueError("the unpartitioned forms take a single-partition problem")
        (L,) = prob.build_operators(u)
        out = step_exprk_transformed(tt, L, prob.f_parts[0], u, h, cfg, ctx)
        _tally(ctx, [L])
        return out

    return step


def pexprk_stepper(order: int) -> Stepper:
    tt = transformed(order)

    def step(prob, u, h, cfg, ctx):
        ops = prob.build_operators(u)
        out = step_pexprk(tt, prob, u, h, cfg, ctx, ops=ops)
        _tally(ctx, ops)
        return out

    return step


def residual2_stepper() -> Stepper:
    def step(prob, u, h, cfg, ctx):
        ops = prob.build_operators(u)
        out = step_pexprk2_residual(prob, u, h, cfg, ctx, ops=ops)
        _tally(ctx, ops)
        return out

    return step


@dataclass
class IntegrationResult:
    state: np.ndarray
    t_final: float
    steps: int
    stats: KrylovStats = field(default_factory=KrylovStats)


def integrate_fixed(
    stepper: Stepper,
    prob: SplitProblem,
    u0: np.ndarray,
    t0: float,
    tf: float,
    n_steps: int,
    cfg: KrylovConfig,
) -> IntegrationResult:
    """Apply the stepper n_steps times with constant h = (tf - t0) / n_steps.

    Partition operators are rebuilt at each step start by the stepper.  Any
    step failure aborts the integration with the step index attached.
    """
    if n_steps < 1:
        raise ValueError(f"need at least one step, got {n_steps}")
    h = (tf - t0) / n_steps
    u = np.asarray(u0, dtype=float).copy()
    total = KrylovStats()
    for step_index in range(n_steps):
        ctx = EvalContext()
        try:
            u = stepper(prob, u, h, cfg, ctx)
        except StepFailure as exc:
            raise IntegrationFailure(f"step {step_index + 1}/{n_steps}: {exc}") from exc
        total.merge(ctx.stats)
        if not np.all(np.isfinite(u)):
            raise IntegrationFailure(f"step {step_index + 1}/{n_steps}: state diverged (non-finite)")
    return IntegrationResult(state=u, t_final=tf, steps=n_steps, stats=total)


def unpartitioned_problem(dim, f, jacobian_builder, name="") -> SplitProblem:
    """Single-partition wrapper so the uniform steppers cover all forms."""
    return SplitProblem(dim=dim, f_parts=(f,), operator_builders=(jacobian_builder,), name=name)


def stability_matrix_spectral_radius(L1, L2, h: float) -> float:
    """Spectral radius of e^{h L1} + e^{h L2} - I, the two-partition
    exponential-Euler propagation matrix; a radius <= 1 + eps is the proxy
    for power-boundedness.  Dense diagnostic for small operators only.
    """
    m1 = L1.to_dense() if isinstance(L1, LinearOperator) else np.asarray(L1, dtype=float)
    m2 = L2.to_dense() if isinstance(L2, LinearOperator) else np.asarray(L2, dtype=float)
    if m1.shape != m2.shape or m1.shape[0] != m1.shape[1]:
        raise ValueError("operators must be square and of equal dimension")
    if m1.shape[0] > 200:
        raise ValueError("stability diagnostic is restricted to dimension <= 200")
    m = expm_dense(h * m1) + expm_dense(h * m2) - np.eye(m1.shape[0])
    return float(np.max(np.abs(np.linalg.eigvals(m))))
