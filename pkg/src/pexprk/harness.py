"""Convergence-study harness.

Runs a fixed-step integrator over a dyadic ladder of step sizes against a
fine-step reference, reports discrete-L2 errors and observed orders, and
writes the results as a commented CSV.  The reference is the order-4
transformed method at a step 32 times smaller than the smallest study step,
guarded by a self-consistency gate: the reference computed at h_ref and at
2 h_ref must differ by far less than the smallest study error.
"""

import math
import time
from dataclasses import dataclass, field, fields

import numpy as np

from .krylov import KrylovConfig
from .problems import (
    DESK_GRID,
    PAPER_SCALE_GRID,
    PARTITION_NAMES,
    TIMESPAN,
    gs_default,
    gs_initial,
    gs_partition,
    gs_unpartitioned,
)
from .steppers import (
    IntegrationFailure,
    SplitProblem,
    integrate_fixed,
    original_stepper,
    pexprk_stepper,
    transformed_stepper,
)

REFERENCE_REFINEMENT = 32       # h_ref = smallest study step / 32
REFERENCE_TOL = 1e-13
REFERENCE_GATE = 1e-2           # gap must stay below this fraction of min error

CSV_COLUMNS = ("h", "error_l2", "observed_order", "matvecs", "krylov_dims", "wall_ms")


class ConfigError(ValueError):
    """Invalid run configuration (CLI exit code 2)."""


class NumericalFailure(RuntimeError):
    """Reference gate violation or a fully failed study (CLI exit code 3)."""


@dataclass
class RunConfig:
    problem: str = "gray-scott"
    grid: int = DESK_GRID
    partition: str = "none"
    order: int = 2
    form: str = "tran"
    jacobian: str = "full"
    t0: float = 0.0
    tf: float = TIMESPAN
    steps_pow2: tuple = (1, 6)
    steps: tuple | None = None
    krylov_tol: float = 1e-12
    krylov_mmax: int = 100
    out: str | None = None
    seed: int = 0
    paper_scale: bool = False

    def validate(self):
        if self.problem != "gray-scott":
            raise ConfigError(f"unknown problem {self.problem!r}")
        if self.partition not in ("none",) + PARTITION_NAMES:
            raise ConfigError(f"unknown partition {self.partition!r}")
        if self.order not in (2, 3, 4):
            raise ConfigError(f"order must be 2, 3, or 4, got {self.order}")
        if self.form not in ("orig", "tran", "part"):
            raise ConfigError(f"form must be orig, tran, or part, got {self.form!r}")
        if self.jacobian not in ("full", "block"):
            raise ConfigError(f"jacobian must be full or block, got {self.jacobian!r}")
        if self.form == "part" and self.partition == "none":
            raise ConfigError("the partitioned form requires a partition")
        if self.form in ("orig", "tran") and self.jacobian == "block" and self.partition == "none":
            raise ConfigError("the block Jacobian requires a partition to take blocks from")
        if self.form == "orig" and self.jacobian == "block":
            raise ConfigError("the original form uses the full Jacobian")
        if not self.tf > self.t0:
            raise ConfigError(f"empty time span [{self.t0}, {self.tf}]")
        if self.krylov_tol <= 0 or self.krylov_mmax < 1:
            raise ConfigError("Krylov tolerance must be positive and m_max >= 1")
        if self.steps is not None:
            if not all(isinstance(n, int) and n >= 1 for n in self.steps):
                raise ConfigError("explicit step counts must be positive integers")
            if list(self.steps) != sorted(set(self.steps)):
                raise ConfigError("explicit step counts must be strictly increasing")
        else:
            j0, j1 = self.steps_pow2
            if not (isinstance(j0, int) and isinstance(j1, int) and 1 <= j0 <= j1):
                raise ConfigError(f"bad dyadic step range {self.steps_pow2}")
        if self.grid < 3:
            raise ConfigError(f"grid side must be >= 3, got {self.grid}")

    def step_counts(self) -> list[int]:
        if self.steps is not None:
            return list(self.steps)
        j0, j1 = self.steps_pow2
        return [2**j for j in range(j0, j1 + 1)]

    def step_sizes(self) -> list[float]:
        span = self.tf - self.t0
        return [span / n for n in self.step_counts()]

    def krylov(self) -> KrylovConfig:
        return KrylovConfig(tol=self.krylov_tol, m_max=self.krylov_mmax)

    def label(self) -> str:
        prefix = "pexprks" if self.form == "part" else "exprks"
        form = "tran" if self.form == "part" else self.form
        jac = "" if self.form == "orig" else f"_{self.jacobian}_jacobian"
        return f"{prefix}_{form}_order_{self.order}{jac}"

    def as_metadata(self) -> dict:
        out = {}
        for f in fields(self):
            value = getattr(self, f.name)
            if isinstance(value, tuple):
                value = list(value)
            out[f.name] = value
        out["label"] = self.label()
        return out


@dataclass
class ConvergenceRow:
    h: float
    error_l2: float = math.nan
    observed_order: float | None = None
    matvecs: int = 0
    krylov_dims: int = 0
    wall_ms: float = 0.0
    failed: bool = False
    message: str = ""


@dataclass
class ReferenceSolution:
    state: np.ndarray
    gap: float          # discrete-L2 distance between the h_ref and 2 h_ref runs
    h_ref: float
    n_steps: int
    wall_ms: float

    def roundoff_floor(self) -> float:
        """Smallest gap two fixed-step float64 runs can be expected to have:
        a random-walk roundoff accumulation over n_steps state updates."""
        return math.sqrt(self.n_steps) * np.finfo(float).eps * discrete_l2(self.state)


@dataclass
class StudyResult:
    rows: list
    reference: ReferenceSolution
    metadata: dict = field(default_factory=dict)

    def min_error(self) -> float:
        errors = [r.error_l2 for r in self.rows if not r.failed]
        return min(errors) if errors else math.nan


def discrete_l2(v: np.ndarray) -> float:
    return float(np.linalg.norm(v) / math.sqrt(v.size))


def build_study(cfg: RunConfig):
    """Problem, stepper and initial state for a run configuration."""
    cfg.validate()
    grid = PAPER_SCALE_GRID if cfg.paper_scale and cfg.grid == DESK_GRID else cfg.grid
    model = gs_default(n=grid)
    u0 = gs_initial(model)
    if cfg.form == "part":
        problem = gs_partition(model, cfg.partition)
        stepper = pexprk_stepper(cfg.order)
    else:
        partition = None if cfg.partition == "none" else cfg.partition
        problem = gs_unpartitioned(model, jacobian=cfg.jacobian, partition=partition)
        stepper = (original_stepper if cfg.form == "orig" else transformed_stepper)(cfg.order)
    return model, problem, stepper, u0


def reference_solution(cfg: RunConfig, problem: SplitProblem | None = None, u0=None) -> ReferenceSolution:
    """Fine-step reference at h_ref = (smallest study step) / 32.

    Computed with the order-4 transformed method (full Jacobian) at
    tolerance 1e-13 and validated against the run at 2 h_ref; the study
    applies the gate once its errors are known.  A single-partition problem
    and initial state may be injected (used by tests with known solutions).
    """
    if problem is None:
        model, _, _, u0 = build_study(cfg)
        problem = gs_unpartitioned(model, jacobian="full")
    elif u0 is None:
        raise ValueError("an injected reference problem needs an initial state")
    ref_stepper = transformed_stepper(4)
    n_fine = max(cfg.step_counts()) * REFERENCE_REFINEMENT
    kcfg = KrylovConfig(tol=REFERENCE_TOL, m_max=cfg.krylov_mmax)
    start = time.perf_counter()
    try:
        fine = integrate_fixed(ref_stepper, problem, u0, cfg.t0, cfg.tf, n_fine, kcfg)
        coarse = integrate_fixed(ref_stepper, problem, u0, cfg.t0, cfg.tf, n_fine // 2, kcfg)
    except IntegrationFailure as exc:
        raise NumericalFailure(f"reference integration failed: {exc}") from exc
    wall_ms = (time.perf_counter() - start) * 1e3
    gap = discrete_l2(fine.state - coarse.state)
    return ReferenceSolution(
        state=fine.state,
        gap=gap,
        h_ref=(cfg.tf - cfg.t0) / n_fine,
        n_steps=n_fine,
        wall_ms=wall_ms,
    )


def estimate_order(rows: list) -> list:
    """Observed order log2(e_{i-1} / e_i) for consecutive unfailed rows."""
    prev_error = None
    orders = []
    for row in rows:
        order = None
        if not row.failed and prev_error is not None and row.error_l2 > 0:
            order = math.log2(prev_error / row.error_l2)
        row.observed_order = order
        orders.append(order)
        prev_error = None if row.failed else row.error_l2
    return orders


def run_convergence_study(cfg: RunConfig, reference: ReferenceSolution | None = None) -> StudyResult:
    """Integrate per step size against the reference and gate the result.

    Individual step-size failures (for instance an explicitly treated stiff
    partition at a large step) are recorded in their row and the study
    continues; the study only aborts if every row fails or the reference
    self-consistency gate is violated.
    """
    model, problem, stepper, u0 = build_study(cfg)
    if reference is None:
        reference = reference_solution(cfg, problem=gs_unpartitioned(model, jacobian="full"), u0=u0)
    kcfg = cfg.krylov()
    rows = []
    for n_steps in cfg.step_counts():
        h = (cfg.tf - cfg.t0) / n_steps
        row = ConvergenceRow(h=h)
        start = time.perf_counter()
        try:
            result = integrate_fixed(stepper, problem, u0, cfg.t0, cfg.tf, n_steps, kcfg)
            row.error_l2 = discrete_l2(result.state - reference.state)
            row.matvecs = result.stats.matvecs
            row.krylov_dims = result.stats.krylov_dim_total
        except IntegrationFailure as exc:
            row.failed = True
            row.message = str(exc)
        row.wall_ms = (time.perf_counter() - start) * 1e3
        rows.append(row)
    estimate_order(rows)

    if all(row.failed for row in rows):
        raise NumericalFailure("every step size failed; no convergence data produced")
    min_error = min(r.error_l2 for r in rows if not r.failed)
    # a study this accurate can undercut the float64 roundoff drift between
    # the two reference runs; the gate only bites above that floor
    gate = max(REFERENCE_GATE * min_error, reference.roundoff_floor())
    if not reference.gap < gate:
        raise NumericalFailure(
            f"reference self-consistency gate violated: gap {reference.gap:.3e} "
            f"vs smallest study error {min_error:.3e}"
        )

    metadata = cfg.as_metadata()
    metadata["reference_gap"] = reference.gap
    metadata["reference_steps"] = reference.n_steps
    return StudyResult(rows=rows, reference=reference, metadata=metadata)


def _format_value(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def emit_csv(rows: list, metadata: dict, path) -> None:
    """Write '#'-commented metadata, a header line, then one row per step size.

    Floats are written with shortest round-trip precision so parsing the file
    back reproduces the rows bit-exactly.  Timestamps stay in the comments;
    the data rows depend only on configuration and seed (wall_ms excepted,
    being a measurement).
    """
    lines = [f"# generated_at = {time.strftime('%Y-%m-%dT%H:%M:%S%z')}"]
    for key in sorted(metadata):
        lines.append(f"# {key} = {metadata[key]}")
    lines.append(",".join(CSV_COLUMNS))
    for row in rows:
        lines.append(
            ",".join(
                _format_value(getattr(row, column))
                for column in CSV_COLUMNS
            )
        )
    with open(path, "w") as handle:
        handle.write("\n".join(lines) + "\n")


def parse_csv(path) -> tuple[list, dict]:
    """Read back a study CSV: (rows, metadata-comment dict)."""
    metadata = {}
    rows = []
    with open(path) as handle:
        lines = [line.rstrip("\n") for line in handle]
    body = []
    for line in lines:
        if line.startswith("#"):
            key, _, value = line[1:].partition("=")
            metadata[key.strip()] = value.strip()
        elif line:
            body.append(line)
    if not body:
        return rows, metadata
    header = body[0].split(",")
    if tuple(header) != CSV_COLUMNS:
        raise ValueError(f"unexpected CSV columns {header}")
    for line in body[1:]:
        parts = line.split(",")
        rows.append(
            ConvergenceRow(
                h=float(parts[0]),
                error_l2=float(parts[1]) if parts[1] else math.nan,
                observed_order=float(parts[2]) if parts[2] else None,
                matvecs=int(parts[3]),
                krylov_dims=int(parts[4]),
                wall_ms=float(parts[5]),
                failed=parts[1] == "nan",
            )
        )
    return rows, metadata


def rows_data_equal(a: list, b: list) -> bool:
    """Row equality on the deterministic columns (wall time excluded)."""
    if len(a) != len(b):
        return False
    for ra, rb in zip(a, b):
        if repr(ra.h) != repr(rb.h) or repr(ra.error_l2) != repr(rb.error_l2):
            return False
        if ra.observed_order != rb.observed_order and not (
            ra.observed_order is not None
            and rb.observed_order is not None
            and repr(ra.observed_order) == repr(rb.observed_order)
        ):
            return False
        if ra.matvecs != rb.matvecs or ra.krylov_dims != rb.krylov_dims:
            return False
    return True
