import json
import math
import subprocess
import sys

import numpy as np
import pytest

from pexprk.harness import (
    ConfigError,
    ConvergenceRow,
    NumericalFailure,
    RunConfig,
    build_study,
    discrete_l2,
    emit_csv,
    estimate_order,
    parse_csv,
    reference_solution,
    rows_data_equal,
    run_convergence_study,
)
from pexprk.operators import DenseOperator
from pexprk.phi import expm_dense
from pexprk.steppers import unpartitioned_problem


def make_rows(errors, h0=0.5):
    return [ConvergenceRow(h=h0 * 2.0**-i, error_l2=e) for i, e in enumerate(errors)]


class TestRunConfig:
    def test_step_sizes_follow_dyadic_ladder(self):
        cfg = RunConfig()
        assert cfg.step_counts() == [2, 4, 8, 16, 32, 64]
        expected = [0.131072, 0.065536, 0.032768, 0.016384, 0.008192, 0.004096]
        assert np.allclose(cfg.step_sizes(), expected, rtol=1e-15)

    def test_explicit_steps_override(self):
        cfg = RunConfig(steps=(2, 6, 10))
        assert cfg.step_counts() == [2, 6, 10]

    def test_label_convention(self):
        assert RunConfig(form="part", partition="species", order=3).label().startswith("pexprks_tran_order_3")
        assert RunConfig(form="orig", order=2).label().startswith("exprks_orig_order_2")

    @pytest.mark.parametrize(
        "kwargs",
        [
            dict(problem="heat"),
            dict(partition="rows"),
            dict(order=5),
            dict(form="part"),  # partition defaults to none
            dict(form="orig", jacobian="block", partition="species"),
            dict(form="tran", jacobian="block"),  # block needs a partition
            dict(tf=0.0),
            dict(krylov_tol=-1.0),
            dict(steps=(4, 2)),
            dict(steps_pow2=(0, 3)),
            dict(grid=2),
        ],
    )
    def test_invalid_configs_rejected(self, kwargs):
        with pytest.raises(ConfigError):
            RunConfig(**kwargs).validate()

    def test_build_study_forms(self):
        for form, partition in [("part", "physics"), ("tran", "none"), ("orig", "none")]:
            cfg = RunConfig(grid=8, form=form, partition=partition)
            model, problem, stepper, u0 = build_study(cfg)
            assert u0.shape == (model.dim,)
            assert problem.partitions == (2 if form == "part" else 1)


class TestEstimateOrder:
    def test_halving_ratios(self):
        rows = make_rows([4.0, 1.0])
        assert estimate_order(rows) == [None, 2.0]
        rows = make_rows([8.0, 1.0])
        assert estimate_order(rows)[1] == 3.0

    def test_failed_rows_break_the_chain(self):
        rows = make_rows([8.0, 2.0, 1.0])
        rows[1].failed = True
        orders = estimate_order(rows)
        assert orders == [None, None, None]

    def test_orders_attached_to_rows(self):
        rows = make_rows([16.0, 4.0, 1.0])
        estimate_order(rows)
        assert rows[1].observed_order == 2.0 and rows[2].observed_order == 2.0


class TestCsv:
    def test_round_trip_bit_exact(self, tmp_path):
        rows = [
            ConvergenceRow(h=0.1, error_l2=1.2345678901234e-07, observed_order=None,
                           matvecs=123, krylov_dims=456, wall_ms=7.5),
            ConvergenceRow(h=0.05, error_l2=3.0864197253086e-08, observed_order=1.9999999999,
                           matvecs=222, krylov_dims=890, wall_ms=9.25),
            ConvergenceRow(h=0.025, failed=True),
        ]
        path = tmp_path / "study.csv"
        emit_csv(rows, {"grid": 8, "label": "demo"}, path)
        parsed, metadata = parse_csv(path)
        assert metadata["grid"] == "8"
        assert len(parsed) == 3
        for a, b in zip(rows[:2], parsed[:2]):
            assert repr(a.h) == repr(b.h)
            assert repr(a.error_l2) == repr(b.error_l2)
            assert a.observed_order == b.observed_order or repr(a.observed_order) == repr(b.observed_order)
            assert (a.matvecs, a.krylov_dims) == (b.matvecs, b.krylov_dims)
            assert repr(a.wall_ms) == repr(b.wall_ms)
        assert parsed[2].failed and math.isnan(parsed[2].error_l2)

    def test_header_and_columns(self, tmp_path):
        path = tmp_path / "empty.csv"
        emit_csv([], {"seed": 0}, path)
        text = path.read_text()
        lines = text.strip().splitlines()
        assert lines[-1] == "h,error_l2,observed_order,matvecs,krylov_dims,wall_ms"
        assert any(line.startswith("# seed = 0") for line in lines)
        assert any(line.startswith("# generated_at") for line in lines)


@pytest.fixture(scope="module")
def small_cfg():
    return RunConfig(grid=8, partition="species", order=2, form="part", steps_pow2=(1, 3))


@pytest.fixture(scope="module")
def small_study(small_cfg):
    return run_convergence_study(small_cfg)


class TestStudy:
    def test_rows_and_metadata(self, small_cfg, small_study):
        rows = small_study.rows
        assert [r.h for r in rows] == small_cfg.step_sizes()
        assert all(not r.failed for r in rows)
        assert all(r.matvecs > 0 and r.krylov_dims > 0 for r in rows)
        assert rows[0].observed_order is None
        assert small_study.metadata["label"] == small_cfg.label()
        assert small_study.reference.gap < 1e-2 * small_study.min_error() or (
            small_study.reference.gap < small_study.reference.roundoff_floor()
        )

    def test_errors_decrease(self, small_study):
        errors = [r.error_l2 for r in small_study.rows]
        assert errors == sorted(errors, reverse=True)

    def test_deterministic_given_config(self, small_cfg, small_study):
        again = run_convergence_study(small_cfg)
        assert rows_data_equal(small_study.rows, again.rows)

    def test_reference_on_linear_problem_matches_expm(self):
        rng = np.random.default_rng(14)
        a = rng.normal(size=(12, 12)) / 3.0 - 1.5 * np.eye(12)
        u0 = rng.uniform(-1, 1, size=12)
        prob = unpartitioned_problem(12, lambda u: a @ u, lambda u: DenseOperator(a))
        cfg = RunConfig(grid=8, t0=0.0, tf=1.0, steps_pow2=(1, 3))
        ref = reference_solution(cfg, problem=prob, u0=u0)
        exact = expm_dense(a) @ u0
        assert discrete_l2(ref.state - exact) <= 1e-11
        assert ref.n_steps == 8 * 32

    def test_gate_violation_raises(self, small_cfg, small_study):
        import dataclasses

        bad_ref = dataclasses.replace(small_study.reference, gap=1.0)
        with pytest.raises(NumericalFailure, match="gate"):
            run_convergence_study(small_cfg, reference=bad_ref)

    def test_zero_krylov_dims_for_all_explicit(self):
        # an imex-style run where even the diffusion operator is zeroed
        from pexprk.problems import gs_default, gs_initial, gs_partition
        from pexprk.operators import ZeroOperator
        from pexprk.steppers import SplitProblem, integrate_fixed, pexprk_stepper
        from pexprk.krylov import KrylovConfig

        m = gs_default(n=8)
        base = gs_partition(m, "physics")
        prob = SplitProblem(
            m.dim, base.f_parts, tuple(lambda u: ZeroOperator(m.dim) for _ in range(2))
        )
        res = integrate_fixed(
            pexprk_stepper(2), prob, gs_initial(m), 0.0, 0.01, 4, KrylovConfig()
        )
        assert res.stats.krylov_dim_total == 0


class TestCli:
    def run_cli(self, *args):
        return subprocess.run(
            [sys.executable, "-m", "pexprk.cli", *args], capture_output=True, text=True
        )

    def test_check_order_subcommand(self):
        proc = self.run_cli("check-order", "--order", "2", "--size", "6", "--seed", "3")
        assert proc.returncode == 0
        assert "condition 2a" in proc.stdout

    def test_dump_tableau_subcommand(self):
        proc = self.run_cli("dump-tableau", "--order", "3", "--transformed")
        assert proc.returncode == 0
        assert proc.stdout.startswith("s = 3")
        again = self.run_cli("dump-tableau", "--order", "3", "--transformed")
        assert again.stdout == proc.stdout

    def test_run_subcommand_writes_csv(self, tmp_path):
        out = tmp_path / "study.csv"
        proc = self.run_cli(
            "run", "--grid", "8", "--partition", "physics", "--order", "2",
            "--form", "part", "--steps-pow2", "1:2", "--krylov-tol", "1e-10",
            "--out", str(out),
        )
        assert proc.returncode == 0, proc.stderr
        rows, metadata = parse_csv(out)
        assert len(rows) == 2 and metadata["partition"] == "physics"

    def test_config_file_with_flag_override(self, tmp_path):
        config = tmp_path / "cfg.json"
        config.write_text(json.dumps({
            "grid": 8, "partition": "species", "order": 2, "form": "part",
            "steps-pow2": "1:2", "krylov-tol": 1e-10,
        }))
        out = tmp_path / "study.csv"
        proc = self.run_cli("run", "--config", str(config), "--partition", "imex", "--out", str(out))
        assert proc.returncode == 0, proc.stderr
        _, metadata = parse_csv(out)
        assert metadata["partition"] == "imex"  # flag overrides the file
        assert metadata["grid"] == "8"

    def test_config_error_exit_code(self):
        proc = self.run_cli("run", "--form", "part")  # partition missing
        assert proc.returncode == 2
        assert "configuration error" in proc.stderr

    def test_numerical_failure_exit_code(self):
        # a Krylov cap far below what the problem needs fails every product
        proc = self.run_cli(
            "run", "--grid", "16", "--partition", "physics", "--order", "2",
            "--form", "part", "--steps-pow2", "1:2", "--krylov-mmax", "2",
        )
        assert proc.returncode == 3
        assert "numerical failure" in proc.stderr

    def test_unknown_config_key_exit_code(self, tmp_path):
        config = tmp_path / "cfg.json"
        config.write_text(json.dumps({"gird": 8}))
        proc = self.run_cli("run", "--config", str(config))
        assert proc.returncode == 2

    def test_tspan_and_steps_parsing(self, tmp_path):
        out = tmp_path / "study.csv"
        proc = self.run_cli(
            "run", "--grid", "8", "--partition", "physics", "--order", "2", "--form", "part",
            "--tspan", "0:0.02", "--steps", "2,4", "--krylov-tol", "1e-10", "--out", str(out),
        )
        assert proc.returncode == 0, proc.stderr
        rows, _ = parse_csv(out)
        assert [r.h for r in rows] == [0.01, 0.005]
