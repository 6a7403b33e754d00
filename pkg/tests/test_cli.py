"""
Tests for model loading, suite selection and the command-line entry point.
"""
import json
import logging
import os

import pytest
from sympy import Rational

from bvlattice.cli import (
    EXIT_PASS,
    EXIT_USAGE,
    SuiteConfig,
    build_parser,
    load_model,
    main,
    run_suite,
)
from bvlattice.errors import ModelLoadError
from bvlattice.graded_core import Functional
from bvlattice.products import PerturbativeOrders
from bvlattice.reporting import ERROR, load_report
from bvlattice.suites import SUITES, Check, IdentityVerifier, SuiteContext, resolve_suites

WAVE5 = {
    "name": "custom",
    "sites": 5,
    "window": [1, 2, 3],
    "species": [{"name": "phi", "parity": 0, "propagating": True}],
    "K": [[("-2" if i == j else "1" if abs(i - j) == 1 else "0") for j in range(5)] for i in range(5)],
}


def write_model(directory, data, name="model.json"):
    path = os.path.join(directory, name)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(data, f)
    return path


@pytest.mark.unit
class TestModelLoading:
    """JSON model files and the bundled fixtures."""

    def test_bundled_fixture_by_name(self):
        bundle = load_model("wave5.json")
        assert bundle.model.name == "W5"
        g = bundle.model.gen("phi", 2)
        assert bundle.functionals["V"] == Functional.from_product([g, g, g], 0, "1/6")
        assert bundle.Z.name == "Z_ct"
        assert not bundle.Z.is_identity

    def test_trivial_pair_gauge_data(self, trivial_pair_bundle):
        assert trivial_pair_bundle.theta0 is not None
        assert trivial_pair_bundle.psi is not None
        assert {"V", "S1_exact", "S1_obstructed"} <= set(trivial_pair_bundle.functionals)

    def test_gauge_pair_restricts_contraction(self, gauge_pair_bundle):
        Z = gauge_pair_bundle.Z
        assert Z.name == "Z_gauge"
        assert Z.depth == 2
        assert Z.species == ("a",)
        assert "S1" in gauge_pair_bundle.functionals

    @pytest.mark.parametrize("Z, field", [
        ({"kernels": {"2": ["0", "1"]}, "depth": 0}, "Z.depth"),
        ({"kernels": {"2": ["0", "1"]}, "depth": "2"}, "Z.depth"),
        ({"kernels": {"2": ["0", "1"]}, "species": "phi"}, "Z.species"),
        ({"kernels": {"2": ["0", "1"]}, "species": ["psi"]}, "Z.species"),
    ], ids=["zero-depth", "string-depth", "bare-species", "unknown-species"])
    def test_bad_renormalization(self, Z, field, temp_output_dir):
        with pytest.raises(ModelLoadError) as excinfo:
            load_model(write_model(temp_output_dir, dict(WAVE5, Z=Z)))
        assert excinfo.value.field == field

    def test_hadamard_part_defaults_to_zero(self, temp_output_dir):
        bundle = load_model(write_model(temp_output_dir, WAVE5))
        assert all(v == 0 for v in bundle.model.H)
        assert bundle.Z.is_identity
        assert bundle.theta0 is None

    def test_asymmetric_k(self, temp_output_dir):
        data = dict(WAVE5, K=[row[:] for row in WAVE5["K"]])
        data["K"][0][1] = "2"
        with pytest.raises(ModelLoadError, match="SymmetryError"):
            load_model(write_model(temp_output_dir, data))

    def test_missing_field(self, temp_output_dir):
        data = {k: v for k, v in WAVE5.items() if k != "K"}
        with pytest.raises(ModelLoadError) as excinfo:
            load_model(write_model(temp_output_dir, data))
        assert excinfo.value.field == "K"

    def test_inexact_entry(self, temp_output_dir):
        data = dict(WAVE5, K=[row[:] for row in WAVE5["K"]])
        data["K"][2][2] = "abc"
        with pytest.raises(ModelLoadError):
            load_model(write_model(temp_output_dir, data))

    def test_bad_generator_name(self, temp_output_dir):
        data = dict(WAVE5, functionals={"V": [["1", ["phi[2]"]]]})
        with pytest.raises(ModelLoadError) as excinfo:
            load_model(write_model(temp_output_dir, data))
        assert excinfo.value.field == "functionals.V[0]"

    def test_invalid_json(self, temp_output_dir):
        path = os.path.join(temp_output_dir, "broken.json")
        with open(path, "w", encoding="utf-8") as f:
            f.write("{not json")
        with pytest.raises(ModelLoadError, match="invalid JSON"):
            load_model(path)

    def test_missing_file(self):
        with pytest.raises(ModelLoadError):
            load_model("/nonexistent/model.json")


@pytest.mark.unit
class TestConfiguration:
    """Suite selection and run parameters."""

    def test_all_expands_in_registry_order(self):
        assert resolve_suites(["all"]) == list(SUITES)
        assert resolve_suites(["bv", "algebra"]) == ["algebra", "bv"]

    def test_unknown_suite(self):
        with pytest.raises(KeyError):
            resolve_suites(["nonsense"])

    def test_invalid_config(self):
        with pytest.raises(ValueError):
            SuiteConfig("wave5.json", samples=0)
        with pytest.raises(ValueError):
            SuiteConfig("wave5.json", hbar_order=-1)

    def test_describe_omits_output_options(self):
        described = SuiteConfig("wave5.json", report_path="out.json", jobs=4).describe()
        assert "report_path" not in described
        assert "jobs" not in described
        assert described["scales"] == ["0", "1", "10"]

    def test_parser_scales(self):
        args = build_parser().parse_args(["check", "--model", "wave5.json", "--lambda", "1/2", "--lambda", "3"])
        assert args.scales == [Rational(1, 2), Rational(3)]
        assert args.suite is None

    def test_sample_default(self, monkeypatch, w5):
        monkeypatch.delenv("BVLATTICE_SAMPLES", raising=False)
        assert build_parser().parse_args(["check", "--model", "wave5.json"]).samples == 200
        assert SuiteConfig("wave5.json").samples == 200
        assert SuiteContext(w5, PerturbativeOrders(1, 1)).samples == 200

    @pytest.mark.parametrize("argv", [
        ["--log-level", "DEBUG", "check", "--model", "wave5.json"],
        ["check", "--model", "wave5.json", "--log-level", "DEBUG"],
        ["list-suites", "--log-level", "DEBUG"],
    ], ids=["before", "after", "list-suites"])
    def test_log_level_on_either_side(self, argv):
        assert build_parser().parse_args(argv).log_level == "DEBUG"

    def test_subcommand_log_level_overrides_global(self):
        args = build_parser().parse_args(["--log-level", "ERROR", "check", "--model", "wave5.json",
                                          "--log-level", "DEBUG"])
        assert args.log_level == "DEBUG"


@pytest.mark.integration
class TestCommandLine:
    """``bvlattice`` exit codes and reports."""

    def test_list_suites(self, capsys):
        assert main(["list-suites"]) == EXIT_PASS
        out = capsys.readouterr().out
        for name in SUITES:
            assert name in out

    def test_unknown_suite_is_usage_error(self):
        assert main(["check", "--model", "wave5.json", "--suite", "nonsense"]) == EXIT_USAGE

    def test_negative_scale_is_usage_error(self):
        assert main(["check", "--model", "wave5.json", "--lambda", "-1"]) == EXIT_USAGE

    def test_load_error_is_usage_error(self, temp_output_dir):
        path = write_model(temp_output_dir, {"sites": 3})
        assert main(["check", "--model", path]) == EXIT_USAGE

    def test_algebra_suite_passes(self, temp_output_dir, capsys):
        report_path = os.path.join(temp_output_dir, "report.json")
        status = main(["check", "--model", "wave5.json", "--suite", "algebra", "--samples", "3",
                       "--report", report_path])
        assert status == EXIT_PASS
        assert "checks passed" in capsys.readouterr().out
        report = load_report(report_path)
        assert report["summary"]["failed"] == 0
        assert report["config"]["suites"] == ["algebra"]
        assert all(c["suite"] == "algebra" for c in report["checks"])
        assert os.path.exists(os.path.join(temp_output_dir, "report.md"))

    def test_reports_are_reproducible(self):
        """Equal seeds give equal check lists."""
        config = SuiteConfig("wave5.json", suites=("products",), samples=2, hbar_order=1, v_order=1)
        first = run_suite(config)[1]
        second = run_suite(config)[1]
        assert first["checks"] == second["checks"]

    def test_unexpected_exception_fails_the_check(self, w5, caplog):
        """A check that raises is recorded as an error and logged with its traceback."""
        def explode():
            raise RuntimeError("boom")

        verifier = IdentityVerifier(SuiteContext(w5, PerturbativeOrders(1, 1)))
        with caplog.at_level(logging.ERROR, logger="bvlattice.suites"):
            record = verifier._execute("bv", Check("exploding identity", "anchor", explode))
        assert record.status == ERROR
        assert not record.passed
        assert "RuntimeError: boom" in record.counterexample["error"]
        assert any(r.exc_info for r in caplog.records)

    @pytest.mark.slow
    def test_third_order_suites_pass_on_wave7(self):
        """Antifield interactions and counterterm anomalies at orders (3, 3)."""
        config = SuiteConfig("wave7.json", suites=("qme", "scale", "anomaly", "rg"), samples=1,
                             hbar_order=3, v_order=3)
        status, report = run_suite(config)
        failed = [c["identity"] for c in report["checks"] if c["status"] != "pass"]
        assert status == EXIT_PASS, failed
