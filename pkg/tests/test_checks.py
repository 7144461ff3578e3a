import pytest

from cvid import checks
from cvid.checks import CHECKS, run_checks
from cvid.core.errors import ConfigurationError


class TestRunChecks:
    @pytest.mark.parametrize("name", sorted(set(CHECKS) - {"kl_oracle"}))
    def test_fast_checks_pass(self, name):
        [result] = run_checks([name])
        assert result.passed, result.detail
        assert result.name == name
        assert result.seconds >= 0

    @pytest.mark.slow
    def test_kl_oracle_passes(self):
        [result] = run_checks(["kl_oracle"])
        assert result.passed, result.detail

    def test_unknown_check(self):
        with pytest.raises(ConfigurationError, match="unknown check"):
            run_checks(["kl_oracle", "nope"])

    def test_wrong_kl_is_caught(self, monkeypatch):
        real = checks.kl_gaussian
        monkeypatch.setattr(checks, "kl_gaussian", lambda q, p: real(q, p) * 1.1 + 0.01)
        [result] = run_checks(["kl_oracle"])
        assert not result.passed
        assert "Monte-Carlo" in result.detail

    def test_exception_becomes_failure(self, monkeypatch):
        def broken():
            raise RuntimeError("boom")

        monkeypatch.setitem(CHECKS, "density_labels", broken)
        results = run_checks(["density_labels", "bright_channel"])
        assert [r.passed for r in results] == [False, True]
        assert "RuntimeError: boom" in results[0].detail

    def test_results_serialise(self):
        [result] = run_checks(["density_labels"])
        assert set(result.to_dict()) == {"name", "passed", "detail", "seconds"}
