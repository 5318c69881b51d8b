"""
Tests for run configuration parsing and digests
"""
from pathlib import Path

import pytest

from muon_bench_core.exceptions import ConfigurationError
from muon_bench_core.models.enums import InlineCheck, ProblemKind, Theorem, UpdateRule
from muon_bench_core.models.run_config import load_run_config, parse_run_config

CONFIG_DIR = Path(__file__).resolve().parent.parent / "configs"


def _base():
    return {
        "problem": {"kind": "noisy_quadratic", "shape": [4, 3], "sigma": 1.0, "seed": 7},
        "optimizer": {"rule": "muon_heavy_ball", "beta": 0.9, "eta": 0.01},
        "run": {"T": 100, "seeds": [2, 0, 1], "out_dir": "runs/a"},
    }


class TestParseRunConfig:
    """Test schema validation"""

    def test_defaults(self):
        """Omitted fields take their defaults"""
        cfg = parse_run_config(_base())
        assert cfg.problem.kind is ProblemKind.NOISY_QUADRATIC
        assert cfg.problem.certify_trials == 200
        assert cfg.optimizer.rule is UpdateRule.MUON_HEAVY_BALL
        assert cfg.optimizer.init_first_full
        assert cfg.run.seeds == [0, 1, 2]
        assert set(cfg.run.checks) == set(InlineCheck)

    def test_beta_one_rejected(self):
        """beta = 1.0 names the offending field"""
        data = _base()
        data["optimizer"]["beta"] = 1.0
        with pytest.raises(ConfigurationError, match="optimizer.beta"):
            parse_run_config(data)

    @pytest.mark.parametrize(
        "section, key, value",
        [
            ("optimizer", "eta", None),
            ("optimizer", "schedule", "thm22-batch-free"),
            ("optimizer", "momentum", 0.9),
            ("run", "seeds", []),
            ("run", "seeds", [1, 1]),
            ("run", "T", 0),
            ("problem", "shape", [0, 3]),
            ("problem", "spectrum", [1.0, 2.0]),
            ("problem", "certify_trials", 50),
        ],
    )
    def test_rejected(self, section, key, value):
        """Invalid or unknown fields fail before any compute"""
        data = _base()
        data[section][key] = value
        with pytest.raises(ConfigurationError):
            parse_run_config(data)

    def test_schedule_rule_pairing(self):
        """thm22 needs heavy-ball Muon, thm31 spectral descent"""
        data = _base()
        data["optimizer"] = {"rule": "spectral_descent", "schedule": "thm22-big-batch"}
        with pytest.raises(ConfigurationError):
            parse_run_config(data)
        data["optimizer"] = {"rule": "muon_heavy_ball", "schedule": "thm31", "beta": 0.25}
        with pytest.raises(ConfigurationError):
            parse_run_config(data)
        data["optimizer"] = {"rule": "spectral_descent", "schedule": "thm31", "beta": 0.25}
        assert parse_run_config(data).optimizer.schedule is Theorem.THM31

    def test_newton_schulz_only_for_muon(self):
        """Spectral descent always uses the exact SVD"""
        data = _base()
        data["optimizer"] = {
            "rule": "spectral_descent",
            "eta": 0.01,
            "orthogonalizer": "newton_schulz",
        }
        with pytest.raises(ConfigurationError):
            parse_run_config(data)

    def test_not_a_mapping(self):
        """A YAML list is not a config"""
        with pytest.raises(ConfigurationError):
            parse_run_config([1, 2])


class TestDigest:
    """Test the config digest"""

    def test_stable_and_order_free(self):
        """Key order and seed order do not change the digest"""
        a = parse_run_config(_base())
        data = _base()
        data["run"]["seeds"] = [0, 1, 2]
        data = {"run": data["run"], "optimizer": data["optimizer"], "problem": data["problem"]}
        assert parse_run_config(data).digest() == a.digest()
        assert len(a.digest()) == 64

    def test_output_directory_excluded(self):
        """Moving the output does not change the digest"""
        a = parse_run_config(_base())
        assert a.with_run(out_dir="elsewhere").digest() == a.digest()

    def test_numbers_change_digest(self):
        """Anything that shapes the numbers changes it"""
        a = parse_run_config(_base())
        assert a.with_run(T=101).digest() != a.digest()
        data = _base()
        data["problem"]["sigma"] = 0.5
        assert parse_run_config(data).digest() != a.digest()

    def test_with_run_revalidates(self):
        """with_run goes through validation again"""
        with pytest.raises(ConfigurationError):
            parse_run_config(_base()).with_run(T=0)


class TestLoadRunConfig:
    """Test YAML loading"""

    @pytest.mark.parametrize(
        "name",
        [
            "quadratic_muon.yaml",
            "quadratic_deterministic.yaml",
            "spectral_thm31.yaml",
            "logistic_muon.yaml",
        ],
    )
    def test_shipped_configs(self, name):
        """Every config in configs/ validates"""
        cfg = load_run_config(CONFIG_DIR / name)
        assert cfg.run.T >= 1

    def test_bad_yaml(self, tmp_path):
        """Unparseable YAML and missing files are configuration errors"""
        path = tmp_path / "bad.yaml"
        path.write_text("problem: [unclosed\n")
        with pytest.raises(ConfigurationError):
            load_run_config(path)
        with pytest.raises(ConfigurationError):
            load_run_config(tmp_path / "missing.yaml")
