from pathlib import Path

import pytest

from shotperc.config import (
    ExperimentKind,
    apply_overrides,
    build_config,
    load_config,
    parse_override,
)
from shotperc.errors import ConfigError
from shotperc.kernel import KernelFamily

CONFIG = """
experiment = "coupling_rate"
seed = 12345
replicas = 60
lambdas = [16, 64, 256]
R = [4.0]
kernel = {family = "rational", beta = 3.0}
"""


@pytest.fixture
def config_file(tmp_path) -> Path:
    path = tmp_path / "coupling.toml"
    path.write_text(CONFIG)
    return path


class TestOverrides:
    def test_parse_values(self):
        assert parse_override("seed=7") == ("seed", 7)
        assert parse_override("lambdas=[1, 2.5]") == ("lambdas", [1, 2.5])
        assert parse_override("kernel.family=stretched_exp") == ("kernel.family", "stretched_exp")

    def test_parse_rejects_missing_equals(self):
        with pytest.raises(ConfigError):
            parse_override("seed")
        with pytest.raises(ConfigError):
            parse_override("=3")

    def test_dotted_keys(self):
        merged = apply_overrides({"kernel": {"beta": 3.0}}, ["kernel.gamma=0.5", "seed=2"])
        assert merged == {"kernel": {"beta": 3.0, "gamma": 0.5}, "seed": 2}

    def test_does_not_mutate_input(self):
        data = {"kernel": {"beta": 3.0}}
        apply_overrides(data, ["kernel.beta=4.0"])
        assert data == {"kernel": {"beta": 3.0}}


class TestLoad:
    def test_file(self, config_file):
        cfg = load_config(config_file)
        assert cfg.experiment == ExperimentKind.COUPLING_RATE
        assert cfg.lambdas == [16.0, 64.0, 256.0]
        assert cfg.box_sizes == [4.0]
        assert cfg.kernel.build().beta == 3.0

    def test_overrides_win_over_file(self, config_file):
        cfg = load_config(config_file, ["seed=9", "kernel.beta=4.0"])
        assert cfg.seed == 9
        assert cfg.kernel.beta == 4.0

    def test_flags_win_over_overrides(self, config_file, tmp_path):
        cfg = load_config(
            config_file,
            ["seed=9"],
            experiment="kesten",
            flags={"seed": 5, "output": tmp_path / "k.csv", "threads": None},
        )
        assert cfg.seed == 5
        assert cfg.experiment == ExperimentKind.KESTEN
        assert cfg.output == tmp_path / "k.csv"
        assert cfg.threads is None

    def test_defaults_without_file(self):
        cfg = load_config(None, experiment="covariance_oracle")
        assert cfg.kernel.family == KernelFamily.RATIONAL
        assert cfg.replicas == 200
        assert cfg.depth is None

    def test_echo_excludes_run_facts(self, config_file):
        echo = load_config(config_file, flags={"threads": 4}).echo()
        assert "threads" not in echo and "output" not in echo
        assert echo["R"] == [4.0]
        assert echo["experiment"] == "coupling_rate"

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            load_config(tmp_path / "absent.toml")

    def test_bad_toml(self, tmp_path):
        path = tmp_path / "bad.toml"
        path.write_text("seed = = 3")
        with pytest.raises(ConfigError):
            load_config(path)


class TestValidation:
    def test_every_problem_is_listed(self):
        with pytest.raises(ConfigError) as exc:
            build_config(
                {
                    "experiment": "kesten",
                    "lambdas": [],
                    "replicas": 5,
                    "seed": -1,
                    "epsilon": 0.3,
                    "m": 40,
                }
            )
        fields = {p.split(":")[0] for p in exc.value.problems}
        assert {"lambdas", "replicas", "seed", "epsilon", "m"} <= fields

    def test_unknown_key(self):
        with pytest.raises(ConfigError, match="colour"):
            build_config({"experiment": "kesten", "colour": "red"})

    def test_unknown_experiment(self):
        with pytest.raises(ConfigError):
            build_config({"experiment": "magic"})

    def test_negative_box_size(self):
        with pytest.raises(ConfigError, match="R"):
            build_config({"experiment": "kesten", "R": [4.0, -1.0]})
