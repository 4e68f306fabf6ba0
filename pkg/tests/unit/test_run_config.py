"""Unit tests for the JSON run configuration."""

import json

import pytest

from app.cli.run_config import RunConfig
from app.cli.run_config import default_sections
from app.engine.bsde_solver import Backend
from app.engine.market import OptionKind
from app.engine.regime import RegimeMode
from app.engine.xva import SweepAxis
from app.exceptions import ConfigurationError
from app.exceptions import ValidationError


class TestDefaults:
    """Test the default sections."""

    def test_sections(self):
        """Test every section is present."""
        assert set(default_sections()) == {"market", "claim", "regime", "solver", "sweep", "io"}

    def test_defaults_build_benchmark_objects(self):
        """Test defaults give the benchmark market, call and solver."""
        run_config = RunConfig.load()
        assert run_config.market_params().funding_rate_borrow == 0.05
        assert run_config.claim_spec().kind == OptionKind.CALL
        assert run_config.solver_config().n_paths == 100_000
        assert run_config.regime_spec().mode == RegimeMode.FROZEN_NORMAL
        assert run_config.regime_params().rate_normal == pytest.approx(1 / 1.39)
        assert run_config.sweep_spec().axis == SweepAxis.ALPHA


class TestLayering:
    """Test file, override and seed layering."""

    def test_file_then_overrides_then_seed(self, tmp_path):
        """Test later layers win."""
        path = tmp_path / "run.json"
        path.write_text(json.dumps({"market": {"funding_rate_borrow": 0.1}, "seed": 5}))
        run_config = RunConfig.load(path, ["market.funding_rate_borrow=0.075"], seed=9)
        assert run_config.market_params().funding_rate_borrow == 0.075
        assert run_config.seed == 9
        assert run_config.solver_config().seed == 9

    def test_file_seed(self, tmp_path):
        """Test a seed in the file is used when no --seed is given."""
        path = tmp_path / "run.json"
        path.write_text(json.dumps({"seed": 5}))
        assert RunConfig.load(path).seed == 5

    @pytest.mark.parametrize(
        "override, section, key, expected",
        [
            ("solver.backend=shooting", "solver", "backend", "shooting"),
            ("solver.n_paths=2000", "solver", "n_paths", 2000),
            ("solver.antithetic=false", "solver", "antithetic", False),
            ("sweep.grid=[0.1, 0.2]", "sweep", "grid", [0.1, 0.2]),
            ("sweep.regime_modes=dynamic,frozen-crisis", "sweep", "regime_modes", ["dynamic", "frozen-crisis"]),
            ('sweep.overrides={"funding_rate_borrow": 0.1}', "sweep", "overrides", {"funding_rate_borrow": 0.1}),
        ],
    )
    def test_override_coercion(self, override, section, key, expected):
        """Test --set values take the type of their default."""
        run_config = RunConfig.load(overrides=[override])
        assert run_config.sections[section][key] == expected

    def test_shooting_keys_reach_solver(self):
        """Test flattened shooting settings build the nested config."""
        run_config = RunConfig.load(overrides=["solver.backend=shooting", "solver.iterations=10"])
        solver = run_config.solver_config()
        assert solver.backend == Backend.SHOOTING
        assert solver.shooting.iterations == 10


class TestErrors:
    """Test configuration errors."""

    @pytest.mark.parametrize(
        "override",
        ["market.nope=1", "nosection.key=1", "market.funding_rate_borrow", "solver.n_paths=1.5", "solver.antithetic=maybe"],
    )
    def test_bad_overrides(self, override):
        """Test unknown keys and malformed values raise ConfigurationError."""
        with pytest.raises(ConfigurationError):
            RunConfig.load(overrides=[override])

    def test_domain_validation(self):
        """Test values that parse but break a domain invariant fail at load."""
        with pytest.raises(ValidationError):
            RunConfig.load(overrides=["market.volatility=0"])
        with pytest.raises(ConfigurationError):
            RunConfig.load(overrides=["regime.mode=sometimes"])

    def test_bad_file(self, tmp_path):
        """Test missing files, invalid JSON and unknown sections."""
        with pytest.raises(ConfigurationError):
            RunConfig.load(tmp_path / "absent.json")
        broken = tmp_path / "broken.json"
        broken.write_text("{not json")
        with pytest.raises(ConfigurationError):
            RunConfig.load(broken)
        unknown = tmp_path / "unknown.json"
        unknown.write_text(json.dumps({"portfolio": {}}))
        with pytest.raises(ConfigurationError):
            RunConfig.load(unknown)

    def test_round_trip_json(self):
        """Test the effective configuration serializes with its seed."""
        data = json.loads(RunConfig.load(seed=3).to_json())
        assert data["seed"] == 3
        assert data["market"]["volatility"] == 0.3
