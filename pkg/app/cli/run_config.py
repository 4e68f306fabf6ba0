"""
JSON run configuration.

Values are layered: benchmark defaults, then the JSON file given with
``--config``, then ``--set section.key=value`` overrides, then ``--seed``.
Every section and key must already exist in the defaults.
"""

import copy
import json
from dataclasses import asdict
from dataclasses import dataclass
from pathlib import Path
from typing import Any

from app.config import config
from app.engine.bsde_solver import ShootingConfig
from app.engine.bsde_solver import SolverConfig
from app.engine.market import ClaimSpec
from app.engine.market import MarketParams
from app.engine.market import OptionKind
from app.engine.regime import RegimeMode
from app.engine.regime import RegimeParams
from app.engine.xva import RegimeSpec
from app.engine.xva import SweepSpec
from app.exceptions import ConfigurationError
from app.exceptions import XvaError
from app.logger import get_logger

logger = get_logger("xva.cli")

SHOOTING_KEYS = ("hidden_layers", "width", "learning_rate", "iterations", "batch_size")


def default_sections() -> dict[str, dict[str, Any]]:
    shooting = ShootingConfig()
    return {
        "market": asdict(MarketParams()),
        "claim": {"kind": OptionKind.CALL.value, "strike": 1.0, "maturity": 0.25, "spot": 1.0},
        "regime": {
            "mode": RegimeMode.FROZEN_NORMAL.value,
            "rate_normal": 1.0 / 1.39,
            "rate_crisis": 1.0 / 0.99,
            "initial_state": 0,
        },
        "solver": {
            "backend": "regression",
            "n_steps": 50,
            "n_paths": 100_000,
            "basis_degree": 3,
            "clamp_quantile": config.CLAMP_QUANTILE,
            "antithetic": True,
            **{key: getattr(shooting, key) for key in SHOOTING_KEYS},
        },
        "sweep": {
            "axis": "alpha",
            "grid": [0.0, 0.25, 0.5, 0.75, 1.0],
            "regime_modes": [RegimeMode.FROZEN_NORMAL.value, RegimeMode.FROZEN_CRISIS.value],
            "overrides": {},
        },
        "io": {"input": None, "output_dir": config.OUTPUT_DIR},
    }


def _coerce(value: Any, default: Any, where: str) -> Any:
    """Convert a --set value to the type of its default."""
    if default is None or value is None:
        return value
    try:
        if isinstance(default, bool):
            if isinstance(value, str):
                lowered = value.lower()
                if lowered not in ("true", "false", "1", "0", "yes", "no"):
                    raise ValueError(value)
                return lowered in ("true", "1", "yes")
            return bool(value)
        if isinstance(default, int):
            number = float(value)
            if number != int(number):
                raise ValueError(value)
            return int(number)
        if isinstance(default, float):
            return float(value)
        if isinstance(default, list):
            if isinstance(value, str):
                return [v.strip() for v in value.split(",") if v.strip()]
            return list(value)
        if isinstance(default, dict) and not isinstance(value, dict):
            raise ValueError(value)
    except (TypeError, ValueError) as e:
        raise ConfigurationError(f"bad value for {where}", {"value": value}) from e
    return value


def _parse_literal(text: str) -> Any:
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


@dataclass
class RunConfig:
    sections: dict[str, dict[str, Any]]
    seed: int = config.DEFAULT_SEED

    @classmethod
    def load(
        cls,
        path: str | Path | None = None,
        overrides: list[str] | tuple[str, ...] = (),
        seed: int | None = None,
    ) -> "RunConfig":
        run_config = cls(default_sections())
        if path is not None:
            run_config.merge(cls._read(path))
            logger.debug(f"loaded run configuration from {path}")
        for override in overrides:
            run_config.apply_override(override)
        if seed is not None:
            run_config.seed = seed
        run_config.validate()
        return run_config

    @staticmethod
    def _read(path: str | Path) -> dict[str, Any]:
        try:
            data = json.loads(Path(path).read_text())
        except FileNotFoundError as e:
            raise ConfigurationError(f"config file not found: {path}") from e
        except json.JSONDecodeError as e:
            raise ConfigurationError(f"config file is not valid JSON: {path}", {"line": e.lineno}) from e
        if not isinstance(data, dict):
            raise ConfigurationError("config file must hold a JSON object")
        return data

    def merge(self, data: dict[str, Any]) -> None:
        for section, values in data.items():
            if section == "seed":
                self.seed = _coerce(values, 0, "seed")
                continue
            if section not in self.sections:
                raise ConfigurationError(f"unknown config section: {section}")
            if values is None:
                continue
            if not isinstance(values, dict):
                raise ConfigurationError(f"config section {section} must be an object")
            for key, value in values.items():
                self.set(section, key, value)

    def set(self, section: str, key: str, value: Any) -> None:
        if section not in self.sections:
            raise ConfigurationError(f"unknown config section: {section}")
        if key not in self.sections[section]:
            raise ConfigurationError(f"unknown config key: {section}.{key}")
        self.sections[section][key] = _coerce(value, self.sections[section][key], f"{section}.{key}")

    def apply_override(self, override: str) -> None:
        """Apply one ``section.key=value`` override."""
        target, sep, raw = override.partition("=")
        section, dot, key = target.strip().partition(".")
        if not sep or not dot or not key:
            raise ConfigurationError("override must look like section.key=value", {"override": override})
        self.set(section, key, _parse_literal(raw.strip()))
        logger.debug(f"override {section}.{key} = {self.sections[section][key]!r}")

    def validate(self) -> None:
        """Build every domain object once so that bad values fail before any work starts."""
        try:
            self.market_params()
            self.claim_spec()
            self.regime_spec()
            self.solver_config()
        except XvaError:
            raise
        except (TypeError, ValueError) as e:
            raise ConfigurationError(f"invalid run configuration: {e}") from e

    def market_params(self) -> MarketParams:
        return MarketParams(**self.sections["market"])

    def claim_spec(self) -> ClaimSpec:
        claim = dict(self.sections["claim"])
        claim["kind"] = OptionKind(claim["kind"])
        return ClaimSpec(**claim)

    def regime_params(self) -> RegimeParams:
        regime = self.sections["regime"]
        return RegimeParams(regime["rate_normal"], regime["rate_crisis"], regime["initial_state"])

    def regime_spec(self) -> RegimeSpec:
        return RegimeSpec(RegimeMode(self.sections["regime"]["mode"]), self.regime_params())

    def solver_config(self) -> SolverConfig:
        solver = dict(self.sections["solver"])
        shooting = ShootingConfig(**{key: solver.pop(key) for key in SHOOTING_KEYS})
        return SolverConfig(seed=self.seed, shooting=shooting, **solver)

    def sweep_spec(self) -> SweepSpec:
        sweep = self.sections["sweep"]
        return SweepSpec(
            axis=sweep["axis"],
            grid=tuple(float(v) for v in sweep["grid"]),
            regime_modes=tuple(sweep["regime_modes"]),
            overrides=dict(sweep["overrides"]),
        )

    @property
    def output_dir(self) -> Path:
        return Path(self.sections["io"]["output_dir"])

    def as_dict(self) -> dict[str, Any]:
        return {"seed": self.seed, **copy.deepcopy(self.sections)}

    def to_json(self) -> str:
        return json.dumps(self.as_dict(), indent=2, sort_keys=True)
