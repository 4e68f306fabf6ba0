"""
regime-xva command line.

Subcommands: estimate-regimes, simulate-regime, check-assumptions, bs-price,
price-xva and sweep. Outputs go to the output directory through
write-then-rename, so a failed command leaves no partial files.
"""

import json
import logging
import sys
from dataclasses import dataclass
from dataclasses import field
from enum import StrEnum
from pathlib import Path
from typing import Any

import click
import pandas as pd
import typer

from app import __version__
from app.cli.run_config import RunConfig
from app.config import config
from app.engine.generators import check_assumptions
from app.engine.market import bs_price_delta
from app.engine.regime import simulate_jump_matrix
from app.engine.regime import validation_report
from app.engine.regime_estimation import Label
from app.engine.regime_estimation import RuleKind
from app.engine.regime_estimation import ThresholdRule
from app.engine.regime_estimation import estimate_means
from app.engine.regime_estimation import load_series
from app.engine.regime_estimation import segment
from app.engine.regime_estimation import write_estimates
from app.engine.regime_estimation import write_segments
from app.engine.xva import price_xva
from app.engine.xva import sweep as run_sweep
from app.engine.xva import write_gnuplot
from app.engine.xva import write_sweep_csv
from app.exceptions import ConfigurationError
from app.exceptions import XvaError
from app.logger import get_logger
from app.logger import set_verbosity
from app.logger import suppress_verbose_logging
from app.ui import components
from app.utils import atomic_write_text

suppress_verbose_logging()

logger = get_logger("xva.cli")


class RuleOption(StrEnum):
    SINGLE = "single"
    HYSTERESIS = "hysteresis"


class LabelOption(StrEnum):
    NORMAL = "normal"
    CRISIS = "crisis"


@dataclass
class CliState:
    config_path: Path | None = None
    overrides: list[str] = field(default_factory=list)
    seed: int | None = None
    out: Path | None = None

    def run_config(self) -> RunConfig:
        run_config = RunConfig.load(self.config_path, self.overrides, self.seed)
        if self.out is not None:
            run_config.set("io", "output_dir", str(self.out))
        return run_config


def version_callback(value: bool) -> None:
    if value:
        print(f"regime-xva {__version__}")
        raise typer.Exit()


app = typer.Typer(
    name="regime-xva",
    help="Regime-switching XVA pricing engine",
    add_completion=False,
)


def _state(ctx: typer.Context) -> CliState:
    return ctx.ensure_object(CliState)


def _echo_config(run_config: RunConfig, command: str, options: dict[str, Any]) -> None:
    components.render_effective_config(
        {"command": command, "seed": run_config.seed, **run_config.sections, "options": options}
    )


def _write_config(run_config: RunConfig, command: str, options: dict[str, Any]) -> Path:
    payload = {"command": command, "options": options, **run_config.as_dict()}
    return atomic_write_text(
        run_config.output_dir / f"{command}.config.json",
        json.dumps(payload, indent=2, sort_keys=True, default=str),
    )


@app.callback()
def main_callback(
    ctx: typer.Context,
    seed: int | None = typer.Option(None, "--seed", help="Root seed for every random stream"),
    config_path: Path | None = typer.Option(None, "--config", help="JSON run configuration"),
    out: Path | None = typer.Option(None, "--out", help="Output directory"),
    overrides: list[str] | None = typer.Option(None, "--set", help="Override as section.key=value"),
    threads: int | None = typer.Option(None, "--threads", min=1, help="Worker cap (results do not depend on it)"),
    verbose: bool = typer.Option(False, "--verbose", "-v", help="Detailed logging"),
    version: bool | None = typer.Option(
        None, "--version", callback=version_callback, is_eager=True, help="Show version"
    ),
) -> None:
    """Regime-switching XVA pricing engine."""
    if verbose:
        set_verbosity(logging.INFO)
        logging.getLogger("xva").setLevel(logging.INFO)
    if threads is not None:
        config.update_threads(threads)
    for warning in config.validate():
        logger.warning(warning)
    ctx.obj = CliState(config_path, list(overrides or []), seed, out)


@app.command("estimate-regimes")
def estimate_regimes(
    ctx: typer.Context,
    input_path: Path | None = typer.Option(None, "--input", "-i", help="date,value CSV (defaults to io.input)"),
    rule: RuleOption = typer.Option(RuleOption.HYSTERESIS, "--rule"),
    lower: float = typer.Option(48.0, "--lower", help="Lower (or single) threshold"),
    upper: float | None = typer.Option(80.0, "--upper", help="Upper threshold for hysteresis"),
    initial_label: LabelOption | None = typer.Option(None, "--initial-label"),
    scale: float = typer.Option(1.0, "--scale", help="Multiply values, e.g. 100 for percent files"),
) -> None:
    """Cut a stress series into regimes and estimate mean regime lengths."""
    run_config = _state(ctx).run_config()
    source = input_path or run_config.sections["io"]["input"]
    if source is None:
        raise ConfigurationError("no input series: pass --input or set io.input")

    if rule == RuleOption.SINGLE:
        threshold = ThresholdRule.single(lower)
    else:
        if upper is None:
            raise ConfigurationError("hysteresis rule needs --upper")
        threshold = ThresholdRule.hysteresis(
            lower, upper, Label(initial_label.value) if initial_label else None
        )

    options = {"input": str(source), "rule": RuleKind(rule.value).value, "lower": lower,
               "upper": upper, "initial_label": initial_label, "scale": scale}
    _echo_config(run_config, "estimate-regimes", options)

    series = load_series(source, scale=scale)
    segments = segment(series, threshold)
    result = estimate_means(segments)

    out_dir = run_config.output_dir
    write_segments(segments, out_dir / "segments.csv")
    write_estimates(result, out_dir / "estimates.csv")
    _write_config(run_config, "estimate-regimes", options)
    components.render_estimates(result)
    if series.dropped_rows:
        components.render_warning(f"dropped {series.dropped_rows} rows with missing values")
    components.render_success(f"wrote {out_dir / 'segments.csv'} and {out_dir / 'estimates.csv'}")


@app.command("simulate-regime")
def simulate_regime(
    ctx: typer.Context,
    horizon: float = typer.Option(10.0, "--horizon", help="Years to simulate"),
    paths: int = typer.Option(1, "--paths", min=1, help="Number of paths"),
    validate: bool = typer.Option(False, "--validate", help="Compare closed forms with Monte Carlo"),
    validation_paths: int = typer.Option(100_000, "--validation-paths", min=2),
) -> None:
    """Simulate regime paths and write their jump times."""
    run_config = _state(ctx).run_config()
    params = run_config.regime_params()
    options = {"horizon": horizon, "paths": paths, "validate": validate, "validation_paths": validation_paths}
    _echo_config(run_config, "simulate-regime", options)

    jumps = simulate_jump_matrix(params, horizon, paths, run_config.seed)
    records = []
    for path_id, row in enumerate(jumps):
        state = params.initial_state
        records.append({"path_id": path_id, "jump_index": 0, "jump_time": 0.0, "state": state})
        for k, t in enumerate(row[~pd.isna(row)], start=1):
            state = 1 - state
            records.append({"path_id": path_id, "jump_index": k, "jump_time": float(t), "state": state})
    frame = pd.DataFrame(records, columns=["path_id", "jump_index", "jump_time", "state"])

    out_dir = run_config.output_dir
    atomic_write_text(out_dir / "regime_paths.csv", frame.to_csv(index=False, float_format="%.10g"))
    if validate:
        rows = validation_report(params, n_paths=validation_paths, seed=run_config.seed)
        table = pd.DataFrame([row.__dict__ for row in rows])
        atomic_write_text(out_dir / "regime_validation.csv", table.to_csv(index=False, float_format="%.10g"))
        components.render_validation(rows)
    _write_config(run_config, "simulate-regime", options)
    components.render_success(f"wrote {len(frame)} jump records to {out_dir / 'regime_paths.csv'}")


@app.command("check-assumptions")
def check_assumptions_command(ctx: typer.Context) -> None:
    """Evaluate the no-arbitrage and well-posedness conditions; exit 1 if a necessary one fails."""
    run_config = _state(ctx).run_config()
    _echo_config(run_config, "check-assumptions", {})
    report = check_assumptions(run_config.market_params(), run_config.claim_spec().maturity)

    components.render_check_report(report)
    payload = json.dumps(report.as_dict(), indent=2)
    components.console.print_json(payload)
    atomic_write_text(run_config.output_dir / "check_report.json", payload)
    _write_config(run_config, "check-assumptions", {})
    if not report.necessary_passed:
        components.render_error("necessary conditions violated")
        raise typer.Exit(code=1)


@app.command("bs-price")
def bs_price(ctx: typer.Context) -> None:
    """Black-Scholes reference value and delta at t = 0."""
    run_config = _state(ctx).run_config()
    _echo_config(run_config, "bs-price", {})
    claim = run_config.claim_spec()
    reference = bs_price_delta(run_config.market_params(), claim, 0.0, claim.spot)

    result = {"v_hat0": reference.value, "delta0": reference.delta, "z_hat0": reference.z_hat}
    atomic_write_text(run_config.output_dir / "bs_price.json", json.dumps(result, indent=2))
    _write_config(run_config, "bs-price", {})
    components.console.print(f"V̂₀ = {reference.value:.6f}   Δ = {reference.delta:.6f}")


@app.command("price-xva")
def price_xva_command(ctx: typer.Context) -> None:
    """Price XVA⁺ and XVA⁻ for the configured claim and regime mode."""
    run_config = _state(ctx).run_config()
    _echo_config(run_config, "price-xva", {})
    report = price_xva(
        run_config.market_params(),
        run_config.claim_spec(),
        run_config.regime_spec(),
        run_config.solver_config(),
        threads=config.THREADS,
    )
    atomic_write_text(run_config.output_dir / "xva_report.json", report.to_json())
    _write_config(run_config, "price-xva", {})
    components.render_xva_report(report)


@app.command("sweep")
def sweep_command(
    ctx: typer.Context,
    plot: bool = typer.Option(False, "--plot", help="Also write a gnuplot script"),
) -> None:
    """Price XVA over the configured sweep grid."""
    run_config = _state(ctx).run_config()
    spec = run_config.sweep_spec()
    _echo_config(run_config, "sweep", {"plot": plot})

    frame = run_sweep(
        spec,
        run_config.market_params(),
        run_config.claim_spec(),
        run_config.regime_params(),
        run_config.solver_config(),
        threads=config.THREADS,
    )
    out_dir = run_config.output_dir
    csv_path = write_sweep_csv(frame, out_dir / "sweep.csv")
    if plot:
        write_gnuplot(out_dir / "sweep.gnuplot", csv_path.name, spec)
    _write_config(run_config, "sweep", {"plot": plot})
    components.render_frame(f"Sweep over {spec.axis.value}", frame)
    if (frame["status"] != "ok").any():
        components.render_warning("some sweep points failed; see the status column")


def run(argv: list[str] | None = None) -> int:
    """Run the CLI and return the process exit code: 0 success, 1 domain error, 2 usage error."""
    command = typer.main.get_command(app)
    try:
        result = command.main(args=list(sys.argv[1:] if argv is None else argv),
                              prog_name="regime-xva", standalone_mode=False)
    except click.UsageError as e:
        e.show()
        return 2
    except click.Abort:
        return 1
    except XvaError as e:
        logger.debug(f"command failed: {e}")
        components.render_error(str(e))
        return 1
    return result if isinstance(result, int) else 0


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
