"""Rich renderers for check reports, prices, estimates and sweep tables."""

from typing import Any

import pandas as pd
from rich import box
from rich.console import Console
from rich.panel import Panel
from rich.table import Table

from app.config import config
from app.engine.generators import CheckReport
from app.engine.generators import Severity
from app.engine.regime import ValidationRow
from app.engine.regime_estimation import EstimationResult
from app.engine.xva import XVAReport
from app.ui.theme import Themes

console = Console()

_theme = Themes.get(config.THEME)


def create_table(title: str, columns: list[str]) -> Table:
    """Create a standardized table with theme support."""
    table = Table(
        title=f"[{_theme.accent} bold]{title}[/]",
        box=box.ROUNDED,
        header_style=f"{_theme.primary} bold",
        border_style=_theme.dim,
        show_header=True,
    )
    for col in columns:
        table.add_column(col)
    return table


def render_success(message: str) -> None:
    console.print(f"[{_theme.success}]✓ {message}[/]")


def render_error(message: str) -> None:
    console.print(f"[{_theme.error}]✗ {message}[/]")


def render_warning(message: str) -> None:
    console.print(f"[{_theme.warning}]⚠ {message}[/]")


def _fmt(value: Any) -> str:
    if value is None:
        return "-"
    if isinstance(value, float):
        return f"{value:.6g}"
    return str(value)


def render_check_report(report: CheckReport) -> None:
    table = create_table("Market conditions", ["item", "condition", "lhs", "rhs", "kind", "result"])
    for item in report.items:
        if item.passed:
            result = f"[{_theme.success}]pass[/]"
        elif item.boundary:
            result = f"[{_theme.warning}]tie[/]"
        elif item.severity == Severity.NECESSARY:
            result = f"[{_theme.error}]FAIL[/]"
        else:
            result = f"[{_theme.warning}]warn[/]"
        table.add_row(
            item.condition, item.description, _fmt(item.lhs), _fmt(item.rhs), item.severity.value, result
        )
    console.print(table)
    for note in report.notes:
        console.print(f"[{_theme.dim}]{note}[/]")


def render_xva_report(report: XVAReport) -> None:
    body = (
        f"[{_theme.text}]V̂₀[/]     {report.v_hat0:.6f}   (delta {report.delta0:.4f})\n"
        f"[{_theme.text}]XVA⁺[/]    {report.xva_plus:.6f} ± {report.se_plus:.2e}\n"
        f"[{_theme.text}]XVA⁻[/]    {report.xva_minus:.6f} ± {report.se_minus:.2e}\n"
        f"[{_theme.dim}]seller {report.seller_price:.6f}, buyer {report.buyer_price:.6f}[/]"
    )
    console.print(Panel(
        body,
        title=f"[{_theme.primary} bold]XVA ({report.regime_mode.value})[/]",
        border_style=_theme.panel_border,
        box=box.ROUNDED,
    ))
    for warning in report.warnings:
        render_warning(warning)


def render_estimates(result: EstimationResult) -> None:
    table = create_table("Regime estimates", ["regime", "segments", "mean days", "mean years"])
    table.add_row("normal", str(result.count_normal), _fmt(result.mean_normal_days), _fmt(result.mean_normal_years))
    table.add_row("crisis", str(result.count_crisis), _fmt(result.mean_crisis_days), _fmt(result.mean_crisis_years))
    console.print(table)


def render_validation(rows: list[ValidationRow]) -> None:
    table = create_table(
        "Regime validation", ["quantity", "t", "closed form", "monte carlo", "s.e.", "consistent"]
    )
    for row in rows:
        mark = f"[{_theme.success}]yes[/]" if row.consistent else f"[{_theme.warning}]no[/]"
        table.add_row(
            row.quantity, _fmt(row.t), _fmt(row.closed_form), _fmt(row.monte_carlo), _fmt(row.standard_error), mark
        )
    console.print(table)


def render_frame(title: str, frame: pd.DataFrame) -> None:
    table = create_table(title, [str(c) for c in frame.columns])
    for record in frame.itertuples(index=False):
        table.add_row(*(_fmt(v) for v in record))
    console.print(table)


def render_effective_config(settings: dict[str, Any]) -> None:
    lines = []
    for section, values in settings.items():
        if isinstance(values, dict):
            inner = ", ".join(f"{k}={_fmt(v)}" for k, v in values.items())
            lines.append(f"[{_theme.primary}]{section}[/]: {inner}")
        else:
            lines.append(f"[{_theme.primary}]{section}[/]: {_fmt(values)}")
    console.print(Panel(
        "\n".join(lines),
        title=f"[{_theme.dim}]effective config[/]",
        border_style=_theme.dim,
        box=box.SIMPLE,
    ))
