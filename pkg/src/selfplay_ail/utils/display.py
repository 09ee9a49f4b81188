# Copyright (c) Microsoft. All rights reserved.

import json
from typing import Any

from rich.align import Align
from rich.console import Console
from rich.panel import Panel
from rich.syntax import Syntax
from rich.table import Table

from selfplay_ail.experiments.compare import DynamicsComparison
from selfplay_ail.experiments.verify import ClaimResult
from selfplay_ail.utils.constants import STATUS_STYLES

# Initialize Rich console
console = Console()


def display_header(title: str, subtitle: str) -> None:
    """Display a centered command header."""
    console.print()
    console.print(
        Panel(
            Align.center(f"[bold cyan]{title}[/bold cyan]\n[dim]{subtitle}[/dim]"),
            border_style="cyan",
            expand=True,
            padding=(1, 2),
        )
    )
    console.print()


def display_run_summary(summary: dict[str, Any]) -> None:
    """
    Display the final metrics of every run in a batch.

    Parameters
    ----------
    summary : dict[str, Any]
        Summary returned by :func:`selfplay_ail.experiments.runner.run`.
    """
    table = Table(title="Runs", header_style="bold cyan")
    table.add_column("Run", style="bold")
    for column in ("K", "J", "Duality gap", "KL", "TV", "max |Δr|"):
        table.add_column(column, justify="right")
    for run in summary["runs"]:
        table.add_row(
            run["stem"],
            str(run["iterations"]),
            f"{run['J']:.4g}",
            f"{run['dual_gap']:.4g}",
            f"{run['kl_expert']:.4g}",
            f"{run['tv_expert']:.4g}",
            f"{run['max_abs_dr']:.4g}",
        )
    console.print(table)

    extras = {key: summary[key] for key in ("rate_exponents", "final_tv_by_c") if key in summary}
    if extras:
        console.print()
        console.print(
            Panel(
                Syntax(json.dumps(extras, indent=2), "json", theme="monokai", line_numbers=False),
                title="[bold]Sweep results[/bold]",
                border_style="dim",
                padding=(1, 2),
            )
        )
    console.print()
    console.print(f"[green]✓[/green] {len(summary['runs'])} run(s) in {summary['wall_clock_seconds']:.1f}s")


def display_claims(results: list[ClaimResult]) -> None:
    """Display one row per verification claim, coloured by outcome."""
    table = Table(title="Verification", header_style="bold cyan", show_lines=False)
    table.add_column("#", justify="right")
    table.add_column("Claim")
    table.add_column("Status", justify="center")
    table.add_column("Detail", style="dim")
    table.add_column("Time", justify="right")
    for result in results:
        status = f"[{STATUS_STYLES[result.passed]}]{'PASS' if result.passed else 'FAIL'}[/]"
        table.add_row(str(result.number), result.title, status, result.detail, f"{result.seconds:.1f}s")
    console.print(table)

    failed = [r.number for r in results if not r.passed]
    console.print()
    if failed:
        console.print(f"[bold red]✗ {len(failed)} claim(s) failed:[/bold red] {', '.join(map(str, failed))}")
    else:
        console.print(f"[bold green]✓ All {len(results)} claims passed[/bold green]")


def display_comparison(comparison: DynamicsComparison) -> None:
    """Display the reward-magnitude and gradient-range comparison of two artifacts."""
    table = Table(title="SPIF vs SPIN", header_style="bold cyan")
    table.add_column("Quantity")
    table.add_column("Value", justify="right")
    bounded = f"[{STATUS_STYLES[comparison.spif_bounded]}]{comparison.spif_bounded}[/]"
    table.add_row("SPIF max |Δr|", f"{comparison.spif_max_abs_dr:.4g}")
    table.add_row("SPIN max |Δr|", f"{comparison.spin_max_abs_dr:.4g}")
    table.add_row("Bound 1/c + slack", f"{comparison.bound:.4g}")
    table.add_row("SPIF bounded", bounded)
    table.add_row("max |Δr| ratio", f"{comparison.max_abs_dr_ratio:.4g}")
    table.add_row("Gradient range ratio", f"{comparison.overall_grad_range_ratio:.4g}")
    for iteration, ratio in comparison.grad_range_ratios:
        table.add_row(f"  iteration {iteration}", f"{ratio:.4g}")
    console.print(table)
