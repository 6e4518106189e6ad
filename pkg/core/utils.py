"""
Utility functions for formatting drift reports and claiming output files.
"""
from pathlib import Path
from typing import Iterable, List, Sequence, Union

from .errors import OutputExistsError


def claim_output(path: Union[str, Path]) -> Path:
    """Return ``path`` as a Path; outputs are write-once."""
    path = Path(path)
    if path.exists():
        raise OutputExistsError(f"refusing to overwrite {path}")
    return path


def format_float(value, digits: int = 4) -> str:
    """
    Format a metric for display.

    Args:
        value: Number or None

    Returns:
        Fixed-width string; "-" for missing values
    """
    if value is None:
        return "-"
    return f"{value:.{digits}f}"


def format_curve(curve: Sequence[float], max_points: int = 10) -> str:
    """
    Render a per-clip curve on one line, thinned to at most ``max_points``
    values (first and last always shown).
    """
    values = list(curve)
    if len(values) > max_points:
        step = (len(values) - 1) / (max_points - 1)
        values = [values[round(i * step)] for i in range(max_points)]
    return " ".join(format_float(v, 3) for v in values)


def format_verdict(verdict: str) -> str:
    """
    Format a dominance verdict for display.

    Args:
        verdict: Verdict string

    Returns:
        Human-readable verdict
    """
    verdict_map = {
        "holds": "✅ Dominance holds",
        "fails": "❌ Dominance fails",
    }
    return verdict_map.get(verdict, verdict)


def format_table(header: Sequence[str], rows: Iterable[Sequence[str]]) -> List[str]:
    """Left-aligned plain-text table."""
    rows = [list(map(str, row)) for row in rows]
    widths = [len(h) for h in header]
    for row in rows:
        widths = [max(w, len(cell)) for w, cell in zip(widths, row)]
    lines = ["  ".join(h.ljust(w) for h, w in zip(header, widths)).rstrip()]
    for row in rows:
        lines.append("  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip())
    return lines
