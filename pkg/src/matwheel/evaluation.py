"""Test metrics, cross-run aggregation and report rendering."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from itertools import groupby

import numpy as np

from .arms import ARM_LABELS, SCENARIO_ARMS, ArmSpec, Scenario
from .exceptions import EmptyInput, LengthMismatch

CSV_HEADER = ("dataset", "scenario", "arm", "mean", "std", "n")


def mae(predictions, truths) -> float:
    """Mean absolute error."""
    p = np.asarray(predictions, dtype=np.float64).reshape(-1)
    t = np.asarray(truths, dtype=np.float64).reshape(-1)
    if p.shape != t.shape:
        raise LengthMismatch(f"{p.shape[0]} predictions vs {t.shape[0]} truths")
    if p.shape[0] == 0:
        raise EmptyInput("mae of empty input")
    return float(np.mean(np.abs(p - t)))


@dataclass(frozen=True)
class AggregateCell:
    arm: ArmSpec
    mean: float
    std: float
    n: int
    dataset: str = ""
    scenario: str = ""
    round: int = 1


def mean_std(values) -> tuple[float, float]:
    """Mean and sample standard deviation (divisor n - 1; 0 for one value)."""
    x = np.asarray(values, dtype=np.float64)
    if x.shape[0] == 0:
        raise EmptyInput("no values to aggregate")
    std = float(np.std(x, ddof=1)) if x.shape[0] > 1 else 0.0
    return float(np.mean(x)), std


def aggregate(results, dataset: str = "") -> list[AggregateCell]:
    """Collapse per-run results into one cell per (round, arm).

    Values are sorted before reduction so the output does not depend on the
    input order.
    """
    results = list(results)
    if not results:
        raise EmptyInput("no results to aggregate")
    order = {arm: i for i, arm in enumerate(ArmSpec)}

    def key(r):
        return (r.round, order[r.arm])

    cells = []
    for (rnd, _), group in groupby(sorted(results, key=key), key=key):
        group = list(group)
        mean, std = mean_std(sorted(r.test_metric for r in group))
        arm = group[0].arm
        cells.append(AggregateCell(arm, mean, std, len(group), dataset, arm.scenario.value, rnd))
    return cells


def format_cell(mean: float, std: float, digits: int = 2) -> str:
    """Render ``mean (std)``, the shape of a results-table entry."""
    return f"{mean:.{digits}f} ({std:.{digits}f})"


def render_csv(cells) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for c in cells:
        scenario = c.scenario if c.round == 1 else f"{c.scenario}@round{c.round}"
        writer.writerow([c.dataset, scenario, c.arm.value, f"{c.mean:.6f}", f"{c.std:.6f}", c.n])
    return buf.getvalue()


def parse_csv(text: str) -> list[AggregateCell]:
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or tuple(rows[0]) != CSV_HEADER:
        raise ValueError("not a report CSV")
    cells = []
    for dataset, scenario, arm, mean, std, n in rows[1:]:
        scenario, _, rnd = scenario.partition("@round")
        cells.append(AggregateCell(ArmSpec(arm), float(mean), float(std), int(n), dataset, scenario,
                                   int(rnd) if rnd else 1))
    return cells


def render_markdown(cells) -> str:
    cells = list(cells)
    lines = []
    titles = {Scenario.FULL: "Fully-supervised", Scenario.SEMI: "Semi-supervised"}
    rounds = sorted({c.round for c in cells})
    for scenario, arms in SCENARIO_ARMS.items():
        block = [c for c in cells if c.arm in arms]
        if not block:
            continue
        for rnd in rounds:
            rows = [c for c in block if c.round == rnd]
            if not rows:
                continue
            title = titles[scenario] + (f" (round {rnd})" if len(rounds) > 1 else "")
            lines += [f"### {title}", ""]
            lines.append("| Dataset | " + " | ".join(ARM_LABELS[a] for a in arms) + " |")
            lines.append("|---|" + "---:|" * len(arms))
            datasets = sorted({c.dataset for c in rows})
            for ds in datasets:
                by_arm = {c.arm: c for c in rows if c.dataset == ds}
                entries = [format_cell(by_arm[a].mean, by_arm[a].std) if a in by_arm else "-" for a in arms]
                lines.append(f"| {ds} | " + " | ".join(entries) + " |")
            lines.append("")
    n_values = sorted({c.n for c in cells})
    lines.append(
        "Entries are test MAE in dataset units, mean (sample standard deviation, divisor n-1) "
        f"over n = {', '.join(str(n) for n in n_values)} runs."
    )
    return "\n".join(lines) + "\n"


def emit_report(cells, format: str, path) -> None:
    """Write cells as ``csv`` or ``markdown`` to ``path``."""
    cells = list(cells)
    if not cells:
        raise EmptyInput("no cells to report")
    if format == "csv":
        text = render_csv(cells)
    elif format == "markdown":
        text = render_markdown(cells)
    else:
        raise ValueError(f"unknown report format {format!r}")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)
