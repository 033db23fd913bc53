"""Trace evaluation: error summaries, box-plot statistics, use-case verdicts.

Quantiles use linear interpolation between order statistics (the "type 7"
rule) evaluated in exact rational arithmetic, so summaries are reproducible
bit for bit on any platform. Statistics are taken over absolute values:
synchronicity requirements bound the magnitude of the error, not its sign.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass
from fractions import Fraction
from typing import Iterable, Sequence, Union

Number = Union[int, float, Fraction]


class MetricsError(ValueError):
    pass


@dataclass(frozen=True)
class ErrorSummary:
    n: int
    median: float
    max: float
    min: float
    q1: float
    q3: float
    p99: float

    def as_dict(self) -> dict:
        return asdict(self)


def _quantile_sorted(xs: Sequence[Number], p: Fraction) -> Fraction:
    # h = p * (n - 1); interpolate between floor(h) and ceil(h), exactly.
    n = len(xs)
    h = p * (n - 1)
    lo = int(h)
    frac = h - lo
    if frac == 0:
        return Fraction(xs[lo])
    return Fraction(xs[lo]) + frac * (Fraction(xs[lo + 1]) - Fraction(xs[lo]))


def summarize(series: Iterable[Number]) -> ErrorSummary:
    """Box-plot statistics over |x| for a signed error series."""
    values = sorted(abs(Fraction(x)) for x in series)
    if not values:
        raise MetricsError("cannot summarize an empty series")
    return ErrorSummary(
        n=len(values),
        median=float(_quantile_sorted(values, Fraction(1, 2))),
        max=float(values[-1]),
        min=float(values[0]),
        q1=float(_quantile_sorted(values, Fraction(1, 4))),
        q3=float(_quantile_sorted(values, Fraction(3, 4))),
        p99=float(_quantile_sorted(values, Fraction(99, 100))),
    )


# -- use-case classes -----------------------------------------------------------


@dataclass(frozen=True)
class UseCaseClass:
    id: str
    sync_limit_ns: int
    latency_range: str


CLASS_I = UseCaseClass("I", 1_000_000_000, "10-100 ms")     # remote control, monitoring
CLASS_II = UseCaseClass("II", 1_000_000, "1-10 ms")         # mobile robotics, process control
CLASS_III = UseCaseClass("III", 1_000, "<1 ms")             # closed-loop motion control
USE_CASE_CLASSES = {c.id: c for c in (CLASS_I, CLASS_II, CLASS_III)}


def classify(summary: ErrorSummary, klass: UseCaseClass, criterion: str = "max") -> bool:
    """Pass iff the chosen statistic meets the class synchronicity limit."""
    if criterion not in ("median", "max"):
        raise MetricsError(f"criterion must be 'median' or 'max', got {criterion!r}")
    stat = summary.median if criterion == "median" else summary.max
    return stat <= klass.sync_limit_ns


# -- report assembly --------------------------------------------------------------


def class_verdicts(summary: ErrorSummary) -> dict:
    return {
        cid: {
            "median": classify(summary, klass, "median"),
            "max": classify(summary, klass, "max"),
        }
        for cid, klass in USE_CASE_CLASSES.items()
    }


def build_report(
    scenario_name: str,
    method: str,
    seed: int,
    scenario_hash: str,
    series_by_node: dict[str, list[int]],
    extras: dict | None = None,
) -> dict:
    """Assemble the run report. Verdicts follow the class limits strictly;
    borderline results are flagged in ``notes`` rather than rounded up."""
    report: dict = {
        "scenario": scenario_name,
        "method": method,
        "seed": seed,
        "scenario_hash": scenario_hash,
        "nodes": {},
        "notes": [],
    }
    combined: list[int] = []
    for node in sorted(series_by_node):
        series = series_by_node[node]
        if not series:
            report["nodes"][node] = {"n": 0}
            continue
        summary = summarize(series)
        report["nodes"][node] = {
            "summary": summary.as_dict(),
            "classes": class_verdicts(summary),
        }
        combined.extend(series)
    if combined:
        summary = summarize(combined)
        report["combined"] = {
            "summary": summary.as_dict(),
            "classes": class_verdicts(summary),
        }
        if classify(summary, CLASS_II, "max") and not classify(summary, CLASS_III, "max"):
            report["notes"].append(
                "meets class II but not class III (limit 1 us) on max error"
            )
    if extras:
        report.update(extras)
    return report


def report_to_json(report: dict) -> str:
    return json.dumps(report, indent=2, sort_keys=True) + "\n"


def series_csv(series_by_node: dict[str, list[tuple[int, int]]]) -> str:
    """CSV of raw error samples: node, sample time (ns), signed error (ns)."""
    lines = ["node,t_ns,error_ns"]
    for node in sorted(series_by_node):
        for t, err in series_by_node[node]:
            lines.append(f"{node},{t},{err}")
    return "\n".join(lines) + "\n"


def text_hash(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()
