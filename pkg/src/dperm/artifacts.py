"""
Output artifacts: JSON documents with a metadata block, and text tables.

Artifacts carry no timestamps; rerunning a command with the same resolved
config writes byte-identical files.
"""

from __future__ import annotations

from collections.abc import Mapping, Sequence
import json
import logging
from pathlib import Path
from typing import Any

from dperm import __version__
from dperm.config import RunConfig
from dperm.core import IntervalSet, PrivacyBudget, PrivateFit
from dperm.errors import ConfigError
from dperm.evaluation import EvalReport, SweepPoint, sweep_frame

logger = logging.getLogger(__name__)


def metadata(cfg: RunConfig, **extra: Any) -> dict[str, Any]:
    """Everything needed to reproduce the run."""
    return {
        "tool": "dperm",
        "version": __version__,
        "seed": cfg.seed,
        "workers": cfg.workers,
        "config": cfg.to_dict(),
        **extra,
    }


def write_json(path: str | Path, payload: Mapping[str, Any]) -> None:
    text = json.dumps(payload, indent=2, ensure_ascii=False, allow_nan=False)
    Path(path).write_text(text + "\n", encoding="utf-8")
    logger.info("Wrote %s", path)


def read_json(path: str | Path) -> dict[str, Any]:
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"cannot read {path}: {e}", field="fit") from e


# ============== PAYLOADS ==============


def fit_document(fit: PrivateFit, cfg: RunConfig, cost: PrivacyBudget | None = None) -> dict[str, Any]:
    doc = fit.to_dict()
    doc["seed"] = cfg.seed
    extra = {"privacy_cost": str(cost)} if cost is not None else {}
    doc["metadata"] = metadata(cfg, **extra)
    return doc


def read_fit(path: str | Path) -> PrivateFit:
    return PrivateFit.from_dict(read_json(path))


def interval_document(intervals: IntervalSet, cfg: RunConfig, **extra: Any) -> dict[str, Any]:
    doc = intervals.to_dict()
    doc["metadata"] = metadata(cfg, **{**intervals.metadata, **extra})
    return doc


def report_document(report: EvalReport, cfg: RunConfig, **extra: Any) -> dict[str, Any]:
    doc = report.to_dict()
    doc["metadata"] = metadata(cfg, **extra)
    return doc


# ============== TEXT ==============


def report_table(report: EvalReport) -> str:
    """Aligned per-coordinate table followed by the overall row."""
    header = f"{'coord':>6} {'coverage':>9} {'ci_mean':>12} {'ci_sd':>12} {'vi_length':>12}"
    lines = [header, "-" * len(header)]
    for j, stats in enumerate(report.per_coordinate):
        lines.append(
            f"{j:>6} {stats.coverage:>9.4f} {stats.mean_ci_length:>12.6g} "
            f"{stats.sd_ci_length:>12.6g} {stats.vi_length:>12.6g}"
        )
    lines.append("-" * len(header))
    lines.append(
        f"{'all':>6} {report.coverage:>9.4f} {report.mean_ci_length:>12.6g} "
        f"{report.sd_ci_length:>12.6g} {report.mean_vi_length:>12.6g}"
    )
    if report.failures:
        lines.append(f"{report.failures} replicate(s) failed")
    return "\n".join(lines)


def write_plot_csv(points: Sequence[SweepPoint], path: str | Path) -> None:
    """Plot data, one row per sweep point."""
    sweep_frame(points).to_csv(path, index=False, float_format="%.17g", lineterminator="\n")
    logger.info("Wrote plot data to %s", path)
