"""Saliency metrics (F-beta, MAE), architectural efficiency and lineage CSV I/O."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeError

SWEEP_LEVELS = 256
LINEAGE_COLUMNS = ("generation", "num_synapses", "efficiency_x", "f_beta", "mae", "train_loss", "wall_time_s")


@dataclass(frozen=True)
class MetricsConfig:
    """``threshold`` is ``"sweep"`` (max F over 256 uniform thresholds) or a fixed float."""

    beta_sq: float = 0.3
    threshold: str | float = "sweep"

    def __post_init__(self):
        if not self.beta_sq > 0:
            raise ValueError("beta-squared must be > 0")
        if self.threshold != "sweep":
            t = float(self.threshold)
            if not 0.0 <= t <= 1.0:
                raise ValueError(f"fixed threshold must lie in [0, 1], got {t}")
            object.__setattr__(self, "threshold", t)

    @property
    def mode(self) -> str:
        return "max-over-sweep" if self.threshold == "sweep" else f"fixed({self.threshold:g})"


@dataclass
class EvalReport:
    f_beta: float
    mae: float
    per_image_f_beta: list[float] = field(default_factory=list)
    per_image_mae: list[float] = field(default_factory=list)
    threshold: str = "max-over-sweep"

    def to_dict(self) -> dict:
        return {
            "f_beta": self.f_beta,
            "mae": self.mae,
            "threshold": self.threshold,
            "per_image_f_beta": self.per_image_f_beta,
            "per_image_mae": self.per_image_mae,
        }


def sweep_thresholds() -> np.ndarray:
    return np.linspace(0.0, 1.0, SWEEP_LEVELS)


def _check_pair(pred, gt):
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt)
    if pred.shape != gt.shape:
        raise ShapeError(f"prediction shape {pred.shape} != ground truth shape {gt.shape}")
    return pred, gt


def f_from_counts(tp, pp, gp, beta_sq):
    """F-beta from true positives, predicted positives and ground-truth positives."""
    tp = np.asarray(tp, dtype=np.float64)
    precision = np.divide(tp, pp, out=np.zeros_like(tp), where=np.asarray(pp) > 0)
    recall = tp / gp if gp > 0 else np.zeros_like(tp)
    return f_from_pr(precision, recall, beta_sq)


def f_from_pr(precision, recall, beta_sq=0.3):
    precision = np.asarray(precision, dtype=np.float64)
    recall = np.asarray(recall, dtype=np.float64)
    num = (1 + beta_sq) * precision * recall
    den = beta_sq * precision + recall
    f = np.divide(num, den, out=np.zeros(np.broadcast(num, den).shape), where=den > 0)
    return float(f) if f.ndim == 0 else f


def f_beta(pred, gt, cfg: MetricsConfig = MetricsConfig()) -> float:
    pred, gt = _check_pair(pred, gt)
    fg = gt.astype(bool).ravel()
    p = pred.ravel()
    gp = int(fg.sum())
    if cfg.threshold != "sweep":
        b = p >= cfg.threshold
        return float(f_from_counts(int((b & fg).sum()), int(b.sum()), gp, cfg.beta_sq))
    thr = sweep_thresholds()
    # level[k] = largest sweep index whose threshold is <= the pixel value
    level = np.searchsorted(thr, p, side="right") - 1
    keep = level >= 0
    level = level[keep]
    pp = np.bincount(level, minlength=SWEEP_LEVELS)[::-1].cumsum()[::-1]
    tp = np.bincount(level, weights=fg[keep], minlength=SWEEP_LEVELS)[::-1].cumsum()[::-1]
    return float(np.max(f_from_counts(tp, pp, gp, cfg.beta_sq)))


def mae(pred, gt) -> float:
    pred, gt = _check_pair(pred, gt)
    return float(np.mean(np.abs(pred - gt.astype(np.float64))))


def evaluate(predictions, ground_truths, cfg: MetricsConfig = MetricsConfig()) -> EvalReport:
    """Per-image metrics averaged over the set."""
    fs = [f_beta(p, g, cfg) for p, g in zip(predictions, ground_truths)]
    ms = [mae(p, g) for p, g in zip(predictions, ground_truths)]
    if not fs:
        raise ValueError("cannot evaluate an empty set")
    return EvalReport(float(np.mean(fs)), float(np.mean(ms)), fs, ms, cfg.mode)


def architectural_efficiency(ancestor: int, descendant: int, decimals: int | None = 2) -> float:
    """ancestor / descendant synapse count, truncated to ``decimals`` places.

    Truncation, not rounding: 63767232 / 1333010 = 47.837... reports as
    47.83X. ``decimals=None`` gives the exact ratio.
    """
    ancestor, descendant = int(ancestor), int(descendant)
    if descendant < 1:
        raise ValueError("descendant synapse count must be >= 1")
    if ancestor < 0:
        raise ValueError("ancestor synapse count must be >= 0")
    if decimals is None:
        return ancestor / descendant
    scale = 10**decimals
    return (ancestor * scale // descendant) / scale


# -- lineage.csv ----------------------------------------------------------------


def format_lineage_row(row) -> list[str]:
    return [
        str(int(row["generation"])),
        str(int(row["num_synapses"])),
        f"{row['efficiency_x']:.2f}",
        f"{row['f_beta']:.8f}",
        f"{row['mae']:.8f}",
        f"{row['train_loss']:.8f}",
        f"{row['wall_time_s']:.3f}",
    ]


def write_lineage_csv(path, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(LINEAGE_COLUMNS)
        for row in rows:
            w.writerow(format_lineage_row(row))


def read_lineage_csv(path):
    """Parse lineage.csv; returns (rows, unknown_columns). Raises ValueError if malformed."""
    with open(path, newline="", encoding="utf-8") as fh:
        text = fh.read()
    if not text.strip():
        raise ValueError(f"{path}: empty lineage file")
    reader = csv.DictReader(io.StringIO(text))
    header = reader.fieldnames or []
    missing = [c for c in LINEAGE_COLUMNS if c not in header]
    if missing:
        raise ValueError(f"{path}: missing columns {', '.join(missing)}")
    extra = [c for c in header if c not in LINEAGE_COLUMNS]
    rows = []
    for lineno, rec in enumerate(reader, start=2):
        try:
            row = {
                "generation": int(rec["generation"]),
                "num_synapses": int(rec["num_synapses"]),
            }
            for c in LINEAGE_COLUMNS[2:]:
                row[c] = float(rec[c])
        except (TypeError, ValueError) as exc:
            raise ValueError(f"{path}:{lineno}: malformed row ({exc})") from None
        rows.append(row)
    return rows, extra
