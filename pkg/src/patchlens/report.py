"""Metrics (confusion/mIoU, MSE/PSNR/SSIM) and deterministic CSV reports."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.signal import correlate2d

PSNR_CAP_DB = 99.0


@dataclass
class ConfusionMatrix:
    """Rows = ground truth, cols = prediction; ignore_id never accumulates."""

    counts: np.ndarray  # (C, C) int64
    ignore_id: int | None = None

    @classmethod
    def empty(cls, num_classes: int, ignore_id: int | None = None):
        return cls(counts=np.zeros((num_classes, num_classes), dtype=np.int64),
                   ignore_id=ignore_id)

    @property
    def num_classes(self) -> int:
        return self.counts.shape[0]

    def total(self) -> int:
        return int(self.counts.sum())

    def add(self, truth, pred) -> "ConfusionMatrix":
        t = np.asarray(truth).ravel().astype(np.int64)
        p = np.asarray(pred).ravel().astype(np.int64)
        if t.shape != p.shape:
            raise ValueError(f"shape mismatch: truth {t.shape}, pred {p.shape}")
        if self.ignore_id is not None:
            keep = t != self.ignore_id
            t, p = t[keep], p[keep]
        c = self.num_classes
        if t.size and (t.min() < 0 or t.max() >= c or p.min() < 0 or p.max() >= c):
            raise ValueError(f"class id out of range [0, {c})")
        self.counts += np.bincount(t * c + p, minlength=c * c).reshape(c, c)
        return self

    def merge(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        if other.num_classes != self.num_classes:
            raise ValueError("confusion matrices differ in class count")
        self.counts += other.counts
        return self


def accumulate(cm: ConfusionMatrix, truth, pred) -> ConfusionMatrix:
    """Add one batch of (truth, prediction) patch labels to cm."""
    labels = getattr(truth, "labels", truth)
    return cm.add(labels, pred)


def miou(cm: ConfusionMatrix):
    """Per-class IoU (NaN when truth and prediction never see the class)
    and their mean over the defined classes."""
    counts = cm.counts.astype(np.float64)
    tp = np.diag(counts)
    union = counts.sum(axis=0) + counts.sum(axis=1) - tp
    with np.errstate(invalid="ignore", divide="ignore"):
        iou = np.where(union > 0, tp / union, np.nan)
    defined = ~np.isnan(iou)
    mean = float(iou[defined].mean()) if defined.any() else float("nan")
    return iou, mean


def pixel_accuracy(cm: ConfusionMatrix) -> float:
    total = cm.total()
    if total == 0:
        raise ValueError("empty confusion matrix")
    return float(np.trace(cm.counts)) / total


def _norm_pair(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a / 255.0, b / 255.0


def mse(a, b) -> float:
    """Mean squared error over samples normalized to [0, 1]."""
    x, y = _norm_pair(a, b)
    return float(np.mean((x - y) ** 2))


def psnr(a, b) -> float:
    """10*log10(1/MSE) in dB, capped at 99 for identical images."""
    err = mse(a, b)
    if err == 0.0:
        return PSNR_CAP_DB
    return min(10.0 * np.log10(1.0 / err), PSNR_CAP_DB)


def _gaussian_kernel(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    half = (size - 1) / 2.0
    coords = np.arange(size) - half
    g = np.exp(-(coords ** 2) / (2.0 * sigma ** 2))
    kernel = np.outer(g, g)
    return kernel / kernel.sum()


def ssim(a, b) -> float:
    """Structural similarity, 11x11 Gaussian window sigma=1.5,
    C1=0.01^2, C2=0.03^2, valid windows, averaged over channels."""
    x, y = _norm_pair(a, b)
    if x.ndim == 2:
        x, y = x[..., None], y[..., None]
    if x.shape[0] < 11 or x.shape[1] < 11:
        raise ValueError("images must be at least 11x11 for SSIM")
    kernel = _gaussian_kernel()
    c1, c2 = 0.01 ** 2, 0.03 ** 2
    per_channel = []
    for ch in range(x.shape[2]):
        xa, yb = x[:, :, ch], y[:, :, ch]
        mu_x = correlate2d(xa, kernel, mode="valid")
        mu_y = correlate2d(yb, kernel, mode="valid")
        var_x = correlate2d(xa * xa, kernel, mode="valid") - mu_x * mu_x
        var_y = correlate2d(yb * yb, kernel, mode="valid") - mu_y * mu_y
        cov = correlate2d(xa * yb, kernel, mode="valid") - mu_x * mu_y
        ssim_map = ((2.0 * mu_x * mu_y + c1) * (2.0 * cov + c2)
                    / ((mu_x * mu_x + mu_y * mu_y + c1) * (var_x + var_y + c2)))
        per_channel.append(ssim_map.mean())
    return float(np.mean(per_channel))


@dataclass
class EvalReport:
    """Experiment kind + configuration echo + tabular rows."""

    kind: str
    config: dict
    columns: list[str]
    rows: list[tuple] = field(default_factory=list)


def _fmt(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return str(bool(value)).lower()
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return f"{float(value):.6g}"
    return str(value)


def emit_csv(report: EvalReport, path) -> None:
    """UTF-8 CSV: '#'-prefixed configuration echo, header, rows (6 sig digits)."""
    lines = [f"# experiment = {report.kind}"]
    for key in sorted(report.config):
        lines.append(f"# {key} = {_fmt(report.config[key])}")
    lines.append(",".join(report.columns))
    for row in report.rows:
        if len(row) != len(report.columns):
            raise ValueError(f"row width {len(row)} != header width "
                             f"{len(report.columns)}")
        lines.append(",".join(_fmt(v) for v in row))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def miou_report(kind: str, config: dict, cm: ConfusionMatrix,
                class_names=None) -> EvalReport:
    """Standard mIoU table: one row per class plus a final mean row."""
    per_class, mean = miou(cm)
    names = class_names or [f"class_{i}" for i in range(cm.num_classes)]
    rows = []
    for cid, iou in enumerate(per_class):
        if np.isnan(iou):
            continue  # class absent from both truth and prediction
        rows.append((cid, names[cid], float(iou)))
    rows.append(("mean", "mean", mean))
    config = dict(config)
    config["pixel_accuracy"] = pixel_accuracy(cm)
    return EvalReport(kind=kind, config=config,
                      columns=["class_id", "class_name", "iou"], rows=rows)
