"""IoU / Pd / Fa metrics and the per-scenario pattern-drift report."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
import torch
import torch.nn.functional as F
from scipy import ndimage
from scipy.spatial.distance import pdist, squareform

from .data import Sample

EIGHT_CONNECTED = np.ones((3, 3), dtype=bool)
METRIC_COLUMNS = ("split", "scenario", "IoU", "Pd", "Fa", "n_images", "n_targets")


def binarize(prob: np.ndarray, threshold: float = 0.5) -> np.ndarray:
    return np.asarray(prob) > threshold


def iou_counts(pred: np.ndarray, gt: np.ndarray) -> tuple[int, int, int]:
    """(TP, FP, FN) pixel counts."""
    pred, gt = np.asarray(pred, bool), np.asarray(gt, bool)
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {gt.shape}")
    tp = int(np.count_nonzero(pred & gt))
    return tp, int(np.count_nonzero(pred)) - tp, int(np.count_nonzero(gt)) - tp


def iou(preds: Sequence[np.ndarray], gts: Sequence[np.ndarray]) -> float:
    """Dataset-level IoU = sum TP / sum (TP + FP + FN); 1.0 when both are empty everywhere."""
    if len(preds) != len(gts):
        raise ValueError("prediction and ground-truth lists differ in length")
    tp = fp = fn = 0
    for p, g in zip(preds, gts):
        a, b, c = iou_counts(p, g)
        tp, fp, fn = tp + a, fp + b, fn + c
    union = tp + fp + fn
    return 1.0 if union == 0 else tp / union


def components(mask: np.ndarray) -> tuple[list[tuple[float, float]], list[int]]:
    """8-connected components in raster order of first pixel: (centroids, areas)."""
    labels, n = ndimage.label(np.asarray(mask, bool), structure=EIGHT_CONNECTED)
    if n == 0:
        return [], []
    ys, xs = np.nonzero(labels)
    lab = labels[ys, xs]
    areas = np.bincount(lab, minlength=n + 1)[1:]
    sy = np.bincount(lab, weights=ys, minlength=n + 1)[1:]
    sx = np.bincount(lab, weights=xs, minlength=n + 1)[1:]
    cents = [(float(sy[i]) / int(areas[i]), float(sx[i]) / int(areas[i])) for i in range(n)]
    return cents, [int(a) for a in areas]


def pd_fa(pred: np.ndarray, gt: np.ndarray, match_radius: float = 3.0) -> tuple[int, int, int]:
    """(detected targets, total targets, false-alarm pixels) for one image.

    GT and predicted components are matched greedily, nearest centroid pair
    first (ties by GT index then predicted index), within ``match_radius``.
    Unmatched predicted components count all their pixels as false alarms.
    """
    pred, gt = np.asarray(pred, bool), np.asarray(gt, bool)
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {gt.shape}")
    g_cent, _ = components(gt)
    p_cent, p_area = components(pred)
    r2 = match_radius * match_radius
    pairs = []
    for gi, (gy, gx) in enumerate(g_cent):
        for pi, (py, px) in enumerate(p_cent):
            dy, dx = gy - py, gx - px
            d2 = dy * dy + dx * dx
            if d2 <= r2:
                pairs.append((d2, gi, pi))
    pairs.sort()
    g_used, p_used = set(), set()
    for _, gi, pi in pairs:
        if gi not in g_used and pi not in p_used:
            g_used.add(gi)
            p_used.add(pi)
    false_px = sum(a for pi, a in enumerate(p_area) if pi not in p_used)
    return len(g_used), len(g_cent), false_px


@dataclass
class MetricReport:
    iou: float
    pd: float
    fa: float
    n_images: int
    n_targets: int
    per_image: list[dict] = field(default_factory=list)


def compute_metrics(
    preds: Sequence[np.ndarray],
    gts: Sequence[np.ndarray],
    match_radius: float = 3.0,
    ids: Sequence[str] | None = None,
) -> MetricReport:
    """Split-level metrics; Pd over images with targets only, Fa over all pixels."""
    det = tgt = false_px = total_px = 0
    per_image = []
    for i, (p, g) in enumerate(zip(preds, gts)):
        d, t, f = pd_fa(p, g, match_radius)
        tp, fp, fn = iou_counts(p, g)
        det, tgt, false_px, total_px = det + d, tgt + t, false_px + f, total_px + g.size
        per_image.append({"id": ids[i] if ids else str(i), "tp": tp, "fp": fp, "fn": fn,
                          "detected": d, "targets": t, "false_pixels": f, "pixels": int(g.size)})
    pd = 1.0 if tgt == 0 else det / tgt
    fa = 0.0 if total_px == 0 else false_px / total_px
    return MetricReport(iou(preds, gts), pd, fa, len(gts), tgt, per_image)


@torch.no_grad()
def predict_probabilities(model, images: Sequence[np.ndarray], batch_size: int = 8) -> list[np.ndarray]:
    """Full-size inference; images of the same shape are batched together."""
    from .training import to_tensor

    model.eval()
    dtype = next(model.parameters()).dtype
    out: list[np.ndarray | None] = [None] * len(images)
    by_shape: dict[tuple, list[int]] = {}
    for i, im in enumerate(images):
        by_shape.setdefault(np.asarray(im).shape, []).append(i)
    for idx in by_shape.values():
        for s in range(0, len(idx), batch_size):
            chunk = idx[s : s + batch_size]
            x = to_tensor([images[i] for i in chunk], dtype=dtype)
            h, w = x.shape[-2:]
            # pad up to the token grid stride (a multiple of 16) and crop back
            step = getattr(getattr(model, "cfg", None), "patch_div", 16)
            ph, pw = -h % step, -w % step
            if ph or pw:
                x = F.pad(x, (0, pw, 0, ph), mode="replicate")
            probs = torch.sigmoid(model(x))[..., :h, :w]
            for i, p in zip(chunk, probs):
                out[i] = p[0].double().numpy()
    return out  # type: ignore[return-value]


def evaluate_model(model, samples: Sequence[Sample], threshold: float = 0.5, match_radius: float = 3.0) -> MetricReport:
    probs = predict_probabilities(model, [s.image for s in samples])
    preds = [binarize(p, threshold) for p in probs]
    return compute_metrics(preds, [s.mask.astype(bool) for s in samples], match_radius, [s.id for s in samples])


def write_metric_csv(path: str | Path, rows: Sequence[Mapping]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=METRIC_COLUMNS)
        writer.writeheader()
        for r in rows:
            writer.writerow({k: _cell(r[k]) for k in METRIC_COLUMNS})


def _cell(v):
    return repr(float(v)) if isinstance(v, float) else v


def metric_row(split: str, scenario: str, rep: MetricReport) -> dict:
    return {"split": split, "scenario": scenario, "IoU": rep.iou, "Pd": rep.pd, "Fa": rep.fa,
            "n_images": rep.n_images, "n_targets": rep.n_targets}


# ---------------------------------------------------------------------------
# pattern drift


@dataclass
class DriftReport:
    rows: list[dict]
    separation_ratio: float
    degenerate: bool
    intra: float
    inter: float


@torch.no_grad()
def extract_parameters(model, samples: Sequence[Sample], batch_size: int = 8) -> np.ndarray:
    """Flattened generated parameter matrix plus norm vector, one row per image."""
    from .training import to_tensor

    model.eval()
    dtype = next(model.parameters()).dtype
    rows = []
    for s in range(0, len(samples), batch_size):
        x = to_tensor([smp.image for smp in samples[s : s + batch_size]], dtype=dtype)
        params, norm = model.generated_parameters(x)
        rows.append(torch.cat([params.flatten(1), norm.flatten(1)], dim=1).double().numpy())
    return np.concatenate(rows)


def separation(vectors: np.ndarray, labels: Sequence[str]) -> tuple[float, float, dict[str, tuple[float, float]]]:
    """Mean intra- and inter-scenario Euclidean distances, overall and per label."""
    labels = np.asarray(labels)
    d = squareform(pdist(vectors, metric="euclidean"))
    same = labels[:, None] == labels[None, :]
    off_diag = ~np.eye(len(labels), dtype=bool)
    intra_mask, inter_mask = same & off_diag, ~same
    intra = float(d[intra_mask].mean()) if intra_mask.any() else math.nan
    inter = float(d[inter_mask].mean()) if inter_mask.any() else math.nan
    per = {}
    for lab in np.unique(labels):
        row = labels == lab
        im = intra_mask & row[:, None]
        xm = inter_mask & row[:, None]
        per[str(lab)] = (float(d[im].mean()) if im.any() else math.nan, float(d[xm].mean()) if xm.any() else math.nan)
    return intra, inter, per


def drift_report(
    model,
    datasets: Mapping[str, Sequence[Sample]],
    threshold: float = 0.5,
    match_radius: float = 3.0,
) -> DriftReport:
    """Per-scenario metrics plus inter/intra-scenario distance ratio of generated parameters.

    When every distance is zero (a constant mapping) the ratio is NaN and is
    reported as 1.0 with ``degenerate`` set.
    """
    if len(datasets) < 2:
        raise ValueError("drift report needs at least two scenario labels")
    rows, vecs, labels, reports = [], [], [], []
    for label, samples in datasets.items():
        if not samples:
            raise ValueError(f"scenario {label!r} has no samples")
        rep = evaluate_model(model, samples, threshold, match_radius)
        reports.append(rep)
        rows.append({"scenario": label, "n_images": rep.n_images, "n_targets": rep.n_targets,
                     "IoU": rep.iou, "Pd": rep.pd, "Fa": rep.fa})
        vecs.append(extract_parameters(model, samples))
        labels += [label] * len(samples)
    intra, inter, per = separation(np.concatenate(vecs), labels)
    for row in rows:
        row["intra_dist"], row["inter_dist"] = per[row["scenario"]]
    if intra > 0:
        ratio = inter / intra
    else:
        ratio = math.inf if inter > 0 else math.nan
    degenerate = math.isnan(ratio)
    if degenerate:
        ratio = 1.0
    for row in rows:
        row["separation_ratio"], row["degenerate"] = ratio, int(degenerate)
    rows.append({"scenario": "ALL", **_pooled(reports), "intra_dist": intra, "inter_dist": inter,
                 "separation_ratio": ratio, "degenerate": int(degenerate)})
    return DriftReport(rows, ratio, degenerate, intra, inter)


def _pooled(reports: Sequence[MetricReport]) -> dict:
    per = [r for rep in reports for r in rep.per_image]
    tp, fp, fn = (sum(r[k] for r in per) for k in ("tp", "fp", "fn"))
    det, tgt = sum(r["detected"] for r in per), sum(r["targets"] for r in per)
    false_px = sum(r["false_pixels"] for r in per)
    total_px = sum(r["pixels"] for r in per)
    return {"n_images": len(per), "n_targets": tgt,
            "IoU": 1.0 if tp + fp + fn == 0 else tp / (tp + fp + fn),
            "Pd": 1.0 if tgt == 0 else det / tgt, "Fa": 0.0 if total_px == 0 else false_px / total_px}


DRIFT_COLUMNS = ("scenario", "n_images", "n_targets", "IoU", "Pd", "Fa", "intra_dist", "inter_dist",
                 "separation_ratio", "degenerate")


def write_drift_csv(path: str | Path, report: DriftReport) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=DRIFT_COLUMNS)
        writer.writeheader()
        for r in report.rows:
            writer.writerow({k: _cell(r[k]) for k in DRIFT_COLUMNS})
