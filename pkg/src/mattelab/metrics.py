"""Matting and segmentation evaluation.

MSE / SAD / Grad / Conn are computed inside the trimap UNKNOWN region, with
the classical benchmark conventions (sums scaled by 1/1000, Gaussian
derivative scale 1.4, connectivity threshold step 0.1). IoU / accuracy /
recall operate on binarized mattes over the full raster.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field

import cv2
import numpy as np
import scipy.ndimage

from . import core
from .core import TRIMAP_UNKNOWN, as_alpha, as_trimap


def _unknown_mask(trimap: np.ndarray) -> np.ndarray:
    return as_trimap(trimap) == TRIMAP_UNKNOWN


def _check(pred, gt, trimap):
    # accumulate in double precision regardless of the input dtype
    pred = as_alpha(pred).astype(np.float64)
    gt = as_alpha(gt).astype(np.float64)
    if pred.shape != gt.shape or pred.shape != trimap.shape:
        raise ValueError("metric inputs must share spatial size")
    unknown = _unknown_mask(trimap)
    return pred, gt, unknown


def mse_unknown(pred, gt, trimap):
    """Mean squared error over UNKNOWN pixels; None if the region is empty."""
    pred, gt, unknown = _check(pred, gt, trimap)
    if not unknown.any():
        return None
    return float(((pred - gt) ** 2)[unknown].mean())


def sad_unknown(pred, gt, trimap):
    """Sum of absolute differences over UNKNOWN pixels, divided by 1000."""
    pred, gt, unknown = _check(pred, gt, trimap)
    if not unknown.any():
        return None
    return float(np.abs(pred - gt)[unknown].sum() / 1000.0)


def _gauss(x, sigma):
    return np.exp(-(x ** 2) / (2 * sigma ** 2)) / (sigma * math.sqrt(2 * math.pi))


def _dgauss(x, sigma):
    return -x * _gauss(x, sigma) / (sigma ** 2)


def gaussian_derivative_kernels(sigma: float):
    """First-order Gaussian derivative filter pair (x and y), L2-normalized,
    truncated where the response falls below 1e-2."""
    eps = 1e-2
    half = int(math.ceil(sigma * math.sqrt(-2.0 * math.log(math.sqrt(2.0 * math.pi) * sigma * eps))))
    size = 2 * half + 1
    hx = np.zeros((size, size))
    for i in range(size):
        for j in range(size):
            hx[i, j] = _gauss(i - half, sigma) * _dgauss(j - half, sigma)
    hx = hx / math.sqrt(np.sum(hx * hx))
    return hx, hx.T


def gradient_magnitude(alpha: np.ndarray, sigma: float = 1.4) -> np.ndarray:
    hx, hy = gaussian_derivative_kernels(sigma)
    gx = scipy.ndimage.convolve(alpha.astype(np.float64), hx, mode="nearest")
    gy = scipy.ndimage.convolve(alpha.astype(np.float64), hy, mode="nearest")
    return np.sqrt(gx ** 2 + gy ** 2)


def grad_error(pred, gt, trimap, sigma: float = 1.4):
    """Squared gradient-magnitude error over UNKNOWN pixels, divided by 1000.

    Prediction values outside UNKNOWN are replaced by ground truth before the
    convolution, so the metric depends only on the evaluated region.
    """
    pred, gt, unknown = _check(pred, gt, trimap)
    if not unknown.any():
        return None
    pred_eff = np.where(unknown, pred, gt)
    diff = (gradient_magnitude(pred_eff, sigma) - gradient_magnitude(gt, sigma)) ** 2
    return float(diff[unknown].sum() / 1000.0)


def _largest_cc(binary: np.ndarray) -> np.ndarray:
    """Largest 4-connected component of a binary raster (zeros if empty)."""
    if not binary.any():
        return np.zeros_like(binary, dtype=bool)
    n, labels = cv2.connectedComponents(binary.astype(np.uint8), connectivity=4)
    counts = np.bincount(labels.ravel(), minlength=n)
    counts[0] = 0
    return labels == int(np.argmax(counts))


def conn_error(pred, gt, trimap, step: float = 0.1):
    """Connectivity degradation over UNKNOWN pixels, divided by 1000.

    Standard benchmark definition: for each threshold the source region is
    the largest connected component where both pred and gt exceed it; each
    pixel's connectivity level is the last threshold at which it stayed
    connected, and degradations >= 0.15 are penalized.
    """
    pred, gt, unknown = _check(pred, gt, trimap)
    if not unknown.any():
        return None
    # as for grad_error, only UNKNOWN pixels of the prediction may matter
    pred = np.where(unknown, pred, gt).astype(np.float64)
    gt = gt.astype(np.float64)
    thresholds = np.arange(0.0, 1.0 + step, step)
    l_map = np.full(pred.shape, -1.0)
    for i in range(1, len(thresholds)):
        joint = (pred >= thresholds[i]) & (gt >= thresholds[i])
        omega = _largest_cc(joint)
        newly_cut = (l_map == -1.0) & (~omega)
        l_map[newly_cut] = thresholds[i - 1]
    l_map[l_map == -1.0] = 1.0

    pred_d = pred - l_map
    gt_d = gt - l_map
    pred_phi = 1.0 - pred_d * (pred_d >= 0.15)
    gt_phi = 1.0 - gt_d * (gt_d >= 0.15)
    return float(np.abs(pred_phi - gt_phi)[unknown].sum() / 1000.0)


# ---------------------------------------------------------------------------
# Binary segmentation metrics (full raster, no trimap)
# ---------------------------------------------------------------------------

def binarize(matte: np.ndarray, threshold: float = 0.5) -> np.ndarray:
    """1 where matte >= threshold (ties go to foreground)."""
    return (as_alpha(matte) >= threshold).astype(np.uint8)


def _confusion(pred_bin, gt_bin):
    pred_bin = np.asarray(pred_bin).astype(bool)
    gt_bin = np.asarray(gt_bin).astype(bool)
    if pred_bin.shape != gt_bin.shape:
        raise ValueError("binary masks must share spatial size")
    tp = int((pred_bin & gt_bin).sum())
    fp = int((pred_bin & ~gt_bin).sum())
    fn = int((~pred_bin & gt_bin).sum())
    tn = int((~pred_bin & ~gt_bin).sum())
    return tp, fp, fn, tn


def iou(pred_bin, gt_bin) -> float:
    tp, fp, fn, _ = _confusion(pred_bin, gt_bin)
    union = tp + fp + fn
    return 1.0 if union == 0 else tp / union


def pixel_accuracy(pred_bin, gt_bin) -> float:
    tp, fp, fn, tn = _confusion(pred_bin, gt_bin)
    return (tp + tn) / (tp + fp + fn + tn)


def recall(pred_bin, gt_bin) -> float:
    tp, _, fn, _ = _confusion(pred_bin, gt_bin)
    return 1.0 if tp + fn == 0 else tp / (tp + fn)


# ---------------------------------------------------------------------------
# Full evaluation over a manifest split
# ---------------------------------------------------------------------------

METRIC_KEYS = ("mse", "sad", "grad", "conn", "iou", "accuracy", "recall")


@dataclass
class EvalReport:
    per_sample: list = field(default_factory=list)  # {"sample_id", metrics...}
    aggregate: dict = field(default_factory=dict)
    failures: list = field(default_factory=list)
    config: dict = field(default_factory=dict)

    def finalize(self):
        self.aggregate = {}
        for key in METRIC_KEYS:
            vals = [s[key] for s in self.per_sample if s.get(key) is not None]
            self.aggregate[key] = float(np.mean(vals)) if vals else None
        self.aggregate["count"] = len(self.per_sample)
        return self

    def to_text(self) -> str:
        lines = ["sample_id        " + "  ".join(f"{k:>9}" for k in METRIC_KEYS)]
        for s in self.per_sample:
            cells = "  ".join(
                f"{s[k]:9.5f}" if s.get(k) is not None else f"{'n/a':>9}"
                for k in METRIC_KEYS)
            lines.append(f"{s['sample_id']:<16} {cells}")
        lines.append("-" * len(lines[0]))
        agg = "  ".join(
            f"{self.aggregate[k]:9.5f}" if self.aggregate.get(k) is not None else f"{'n/a':>9}"
            for k in METRIC_KEYS)
        lines.append(f"{'aggregate':<16} {agg}")
        if self.failures:
            lines.append("failures:")
            lines.extend(f"  {f}" for f in self.failures)
        lines.append("config: " + json.dumps(self.config, sort_keys=True))
        return "\n".join(lines) + "\n"

    def to_json(self) -> str:
        return json.dumps({"per_sample": self.per_sample, "aggregate": self.aggregate,
                           "failures": self.failures, "config": self.config},
                          sort_keys=True, indent=1)


def frame_metrics(pred, gt, trimap) -> dict:
    pred_bin, gt_bin = binarize(pred), binarize(gt)
    return {
        "mse": mse_unknown(pred, gt, trimap),
        "sad": sad_unknown(pred, gt, trimap),
        "grad": grad_error(pred, gt, trimap),
        "conn": conn_error(pred, gt, trimap),
        "iou": iou(pred_bin, gt_bin),
        "accuracy": pixel_accuracy(pred_bin, gt_bin),
        "recall": recall(pred_bin, gt_bin),
    }


def evaluate(checkpoint_path: str, manifest_path: str, split: str = "test",
             out_path: str = None, oracle: bool = False,
             clip_len: int = 10 ** 9) -> EvalReport:
    """Run the model over every clip of a manifest split and aggregate metrics.

    oracle=True scores the ground truth against itself (sanity mode). Per-
    sample failures are recorded and evaluation continues. If out_path is
    given, writes the text report there and a machine-readable .json twin.
    """
    import torch

    from .distill import load_checkpoint, load_clips

    model = None
    if not oracle:
        model = load_checkpoint(checkpoint_path)["model"]
        model.eval()

    clips = load_clips(manifest_path, split, clip_len, with_trimaps=True)
    report = EvalReport(config={"checkpoint": os.path.basename(checkpoint_path or ""),
                                "split": split, "oracle": oracle,
                                "binarize_threshold": 0.5, "grad_sigma": 1.4,
                                "conn_step": 0.1, "sad_scale": 1000})
    for clip in clips:
        try:
            if oracle:
                preds = clip["alphas"][:, 0].numpy()
            else:
                with torch.no_grad():
                    bundle, _ = model(clip["frames"][None])
                preds = bundle["alpha_mean"][0, :, 0].numpy()
            rows = []
            for t in range(preds.shape[0]):
                gt = clip["alphas"][t, 0].numpy()
                trimap = clip["trimaps"][t, 0].numpy().astype(np.uint8)
                rows.append(frame_metrics(np.clip(preds[t], 0, 1), gt, trimap))
            sample = {"sample_id": clip["sample_id"]}
            for key in METRIC_KEYS:
                vals = [r[key] for r in rows if r[key] is not None]
                sample[key] = float(np.mean(vals)) if vals else None
            report.per_sample.append(sample)
        except Exception as exc:  # keep going; record the failure
            report.failures.append(f"{clip['sample_id']}: {exc}")
    report.finalize()
    if out_path:
        with open(out_path, "w", encoding="utf-8") as fh:
            fh.write(report.to_text())
        with open(os.path.splitext(out_path)[0] + ".json", "w", encoding="utf-8") as fh:
            fh.write(report.to_json())
    return report
