"""Matting metrics (MSE/SAD/Grad/Conn over UNKNOWN) and segmentation scores."""

import json
import math
import os

import numpy as np
import pytest

from mattelab import metrics


def _random_case(rng, side=8):
    pred = rng.random((side, side)).astype(np.float32)
    gt = rng.random((side, side)).astype(np.float32)
    trimap = rng.integers(0, 3, (side, side)).astype(np.uint8)
    return pred, gt, trimap


# ---------------------------------------------------------------------------
# MSE / SAD (double-loop brute force as oracle)
# ---------------------------------------------------------------------------

def _brute_mse_sad(pred, gt, trimap):
    sq, ab = [], []
    h, w = pred.shape
    for i in range(h):
        for j in range(w):
            if trimap[i, j] == 1:
                d = float(pred[i, j]) - float(gt[i, j])
                sq.append(d * d)
                ab.append(abs(d))
    if not sq:
        return None, None
    return math.fsum(sq) / len(sq), math.fsum(ab) / 1000.0


def test_mse_sad_match_bruteforce_on_100_random_rasters():
    rng = np.random.default_rng(0)
    checked = 0
    for _ in range(100):
        pred, gt, trimap = _random_case(rng)
        want_mse, want_sad = _brute_mse_sad(pred, gt, trimap)
        got_mse = metrics.mse_unknown(pred, gt, trimap)
        got_sad = metrics.sad_unknown(pred, gt, trimap)
        if want_mse is None:
            assert got_mse is None and got_sad is None
            continue
        assert abs(got_mse - want_mse) <= 1e-15
        assert got_sad == want_sad
        checked += 1
    assert checked >= 90


def test_mse_hand_example():
    pred = np.array([[0.5, 0.0], [1.0, 0.2]], dtype=np.float32)
    gt = np.array([[0.0, 0.0], [1.0, 0.2]], dtype=np.float32)
    trimap = np.array([[1, 1], [0, 2]], dtype=np.uint8)
    assert metrics.mse_unknown(pred, gt, trimap) == pytest.approx(0.125)
    assert metrics.sad_unknown(pred, gt, trimap) == pytest.approx(0.0005)


def test_sad_thousand_unit_pixels():
    pred = np.zeros((40, 40), dtype=np.float32)
    gt = np.zeros((40, 40), dtype=np.float32)
    trimap = np.zeros((40, 40), dtype=np.uint8)
    flat = np.zeros(1600, dtype=bool)
    flat[:1000] = True
    gt.ravel()[flat] = 1.0
    trimap.ravel()[flat] = 1
    assert metrics.sad_unknown(pred, gt, trimap) == 1.0


def test_metrics_none_when_no_unknown():
    pred = np.zeros((8, 8), dtype=np.float32)
    trimap = np.full((8, 8), 2, dtype=np.uint8)
    assert metrics.mse_unknown(pred, pred, trimap) is None
    assert metrics.sad_unknown(pred, pred, trimap) is None
    assert metrics.grad_error(pred, pred, trimap) is None
    assert metrics.conn_error(pred, pred, trimap) is None


def test_metrics_size_mismatch_rejected():
    with pytest.raises(ValueError):
        metrics.mse_unknown(np.zeros((8, 8)), np.zeros((8, 8)),
                            np.zeros((8, 12), dtype=np.uint8))


# ---------------------------------------------------------------------------
# gradient error (dense convolution as oracle)
# ---------------------------------------------------------------------------

def _oracle_kernels(sigma):
    eps = 1e-2
    half = int(math.ceil(sigma * math.sqrt(
        -2.0 * math.log(math.sqrt(2.0 * math.pi) * sigma * eps))))
    ii, jj = np.meshgrid(np.arange(-half, half + 1), np.arange(-half, half + 1),
                         indexing="ij")
    g = lambda x: np.exp(-(x ** 2) / (2 * sigma ** 2)) / (sigma * math.sqrt(2 * math.pi))
    dg = lambda x: -x * g(x) / sigma ** 2
    hx = g(ii) * dg(jj)
    hx = hx / np.sqrt((hx * hx).sum())
    return hx, hx.T, half


def _oracle_grad_mag(alpha, sigma):
    hx, hy, half = _oracle_kernels(sigma)
    padded = np.pad(alpha.astype(np.float64), half, mode="edge")
    h, w = alpha.shape
    gx = np.zeros((h, w))
    gy = np.zeros((h, w))
    for i in range(h):
        for j in range(w):
            win = padded[i : i + 2 * half + 1, j : j + 2 * half + 1]
            gx[i, j] = (win * hx[::-1, ::-1]).sum()  # true convolution flips
            gy[i, j] = (win * hy[::-1, ::-1]).sum()
    return np.sqrt(gx ** 2 + gy ** 2)


def test_gradient_magnitude_matches_dense_convolution():
    rng = np.random.default_rng(1)
    alpha = rng.random((16, 16)).astype(np.float32)
    got = metrics.gradient_magnitude(alpha, 1.4)
    want = _oracle_grad_mag(alpha, 1.4)
    assert np.abs(got - want).max() <= 1e-6


def test_grad_error_matches_oracle():
    rng = np.random.default_rng(2)
    pred, gt, trimap = _random_case(rng, side=16)
    pred_eff = np.where(trimap == 1, pred, gt)
    diff = (_oracle_grad_mag(pred_eff, 1.4) - _oracle_grad_mag(gt, 1.4)) ** 2
    want = diff[trimap == 1].sum() / 1000.0
    assert metrics.grad_error(pred, gt, trimap) == pytest.approx(want, abs=1e-6)


def test_grad_error_zero_for_perfect_prediction():
    rng = np.random.default_rng(3)
    gt = rng.random((16, 16)).astype(np.float32)
    trimap = np.ones((16, 16), dtype=np.uint8)
    assert metrics.grad_error(gt, gt, trimap) == 0.0


# ---------------------------------------------------------------------------
# connectivity error (hand-traced cases)
# ---------------------------------------------------------------------------

def test_conn_error_zero_for_perfect_prediction():
    rng = np.random.default_rng(4)
    gt = rng.random((8, 8)).astype(np.float32)
    trimap = np.ones((8, 8), dtype=np.uint8)
    assert metrics.conn_error(gt, gt, trimap) == 0.0


def test_conn_error_two_blob_hand_trace():
    # gt: a large blob (cols 0-3) and a small 2x2 blob (rows 0-1, cols 6-7).
    # pred dims the small blob to 0.6. The small blob is never part of the
    # largest joint component, so its connectivity level is 0; degradation is
    # 0.6 for pred and 1.0 for gt, both >= 0.15 => |0.4 - 0.0| per pixel.
    gt = np.zeros((8, 8), dtype=np.float32)
    gt[:, :4] = 1.0
    gt[:2, 6:] = 1.0
    pred = gt.copy()
    pred[:2, 6:] = 0.6
    trimap = np.ones((8, 8), dtype=np.uint8)
    want = 4 * 0.4 / 1000.0
    assert metrics.conn_error(pred, gt, trimap) == pytest.approx(want, abs=1e-9)


def test_conn_error_small_dimming_not_penalized():
    # dimming a single blob to 0.96 cuts it only at the last threshold
    # (level 0.9), leaving both degradations below the 0.15 cutoff
    gt = np.zeros((8, 8), dtype=np.float32)
    gt[2:6, 2:6] = 1.0
    pred = gt * 0.96
    trimap = np.ones((8, 8), dtype=np.uint8)
    assert metrics.conn_error(pred, gt, trimap) == 0.0


# ---------------------------------------------------------------------------
# the four matting metrics ignore prediction values outside UNKNOWN
# ---------------------------------------------------------------------------

def test_matting_metrics_invariant_outside_unknown():
    rng = np.random.default_rng(5)
    violations = 0
    for _ in range(100):
        pred, gt, trimap = _random_case(rng, side=12)
        if not (trimap == 1).any() or (trimap == 1).all():
            continue
        altered = pred.copy()
        outside = trimap != 1
        altered[outside] = rng.random(int(outside.sum())).astype(np.float32)
        for fn in (metrics.mse_unknown, metrics.sad_unknown,
                   metrics.grad_error, metrics.conn_error):
            if fn(pred, gt, trimap) != fn(altered, gt, trimap):
                violations += 1
    assert violations == 0


# ---------------------------------------------------------------------------
# binary segmentation scores
# ---------------------------------------------------------------------------

def test_binarize_ties_go_to_foreground():
    matte = np.array([[0.49, 0.5], [0.51, 0.0]], dtype=np.float32)
    assert (metrics.binarize(matte) == np.array([[0, 1], [1, 0]])).all()


def _brute_confusion(pred_bin, gt_bin):
    tp = fp = fn = tn = 0
    for p, g in zip(np.asarray(pred_bin).ravel(), np.asarray(gt_bin).ravel()):
        if p and g:
            tp += 1
        elif p and not g:
            fp += 1
        elif not p and g:
            fn += 1
        else:
            tn += 1
    return tp, fp, fn, tn


def test_segmentation_scores_match_counting():
    rng = np.random.default_rng(6)
    for _ in range(20):
        pred = rng.integers(0, 2, (8, 8)).astype(np.uint8)
        gt = rng.integers(0, 2, (8, 8)).astype(np.uint8)
        tp, fp, fn, tn = _brute_confusion(pred, gt)
        union = tp + fp + fn
        want_iou = 1.0 if union == 0 else tp / union
        assert metrics.iou(pred, gt) == pytest.approx(want_iou)
        assert metrics.pixel_accuracy(pred, gt) == pytest.approx((tp + tn) / 64)
        want_rec = 1.0 if tp + fn == 0 else tp / (tp + fn)
        assert metrics.recall(pred, gt) == pytest.approx(want_rec)


def test_segmentation_edge_cases():
    zeros = np.zeros((4, 4), dtype=np.uint8)
    ones = np.ones((4, 4), dtype=np.uint8)
    assert metrics.iou(zeros, zeros) == 1.0  # empty union
    assert metrics.recall(zeros, zeros) == 1.0  # no positives to find
    assert metrics.iou(ones, zeros) == 0.0
    assert metrics.iou(zeros, ones) == 0.0
    assert metrics.pixel_accuracy(ones, zeros) == 0.0


# ---------------------------------------------------------------------------
# report aggregation and full evaluation
# ---------------------------------------------------------------------------

def test_eval_report_aggregates_means():
    report = metrics.EvalReport(per_sample=[
        {"sample_id": "a", "mse": 0.1, "sad": 1.0, "grad": None, "conn": None,
         "iou": 0.5, "accuracy": 0.9, "recall": 1.0},
        {"sample_id": "b", "mse": 0.3, "sad": 2.0, "grad": 0.2, "conn": 0.1,
         "iou": 1.0, "accuracy": 1.0, "recall": 1.0},
    ])
    report.finalize()
    assert report.aggregate["mse"] == pytest.approx(0.2)
    assert report.aggregate["grad"] == pytest.approx(0.2)  # None skipped
    assert report.aggregate["count"] == 2
    parsed = json.loads(report.to_json())
    assert parsed["aggregate"]["sad"] == pytest.approx(1.5)


def test_evaluate_oracle_mode_is_perfect(tiny_dataset, tmp_path):
    out = str(tmp_path / "report.txt")
    report = metrics.evaluate(None, tiny_dataset["manifest"], split="test",
                              out_path=out, oracle=True)
    assert report.aggregate["count"] == 3
    assert not report.failures
    for s in report.per_sample:
        assert s["mse"] == 0.0 and s["sad"] == 0.0
        assert s["iou"] == 1.0 and s["accuracy"] == 1.0 and s["recall"] == 1.0
    assert os.path.exists(out)
    assert os.path.exists(str(tmp_path / "report.json"))


def test_evaluate_oracle_mode_deterministic(tiny_dataset):
    a = metrics.evaluate(None, tiny_dataset["manifest"], oracle=True)
    b = metrics.evaluate(None, tiny_dataset["manifest"], oracle=True)
    assert a.per_sample == b.per_sample and a.aggregate == b.aggregate


def test_evaluate_with_model(tiny_teacher, tiny_dataset):
    report = metrics.evaluate(tiny_teacher["ckpt"], tiny_dataset["manifest"],
                              split="test")
    assert report.aggregate["count"] == 3
    assert not report.failures
    for key in metrics.METRIC_KEYS:
        assert report.aggregate[key] is not None
        assert np.isfinite(report.aggregate[key])


def test_evaluate_report_text_layout(tiny_dataset):
    report = metrics.evaluate(None, tiny_dataset["manifest"], oracle=True)
    text = report.to_text()
    assert "aggregate" in text
    for key in metrics.METRIC_KEYS:
        assert key in text
