"""Image-quality and consistency metrics.

PSNR and SSIM compare generated views against ground-truth renders.
Reprojection consistency measures photometric agreement at exact
cross-view correspondences (the desk-scale stand-in for training a
radiance field and comparing re-renders). Localization accuracy scores
how well similarity argmaxes hit ground-truth correspondences.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .attention import AttentionParams, epipolar_similarity, full_similarity, project_context
from .geometry import epipolar_sample_grid, relative_pose
from .numerics import downsample_mean
from .scenegen import RenderedView, Scene, correspondence_grid, positional_features

__all__ = [
    "psnr",
    "ssim",
    "reprojection_consistency",
    "PairConsistency",
    "localization_accuracy",
    "localization_study",
    "metrics_csv_rows",
]


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """10 * log10(1 / MSE) for images in [0, 1]; identical images give an
    infinity sentinel."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError("psnr needs images of identical shape")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


def ssim(a: np.ndarray, b: np.ndarray, window: int = 8,
         c1: float = 0.01 ** 2, c2: float = 0.03 ** 2) -> float:
    """Mean local SSIM over uniformly weighted ``window`` x ``window``
    patches (stride 1), standard stabilizers, unit data range."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError("ssim needs images of identical shape")
    if a.ndim == 2:
        a = a[:, :, None]
        b = b[:, :, None]
    h, w = a.shape[:2]
    if h < window or w < window:
        raise ValueError(f"image smaller than the {window}x{window} window")
    win_a = np.lib.stride_tricks.sliding_window_view(a, (window, window), axis=(0, 1))
    win_b = np.lib.stride_tricks.sliding_window_view(b, (window, window), axis=(0, 1))
    mu_a = win_a.mean(axis=(-2, -1))
    mu_b = win_b.mean(axis=(-2, -1))
    var_a = (win_a ** 2).mean(axis=(-2, -1)) - mu_a ** 2
    var_b = (win_b ** 2).mean(axis=(-2, -1)) - mu_b ** 2
    cov = (win_a * win_b).mean(axis=(-2, -1)) - mu_a * mu_b
    score = ((2 * mu_a * mu_b + c1) * (2 * cov + c2)
             / ((mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2)))
    return float(score.mean())


@dataclass(frozen=True)
class PairConsistency:
    view_a: int
    view_b: int
    error: float       # NaN when the pair shares no mutually visible pixels
    pixels: int


def reprojection_consistency(images: list, views: list, scene: Scene):
    """Mean photometric error at exact cross-view correspondences.

    For every ordered view pair and every foreground pixel of the first
    view whose ground-truth correspondence is visible in the second view
    (and whose nearest sampling pixel shows the same primitive), the
    absolute RGB difference between the two *supplied* images is
    averaged. GT renders of the scene themselves therefore score exactly
    zero. Pairs with no mutually visible pixels come back as NaN.

    Parameters
    ----------
    images : list of (H, W, 3) arrays
        The images whose consistency is being measured, one per view.
    views : list of RenderedView
        Ground-truth geometry for the same camera list.
    scene : Scene

    Returns
    -------
    mean_error : float
        Mean over all defined pairs.
    pairs : list of PairConsistency
    """
    if len(images) != len(views):
        raise ValueError("need one image per rendered view")
    n = len(views)
    pairs: list[PairConsistency] = []
    defined = []
    for i in range(n):
        h, w = views[i].intrinsics.height, views[i].intrinsics.width
        vv, uu = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
        uv_a = np.stack([uu.ravel(), vv.ravel()], axis=-1).astype(np.float64)
        img_a = np.asarray(images[i], dtype=np.float64).reshape(h * w, -1)
        for j in range(n):
            if i == j:
                continue
            uv_b, visible, prim_a, prim_b = correspondence_grid(scene, views[i], views[j], uv_a)
            near = np.round(uv_b).astype(np.int64)
            ok = visible.copy()
            idx = np.flatnonzero(ok)
            if idx.size:
                nb = near[idx]
                nb[:, 0] = np.clip(nb[:, 0], 0, views[j].intrinsics.width - 1)
                nb[:, 1] = np.clip(nb[:, 1], 0, views[j].intrinsics.height - 1)
                same_prim = views[j].prim_id[nb[:, 1], nb[:, 0]] == prim_a[idx]
                ok[idx] = same_prim
            count = int(ok.sum())
            if count == 0:
                pairs.append(PairConsistency(i, j, float("nan"), 0))
                continue
            sel = np.flatnonzero(ok)
            nb = near[sel]
            img_b = np.asarray(images[j], dtype=np.float64)
            diff = np.abs(img_a[sel] - img_b[nb[:, 1], nb[:, 0]])
            err = float(diff.mean())
            pairs.append(PairConsistency(i, j, err, count))
            defined.append(err)
    mean_error = float(np.mean(defined)) if defined else float("nan")
    return mean_error, pairs


def localization_accuracy(argmax_uv: np.ndarray, gt_uv: np.ndarray,
                          k: float = 1.0) -> float:
    """Fraction of queries whose argmax position lies within ``k`` feature
    pixels (Euclidean) of the ground-truth correspondence."""
    argmax_uv = np.asarray(argmax_uv, dtype=np.float64).reshape(-1, 2)
    gt_uv = np.asarray(gt_uv, dtype=np.float64).reshape(-1, 2)
    if argmax_uv.shape != gt_uv.shape:
        raise ValueError("argmax/gt position counts differ")
    if argmax_uv.shape[0] == 0:
        return float("nan")
    d = np.linalg.norm(argmax_uv - gt_uv, axis=1)
    return float(np.mean(d <= k))


def _argmax_lowest_index(logits: np.ndarray, valid: np.ndarray) -> np.ndarray:
    """Argmax over the sample axis with masked entries excluded; exact
    ties resolve to the lowest sample index (np.argmax semantics)."""
    masked = np.where(valid, logits, -np.inf)
    return np.argmax(masked, axis=-1)


def localization_study(scene: Scene, view_tgt: RenderedView, view_ref: RenderedView,
                       feature_size: int = 24, k: float = 1.0,
                       sample_axis: str = "dominant", feature_source: str = "positional"):
    """Compare epipolar against full-attention localization on a fixture.

    Feature maps use identity projections over either position-encoded
    surface features (``positional``, the idealized distinctive texture)
    or area-downsampled renders (``rgb``). Queries are the target's
    foreground feature pixels whose ground-truth correspondence is
    visible in the reference view; occluded queries are excluded from
    the denominator.

    Returns a dict with per-mode accuracies and the query count.
    """
    if feature_source == "positional":
        f_tgt = positional_features(scene, view_tgt, feature_size, feature_size)
        f_ref = positional_features(scene, view_ref, feature_size, feature_size)
    elif feature_source == "rgb":
        factor = view_tgt.intrinsics.width // feature_size
        f_tgt = downsample_mean(view_tgt.rgb, factor)
        f_ref = downsample_mean(view_ref.rgb, factor)
    else:
        raise ValueError(f"unknown feature_source {feature_source!r}")
    wf, hf = f_tgt.width, f_tgt.height
    scale = wf / view_tgt.intrinsics.width
    k_feat = view_tgt.intrinsics.scaled(scale)
    params = AttentionParams.identity(f_tgt.channels)
    ctx = project_context(f_ref, params)

    # ground truth at feature-pixel centers, through the analytic scene
    vv, uu = np.meshgrid(np.arange(hf), np.arange(wf), indexing="ij")
    uv_feat = np.stack([uu.ravel(), vv.ravel()], axis=-1).astype(np.float64)
    uv_img = (uv_feat + 0.5) / scale - 0.5
    uv_b_img, visible, prim_a, _ = correspondence_grid(scene, view_tgt, view_ref, uv_img)
    gt_feat = (uv_b_img + 0.5) * scale - 0.5
    queries = np.flatnonzero((prim_a >= 0) & visible)
    if queries.size == 0:
        return {"epipolar": float("nan"), "full": float("nan"), "queries": 0}

    pose = relative_pose(view_ref.extrinsics, view_tgt.extrinsics)
    samples = epipolar_sample_grid(pose, k_feat, wf, hf, sample_axis)
    logits_e, _, _, valid_e = epipolar_similarity(f_tgt, ctx, samples, params)
    best = _argmax_lowest_index(logits_e[0], valid_e)
    epi_uv = samples.uv[np.arange(wf * hf), best]
    usable = valid_e.any(axis=1)[queries]
    epi_acc = localization_accuracy(epi_uv[queries][usable], gt_feat[queries][usable], k)

    logits_f, _ = full_similarity(f_tgt, ctx, params)
    best_f = _argmax_lowest_index(logits_f[0], np.ones_like(logits_f[0], dtype=bool))
    full_uv = np.stack([best_f % wf, best_f // wf], axis=-1).astype(np.float64)
    full_acc = localization_accuracy(full_uv[queries], gt_feat[queries], k)

    return {"epipolar": epi_acc, "full": full_acc, "queries": int(queries.size),
            "epipolar_usable": int(usable.sum())}


def metrics_csv_rows(run_id: str, values: list) -> list:
    """Rows of the metrics CSV: run_id, metric, view_pair, value."""
    rows = [("run_id", "metric", "view_pair", "value")]
    for metric, pair, value in values:
        rows.append((run_id, metric, pair, f"{value:.9g}"))
    return rows
