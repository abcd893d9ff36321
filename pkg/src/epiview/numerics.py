"""Minimal tensor kernels: feature maps, linear projections, masked
softmax, and bilinear sampling.

Feature data is stored as float32; similarity and blending computations
accumulate in float64 so that dual-route checks meet their tolerances.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "FeatureMap",
    "LinearMap",
    "bilinear_sample",
    "masked_softmax",
    "apply_linear",
    "downsample_mean",
]


@dataclass(frozen=True)
class FeatureMap:
    """An H x W x C grid of scalars, the unit of all attention and
    sampling operations. Immutable once built."""

    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim == 2:
            data = data[:, :, None]
        if data.ndim != 3:
            raise ValueError(f"feature map must be HxWxC, got shape {data.shape}")
        if not np.all(np.isfinite(data)):
            raise ValueError("feature map contains non-finite entries")
        data = np.ascontiguousarray(data, dtype=np.float32)
        data.setflags(write=False)
        object.__setattr__(self, "data", data)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    def flat(self) -> np.ndarray:
        """(H*W, C) view in raster order."""
        return self.data.reshape(-1, self.data.shape[2])


@dataclass(frozen=True)
class LinearMap:
    """Per-pixel affine map: ``y = W @ x + b``. ``bias`` may be None."""

    weight: np.ndarray
    bias: np.ndarray | None = None

    def __post_init__(self):
        w = np.asarray(self.weight, dtype=np.float32)
        if w.ndim != 2:
            raise ValueError("weight must be 2-D (out x in)")
        if not np.all(np.isfinite(w)):
            raise ValueError("weight contains non-finite entries")
        object.__setattr__(self, "weight", w)
        if self.bias is not None:
            b = np.asarray(self.bias, dtype=np.float32).reshape(-1)
            if b.shape[0] != w.shape[0]:
                raise ValueError("bias length must match out-dim")
            if not np.all(np.isfinite(b)):
                raise ValueError("bias contains non-finite entries")
            object.__setattr__(self, "bias", b)

    @property
    def out_dim(self) -> int:
        return self.weight.shape[0]

    @property
    def in_dim(self) -> int:
        return self.weight.shape[1]

    @classmethod
    def identity(cls, dim: int) -> "LinearMap":
        return cls(weight=np.eye(dim, dtype=np.float32))

    def copy(self) -> "LinearMap":
        return LinearMap(weight=self.weight.copy(),
                         bias=None if self.bias is None else self.bias.copy())


def bilinear_sample(fm: FeatureMap, uv: np.ndarray):
    """Sample a feature map at sub-pixel positions.

    Parameters
    ----------
    fm : FeatureMap
    uv : ndarray, shape (..., 2)
        Sub-pixel (u, v) positions in pixel-center coordinates.

    Returns
    -------
    values : ndarray, shape (..., C), float64
        Four-neighbor bilinear blends; zero where invalid.
    valid : ndarray, shape (...), bool
        True where every neighbor carrying weight lies on the grid,
        i.e. 0 <= u <= W-1 and 0 <= v <= H-1. Out-of-grid samples are
        masked, never clamped.
    """
    uv = np.asarray(uv, dtype=np.float64)
    u, v = uv[..., 0], uv[..., 1]
    h, w = fm.height, fm.width
    valid = (u >= 0.0) & (u <= w - 1) & (v >= 0.0) & (v <= h - 1)

    u = np.where(valid, u, 0.0)
    v = np.where(valid, v, 0.0)
    u0 = np.floor(u).astype(np.int64)
    v0 = np.floor(v).astype(np.int64)
    u0 = np.minimum(u0, w - 2) if w > 1 else u0 * 0
    v0 = np.minimum(v0, h - 2) if h > 1 else v0 * 0
    du = u - u0
    dv = v - v0

    grid = fm.data.astype(np.float64)
    u1 = np.minimum(u0 + 1, w - 1)
    v1 = np.minimum(v0 + 1, h - 1)
    p00 = grid[v0, u0]
    p01 = grid[v0, u1]
    p10 = grid[v1, u0]
    p11 = grid[v1, u1]
    du_ = du[..., None]
    dv_ = dv[..., None]
    values = (p00 * (1 - du_) * (1 - dv_) + p01 * du_ * (1 - dv_)
              + p10 * (1 - du_) * dv_ + p11 * du_ * dv_)
    values = np.where(valid[..., None], values, 0.0)
    return values, valid


def masked_softmax(logits: np.ndarray, mask: np.ndarray, scale: float = 1.0, axis: int = -1):
    """Numerically stable softmax over the valid entries of ``logits``.

    Masked entries get weight 0; rows with no valid entry come back
    all-zero with ``has_valid`` False (no NaNs). Weights over valid
    entries sum to 1 and are invariant to adding a constant to all valid
    logits.
    """
    logits = np.asarray(logits, dtype=np.float64) * scale
    mask = np.asarray(mask, dtype=bool)
    has_valid = mask.any(axis=axis)
    neg = np.where(mask, logits, -np.inf)
    peak = np.max(neg, axis=axis, keepdims=True)
    peak = np.where(np.isfinite(peak), peak, 0.0)
    ex = np.exp(neg - peak)
    ex = np.where(mask, ex, 0.0)
    denom = ex.sum(axis=axis, keepdims=True)
    weights = np.divide(ex, denom, out=np.zeros_like(ex), where=denom > 0)
    return weights, has_valid


def apply_linear(lin: LinearMap, fm: FeatureMap) -> FeatureMap:
    """Apply an affine map to every pixel of a feature map."""
    if lin.in_dim != fm.channels:
        raise ValueError(f"linear map expects {lin.in_dim} channels, map has {fm.channels}")
    out = fm.flat().astype(np.float64) @ lin.weight.T.astype(np.float64)
    if lin.bias is not None:
        out = out + lin.bias.astype(np.float64)
    return FeatureMap(out.reshape(fm.height, fm.width, lin.out_dim))


def downsample_mean(fm: FeatureMap, factor: int) -> FeatureMap:
    """Area-mean downsample by an integer factor (feature-grid extraction
    for image-resolution inputs)."""
    if fm.height % factor or fm.width % factor:
        raise ValueError("dimensions must be divisible by the downsample factor")
    h, w, c = fm.height // factor, fm.width // factor, fm.channels
    data = fm.data.reshape(h, factor, w, factor, c).mean(axis=(1, 3))
    return FeatureMap(data)
