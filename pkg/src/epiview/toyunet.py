"""A small encoder/decoder denoiser with one genuine multi-head
self-attention block at the bottleneck and additive time/pose embeddings.

Weights are seeded-random by default; an optional overfit trainer uses
explicitly coded analytic gradients (verified against finite differences
in the tests) so no autodiff framework is needed.
"""

from __future__ import annotations

import numpy as np

from .attention import AttentionParams, self_attention
from .diffusion import AttentionStage, Condition, Denoiser, NoiseSchedule
from .fileio import read_checkpoint, write_checkpoint
from .numerics import FeatureMap, LinearMap

__all__ = ["ToyUNet", "train_overfit"]

_PARAM_SHAPES = ("enc1", "enc2", "attn.q", "attn.k", "attn.v", "attn.o", "dec1", "dec2")


def _sinusoidal(values: np.ndarray, dim: int) -> np.ndarray:
    """Sum of sinusoidal embeddings of a few scalars, length ``dim``."""
    half = dim // 2
    freqs = np.exp(-np.log(1000.0) * np.arange(half) / max(half - 1, 1))
    emb = np.zeros(dim)
    for v in np.atleast_1d(values):
        ang = v * freqs
        emb[:half] += np.sin(ang)
        emb[half:half * 2] += np.cos(ang)
    return emb


def _im2col(x: np.ndarray, stride: int):
    """(H, W, C) -> (Hout*Wout, C*9) patches of a padded 3x3 window."""
    h, w, c = x.shape
    xp = np.pad(x, ((1, 1), (1, 1), (0, 0)))
    ho = (h + 2 - 3) // stride + 1
    wo = (w + 2 - 3) // stride + 1
    cols = np.empty((ho, wo, 3, 3, c), dtype=x.dtype)
    for di in range(3):
        for dj in range(3):
            cols[:, :, di, dj, :] = xp[di:di + ho * stride:stride, dj:dj + wo * stride:stride, :]
    return cols.reshape(ho * wo, 9 * c), (ho, wo)


def _col2im(dcols: np.ndarray, shape, stride: int):
    """Adjoint of :func:`_im2col`."""
    h, w, c = shape
    ho = (h + 2 - 3) // stride + 1
    wo = (w + 2 - 3) // stride + 1
    d = dcols.reshape(ho, wo, 3, 3, c)
    dxp = np.zeros((h + 2, w + 2, c), dtype=dcols.dtype)
    for di in range(3):
        for dj in range(3):
            dxp[di:di + ho * stride:stride, dj:dj + wo * stride:stride, :] += d[:, :, di, dj, :]
    return dxp[1:-1, 1:-1, :]


def _conv(x, w, b, stride):
    """3x3 convolution; w is (Cout, 9*Cin)."""
    cols, (ho, wo) = _im2col(x, stride)
    y = cols @ w.T + b
    return y.reshape(ho, wo, -1), cols


def _conv_back(dy, cols, w, x_shape, stride):
    dyf = dy.reshape(-1, dy.shape[-1])
    dw = dyf.T @ cols
    db = dyf.sum(axis=0)
    dx = _col2im(dyf @ w, x_shape, stride)
    return dx, dw, db


def _upsample2(x):
    return np.repeat(np.repeat(x, 2, axis=0), 2, axis=1)


def _upsample2_back(dy):
    h, w, c = dy.shape
    return dy.reshape(h // 2, 2, w // 2, 2, c).sum(axis=(1, 3))


def _softmax_rows(z):
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


class ToyUNet(Denoiser):
    """Two conv stages down, attention at the bottleneck, two stages up."""

    layers = ("bottleneck",)

    def __init__(self, params: dict | None = None, seed: int = 0,
                 c1: int = 8, c2: int = 16, heads: int = 2, dtype=np.float32):
        self.c1, self.c2, self.heads = c1, c2, heads
        self.seed = seed
        self.dtype = dtype
        self.params = params if params is not None else self._init_params(seed)

    def _init_params(self, seed: int) -> dict:
        rng = np.random.default_rng(seed)
        c1, c2 = self.c1, self.c2

        def conv(cout, cin):
            return (rng.standard_normal((cout, 9 * cin)) * np.sqrt(2.0 / (9 * cin))).astype(self.dtype)

        def lin(cout, cin):
            return (rng.standard_normal((cout, cin)) * np.sqrt(1.0 / cin)).astype(self.dtype)

        z = lambda n: np.zeros(n, dtype=self.dtype)
        return {
            "enc1.w": conv(c1, 3), "enc1.b": z(c1),
            "enc2.w": conv(c2, c1), "enc2.b": z(c2),
            "attn.q.w": lin(c2, c2), "attn.q.b": z(c2),
            "attn.k.w": lin(c2, c2), "attn.k.b": z(c2),
            "attn.v.w": lin(c2, c2), "attn.v.b": z(c2),
            "attn.o.w": lin(c2, c2), "attn.o.b": z(c2),
            "dec1.w": conv(c1, c2), "dec1.b": z(c1),
            "dec2.w": conv(3, c1), "dec2.b": z(3),
        }

    def attention_params(self) -> AttentionParams:
        p = self.params
        return AttentionParams(
            q_proj=LinearMap(p["attn.q.w"], p["attn.q.b"]),
            k_proj=LinearMap(p["attn.k.w"], p["attn.k.b"]),
            v_proj=LinearMap(p["attn.v.w"], p["attn.v.b"]),
            out_proj=LinearMap(p["attn.o.w"], p["attn.o.b"]),
            heads=self.heads,
        )

    def _embedding(self, t: int, cond: Condition, sched: NoiseSchedule) -> np.ndarray:
        de, da, dr = cond.d_spherical
        scalars = np.array([t / max(sched.steps, 1),
                            de / 90.0, da / 180.0, dr], dtype=np.float64)
        return _sinusoidal(scalars, self.c2).astype(self.dtype)

    # inference path -----------------------------------------------------

    def predict(self, x_t, t, cond, sched, stage_cb=None):
        p = self.params
        x = np.asarray(x_t, dtype=self.dtype)
        h1, _ = _conv(x, p["enc1.w"], p["enc1.b"], 1)
        h1 = np.maximum(h1, 0)
        h2, _ = _conv(h1, p["enc2.w"], p["enc2.b"], 2)
        h2 = np.maximum(h2, 0)
        h2 = h2 + self._embedding(t, cond, sched)

        fm = FeatureMap(h2)
        attn_params = self.attention_params()
        attn_out = self_attention(fm, attn_params)
        if stage_cb is not None:
            replacement = stage_cb(AttentionStage(layer="bottleneck", feature=fm,
                                                  params=attn_params, baseline=attn_out))
            if replacement is not None:
                attn_out = replacement
        h3 = h2 + attn_out.data.astype(self.dtype)

        u1, _ = _conv(_upsample2(h3), p["dec1.w"], p["dec1.b"], 1)
        u1 = np.maximum(u1, 0)
        out, _ = _conv(u1, p["dec2.w"], p["dec2.b"], 1)
        return out.astype(np.float64)

    # training path (explicit gradients) ---------------------------------

    def forward_train(self, x, t, cond, sched):
        """Forward pass that keeps every activation needed for backward."""
        p = self.params
        cache: dict = {"x": x}
        a1, cols1 = _conv(x, p["enc1.w"], p["enc1.b"], 1)
        h1 = np.maximum(a1, 0)
        a2, cols2 = _conv(h1, p["enc2.w"], p["enc2.b"], 2)
        h2 = np.maximum(a2, 0)
        emb = self._embedding(t, cond, sched)
        hb = h2 + emb

        hh, ww, c = hb.shape
        n, hd = hh * ww, c // self.heads
        flat = hb.reshape(n, c)
        q = flat @ p["attn.q.w"].T + p["attn.q.b"]
        k = flat @ p["attn.k.w"].T + p["attn.k.b"]
        v = flat @ p["attn.v.w"].T + p["attn.v.b"]
        qh = q.reshape(n, self.heads, hd).transpose(1, 0, 2)
        kh = k.reshape(n, self.heads, hd).transpose(1, 0, 2)
        vh = v.reshape(n, self.heads, hd).transpose(1, 0, 2)
        logits = qh @ kh.transpose(0, 2, 1) / np.sqrt(hd)
        attn = _softmax_rows(logits)
        mixed = (attn @ vh).transpose(1, 0, 2).reshape(n, c)
        attn_out = mixed @ p["attn.o.w"].T + p["attn.o.b"]
        h3 = hb + attn_out.reshape(hh, ww, c)

        up = _upsample2(h3)
        a3, cols3 = _conv(up, p["dec1.w"], p["dec1.b"], 1)
        u1 = np.maximum(a3, 0)
        out, cols4 = _conv(u1, p["dec2.w"], p["dec2.b"], 1)

        cache.update(a1=a1, cols1=cols1, h1=h1, a2=a2, cols2=cols2, hb=hb,
                     q=qh, k=kh, v=vh, attn=attn, mixed=mixed, flat=flat,
                     up=up, a3=a3, cols3=cols3, u1=u1, cols4=cols4)
        return out, cache

    def backward(self, cache: dict, dout: np.ndarray) -> dict:
        """Gradients of a scalar loss w.r.t. every parameter, given the
        gradient at the network output."""
        p = self.params
        g: dict = {}
        du1, g["dec2.w"], g["dec2.b"] = _conv_back(dout, cache["cols4"], p["dec2.w"],
                                                   cache["u1"].shape, 1)
        du1 = du1 * (cache["a3"] > 0)
        dup, g["dec1.w"], g["dec1.b"] = _conv_back(du1, cache["cols3"], p["dec1.w"],
                                                   cache["up"].shape, 1)
        dh3 = _upsample2_back(dup)

        hh, ww, c = dh3.shape
        n, hd = hh * ww, c // self.heads
        dattn_out = dh3.reshape(n, c)
        dhb = dh3.copy()

        g["attn.o.w"] = dattn_out.T @ cache["mixed"]
        g["attn.o.b"] = dattn_out.sum(axis=0)
        dmixed = (dattn_out @ p["attn.o.w"]).reshape(n, self.heads, hd).transpose(1, 0, 2)
        attn, qh, kh, vh = cache["attn"], cache["q"], cache["k"], cache["v"]
        dattn = dmixed @ vh.transpose(0, 2, 1)
        dvh = attn.transpose(0, 2, 1) @ dmixed
        dlogits = attn * (dattn - (dattn * attn).sum(axis=-1, keepdims=True))
        dqh = dlogits @ kh / np.sqrt(hd)
        dkh = dlogits.transpose(0, 2, 1) @ qh / np.sqrt(hd)

        flat = cache["flat"]
        dq = dqh.transpose(1, 0, 2).reshape(n, c)
        dk = dkh.transpose(1, 0, 2).reshape(n, c)
        dv = dvh.transpose(1, 0, 2).reshape(n, c)
        g["attn.q.w"] = dq.T @ flat
        g["attn.q.b"] = dq.sum(axis=0)
        g["attn.k.w"] = dk.T @ flat
        g["attn.k.b"] = dk.sum(axis=0)
        g["attn.v.w"] = dv.T @ flat
        g["attn.v.b"] = dv.sum(axis=0)
        dflat = dq @ p["attn.q.w"] + dk @ p["attn.k.w"] + dv @ p["attn.v.w"]
        dhb += dflat.reshape(hh, ww, c)

        dh2 = dhb * (cache["a2"] > 0)
        dh1, g["enc2.w"], g["enc2.b"] = _conv_back(dh2, cache["cols2"], p["enc2.w"],
                                                   cache["h1"].shape, 2)
        dh1 = dh1 * (cache["a1"] > 0)
        _, g["enc1.w"], g["enc1.b"] = _conv_back(dh1, cache["cols1"], p["enc1.w"],
                                                 cache["x"].shape, 1)
        return g

    # persistence ---------------------------------------------------------

    def save(self, path) -> None:
        write_checkpoint(path, self.params,
                         header_extra={"seed": self.seed, "c1": self.c1,
                                       "c2": self.c2, "heads": self.heads})

    @classmethod
    def load(cls, path) -> "ToyUNet":
        arrays, header = read_checkpoint(path)
        net = cls(params={k: v.astype(np.float32) for k, v in arrays.items()},
                  seed=int(header.get("seed", 0)), c1=int(header["c1"]),
                  c2=int(header["c2"]), heads=int(header["heads"]))
        return net


def train_overfit(net: ToyUNet, views: list, conds: list, sched: NoiseSchedule,
                  steps: int, lr: float = 2e-3, seed: int = 0):
    """Overfit the net to predict the forward-process noise of a handful
    of rendered views. Adam on the explicit gradients; returns the per
    step loss curve.
    """
    rng = np.random.default_rng(seed)
    m = {k: np.zeros_like(v, dtype=np.float64) for k, v in net.params.items()}
    v2 = {k: np.zeros_like(v, dtype=np.float64) for k, v in net.params.items()}
    b1, b2, eps_ = 0.9, 0.999, 1e-8
    losses = []
    for it in range(1, steps + 1):
        i = int(rng.integers(len(views)))
        x0 = np.asarray(views[i], dtype=np.float64)
        t = int(rng.integers(1, sched.steps + 1))
        z = rng.standard_normal(x0.shape)
        a = sched.alphas[t]
        x_t = (np.sqrt(a) * x0 + np.sqrt(1 - a) * z).astype(net.dtype)
        out, cache = net.forward_train(x_t, t, conds[i], sched)
        diff = out - z
        losses.append(float(np.mean(diff ** 2)))
        grads = net.backward(cache, (2.0 / diff.size) * diff)
        for k, gk in grads.items():
            m[k] = b1 * m[k] + (1 - b1) * gk
            v2[k] = b2 * v2[k] + (1 - b2) * gk ** 2
            mh = m[k] / (1 - b1 ** it)
            vh = v2[k] / (1 - b2 ** it)
            net.params[k] = (net.params[k] - lr * mh / (np.sqrt(vh) + eps_)).astype(net.dtype)
    return losses
