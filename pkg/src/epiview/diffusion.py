"""Noise schedule, deterministic DDIM sampling and inversion, and the
pose-conditioned denoiser interface with feature hooks.

Denoisers expose zero or more *attention stages*. During a prediction a
stage callback may observe each stage (feature map plus the block's
parameters and unmodified output) and optionally return a replacement
output, which is how the pipeline injects retrieved features without the
backends knowing about epipolar geometry at all.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .attention import AttentionParams
from .geometry import RelativePose
from .numerics import FeatureMap, apply_linear

__all__ = [
    "NoiseSchedule",
    "LatentImage",
    "Condition",
    "AttentionStage",
    "DenoiserHooks",
    "StageCapture",
    "Denoiser",
    "OracleDenoiser",
    "AnalyticAttentionDenoiser",
    "forward_diffuse",
    "ddim_step",
    "ddim_invert_step",
    "ddim_sample",
    "ddim_invert",
    "denoise",
    "x0_from_eps",
    "eps_from_x0",
]


@dataclass(frozen=True)
class NoiseSchedule:
    """Cumulative signal levels alpha_t for t = 0..T; alpha_0 = 1 is the
    clean end and alpha_T the noisiest."""

    alphas: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.alphas, dtype=np.float64)
        object.__setattr__(self, "alphas", a)
        if a.ndim != 1 or a.size < 1:
            raise ValueError("alphas must be a non-empty vector")
        if np.any(a <= 0) or np.any(a > 1):
            raise ValueError("alphas must lie in (0, 1]")
        if a.size > 1 and not np.all(np.diff(a) < 0):
            raise ValueError("alphas must be strictly decreasing")

    @property
    def steps(self) -> int:
        return self.alphas.size - 1

    @classmethod
    def linear_beta(cls, steps: int, beta_min: float = 1e-4, beta_max: float = 0.12) -> "NoiseSchedule":
        """Linear-in-beta schedule; the desk-scale default is 50 steps."""
        if steps == 0:
            return cls(alphas=np.array([1.0]))
        betas = np.linspace(beta_min, beta_max, steps)
        return cls(alphas=np.concatenate([[1.0], np.cumprod(1.0 - betas)]))


@dataclass(frozen=True)
class LatentImage:
    """An H x W x 3 grid together with its timestep index."""

    data: np.ndarray
    t: int = 0

    def __post_init__(self):
        data = np.ascontiguousarray(self.data, dtype=np.float32)
        if data.ndim != 3:
            raise ValueError("latent must be HxWxC")
        if not np.all(np.isfinite(data)):
            raise ValueError("latent contains non-finite entries")
        object.__setattr__(self, "data", data)


@dataclass(frozen=True)
class Condition:
    """What a prediction is conditioned on: the reference image, the
    relative pose from the reference view to the view being generated,
    the same pose in spherical deltas (for embeddings), and an optional
    view key that oracle-style backends use to look up their target.

    The reference branch uses the identity pose (zero transformation)
    with the input image as its own reference."""

    rel_pose: RelativePose
    ref_image: np.ndarray | None = None
    d_spherical: tuple = (0.0, 0.0, 0.0)
    view_key: int | None = None

    @classmethod
    def reference(cls, ref_image: np.ndarray | None = None) -> "Condition":
        return cls(rel_pose=RelativePose.identity(), ref_image=ref_image,
                   d_spherical=(0.0, 0.0, 0.0), view_key=None)


@dataclass
class AttentionStage:
    """One attention block as seen by a stage callback."""

    layer: str
    feature: FeatureMap          # pre-attention feature map F
    params: AttentionParams
    baseline: FeatureMap         # the block's unmodified output F-hat


@dataclass
class StageCapture:
    q: FeatureMap
    k: FeatureMap
    v: FeatureMap
    f: FeatureMap


@dataclass
class DenoiserHooks:
    """Capture request plus storage. Captures exist exactly for the
    requested layers that fired during the prediction."""

    capture_layers: frozenset
    captured: dict = field(default_factory=dict)

    def grab(self, stage: AttentionStage) -> None:
        if stage.layer not in self.capture_layers:
            return
        p = stage.params
        self.captured[stage.layer] = StageCapture(
            q=apply_linear(p.q_proj, stage.feature),
            k=apply_linear(p.k_proj, stage.feature),
            v=apply_linear(p.v_proj, stage.feature),
            f=stage.feature,
        )


class Denoiser:
    """Interface: predict noise for a latent, optionally exposing
    attention stages to a callback."""

    layers: tuple = ()

    def predict(self, x_t: np.ndarray, t: int, cond: Condition,
                sched: NoiseSchedule, stage_cb=None) -> np.ndarray:
        raise NotImplementedError


def forward_diffuse(x0: LatentImage, t: int, z: np.ndarray, sched: NoiseSchedule) -> LatentImage:
    """Noising step: sqrt(a_t) x0 + sqrt(1 - a_t) z."""
    if not 0 <= t <= sched.steps:
        raise ValueError(f"t={t} outside schedule")
    z = np.asarray(z, dtype=np.float64)
    if z.shape != x0.data.shape:
        raise ValueError("noise shape does not match the latent")
    a = sched.alphas[t]
    return LatentImage(data=np.sqrt(a) * x0.data.astype(np.float64) + np.sqrt(1.0 - a) * z, t=t)


def x0_from_eps(x_t: np.ndarray, eps: np.ndarray, t: int, sched: NoiseSchedule) -> np.ndarray:
    """Clean-image estimate implied by a noise prediction."""
    a = sched.alphas[t]
    if a == 0:
        raise ZeroDivisionError("alpha_t must be positive")
    return (np.asarray(x_t, dtype=np.float64) - np.sqrt(1.0 - a) * np.asarray(eps, dtype=np.float64)) / np.sqrt(a)


def eps_from_x0(x_t: np.ndarray, x0: np.ndarray, t: int, sched: NoiseSchedule) -> np.ndarray:
    """Noise implied by a clean-image target; zero at the clean endpoint
    where the decomposition is degenerate."""
    a = sched.alphas[t]
    if 1.0 - a <= 0.0:
        return np.zeros_like(np.asarray(x_t, dtype=np.float64))
    return (np.asarray(x_t, dtype=np.float64) - np.sqrt(a) * np.asarray(x0, dtype=np.float64)) / np.sqrt(1.0 - a)


def ddim_step(x_t: np.ndarray, eps: np.ndarray, t: int, sched: NoiseSchedule) -> np.ndarray:
    """Deterministic update t -> t-1 (eta = 0)."""
    if not 1 <= t <= sched.steps:
        raise ValueError(f"t={t} has no previous step")
    a_prev = sched.alphas[t - 1]
    x0_hat = x0_from_eps(x_t, eps, t, sched)
    return np.sqrt(a_prev) * x0_hat + np.sqrt(1.0 - a_prev) * np.asarray(eps, dtype=np.float64)


def ddim_invert_step(x_t: np.ndarray, eps: np.ndarray, t: int, sched: NoiseSchedule) -> np.ndarray:
    """First-order inverted update t -> t+1 using the prediction at t."""
    if not 0 <= t < sched.steps:
        raise ValueError(f"t={t} has no next step")
    a_next = sched.alphas[t + 1]
    x0_hat = x0_from_eps(x_t, eps, t, sched)
    return np.sqrt(a_next) * x0_hat + np.sqrt(1.0 - a_next) * np.asarray(eps, dtype=np.float64)


def ddim_sample(x_start: LatentImage, denoiser: Denoiser, cond: Condition,
                sched: NoiseSchedule, stage_cb=None) -> LatentImage:
    """Run the full deterministic denoising loop from t = T to 0.

    ``stage_cb(step_index, stage)`` is forwarded to the denoiser with the
    iteration index counted from the noise end (0 = first denoising step).
    """
    x = x_start.data.astype(np.float64)
    for i, t in enumerate(range(sched.steps, 0, -1)):
        cb = None
        if stage_cb is not None:
            def cb(stage, _i=i):
                return stage_cb(_i, stage)
        eps = denoiser.predict(x, t, cond, sched, stage_cb=cb)
        x = ddim_step(x, eps, t, sched)
    return LatentImage(data=x, t=0)


def ddim_invert(x0: LatentImage, denoiser: Denoiser, cond: Condition,
                sched: NoiseSchedule) -> LatentImage:
    """Map a clean image to the initial noise that regenerates it."""
    x = x0.data.astype(np.float64)
    for t in range(0, sched.steps):
        eps = denoiser.predict(x, t, cond, sched)
        x = ddim_invert_step(x, eps, t, sched)
    return LatentImage(data=x, t=sched.steps)


def denoise(x_t: LatentImage, cond: Condition, denoiser: Denoiser,
            sched: NoiseSchedule, hooks: DenoiserHooks | None = None):
    """Single noise prediction plus hook captures for requested layers.

    Observation is side-effect-free: the returned prediction is identical
    with and without hooks.
    """
    cb = None
    if hooks is not None:
        def cb(stage):
            hooks.grab(stage)
            return None
    eps = denoiser.predict(x_t.data.astype(np.float64), x_t.t, cond, sched, stage_cb=cb)
    return eps, (hooks.captured if hooks is not None else {})


class OracleDenoiser(Denoiser):
    """Closed-form predictions toward a known target image per condition.

    The implied clean-image estimate equals the target at every step,
    which makes DDIM round trips exact; used to test the diffusion math
    in isolation. Exposes no attention stages.
    """

    layers = ()

    def __init__(self, targets: dict):
        # targets are held at float32 precision so the feature-map view of
        # the estimate is lossless
        self._targets = {k: np.asarray(v, dtype=np.float32).astype(np.float64)
                         for k, v in targets.items()}

    def target_for(self, cond: Condition) -> np.ndarray:
        key = cond.view_key
        if key not in self._targets:
            raise KeyError(f"no target image for view key {key!r}")
        return self._targets[key]

    def predict(self, x_t, t, cond, sched, stage_cb=None):
        return eps_from_x0(x_t, self.target_for(cond), t, sched)


class AnalyticAttentionDenoiser(Denoiser):
    """Oracle-style backend with per-view perturbed targets and a single
    pass-through attention stage.

    Each view's target is the ground-truth image plus seeded Gaussian
    noise of scale ``sigma`` (the reference branch stays clean by
    default). The exposed stage's feature map is the current clean-image
    estimate with identity projections, so injecting retrieved features
    directly mixes corresponding pixel estimates across views and the
    consistency effect becomes measurable.
    """

    layers = ("stage0",)

    def __init__(self, targets: dict, sigma: float = 0.0, seed: int = 0,
                 perturb_reference: bool = False):
        self.sigma = float(sigma)
        self.seed = int(seed)
        self._clean = {k: np.asarray(v, dtype=np.float32).astype(np.float64)
                       for k, v in targets.items()}
        self._perturbed: dict = {}
        self._perturb_reference = perturb_reference

    def target_for(self, cond: Condition) -> np.ndarray:
        key = cond.view_key
        if key not in self._clean:
            raise KeyError(f"no target image for view key {key!r}")
        clean = self._clean[key]
        if self.sigma == 0.0 or (key is None and not self._perturb_reference):
            return clean
        if key not in self._perturbed:
            # noise keyed by (seed, view) so permuting future views cannot
            # change earlier ones
            rng = np.random.default_rng([self.seed, 7001 + (0 if key is None else int(key))])
            y = clean + self.sigma * rng.standard_normal(clean.shape)
            self._perturbed[key] = y.astype(np.float32).astype(np.float64)
        return self._perturbed[key]

    def predict(self, x_t, t, cond, sched, stage_cb=None):
        y = self.target_for(cond)
        eps = eps_from_x0(x_t, y, t, sched)
        if stage_cb is not None:
            fm = FeatureMap(y)
            stage = AttentionStage(layer="stage0", feature=fm,
                                   params=AttentionParams.identity(y.shape[2]),
                                   baseline=fm)
            replacement = stage_cb(stage)
            if replacement is not None:
                eps = eps_from_x0(x_t, replacement.data.astype(np.float64), t, sched)
        return eps
