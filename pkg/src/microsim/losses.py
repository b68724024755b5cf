"""Adversarial value functions, regularizers, and stage losses for the
frame-prediction trainer.

Expectations are arithmetic means over the batch throughout.  Score inputs
to the log-based variants must already be in (0, 1) (post-sigmoid);
Wasserstein scores are unconstrained.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy import ndimage

from .rng import Rng
from .robust_loss import RobustLossParams, rho
from .tensor import (
    DomainError,
    ShapeError,
    Tensor,
    absolute,
    add,
    as_tensor,
    dot,
    grad,
    log,
    mul,
    neg,
    sqrt,
    sub,
    tmean,
    tsum,
)
from .warp import middle_one_hot


# -- discrete GAN value function ---------------------------------------------

@dataclass
class DiscreteDistribution:
    """Finite distribution: atoms plus nonnegative weights summing to 1."""

    support: np.ndarray
    probs: np.ndarray

    def __post_init__(self):
        self.support = np.asarray(self.support)
        self.probs = np.asarray(self.probs, dtype=np.float64)
        if self.support.shape[0] != self.probs.shape[0]:
            raise ShapeError("support and probs lengths differ")
        if np.any(self.probs < 0):
            raise DomainError("probabilities must be nonnegative")
        if abs(self.probs.sum() - 1.0) > 1e-12:
            raise DomainError(f"probabilities sum to {self.probs.sum()}, not 1")


def _aligned(p_data: DiscreteDistribution, p_g: DiscreteDistribution):
    if p_data.support.shape != p_g.support.shape or np.any(p_data.support != p_g.support):
        raise ShapeError("distributions must share an aligned support")


def gan_value_discrete(p_data: DiscreteDistribution, p_g: DiscreteDistribution, d) -> float:
    """V(G, D) = sum_x p_data(x) log d(x) + p_g(x) log(1 - d(x))."""
    _aligned(p_data, p_g)
    d = np.asarray(d, dtype=np.float64)
    if d.shape != p_data.probs.shape:
        raise ShapeError(f"d has shape {d.shape}, expected {p_data.probs.shape}")
    if np.any(d <= 0.0) or np.any(d >= 1.0):
        raise DomainError("discriminator values must lie strictly inside (0, 1)")
    return float(np.sum(p_data.probs * np.log(d) + p_g.probs * np.log1p(-d)))


# -- batch GAN losses ---------------------------------------------------------

_VARIANTS = ("minimax", "non_saturating", "wasserstein", "unet_dual")


def _check_open_unit(t: Tensor, what: str):
    if np.any(t.data <= 0.0) or np.any(t.data >= 1.0):
        raise DomainError(f"{what} must lie strictly inside (0, 1) for log-based losses")


def gan_losses(scores_real, scores_fake, variant: str = "minimax"):
    """Both players' losses for one mini-batch of discriminator scores.

    minimax:         L_D = -E[log d_r] - E[log(1 - d_f)],  L_G = E[log(1 - d_f)]
    non_saturating:  L_D as minimax,                       L_G = -E[log d_f]
    wasserstein:     L_D = -E[d_r] + E[d_f],               L_G = -E[d_f]
    unet_dual:       scores are (scalar, pixel map) pairs; each non-saturating
                     term is summed over the two heads.

    Returns ``(loss_D, loss_G)`` as tensors (graph-connected when the scores
    are).  Minimizing L_D implements the discriminator's gradient ascent.
    """
    if variant not in _VARIANTS:
        raise ValueError(f"unknown variant {variant!r}; options: {_VARIANTS}")
    if variant == "unet_dual":
        r_scalar, r_pixel = (as_tensor(s) for s in scores_real)
        f_scalar, f_pixel = (as_tensor(s) for s in scores_fake)
        for t, what in ((r_scalar, "real scalar"), (r_pixel, "real pixel"),
                        (f_scalar, "fake scalar"), (f_pixel, "fake pixel")):
            _check_open_unit(t, what + " scores")
        loss_d = add(
            add(neg(tmean(log(r_scalar))), neg(tmean(log(r_pixel)))),
            add(neg(tmean(log(sub(1.0, f_scalar)))), neg(tmean(log(sub(1.0, f_pixel))))),
        )
        loss_g = add(neg(tmean(log(f_scalar))), neg(tmean(log(f_pixel))))
        return loss_d, loss_g

    d_real, d_fake = as_tensor(scores_real), as_tensor(scores_fake)
    if variant == "wasserstein":
        loss_d = add(neg(tmean(d_real)), tmean(d_fake))
        loss_g = neg(tmean(d_fake))
        return loss_d, loss_g
    _check_open_unit(d_real, "real scores")
    _check_open_unit(d_fake, "fake scores")
    loss_d = add(neg(tmean(log(d_real))), neg(tmean(log(sub(1.0, d_fake)))))
    if variant == "minimax":
        loss_g = tmean(log(sub(1.0, d_fake)))
    else:  # non_saturating
        loss_g = neg(tmean(log(d_fake)))
    return loss_d, loss_g


# -- gradient-based regularizers ----------------------------------------------

def _batched_input_grads(fn: Callable[[Tensor], Tensor], x: Tensor) -> Tensor:
    """Gradient of the summed scalar output w.r.t. ``x``; rows stay per-sample."""
    out = fn(x)
    total = tsum(out)
    (gx,) = grad(total, [x], create_graph=True)
    if not np.all(np.isfinite(gx.data)):
        raise DomainError("non-finite gradients at the regularizer probe")
    return gx


def r1_penalty(d_fn: Callable[[Tensor], Tensor], x_real, gamma: float = 1.0) -> Tensor:
    """(gamma / 2) E[ ||grad_x D(x)||^2 ] at real probe points.

    ``x_real`` is [b, d]; per-sample squared gradient norms are averaged.
    The result stays differentiable w.r.t. the discriminator parameters.
    """
    x = as_tensor(x_real)
    if not isinstance(x_real, Tensor):
        x = Tensor(x.data, requires_grad=True)
    gx = _batched_input_grads(d_fn, x)
    sq = tsum(mul(gx, gx), axis=tuple(range(1, gx.ndim))) if gx.ndim > 1 else tsum(mul(gx, gx))
    return mul(tmean(sq) if sq.ndim else sq, 0.5 * gamma)


def gradient_penalty(d_fn: Callable[[Tensor], Tensor], x_probe, lam: float = 1.0) -> Tensor:
    """lam * E[ (||grad_x D(x)||_2 - 1)^2 ] at the probe points."""
    x = as_tensor(x_probe)
    if not isinstance(x_probe, Tensor):
        x = Tensor(x.data, requires_grad=True)
    gx = _batched_input_grads(d_fn, x)
    sq = tsum(mul(gx, gx), axis=tuple(range(1, gx.ndim))) if gx.ndim > 1 else tsum(mul(gx, gx))
    norms = sqrt(sq)
    dev = sub(norms, 1.0)
    return mul(tmean(mul(dev, dev)) if dev.ndim else mul(dev, dev), lam)


@dataclass
class PathLengthState:
    """Running exponential moving average of the Jacobian-product norm."""

    ema: float = 0.0
    decay: float = 0.99
    steps: int = 0

    def update(self, value: float) -> float:
        if self.steps == 0:
            self.ema = value
        else:
            self.ema = self.decay * self.ema + (1.0 - self.decay) * value
        self.steps += 1
        return self.ema


def path_length_penalty(
    g_fn: Callable[[Tensor], Tensor],
    w_batch,
    y: np.ndarray,
    state: PathLengthState | None = None,
    target: float | None = None,
) -> Tensor:
    """E[ (|| grad_w (G(w) . y) ||_2 - a)^2 ].

    The Jacobian-vector product J_w^T y is obtained as the gradient of the
    dot product G(w) . y, which needs only one extra backward pass.  ``a``
    is the running EMA of the norms unless ``target`` pins it (useful for
    deterministic checks).  The state is updated with the current mean norm.
    """
    w = as_tensor(w_batch)
    if not isinstance(w_batch, Tensor):
        w = Tensor(w.data, requires_grad=True)
    y_row = np.asarray(y, dtype=np.float64).reshape(1, -1)

    def dot_out(wt: Tensor) -> Tensor:
        out = g_fn(wt)
        return tsum(mul(out, Tensor(np.broadcast_to(y_row, out.shape).copy())))

    gw = _batched_input_grads(dot_out, w)
    sq = tsum(mul(gw, gw), axis=tuple(range(1, gw.ndim))) if gw.ndim > 1 else tsum(mul(gw, gw))
    norms = sqrt(sq)
    mean_norm = float(np.mean(norms.data))
    if target is not None:
        a = float(target)
        if state is not None:
            state.update(mean_norm)
    else:
        if state is None:
            raise ValueError("path_length_penalty needs a state or an explicit target")
        a = state.update(mean_norm)
    dev = sub(norms, a)
    return tmean(mul(dev, dev)) if dev.ndim else mul(dev, dev)


def drift_penalty(scores, eps_drift: float = 0.001) -> Tensor:
    """eps_drift * E[ D(x)^2 ]; keeps raw critic outputs near zero."""
    s = as_tensor(scores)
    return mul(tmean(mul(s, s)), eps_drift)


def regularizer(kind: str, **kwargs) -> Tensor:
    """Dispatch by name: gradient_penalty | r1 | path_length | drift."""
    table = {
        "gradient_penalty": gradient_penalty,
        "r1": r1_penalty,
        "path_length": path_length_penalty,
        "drift": drift_penalty,
    }
    if kind not in table:
        raise ValueError(f"unknown regularizer {kind!r}; options: {tuple(table)}")
    return table[kind](**kwargs)


# -- consistency and encoder losses --------------------------------------------

@dataclass
class MixMask:
    """Indicator of one axis-aligned rectangle used to mix two images."""

    mask: np.ndarray
    y0: int
    x0: int
    y1: int
    x1: int

    def __post_init__(self):
        self.mask = np.asarray(self.mask, dtype=np.float64)
        expected = np.zeros_like(self.mask)
        expected[self.y0 : self.y1, self.x0 : self.x1] = 1.0
        if not np.array_equal(self.mask, expected):
            raise DomainError("mask must be exactly the rectangle indicator")


def random_mix_mask(h: int, w: int, rng: Rng, min_area: float = 0.25, max_area: float = 0.75) -> MixMask:
    """Uniform-random rectangle covering min_area..max_area of the image."""
    for _ in range(1000):
        y0, y1 = sorted(int(v) for v in rng.integers(0, h + 1, size=2))
        x0, x1 = sorted(int(v) for v in rng.integers(0, w + 1, size=2))
        area = (y1 - y0) * (x1 - x0) / (h * w)
        if min_area <= area <= max_area:
            mask = np.zeros((h, w))
            mask[y0:y1, x0:x1] = 1.0
            return MixMask(mask=mask, y0=y0, x0=x0, y1=y1, x1=x1)
    raise RuntimeError("failed to draw a rectangle in the requested area range")


def mix(a, b, mask: MixMask):
    """mask * a + (1 - mask) * b."""
    m = Tensor(mask.mask)
    return add(mul(as_tensor(a), m), mul(as_tensor(b), sub(1.0, m)))


def cutmix_consistency(pred_real_map, pred_fake_map, mixed_input_pred_map, mask: MixMask) -> Tensor:
    """Root-mean-square gap between mixed predictions and the prediction of
    the mixed input (pixel-averaged L2 norm)."""
    a, b, c = as_tensor(pred_real_map), as_tensor(pred_fake_map), as_tensor(mixed_input_pred_map)
    if a.shape != b.shape or a.shape != c.shape or a.shape != mask.mask.shape:
        raise ShapeError(
            f"cutmix maps must share a shape: {a.shape}, {b.shape}, {c.shape}, mask {mask.mask.shape}"
        )
    diff = sub(mix(a, b, mask), c)
    return sqrt(tmean(mul(diff, diff)))


def encoder_losses(pred_images, real_images, pred_latents, true_latents):
    """Reconstruction and latent-regression terms of the encoder training.

    recon = pixel-mean L1 between predicted and real images; latent_reg =
    latent-dimension-mean L1 between regressed and true latents.  Both are
    batch-averaged.
    """
    pi, ri = as_tensor(pred_images), as_tensor(real_images)
    pl, tl = as_tensor(pred_latents), as_tensor(true_latents)
    if pi.shape != ri.shape:
        raise ShapeError(f"image shapes differ: {pi.shape} vs {ri.shape}")
    if pl.shape != tl.shape:
        raise ShapeError(f"latent shapes differ: {pl.shape} vs {tl.shape}")
    recon = tmean(absolute(sub(pi, ri)))
    latent_reg = tmean(absolute(sub(pl, tl)))
    return recon, latent_reg


# -- frame-prediction stage losses ----------------------------------------------

@dataclass
class WeightMap:
    """Pixel weights emphasising growth regions: entries are 1.0 or 1.5."""

    values: np.ndarray
    dilation_radius: int = 0

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if not np.all(np.isin(self.values, (1.0, 1.5))):
            raise DomainError("weight map entries must be 1.0 or 1.5")


def build_weight_map(mask_prev, mask_target, dilation_radius: int = 0) -> WeightMap:
    """1.5 on (dilated) growth pixels of the target mask, 1.0 elsewhere.

    Growth is the positive part of mask_target - mask_prev; shrinkage does
    not count.  Dilation uses a square structuring element of the given
    radius.
    """
    prev = np.asarray(mask_prev, dtype=np.float64)
    target = np.asarray(mask_target, dtype=np.float64)
    if prev.shape != target.shape:
        raise ShapeError(f"mask shapes differ: {prev.shape} vs {target.shape}")
    for m in (prev, target):
        if not np.all(np.isin(m, (0.0, 1.0))):
            raise DomainError("masks must be binary")
    if dilation_radius < 0:
        raise ValueError("dilation radius must be >= 0")
    growth = (target - prev) > 0
    if dilation_radius > 0 and growth.any():
        size = 2 * dilation_radius + 1
        growth = ndimage.binary_dilation(growth, structure=np.ones((size, size), dtype=bool))
    return WeightMap(values=np.where(growth, 1.5, 1.0), dilation_radius=dilation_radius)


@dataclass
class StageWeights:
    """Scalar weights of the multi-frame objective."""

    lambda_g: float = 1.0
    lambda_adv: float = 0.01


_STAGES = ("flow", "kernel_init", "fine_tune", "multi")


def _robust_image_term(predicted, target, weights: WeightMap | None, robust: RobustLossParams) -> Tensor:
    pred, tgt = as_tensor(predicted), as_tensor(target)
    if pred.shape != tgt.shape:
        raise ShapeError(f"prediction {pred.shape} vs target {tgt.shape}")
    diff = sub(tgt, pred)
    if weights is not None:
        if weights.values.shape != pred.shape[-2:]:
            raise ShapeError(f"weight map {weights.values.shape} vs image {pred.shape}")
        wv = weights.values
        if pred.ndim > 2:
            wv = np.broadcast_to(wv, pred.shape).copy()
        diff = mul(diff, Tensor(wv))
    term = rho(diff, robust.alpha, robust.c)
    return tmean(term) if isinstance(term, Tensor) else Tensor(float(np.mean(term)))


def kernel_init_loss(k_h, k_v) -> Tensor:
    """Pixel-mean squared distance of both 1d kernels to the middle-one-hot.

    ``k_h``/``k_v`` are [h, w, N] with N odd; at the one-hot target the loss
    is 0, for all-zero kernels it is 2 (one unit-norm target per kernel).
    """
    kh, kv = as_tensor(k_h), as_tensor(k_v)
    if kh.shape != kv.shape or kh.ndim != 3:
        raise ShapeError(f"kernel fields must be matching [h,w,N], got {kh.shape}, {kv.shape}")
    n = kh.shape[2]
    one_hot = Tensor(np.broadcast_to(middle_one_hot(n), kh.shape).copy())
    dh = sub(kh, one_hot)
    dv = sub(kv, one_hot)
    per_pixel = add(tsum(mul(dh, dh), axis=2), tsum(mul(dv, dv), axis=2))
    return tmean(per_pixel)


def sdc_stage_losses(
    stage: str,
    predicted=None,
    target=None,
    kernels=None,
    adv_scores=None,
    weights: WeightMap | None = None,
    lambdas: StageWeights | None = None,
    robust: RobustLossParams | None = None,
) -> Tensor:
    """Scalar training objective of one frame-predictor stage.

    flow / fine_tune: robust loss of (target - predicted), optionally
    weighted before the loss.  kernel_init: :func:`kernel_init_loss` on the
    predicted 1d kernel pair.  multi: (lambda_g / n) * sum of robust terms
    over the n predicted frames plus lambda_adv times the non-saturating
    adversarial term -E[log D(fake sequence)].
    """
    if stage not in _STAGES:
        raise ValueError(f"unknown stage {stage!r}; options: {_STAGES}")
    if stage in ("flow", "fine_tune"):
        if predicted is None or target is None or robust is None:
            raise ValueError(f"{stage} stage needs predicted, target, and robust params")
        return _robust_image_term(predicted, target, weights, robust)
    if stage == "kernel_init":
        if kernels is None:
            raise ValueError("kernel_init stage needs the predicted kernel pair")
        k_h, k_v = (kernels.k_h, kernels.k_v) if hasattr(kernels, "k_h") else kernels
        return kernel_init_loss(k_h, k_v)
    # multi
    if predicted is None or target is None or robust is None:
        raise ValueError("multi stage needs predicted/target frame lists and robust params")
    preds: Sequence = predicted if isinstance(predicted, (list, tuple)) else [predicted]
    tgts: Sequence = target if isinstance(target, (list, tuple)) else [target]
    if len(preds) != len(tgts) or not preds:
        raise ValueError(f"multi stage needs n >= 1 matching frame pairs, got {len(preds)}/{len(tgts)}")
    lam = lambdas or StageWeights()
    total = None
    for p, t in zip(preds, tgts):
        term = _robust_image_term(p, t, weights, robust)
        total = term if total is None else add(total, term)
    loss = mul(total, lam.lambda_g / len(preds))
    if adv_scores is not None:
        s = as_tensor(adv_scores)
        _check_open_unit(s, "sequence discriminator scores")
        loss = add(loss, mul(neg(tmean(log(s))), lam.lambda_adv))
    return loss
