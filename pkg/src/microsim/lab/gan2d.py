"""Adversarial training of a 2d point generator against the ring dataset.

One iteration performs one discriminator update (ascending its value, i.e.
descending loss_D) on a fresh noise/data mini-batch, then one generator
update on another fresh noise batch.  Everything is driven by a single
seeded generator, so a (seed, config) pair fixes the whole trajectory.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from ..losses import gan_losses
from ..optim import Optimizer, weight_clip
from ..rng import Rng
from ..tensor import NonFiniteError, Tensor, backward
from .mlp import Mlp, MlpSpec
from .report import TrainReport
from .ring import RingDatasetConfig, make_ring_dataset, mode_coverage


class TrainingDiverged(RuntimeError):
    def __init__(self, step: int, what: str):
        super().__init__(f"non-finite {what} at step {step}")
        self.step = step


@dataclass
class Gan2dResult:
    report: TrainReport
    generator: Mlp
    discriminator: Mlp
    final_samples: np.ndarray


def default_gen_spec(z_dim: int = 2, hidden: int = 10) -> MlpSpec:
    return MlpSpec.three_layer(z_dim, hidden, 2, final="identity")


def default_disc_spec(hidden: int = 10, wasserstein: bool = False) -> MlpSpec:
    return MlpSpec.three_layer(2, hidden, 1, final="identity" if wasserstein else "sigmoid")


def train_gan_2d(
    gen: MlpSpec | None,
    disc: MlpSpec | None,
    cfg: RingDatasetConfig,
    loss_variant: str = "minimax",
    optimizer: str = "sgd",
    steps: int = 1000,
    batch: int = 64,
    seed: int = 0,
    lr_g: float = 0.05,
    lr_d: float = 0.05,
    clip: float | None = None,
    z_dist: str = "uniform01",
    coverage_every: int = 500,
    coverage_samples: int = 4096,
) -> Gan2dResult:
    """Run the alternating two-player training loop and record its history.

    ``clip`` enables hard weight clipping of the discriminator after every
    one of its updates (intended for the Wasserstein variant).  Coverage is
    measured on a held-out noise stream every ``coverage_every`` steps and at
    termination.
    """
    start = time.perf_counter()
    rng = Rng(seed)
    eval_rng = rng.spawn(1)
    wasserstein = loss_variant == "wasserstein"
    gen = gen or default_gen_spec()
    disc = disc or default_disc_spec(wasserstein=wasserstein)
    g_net = Mlp(gen, rng)
    d_net = Mlp(disc, rng)
    sampler = make_ring_dataset(cfg, rng)
    opt_g = Optimizer(kind=optimizer, lr=lr_g)
    opt_d = Optimizer(kind=optimizer, lr=lr_d)
    z_dim = gen.in_dim

    def draw_z(r: Rng, n: int) -> np.ndarray:
        return r.uniform01((n, z_dim)) if z_dist == "uniform01" else r.standard_normal((n, z_dim))

    def gen_points(r: Rng, n: int) -> np.ndarray:
        return g_net(Tensor(draw_z(r, n))).data

    report = TrainReport(
        experiment="gan2d",
        seed=seed,
        snapshot_id=f"gan2d-seed{seed}-steps{steps}",
    )
    all_params = g_net.params + d_net.params

    for step in range(steps):
        try:
            # discriminator update on fresh noise and data
            z = Tensor(draw_z(rng, batch))
            x_real = Tensor(sampler.draw(batch))
            fake = g_net(z).detach()
            d_real = d_net(x_real)
            d_fake = d_net(fake)
            loss_d, _ = gan_losses(d_real, d_fake, loss_variant)
            for p in all_params:
                p.grad = None
            backward(loss_d)
            opt_d.step(d_net.params)
            if clip is not None:
                for p in d_net.params:
                    p.data = weight_clip(p.data, clip)

            # generator update on fresh noise
            z2 = Tensor(draw_z(rng, batch))
            fake2 = g_net(z2)
            d_fake2 = d_net(fake2)
            _, loss_g = gan_losses(d_real.detach(), d_fake2, loss_variant)
            for p in all_params:
                p.grad = None
            backward(loss_g)
            opt_g.step(g_net.params)
        except NonFiniteError as err:
            raise TrainingDiverged(step, str(err)) from err

        lg, ld = loss_g.item(), loss_d.item()
        if not (np.isfinite(lg) and np.isfinite(ld)):
            raise TrainingDiverged(step, "loss")
        report.loss_g.append(lg)
        report.loss_d.append(ld)
        if coverage_every and (step + 1) % coverage_every == 0:
            pts = gen_points(eval_rng, coverage_samples)
            report.coverage.append((step, mode_coverage(pts, cfg)))

    if steps > 0:
        final_samples = gen_points(eval_rng, coverage_samples)
        cov = mode_coverage(final_samples, cfg)
        if not report.coverage or report.coverage[-1][0] != steps - 1:
            report.coverage.append((steps - 1, cov))
        report.metrics["final_coverage"] = cov
    else:
        final_samples = np.zeros((0, 2))
    report.wall_clock = time.perf_counter() - start
    return Gan2dResult(
        report=report, generator=g_net, discriminator=d_net, final_samples=final_samples
    )


def rasterize_points(
    real: np.ndarray,
    fake: np.ndarray,
    size: int = 128,
    extent: float = 1.5,
) -> np.ndarray:
    """Grayscale scatter plot: real points at 0.5, fake points at 1.0.

    Points map linearly from [-extent, extent]^2 onto a [size, size] grid;
    fake marks overwrite real ones.
    """
    img = np.zeros((size, size))

    def put(points: np.ndarray, value: float):
        if points.size == 0:
            return
        scaled = (points + extent) / (2 * extent) * (size - 1)
        ij = np.round(scaled).astype(int)
        keep = (ij[:, 0] >= 0) & (ij[:, 0] < size) & (ij[:, 1] >= 0) & (ij[:, 1] < size)
        ij = ij[keep]
        img[size - 1 - ij[:, 1], ij[:, 0]] = value

    put(np.asarray(real), 0.5)
    put(np.asarray(fake), 1.0)
    return img
