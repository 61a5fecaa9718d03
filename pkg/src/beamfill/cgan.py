"""Conditional GAN imputer for masked measurement grids.

The generator maps (latent noise, zero-filled normalized observations,
mask) to a full normalized grid; the discriminator judges a candidate
grid given the same condition. The generator is first pre-trained
self-supervised (hide a fraction of the observed entries, reconstruct
observed positions under smooth-L1), then both nets train adversarially
with the non-saturating generator objective.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dataio import Dataset, MaskedSample
from .neuralnet import (
    NetParams,
    adam_step,
    backward,
    bce,
    forward,
    init_adam,
    init_net,
    smooth_l1,
)


@dataclass(frozen=True)
class GanConfig:
    latent_dim: int = 100
    gen_hidden: tuple = (128, 256, 256, 128)
    gen_out: int = 320
    disc_hidden: tuple = (64, 64, 64)
    pretrain_epochs: int = 50
    pretrain_lr: float = 1e-3
    gan_epochs: int = 200
    gan_lr: float = 1e-5
    batch_size: int = 64
    pretrain_hide_fraction: float = 0.2
    seed: int = 0

    def __post_init__(self):
        for name in ("latent_dim", "gen_out", "pretrain_epochs", "gan_epochs", "batch_size"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if not 0.0 < self.pretrain_hide_fraction < 1.0:
            raise ValueError("pretrain_hide_fraction must lie in (0, 1)")


@dataclass
class Normalizer:
    """Per-column z-scoring fitted on training observed entries only."""

    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, observed: np.ndarray) -> "Normalizer":
        observed = np.asarray(observed, dtype=float)
        if np.isnan(observed).all():
            raise ValueError("cannot fit a normalizer on a fully missing matrix")
        with np.errstate(invalid="ignore"):
            mean = np.nanmean(observed, axis=0)
            std = np.nanstd(observed, axis=0)
        mean = np.where(np.isnan(mean), float(np.nanmean(observed)), mean)
        std = np.where(np.isnan(std) | (std < 1e-9), 1.0, std)
        return cls(mean=mean, std=std)

    def transform(self, grid: np.ndarray) -> np.ndarray:
        return (np.asarray(grid, dtype=float) - self.mean) / self.std

    def inverse(self, grid: np.ndarray) -> np.ndarray:
        return np.asarray(grid, dtype=float) * self.std + self.mean

    def condition_vector(self, observed: np.ndarray, mask: np.ndarray) -> np.ndarray:
        """Normalized observations with zeros at masked slots."""
        z = self.transform(np.where(mask, self.mean, observed))
        return np.where(mask, 0.0, z)


def build_generator(config: GanConfig, seed: int = None) -> NetParams:
    dims = [config.latent_dim + 2 * config.gen_out, *config.gen_hidden, config.gen_out]
    acts = ["leaky_relu"] * len(config.gen_hidden) + ["none"]
    return init_net(dims, acts, config.seed if seed is None else seed)


def build_discriminator(config: GanConfig, seed: int = None) -> NetParams:
    dims = [3 * config.gen_out, *config.disc_hidden, 1]
    acts = ["leaky_relu"] * len(config.disc_hidden) + ["sigmoid"]
    return init_net(dims, acts, config.seed if seed is None else seed)


def gen_forward(params: NetParams, z, condition, mask):
    """Generator output (full normalized grid) for one sample or a batch."""
    z = np.asarray(z, dtype=float)
    condition = np.asarray(condition, dtype=float)
    mask_f = np.asarray(mask, dtype=float)
    x = np.concatenate([z, condition, mask_f], axis=-1)
    out, _ = forward(params, x)
    return out


def _rows_of(train) -> list:
    rows = train.rows if isinstance(train, Dataset) else list(train)
    if not rows:
        raise ValueError("training set is empty")
    for r in rows:
        if not isinstance(r, MaskedSample):
            raise ValueError("c-GAN training expects masked samples")
    return rows


def _batch_arrays(rows, normalizer):
    observed = np.vstack([r.observed for r in rows])
    masks = np.vstack([r.mask for r in rows])
    truth = np.vstack([r.truth for r in rows])
    cond = np.vstack([normalizer.condition_vector(r.observed, r.mask) for r in rows])
    real = normalizer.transform(truth)
    return observed, masks, cond, real


def pretrain_generator(train, config: GanConfig, normalizer: Normalizer = None):
    """Self-supervised pretraining; returns (params, per-epoch loss curve)."""
    rows = _rows_of(train)
    mn = rows[0].observed.size
    if mn != config.gen_out:
        raise ValueError(f"grid size {mn} != configured generator output {config.gen_out}")
    if normalizer is None:
        normalizer = Normalizer.fit(np.vstack([r.observed for r in rows]))
    rng = np.random.default_rng((config.seed & 0xFFFFFFFFFFFFFFFF, 1))
    gen = build_generator(config, seed=int(rng.integers(1, 2**63 - 1)))
    adam = init_adam(gen, config.pretrain_lr)
    norm_obs = np.vstack([normalizer.condition_vector(r.observed, r.mask) for r in rows])
    base_masks = np.vstack([r.mask for r in rows])
    curve = []
    for _epoch in range(config.pretrain_epochs):
        order = rng.permutation(len(rows))
        losses = []
        for lo in range(0, len(rows), config.batch_size):
            batch = order[lo : lo + config.batch_size]
            obs_mask = ~base_masks[batch]
            hide = np.zeros_like(obs_mask)
            for bi, ridx in enumerate(batch):
                obs_idx = np.flatnonzero(obs_mask[bi])
                n_hide = int(np.floor(config.pretrain_hide_fraction * obs_idx.size + 0.5))
                if n_hide > 0:
                    hide[bi, rng.choice(obs_idx, size=n_hide, replace=False)] = True
            if not obs_mask.any():
                continue
            input_mask = base_masks[batch] | hide
            cond = np.where(input_mask, 0.0, norm_obs[batch])
            z = rng.standard_normal((batch.size, config.latent_dim))
            target = norm_obs[batch]  # valid at observed slots, zeros elsewhere
            out, cache = forward(gen, np.concatenate([z, cond, input_mask.astype(float)], axis=1))
            loss, d_pred = smooth_l1(out, target, obs_mask)
            grads, _ = backward(gen, cache, d_pred)
            gen, adam = adam_step(gen, grads, adam)
            losses.append(loss)
        curve.append(float(np.mean(losses)) if losses else float("nan"))
    return gen, curve


def train_gan(train, gen: NetParams, config: GanConfig, normalizer: Normalizer):
    """Adversarial phase; returns (gen, disc, {"gen_loss": [...], "disc_loss": [...]})."""
    rows = _rows_of(train)
    mn = rows[0].observed.size
    if mn != config.gen_out:
        raise ValueError(f"grid size {mn} != configured generator output {config.gen_out}")
    rng = np.random.default_rng((config.seed & 0xFFFFFFFFFFFFFFFF, 2))
    disc = build_discriminator(config, seed=int(rng.integers(1, 2**63 - 1)))
    adam_g = init_adam(gen, config.gan_lr)
    adam_d = init_adam(disc, config.gan_lr)
    _, masks, cond_all, real_all = _batch_arrays(rows, normalizer)
    gen_curve, disc_curve = [], []
    for _epoch in range(config.gan_epochs):
        order = rng.permutation(len(rows))
        g_losses, d_losses = [], []
        for lo in range(0, len(rows), config.batch_size):
            batch = order[lo : lo + config.batch_size]
            cond = cond_all[batch]
            real = real_all[batch]
            mask_b = masks[batch]
            mask_f = mask_b.astype(float)
            ones = np.ones((batch.size, 1))
            zeros = np.zeros((batch.size, 1))

            # discriminator step: real grid vs generator-completed grid
            z = rng.standard_normal((batch.size, config.latent_dim))
            fake_out, _ = forward(gen, np.concatenate([z, cond, mask_f], axis=1))
            fake = np.where(mask_b, fake_out, real)
            d_real, cache_r = forward(disc, np.concatenate([real, cond, mask_f], axis=1))
            d_fake, cache_f = forward(disc, np.concatenate([fake, cond, mask_f], axis=1))
            loss_real, g_real = bce(d_real, ones)
            loss_fake, g_fake = bce(d_fake, zeros)
            grads_r, _ = backward(disc, cache_r, g_real)
            grads_f, _ = backward(disc, cache_f, g_fake)
            grads_d = [(gw1 + gw2, gb1 + gb2) for (gw1, gb1), (gw2, gb2) in zip(grads_r, grads_f)]
            disc, adam_d = adam_step(disc, grads_d, adam_d)
            d_losses.append(loss_real + loss_fake)

            # generator step, non-saturating: maximize log D(fake)
            z2 = rng.standard_normal((batch.size, config.latent_dim))
            gen_out, cache_g = forward(gen, np.concatenate([z2, cond, mask_f], axis=1))
            fake2 = np.where(mask_b, gen_out, real)
            d_out, cache_d = forward(disc, np.concatenate([fake2, cond, mask_f], axis=1))
            loss_g, d_gd = bce(d_out, ones)
            _, d_disc_in = backward(disc, cache_d, d_gd)
            d_gen_out = d_disc_in[:, :mn] * mask_f  # observed slots are pasted constants
            grads_g, _ = backward(gen, cache_g, d_gen_out)
            gen, adam_g = adam_step(gen, grads_g, adam_g)
            g_losses.append(loss_g)
        gen_curve.append(float(np.mean(g_losses)))
        disc_curve.append(float(np.mean(d_losses)))
    return gen, disc, {"gen_loss": gen_curve, "disc_loss": disc_curve}


def cgan_impute(gen: NetParams, row: MaskedSample, normalizer: Normalizer, z_seed, clamp=None):
    """Fill the masked slots of one row; observed slots pass through exactly.

    ``clamp`` optionally bounds the denormalized imputed values (lo, hi).
    """
    mn = row.observed.size
    latent = gen.layers[0].weights.shape[1] - 2 * mn
    if latent < 1:
        raise ValueError("generator input width does not match the grid size")
    z = np.random.default_rng(z_seed).standard_normal(latent)
    cond = normalizer.condition_vector(row.observed, row.mask)
    out = gen_forward(gen, z, cond, row.mask.astype(float))
    imputed = normalizer.inverse(out)
    if clamp is not None:
        imputed = np.clip(imputed, clamp[0], clamp[1])
    result = imputed.copy()
    result[~row.mask] = row.observed[~row.mask]
    return result
