"""Per-step adversarial training: K discriminator updates on independent
minibatches, ensemble aggregation, generator update against the aggregated
feedback, encoder update. DC-GAN (no encoder) and VAE-GAN (K=1) baselines run
through the same step with the corresponding configuration."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from . import losses as L
from .data import BatchStream, SemiSupervisedView, batch_stream
from .ensemble import EnsembleConfig, aggregate_mean
from .networks import (Discriminator, Encoder, Generator, NetworkConfig,
                       build_networks, class_probabilities, load_checkpoint,
                       load_into_module, module_arrays, reparameterize,
                       save_checkpoint)

log = logging.getLogger(__name__)


@dataclass
class TrainingConfig:
    m: int                      # samples drawn per epoch
    batch_size: int
    k: int = 1
    epochs: int = 1
    labeled_fraction: float = 0.10
    lr_g: float = 2e-4
    lr_d: float = 2e-4
    lr_e: float = 1e-5
    adam_beta1: float = 0.5
    seed: int = 0
    checkpoint_interval: int = 0  # epochs between checkpoints; 0 = final only

    def __post_init__(self):
        if self.m // self.batch_size < 1:
            raise ValueError(
                f"need at least one step per epoch: m={self.m}, batch_size={self.batch_size}"
            )
        if min(self.lr_g, self.lr_d, self.lr_e) < 0:
            raise ValueError("learning rates must be >= 0 (0 disables the update)")
        if not 0.0 < self.labeled_fraction <= 1.0:
            raise ValueError(f"labeled_fraction must be in (0,1], got {self.labeled_fraction}")

    @property
    def steps_per_epoch(self) -> int:
        return self.m // self.batch_size


def build_optimizer(params, lr: float, beta1: float) -> torch.optim.Adam:
    """Adam with beta2=0.999, eps=1e-8; moments start at zero."""
    if lr <= 0:
        raise ValueError(f"learning rate must be positive, got {lr}")
    return torch.optim.Adam(params, lr=lr, betas=(beta1, 0.999), eps=1e-8)


def _maybe_optimizer(params, lr, beta1):
    # lr == 0 means "frozen network": no optimizer, no update
    return None if lr == 0 else build_optimizer(params, lr, beta1)


@dataclass
class ModelState:
    net_config: NetworkConfig
    encoder: Encoder | None
    generator: Generator
    discriminators: list[Discriminator]
    opt_e: torch.optim.Adam | None
    opt_g: torch.optim.Adam | None
    opt_ds: list
    noise_rng: torch.Generator
    select_rng: np.random.Generator
    epoch: int = 0
    step: int = 0

    @property
    def k(self) -> int:
        return len(self.discriminators)


def init_state(net_config: NetworkConfig, config: TrainingConfig,
               with_encoder: bool = True) -> ModelState:
    torch.manual_seed(config.seed)
    encoder, generator, discriminators = build_networks(
        net_config, seed=config.seed, with_encoder=with_encoder,
        n_discriminators=config.k)
    noise_rng = torch.Generator().manual_seed(config.seed + 1)
    select_rng = np.random.default_rng(config.seed + 2)
    return ModelState(
        net_config=net_config,
        encoder=encoder,
        generator=generator,
        discriminators=discriminators,
        opt_e=_maybe_optimizer(encoder.parameters(), config.lr_e, config.adam_beta1)
        if encoder is not None else None,
        opt_g=_maybe_optimizer(generator.parameters(), config.lr_g, config.adam_beta1),
        opt_ds=[_maybe_optimizer(d.parameters(), config.lr_d, config.adam_beta1)
                for d in discriminators],
        noise_rng=noise_rng,
        select_rng=select_rng,
    )


def to_torch_images(images: np.ndarray) -> torch.Tensor:
    """(N, H, W, C) array -> (N, C, H, W) float tensor."""
    if isinstance(images, torch.Tensor):
        return images
    return torch.from_numpy(np.ascontiguousarray(images.transpose(0, 3, 1, 2))).float()


def sample_noise(state: ModelState, batch_size: int) -> torch.Tensor:
    return torch.randn(batch_size, state.net_config.latent_dim,
                       generator=state.noise_rng)


def _f(t) -> float:
    return float(t.detach()) if isinstance(t, torch.Tensor) else float(t)


def _step(optimizer, loss):
    if optimizer is None:
        return
    optimizer.zero_grad(set_to_none=True)
    loss.backward()
    optimizer.step()


class _RepeatBatch:
    """Adapts a single fixed batch to the fresh-minibatch drawing interface."""

    def __init__(self, batch):
        self.batch = batch

    def __next__(self):
        return self.batch


def _as_stream(unlabeled_batch):
    if isinstance(unlabeled_batch, (BatchStream,)) or hasattr(unlabeled_batch, "__next__"):
        return unlabeled_batch
    return _RepeatBatch(unlabeled_batch)


def _aggregate(values, ensemble: EnsembleConfig, pick: int | None):
    if ensemble.mode == "mean":
        return aggregate_mean(values, ensemble.weights).value
    return values[pick]


def train_step(state: ModelState, labeled_batch, unlabeled_batch,
               config: TrainingConfig,
               ensemble: EnsembleConfig | None = None) -> L.LossBreakdown:
    """One full update pass; mutates state in place and returns the losses.

    `unlabeled_batch` may be a single (N,H,W,C) array, reused for every draw,
    or a batch iterator from which each discriminator draws a fresh minibatch.
    `labeled_batch` is an (images, labels) pair or None to skip the supervised
    term.
    """
    if ensemble is None:
        ensemble = EnsembleConfig(k=state.k)
    if ensemble.k != state.k:
        raise ValueError(f"ensemble k={ensemble.k} but state has {state.k} discriminators")
    unlab = _as_stream(unlabeled_batch)
    have_encoder = state.encoder is not None
    bd = L.LossBreakdown()
    b = config.batch_size

    if labeled_batch is None:
        log.warning("train step %d: empty labeled batch, skipping supervised term",
                    state.step)
        x_lab = y_lab = None
    else:
        x_lab = to_torch_images(labeled_batch[0])
        y_lab = torch.as_tensor(np.asarray(labeled_batch[1]), dtype=torch.long)

    # Reconstruction (fake2) path: one encode of the step's real minibatch,
    # shared by the D and G updates.
    x_step = to_torch_images(next(unlab))
    if have_encoder:
        enc_out = state.encoder(x_step)
        eps = torch.randn(enc_out.mu.shape, generator=state.noise_rng)
        z_recon = reparameterize(enc_out, eps).z
        fake2 = state.generator(z_recon)
    else:
        z_recon = fake2 = None

    # --- discriminator updates, one fresh real and noise minibatch each
    d_sup_vals, d_real_vals, d_f1_vals, d_f2_vals = [], [], [], []
    for k, (disc, opt) in enumerate(zip(state.discriminators, state.opt_ds)):
        z_k = sample_noise(state, b)
        with torch.no_grad():
            fake1_k = state.generator(z_k)
        x_k = to_torch_images(next(unlab))
        p_real = class_probabilities(disc(x_k).logits)
        d_real = L.d_real_loss(p_real)
        d_fake1 = L.d_fake_loss(class_probabilities(disc(fake1_k).logits))
        if fake2 is not None:
            d_fake2 = L.d_fake_loss(class_probabilities(disc(fake2.detach()).logits))
        else:
            d_fake2 = torch.zeros(())
        total = L.d_unsupervised_loss(d_real, d_fake1, d_fake2)
        if x_lab is not None:
            p_lab = class_probabilities(disc(x_lab).logits)
            d_sup = L.d_supervised_loss(p_lab, y_lab)
            total = total + d_sup
            d_sup_vals.append(_f(d_sup))
        _step(opt, total)
        d_real_vals.append(_f(d_real))
        d_f1_vals.append(_f(d_fake1))
        d_f2_vals.append(_f(d_fake2))

    bd.d_supervised = float(np.mean(d_sup_vals)) if d_sup_vals else 0.0
    bd.d_real = float(np.mean(d_real_vals))
    bd.d_fake1 = float(np.mean(d_f1_vals))
    bd.d_fake2 = float(np.mean(d_f2_vals))

    # One ensemble pick per step serves the G and E updates in random mode.
    pick = int(state.select_rng.integers(state.k)) if ensemble.mode == "random" else None

    # --- generator update (D and E frozen)
    z_g = sample_noise(state, b)
    fake1_g = state.generator(z_g)
    fake2_g = state.generator(z_recon.detach()) if z_recon is not None else None
    p_fake1 = []
    p_fake2 = []
    feat_losses = []
    with torch.no_grad():
        real_feats = [d(x_step).features for d in state.discriminators]
    for k, disc in enumerate(state.discriminators):
        out1 = disc(fake1_g)
        p_fake1.append(class_probabilities(out1.logits)[..., -1])
        feat_losses.append(L.feature_matching_loss(real_feats[k], out1.features))
        if fake2_g is not None:
            p_fake2.append(class_probabilities(disc(fake2_g).logits)[..., -1])
    p1 = _aggregate(p_fake1, ensemble, pick)
    g_fake1 = (-torch.log((1.0 - p1).clamp(min=L.P_CLAMP))).mean()
    g_feature = _aggregate(feat_losses, ensemble, pick)
    if p_fake2:
        p2 = _aggregate(p_fake2, ensemble, pick)
        g_fake2 = (-torch.log((1.0 - p2).clamp(min=L.P_CLAMP))).mean()
    else:
        g_fake2 = torch.zeros(())
    _step(state.opt_g, L.g_total_loss(g_feature, g_fake1, g_fake2))
    bd.g_feature = _f(g_feature)
    bd.g_fake1 = _f(g_fake1)
    bd.g_fake2 = _f(g_fake2)

    # --- encoder update on a fresh real minibatch (G and D frozen)
    if have_encoder:
        x_e = to_torch_images(next(unlab))
        enc_e = state.encoder(x_e)
        eps_e = torch.randn(enc_e.mu.shape, generator=state.noise_rng)
        fake2_e = state.generator(reparameterize(enc_e, eps_e).z)
        e_kl = L.kl_loss(enc_e)
        with torch.no_grad():
            real_feats_e = [d(x_e).features for d in state.discriminators]
        feat_e = [L.feature_matching_loss(real_feats_e[k], d(fake2_e).features)
                  for k, d in enumerate(state.discriminators)]
        e_feature = _aggregate(feat_e, ensemble, pick)
        _step(state.opt_e, L.e_total_loss(e_kl, e_feature))
        bd.e_kl = _f(e_kl)
        bd.e_feature = _f(e_feature)

    for name, value in bd.as_row().items():
        if not np.isfinite(value):
            raise RuntimeError(
                f"non-finite loss component {name!r} at step {state.step}"
            )
    state.step += 1
    return bd


def save_model_state(state: ModelState, directory, config: TrainingConfig | None = None):
    """One checkpoint file per network, plus one for optimizer moments."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    meta = {"net_config": state.net_config.to_dict(),
            "epoch": state.epoch, "step": state.step, "k": state.k,
            "with_encoder": state.encoder is not None}
    save_checkpoint(directory / "generator.ckpt",
                    module_arrays(state.generator), meta)
    if state.encoder is not None:
        save_checkpoint(directory / "encoder.ckpt", module_arrays(state.encoder), meta)
    for i, d in enumerate(state.discriminators):
        save_checkpoint(directory / f"discriminator_{i}.ckpt", module_arrays(d), meta)
    opt_arrays = {}
    for tag, opt in [("g", state.opt_g), ("e", state.opt_e)] + \
            [(f"d{i}", o) for i, o in enumerate(state.opt_ds)]:
        if opt is None:
            continue
        for pi, pstate in opt.state_dict()["state"].items():
            for key in ("exp_avg", "exp_avg_sq"):
                opt_arrays[f"{tag}.{pi}.{key}"] = pstate[key].numpy()
            opt_arrays[f"{tag}.{pi}.step"] = np.asarray(
                [float(pstate["step"])], dtype=np.float32)
    save_checkpoint(directory / "optimizer.ckpt", opt_arrays, meta)
    return directory


def load_model_state(directory, config: TrainingConfig) -> ModelState:
    directory = Path(directory)
    meta, gen_arrays = load_checkpoint(directory / "generator.ckpt")
    net_config = NetworkConfig.from_dict(meta["net_config"])
    state = init_state(net_config, config, with_encoder=meta["with_encoder"])
    if meta["k"] != state.k:
        raise ValueError(f"checkpoint has k={meta['k']} but config requests k={state.k}")
    load_into_module(state.generator, gen_arrays)
    if meta["with_encoder"]:
        _, arrays = load_checkpoint(directory / "encoder.ckpt")
        load_into_module(state.encoder, arrays)
    for i, d in enumerate(state.discriminators):
        _, arrays = load_checkpoint(directory / f"discriminator_{i}.ckpt")
        load_into_module(d, arrays)
    state.epoch = meta["epoch"]
    state.step = meta["step"]
    return state


def train(view: SemiSupervisedView, net_config: NetworkConfig,
          config: TrainingConfig, ensemble: EnsembleConfig | None = None,
          with_encoder: bool = True, history_path=None, checkpoint_dir=None,
          progress: bool = True):
    """Runs epochs x floor(m/B) steps; returns (state, history_rows, checkpoints).

    Fully deterministic for a fixed config and seed: network init, data
    shuffles, noise, dropout, and ensemble picks all derive from config.seed.
    """
    if ensemble is None:
        ensemble = EnsembleConfig(k=config.k)
    state = init_state(net_config, config, with_encoder=with_encoder)
    labeled = batch_stream(view, config.batch_size, "labeled", config.seed + 101) \
        if view.n_labeled > 0 else None
    unlabeled = batch_stream(view, config.batch_size, "unlabeled", config.seed + 202)
    history = []
    checkpoints = []

    def checkpoint(tag):
        if checkpoint_dir is None:
            return
        try:
            path = save_model_state(state, Path(checkpoint_dir) / tag, config)
        except OSError:
            if history_path is not None:
                L.write_history_csv(history_path, history)
            raise
        checkpoints.append(path)

    for epoch in range(config.epochs):
        t0 = time.monotonic()
        epoch_rows = []
        for _ in range(config.steps_per_epoch):
            lab = next(labeled) if labeled is not None else None
            bd = train_step(state, lab, unlabeled, config, ensemble)
            row = bd.as_row()
            row["step"] = state.step
            row["epoch"] = epoch + 1
            history.append(row)
            epoch_rows.append(row)
        state.epoch = epoch + 1
        if progress:
            means = {k: float(np.mean([r[k] for r in epoch_rows]))
                     for k in ("total_d", "total_g", "total_e")}
            print(f"epoch {state.epoch}/{config.epochs} "
                  f"d={means['total_d']:.4f} g={means['total_g']:.4f} "
                  f"e={means['total_e']:.4f} ({time.monotonic() - t0:.1f}s)")
        if config.checkpoint_interval and state.epoch % config.checkpoint_interval == 0:
            checkpoint(f"epoch_{state.epoch:04d}")
    checkpoint("final")
    if history_path is not None:
        L.write_history_csv(history_path, history)
    return state, history, checkpoints
