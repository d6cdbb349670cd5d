"""Aggregate-posterior autoencoder training.

The encoder is deterministic.  The aggregate posterior is a Gaussian KDE over
the encodings of a random subset of the training data (the KDE subset); the
remaining training rows (the SGD subset) feed minibatches.  Each minibatch
minimises

    mean |x - D(E(x))|^2  +  beta * mean_b [log q(z_b) - log N(z_b; 0, I)]

with ``beta`` reset every epoch to the mean (unsquared) validation
reconstruction norm.  KDE centres are re-encoded after every update and the
KDE subset is redrawn after every epoch.
"""

from __future__ import annotations

import dataclasses
import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import bandwidth as bw
from .autodiff import AutodiffError, Graph
from .datasets import Dataset, make_dataset
from .kde import KdeModel, log_density_batch
from .nets import MlpParams, adam_init, adam_step, decode, encode, mlp_graph, mlp_init
from .seeding import derive_rng, derive_seed

__all__ = [
    "TrainConfig",
    "DataSplit",
    "EpochLog",
    "LossResult",
    "TrainResult",
    "TrainingDivergedError",
    "split_data",
    "reshuffle_kde",
    "compute_beta",
    "avae_loss",
    "train",
]

log = logging.getLogger(__name__)

DIVERGENCE_LIMIT = 1e6


@dataclass
class TrainConfig:
    latent_dim: int
    kde_samples: int
    dataset: dict = field(default_factory=lambda: {"kind": "mixture", "n": 3000, "k": 2,
                                                   "d": 2, "spread": 0.3, "seed": 0})
    encoder_hidden: list[int] = field(default_factory=lambda: [64, 64])
    decoder_hidden: list[int] = field(default_factory=lambda: [64, 64])
    hidden_activation: str = "tanh"
    output_activation: str = "none"
    batch_size: int = 100
    epochs: int = 30
    learning_rate: float = 5e-4
    seed: int = 0
    kde_reencode_every: int = 1
    val_fraction: float = 0.1
    shuffle_kde: bool = True
    kde_grad: bool = False
    beta_fixed: float | None = None
    bandwidth: float | None = None
    bandwidth_seeds: list[int] = field(default_factory=lambda: list(bw.DEFAULT_SEEDS))

    def validate(self, n_train: int | None = None) -> None:
        if self.latent_dim < 1:
            raise ValueError("latent_dim must be >= 1")
        if self.kde_samples < 2:
            raise ValueError("kde_samples must be >= 2")
        if self.batch_size < 1 or self.epochs < 0 or self.kde_reencode_every < 1:
            raise ValueError("batch_size and kde_reencode_every must be >= 1, epochs >= 0")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if not 0 < self.val_fraction < 1:
            raise ValueError("val_fraction must lie in (0, 1)")
        if self.bandwidth is not None and not 0 < self.bandwidth < 1:
            raise ValueError("bandwidth (corrected) must lie in (0, 1)")
        if self.beta_fixed is not None and self.beta_fixed < 0:
            raise ValueError("beta_fixed must be non-negative")
        if n_train is not None:
            if self.kde_samples >= n_train:
                raise ValueError(f"kde_samples={self.kde_samples} must be below the "
                                 f"training set size {n_train}")
            if self.batch_size > n_train - self.kde_samples:
                raise ValueError(f"batch_size={self.batch_size} exceeds the SGD subset "
                                 f"({n_train - self.kde_samples} rows)")

    def to_json(self) -> dict:
        return dataclasses.asdict(self)


@dataclass(frozen=True)
class DataSplit:
    """Partition of training-row indices into KDE and SGD subsets."""

    kde_idx: np.ndarray
    sgd_idx: np.ndarray
    n_train: int
    seed: int
    val_idx: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    def check(self, m: int | None = None) -> None:
        both = np.concatenate([self.kde_idx, self.sgd_idx])
        if len(np.unique(both)) != len(both) or len(both) != self.n_train \
                or not np.array_equal(np.sort(both), np.arange(self.n_train)):
            raise AssertionError("KDE and SGD subsets must partition the training rows")
        if m is not None and len(self.kde_idx) != m:
            raise AssertionError(f"KDE subset has {len(self.kde_idx)} rows, expected {m}")


@dataclass
class EpochLog:
    epoch: int
    beta: float
    train_recon: float
    val_recon: float
    kl: float
    wall_time: float

    def metrics(self) -> dict:
        """Fields that are reproducible under a fixed seed (everything but timing)."""
        return {"epoch": self.epoch, "beta": self.beta, "train_recon": self.train_recon,
                "val_recon": self.val_recon, "kl": self.kl}


@dataclass
class LossResult:
    value: float
    recon: float
    kl: float
    grads: dict[str, np.ndarray]


@dataclass
class TrainResult:
    encoder: MlpParams
    decoder: MlpParams
    logs: list[EpochLog]
    h_opt: float
    h_corr: float
    split: DataSplit
    train_idx: np.ndarray
    val_idx: np.ndarray
    config: TrainConfig


class TrainingDivergedError(RuntimeError):
    def __init__(self, message, logs):
        self.logs = logs
        super().__init__(message)


def split_data(n_train: int, m: int, seed: int) -> DataSplit:
    """Uniformly random KDE subset of size ``m``; the rest is the SGD subset."""
    if not 0 < m < n_train:
        raise ValueError(f"need 0 < m < n_train (m={m}, n_train={n_train})")
    perm = np.random.default_rng(seed).permutation(n_train)
    return DataSplit(kde_idx=np.sort(perm[:m]), sgd_idx=np.sort(perm[m:]),
                     n_train=n_train, seed=seed)


def reshuffle_kde(split: DataSplit, epoch_seed: int) -> DataSplit:
    fresh = split_data(split.n_train, len(split.kde_idx), epoch_seed)
    return dataclasses.replace(fresh, val_idx=split.val_idx)


def reconstruction_norms(encoder: MlpParams, decoder: MlpParams, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return np.linalg.norm(x - decode(decoder, encode(encoder, x)), axis=1)


def compute_beta(encoder: MlpParams, decoder: MlpParams, x_val) -> float:
    """Mean Euclidean (unsquared) reconstruction error over the validation rows."""
    x_val = np.asarray(x_val, dtype=np.float64)
    if x_val.ndim != 2 or x_val.shape[0] == 0:
        raise ValueError("validation set is empty")
    return float(np.mean(reconstruction_norms(encoder, decoder, x_val)))


def kl_estimate(kde_model: KdeModel, z) -> float:
    """Monte-Carlo estimate of KL(q || N(0, I)) from latent samples ``z``."""
    z = np.asarray(z, dtype=np.float64)
    l = z.shape[1]
    log_p = -0.5 * np.sum(z * z, axis=1) - 0.5 * l * math.log(2 * math.pi)
    return float(np.mean(log_density_batch(kde_model, z) - log_p))


def build_loss_graph(encoder: MlpParams, decoder: MlpParams, n_centres: int, h: float,
                     beta: float, batch: int, kde_grad: bool = False):
    """Graph of the training loss; returns ``(graph, recon_node, kl_node)``.

    Inputs: ``x`` (batch rows) plus either ``zk_t``/``zk_sq`` (transposed KDE
    centres and their squared norms, held constant) or, with ``kde_grad``,
    ``x_kde`` which is encoded inside the graph.
    """
    l = encoder.d_out
    g = Graph()
    nodes = {}
    x = g.input("x")
    z = mlp_graph(g, x, encoder, "enc", nodes)
    xh = mlp_graph(g, z, decoder, "dec")
    recon = g.scale(g.sum_squares(g.sub(x, xh)), 1.0 / batch)

    if kde_grad:
        zk = mlp_graph(g, g.input("x_kde"), encoder, "enc", nodes)
        zk_t = g.transpose(zk)
        zk_sq = g.row_sum(g.square(zk))
    else:
        zk_t = g.input("zk_t")
        zk_sq = g.input("zk_sq")
    z_sq = g.row_sum(g.square(z))
    d2 = g.add_row(g.add_col(g.scale(g.matmul(z, zk_t), -2.0), z_sq), zk_sq)
    lse = g.logsumexp(g.scale(d2, -1.0 / (2.0 * h * h)))
    # log q - log p; the (l/2) log 2 pi terms cancel
    const = -math.log(n_centres) - l * math.log(h)
    kl = g.mean(g.add(g.shift(lse, const), g.scale(z_sq, 0.5)))
    g.set_output(g.add(recon, g.scale(kl, beta)))
    return g, recon, kl


def avae_loss(batch_x, encoder: MlpParams, decoder: MlpParams, kde_model: KdeModel,
              beta: float, kde_inputs=None) -> LossResult:
    """Loss value, its components and gradients for every encoder/decoder array.

    Gradients reach the KDE centres only when ``kde_inputs`` (the raw KDE
    subset) is given; otherwise ``kde_model.samples`` are constants.
    """
    batch_x = np.asarray(batch_x, dtype=np.float64)
    if batch_x.ndim != 2 or batch_x.shape[0] == 0:
        raise ValueError("batch must be a non-empty matrix")
    if beta < 0:
        raise ValueError("beta must be non-negative")
    kde_grad = kde_inputs is not None
    n_centres = len(kde_inputs) if kde_grad else kde_model.n
    g, recon_node, kl_node = build_loss_graph(encoder, decoder, n_centres, kde_model.bandwidth,
                                              beta, batch_x.shape[0], kde_grad)
    inputs = {"x": batch_x, **encoder.arrays("enc"), **decoder.arrays("dec")}
    if kde_grad:
        inputs["x_kde"] = np.asarray(kde_inputs, dtype=np.float64)
    else:
        zk = kde_model.samples
        inputs["zk_t"] = np.ascontiguousarray(zk.T)
        inputs["zk_sq"] = np.sum(zk * zk, axis=1)
    try:
        value = g.evaluate(inputs)
    except AutodiffError as exc:
        raise FloatingPointError(f"loss evaluation failed: {exc}") from exc
    recon = float(g.nodes[recon_node].value)
    kl = float(g.nodes[kl_node].value)
    if not math.isfinite(value):
        raise FloatingPointError(f"non-finite loss (recon={recon}, kl={kl}, beta={beta})")
    return LossResult(value=value, recon=recon, kl=kl, grads=g.gradient(inputs))


def _mean_sq_recon(encoder, decoder, x) -> float:
    return float(np.mean(reconstruction_norms(encoder, decoder, x) ** 2))


def resolve_bandwidth(config: TrainConfig) -> tuple[float, float]:
    """``(h_opt, h_corr)`` from the config override or the bandwidth estimator."""
    if config.bandwidth is not None:
        h_corr = float(config.bandwidth)
        return h_corr / math.sqrt(1.0 - h_corr * h_corr), h_corr
    est = bw.bandwidth_for(config.latent_dim, config.kde_samples, seeds=config.bandwidth_seeds)
    return est.h_opt, est.h_corr


def train(config: TrainConfig, dataset: Dataset | None = None, on_step=None) -> TrainResult:
    """Train encoder and decoder; deterministic given ``config.seed``.

    ``on_step(info)``, if given, is called after every parameter update with a
    dict holding ``epoch``, ``step``, ``batch_idx`` (training-row indices),
    ``loss``, ``recon``, ``kl``, ``beta`` and the updated ``encoder``/``decoder``.
    """
    t0 = time.perf_counter()
    data = dataset if dataset is not None else make_dataset(config.dataset)
    config.validate()
    seed = config.seed
    n = data.n
    n_val = max(1, int(round(config.val_fraction * n)))
    perm = derive_rng(seed, "validation").permutation(n)
    val_idx, train_idx = np.sort(perm[:n_val]), np.sort(perm[n_val:])
    x_train, x_val = data.data[train_idx], data.data[val_idx]
    config.validate(len(train_idx))

    h_opt, h_corr = resolve_bandwidth(config)
    l, m = config.latent_dim, config.kde_samples
    split = dataclasses.replace(split_data(len(train_idx), m, derive_seed(seed, "kde-split/0")),
                                val_idx=val_idx)

    enc = mlp_init([data.d, *config.encoder_hidden, l], config.hidden_activation, "none",
                   seed=derive_seed(seed, "encoder"))
    dec = mlp_init([l, *config.decoder_hidden, data.d], config.hidden_activation,
                   config.output_activation, seed=derive_seed(seed, "decoder"))
    params = {**enc.arrays("enc"), **dec.arrays("dec")}
    adam = adam_init(params, config.learning_rate)
    batch_rng = derive_rng(seed, "minibatch")

    def current_kde():
        return KdeModel(encode(enc, x_train[split.kde_idx]), h_corr)

    def epoch_log(epoch):
        return EpochLog(epoch=epoch, beta=beta, train_recon=_mean_sq_recon(enc, dec, x_train),
                        val_recon=_mean_sq_recon(enc, dec, x_val),
                        kl=kl_estimate(kde, encode(enc, x_val)),
                        wall_time=time.perf_counter() - t0)

    kde = current_kde()
    beta = config.beta_fixed if config.beta_fixed is not None else compute_beta(enc, dec, x_val)
    logs = [epoch_log(0)]
    bs = config.batch_size

    for epoch in range(1, config.epochs + 1):
        order = split.sgd_idx[batch_rng.permutation(len(split.sgd_idx))]
        for step in range(len(order) // bs):
            idx = order[step * bs:(step + 1) * bs]
            kde_inputs = x_train[split.kde_idx] if config.kde_grad else None
            try:
                res = avae_loss(x_train[idx], enc, dec, kde, beta, kde_inputs)
            except FloatingPointError as exc:
                raise TrainingDivergedError(f"epoch {epoch} step {step}: {exc}", logs) from exc
            if res.value > DIVERGENCE_LIMIT:
                raise TrainingDivergedError(
                    f"epoch {epoch} step {step}: loss {res.value:.3e} exceeds "
                    f"{DIVERGENCE_LIMIT:g} (recon={res.recon:.3e}, kl={res.kl:.3e})", logs)
            adam, params = adam_step(adam, params, res.grads)
            enc = enc.with_arrays(params, "enc")
            dec = dec.with_arrays(params, "dec")
            if (step + 1) % config.kde_reencode_every == 0:
                kde = current_kde()
            if on_step is not None:
                on_step({"epoch": epoch, "step": step, "batch_idx": idx, "loss": res.value,
                         "recon": res.recon, "kl": res.kl, "beta": beta,
                         "encoder": enc, "decoder": dec})

        if config.beta_fixed is None:
            beta = compute_beta(enc, dec, x_val)
        if config.shuffle_kde:
            split = reshuffle_kde(split, derive_seed(seed, f"kde-split/{epoch}"))
        split.check(m)
        kde = current_kde()
        logs.append(epoch_log(epoch))
        log.info("epoch %d: beta=%.4f train=%.4f val=%.4f kl=%.4f", epoch, beta,
                 logs[-1].train_recon, logs[-1].val_recon, logs[-1].kl)

    return TrainResult(encoder=enc, decoder=dec, logs=logs, h_opt=h_opt, h_corr=h_corr,
                       split=split, train_idx=train_idx, val_idx=val_idx, config=config)


def checkpoint_document(result: TrainResult) -> dict:
    return {
        "format": "avae-checkpoint/1",
        "encoder": result.encoder.to_json(),
        "decoder": result.decoder.to_json(),
        "config": result.config.to_json(),
        "h_opt": result.h_opt,
        "h_corr": result.h_corr,
        "seed": result.config.seed,
    }
