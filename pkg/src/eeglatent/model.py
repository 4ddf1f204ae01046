"""Conditional beta-VAE with an auxiliary latent classifier.

A convolutional encoder (temporal conv -> depthwise spatial conv over all
channels -> separable conv, with batchnorm / ELU / pooling / dropout)
produces a flattened feature vector; two parallel dense heads emit the
posterior mean and log-variance of the latent code. The decoder receives
the sampled code concatenated with one-hot class and participant labels
and mirrors the encoder with upsampling and transposed convolutions,
ending in a sigmoid so outputs live in (0, 1) like the normalized inputs.
A three-layer dense classifier with softmax predicts the class from the
code alone.

Training minimizes::

    total = recon + beta * kl + lam * cla

where recon is the mean squared error over all signal entries, kl the
closed-form divergence of the diagonal-Gaussian posterior from N(0, I),
and cla the cross-entropy of the classifier. Each component is averaged
over the batch before weighting. Gradients flow through the sampled code
via the reparameterization z = mu + exp(0.5 * log_var) * eps.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn
from .util import ShapeError

LOG_VAR_CLAMP = 10.0  # log-variance clipped to +/- this before exponentiation

ENC_TRUNK = "enc/trunk/"
ENC_MU = "enc/mu/"
ENC_LOGVAR = "enc/logvar/"
DEC = "dec/"
CLA = "cla/"


@dataclass
class ModelConfig:
    """Architecture and loss weighting.

    The reference configuration matches the 62-channel, 400-sample,
    3-class, 15-participant geometry with a 1000-dimensional latent code.
    """

    d_z: int
    C: int
    T: int
    L: int
    P: int
    fs: float = 200.0
    beta: float = 1.0
    lam: float = 1.0
    temporal_filters: int = 8        # F1
    depth_multiplier: int = 2        # D
    separable_filters: int = 16      # F2
    temporal_kernel: int = 100       # fs / 2 at the reference rate
    separable_kernel: int = 16
    pool1: int = 4
    pool2: int = 8
    dropout_rate: float = 0.25
    classifier_hidden: tuple[int, int] = (256, 64)

    def __post_init__(self):
        if self.d_z < 1:
            raise ValueError(f"d_z must be >= 1, got {self.d_z}")
        if self.beta < 0 or self.lam < 0:
            raise ValueError("beta and lam must be >= 0")
        if min(self.C, self.T, self.L, self.P) < 1:
            raise ValueError("C, T, L, P must be >= 1")
        if self.T // self.pool1 // self.pool2 < 1:
            raise ValueError(
                f"T={self.T} too short for pooling {self.pool1} then {self.pool2}"
            )

    @property
    def cond_dim(self) -> int:
        return self.d_z + self.L + self.P


def reference_config(**overrides) -> ModelConfig:
    """62 x 400 geometry, 3 classes, 15 participants, d_z=1000, beta=lam=1."""
    cfg = dict(d_z=1000, C=62, T=400, L=3, P=15, fs=200.0, beta=1.0, lam=1.0)
    cfg.update(overrides)
    return ModelConfig(**cfg)


def miniature_config(**overrides) -> ModelConfig:
    """Tiny geometry for gradient and property tests (C=4, T=32, d_z=8)."""
    cfg = dict(
        d_z=8, C=4, T=32, L=3, P=2, fs=16.0,
        temporal_filters=4, depth_multiplier=2, separable_filters=8,
        temporal_kernel=9, separable_kernel=5, pool1=2, pool2=2,
        classifier_hidden=(16, 8),
    )
    cfg.update(overrides)
    return ModelConfig(**cfg)


@dataclass
class LatentPosterior:
    """Diagonal-Gaussian posterior parameters, optionally with a sample."""

    mu: np.ndarray
    log_var: np.ndarray
    z: np.ndarray | None = None
    eps: np.ndarray | None = None


# ---------------------------------------------------------------------------
# network builders

def encoder_feature_geometry(config: ModelConfig) -> tuple[int, int, int]:
    """(width after pool1, width after pool2, flattened feature size)."""
    w1 = config.T // config.pool1
    w2 = w1 // config.pool2
    f2 = config.separable_filters
    return w1, w2, f2 * w2


def build_encoder_trunk(config: ModelConfig) -> list[nn.Layer]:
    f1 = config.temporal_filters
    f1d = f1 * config.depth_multiplier
    f2 = config.separable_filters
    return [
        nn.Conv2d(1, f1, (1, config.temporal_kernel), padding="same", bias=False,
                  kind="conv-temporal"),
        nn.BatchNorm2d(f1),
        nn.Conv2d(f1, f1d, (config.C, 1), padding="valid", groups=f1, bias=False,
                  kind="conv-depthwise-spatial"),
        nn.BatchNorm2d(f1d),
        nn.Activation("elu"),
        nn.AvgPool2d((1, config.pool1)),
        nn.Dropout(config.dropout_rate),
        nn.Conv2d(f1d, f1d, (1, config.separable_kernel), padding="same", groups=f1d,
                  bias=False, kind="conv-separable"),
        nn.Conv2d(f1d, f2, (1, 1), padding="valid", bias=False, kind="conv-separable"),
        nn.BatchNorm2d(f2),
        nn.Activation("elu"),
        nn.AvgPool2d((1, config.pool2)),
        nn.Dropout(config.dropout_rate),
        nn.Reshape(),
    ]


def build_mu_head(config: ModelConfig) -> list[nn.Layer]:
    _, _, flat = encoder_feature_geometry(config)
    return [nn.Dense(flat, config.d_z)]


def build_logvar_head(config: ModelConfig) -> list[nn.Layer]:
    _, _, flat = encoder_feature_geometry(config)
    return [nn.Dense(flat, config.d_z)]


def build_decoder(config: ModelConfig) -> list[nn.Layer]:
    f1 = config.temporal_filters
    f1d = f1 * config.depth_multiplier
    f2 = config.separable_filters
    w1, w2, flat = encoder_feature_geometry(config)
    return [
        nn.Dense(config.cond_dim, flat),
        nn.Reshape((f2, 1, w2)),
        nn.Upsample2d((1, config.pool2), (1, w1)),
        nn.TransposedConv2d(f2, f1d, (1, 1), padding="valid", bias=False),
        nn.TransposedConv2d(f1d, f1d, (1, config.separable_kernel), padding="same",
                            groups=f1d, bias=False),
        nn.BatchNorm2d(f1d),
        nn.Activation("elu"),
        nn.Upsample2d((1, config.pool1), (1, config.T)),
        nn.TransposedConv2d(f1d, f1, (config.C, 1), padding="valid", groups=f1,
                            bias=False),
        nn.BatchNorm2d(f1),
        nn.Activation("elu"),
        nn.TransposedConv2d(f1, 1, (1, config.temporal_kernel), padding="same",
                            bias=True),
        nn.Activation("sigmoid"),
    ]


def build_classifier(config: ModelConfig) -> list[nn.Layer]:
    h1, h2 = config.classifier_hidden
    return [
        nn.Dense(config.d_z, h1),
        nn.Activation("elu"),
        nn.Dense(h1, h2),
        nn.Activation("elu"),
        nn.Dense(h2, config.L),
        nn.Activation("softmax"),
    ]


def init_model_params(config: ModelConfig, rng: np.random.Generator,
                      dtype=np.float32) -> nn.ParamStore:
    """Create all parameters; also validates the whole shape chain."""
    params = nn.ParamStore()
    trunk_out = nn.init_network_params(
        build_encoder_trunk(config), (1, config.C, config.T), params, ENC_TRUNK, rng, dtype
    )
    nn.init_network_params(build_mu_head(config), trunk_out, params, ENC_MU, rng, dtype)
    nn.init_network_params(build_logvar_head(config), trunk_out, params, ENC_LOGVAR, rng, dtype)
    dec_out = nn.init_network_params(
        build_decoder(config), (config.cond_dim,), params, DEC, rng, dtype
    )
    if dec_out != (1, config.C, config.T):
        raise ShapeError(f"decoder emits {dec_out}, expected (1, {config.C}, {config.T})")
    nn.init_network_params(build_classifier(config), (config.d_z,), params, CLA, rng, dtype)
    return params


# ---------------------------------------------------------------------------
# batching helpers

def _as_batch_signal(X, config):
    X = np.asarray(X)
    if X.ndim == 2:
        X = X[None]
    if X.ndim != 3 or X.shape[1:] != (config.C, config.T):
        raise ShapeError(f"expected (N, {config.C}, {config.T}) signal, got {X.shape}")
    return X


def _as_batch_vector(v, dim, what):
    v = np.asarray(v)
    if v.ndim == 1:
        v = v[None]
    if v.ndim != 2 or v.shape[1] != dim:
        raise ShapeError(f"expected (N, {dim}) {what}, got {v.shape}")
    return v


def one_hot_matrix(indices, cardinality: int) -> np.ndarray:
    idx = np.atleast_1d(np.asarray(indices, dtype=int))
    if idx.min() < 0 or idx.max() >= cardinality:
        raise ValueError(f"index out of range [0, {cardinality}): {idx}")
    return np.eye(cardinality, dtype=np.float64)[idx]


# ---------------------------------------------------------------------------
# forward surfaces

def _encode_batch(Xb, params, config, mode, rng):
    dtype = params[ENC_MU + "00_dense.W"].dtype
    x = Xb[:, None, :, :].astype(dtype, copy=False)
    flat, tape_tr = nn.forward(build_encoder_trunk(config), params, x,
                               mode=mode, rng=rng, prefix=ENC_TRUNK)
    mu, tape_mu = nn.forward(build_mu_head(config), params, flat,
                             mode=mode, rng=rng, prefix=ENC_MU)
    lv_raw, tape_lv = nn.forward(build_logvar_head(config), params, flat,
                                 mode=mode, rng=rng, prefix=ENC_LOGVAR)
    lv = np.clip(lv_raw, -LOG_VAR_CLAMP, LOG_VAR_CLAMP)
    mask = ((lv_raw > -LOG_VAR_CLAMP) & (lv_raw < LOG_VAR_CLAMP)).astype(lv.dtype)
    return mu, lv, mask, (tape_tr, tape_mu, tape_lv)


def encode(X, params: nn.ParamStore, config: ModelConfig,
           mode: str = "eval", rng=None) -> LatentPosterior:
    """Posterior parameters (no sample drawn yet) for one trial or a batch."""
    single = np.asarray(X).ndim == 2
    Xb = _as_batch_signal(X, config)
    mu, lv, _, _ = _encode_batch(Xb, params, config, mode, rng)
    if single:
        return LatentPosterior(mu=mu[0], log_var=lv[0])
    return LatentPosterior(mu=mu, log_var=lv)


def reparameterize(posterior: LatentPosterior, rng: np.random.Generator) -> LatentPosterior:
    """Draw z = mu + exp(0.5 * log_var) * eps with eps ~ N(0, I)."""
    mu = np.asarray(posterior.mu)
    lv = np.clip(np.asarray(posterior.log_var), -LOG_VAR_CLAMP, LOG_VAR_CLAMP)
    if not (np.all(np.isfinite(mu)) and np.all(np.isfinite(lv))):
        raise ValueError("posterior parameters must be finite")
    eps = rng.standard_normal(mu.shape).astype(mu.dtype, copy=False)
    z = mu + np.exp(0.5 * lv) * eps
    return LatentPosterior(mu=mu, log_var=lv, z=z, eps=eps)


def decode(z, y_onehot, p_onehot, params: nn.ParamStore, config: ModelConfig,
           mode: str = "eval", rng=None) -> np.ndarray:
    """Reconstruct a (C, T) signal from a code and condition labels."""
    single = np.asarray(z).ndim == 1
    zb = _as_batch_vector(z, config.d_z, "latent code")
    yb = _as_batch_vector(y_onehot, config.L, "class one-hot")
    pb = _as_batch_vector(p_onehot, config.P, "participant one-hot")
    if not (zb.shape[0] == yb.shape[0] == pb.shape[0]):
        raise ShapeError("z, y_onehot, p_onehot batch sizes differ")
    dtype = params[DEC + "00_dense.W"].dtype
    dec_in = np.concatenate([zb, yb, pb], axis=1).astype(dtype, copy=False)
    out, _ = nn.forward(build_decoder(config), params, dec_in,
                        mode=mode, rng=rng, prefix=DEC)
    out = out[:, 0, :, :]
    return out[0] if single else out


def classify(z, params: nn.ParamStore, config: ModelConfig, mode: str = "eval") -> np.ndarray:
    """Class probabilities from a latent code (softmax over L entries)."""
    single = np.asarray(z).ndim == 1
    zb = _as_batch_vector(z, config.d_z, "latent code")
    dtype = params[CLA + "00_dense.W"].dtype
    probs, _ = nn.forward(build_classifier(config), params, zb.astype(dtype, copy=False),
                          mode=mode, rng=None, prefix=CLA)
    return probs[0] if single else probs


def predict_proba(X, params: nn.ParamStore, config: ModelConfig, rng=None) -> np.ndarray:
    """Class probabilities for trials; uses the posterior mean as the code
    (pass an rng to classify a sampled code instead)."""
    single = np.asarray(X).ndim == 2
    Xb = _as_batch_signal(X, config)
    mu, lv, _, _ = _encode_batch(Xb, params, config, "eval", None)
    z = mu if rng is None else reparameterize(LatentPosterior(mu, lv), rng).z
    probs = classify(z, params, config)
    return probs[0] if single else probs


def predict(X, params: nn.ParamStore, config: ModelConfig, rng=None) -> np.ndarray:
    probs = predict_proba(X, params, config, rng=rng)
    return np.argmax(probs, axis=-1)


# ---------------------------------------------------------------------------
# loss components

def loss_reconstruction(X, X_hat) -> float:
    """Mean over all entries of the squared difference."""
    X = np.asarray(X)
    X_hat = np.asarray(X_hat)
    if X.shape != X_hat.shape:
        raise ShapeError(f"shape mismatch {X.shape} vs {X_hat.shape}")
    d = X - X_hat
    return float(np.mean(d * d))


def loss_kl(mu, log_var) -> float:
    """Closed-form KL(q || N(0, I)) summed over latent dimensions.

    Batched inputs are averaged over the batch after the per-sample sum.
    """
    mu = np.asarray(mu, dtype=np.float64)
    lv = np.asarray(log_var, dtype=np.float64)
    if mu.shape != lv.shape:
        raise ShapeError(f"shape mismatch {mu.shape} vs {lv.shape}")
    if not (np.all(np.isfinite(mu)) and np.all(np.isfinite(lv))):
        raise ValueError("loss_kl requires finite inputs")
    per = -0.5 * np.sum(1.0 + lv - mu * mu - np.exp(lv), axis=-1)
    return float(np.mean(per))


PROB_FLOOR = 1e-12


def loss_classification(probs, y) -> float:
    """Cross-entropy -log p[y], probabilities floored at 1e-12."""
    probs = np.asarray(probs, dtype=np.float64)
    single = probs.ndim == 1
    pb = probs[None] if single else probs
    yb = np.atleast_1d(np.asarray(y, dtype=int))
    if yb.min() < 0 or yb.max() >= pb.shape[1]:
        raise ValueError(f"label out of range [0, {pb.shape[1]}): {yb}")
    picked = np.maximum(pb[np.arange(len(yb)), yb], PROB_FLOOR)
    return float(np.mean(-np.log(picked)))


def loss_total(X, y, p, params: nn.ParamStore, config: ModelConfig,
               rng: np.random.Generator, mode: str = "train",
               beta: float | None = None, lam: float | None = None):
    """Full three-term objective for a trial or batch.

    Returns (total, components) where components holds the unweighted
    recon / kl / cla means plus the weighted total.
    """
    comps, _ = _forward_loss(X, y, p, params, config, rng, mode, beta, lam)
    return comps["total"], comps


def _forward_loss(X, y, p, params, config, rng, mode, beta, lam):
    beta = config.beta if beta is None else beta
    lam = config.lam if lam is None else lam
    Xb = _as_batch_signal(X, config)
    yb = np.atleast_1d(np.asarray(y, dtype=int))
    pb = np.atleast_1d(np.asarray(p, dtype=int))
    if not (len(Xb) == len(yb) == len(pb)):
        raise ShapeError("X, y, p batch sizes differ")
    mu, lv, mask, enc_tapes = _encode_batch(Xb, params, config, mode, rng)
    eps = rng.standard_normal(mu.shape).astype(mu.dtype, copy=False)
    sigma = np.exp(0.5 * lv)
    z = mu + sigma * eps
    y1h = one_hot_matrix(yb, config.L).astype(mu.dtype)
    p1h = one_hot_matrix(pb, config.P).astype(mu.dtype)
    dec_in = np.concatenate([z, y1h, p1h], axis=1)
    xhat, tape_dec = nn.forward(build_decoder(config), params, dec_in,
                                mode=mode, rng=rng, prefix=DEC)
    probs, tape_cla = nn.forward(build_classifier(config), params, z,
                                 mode=mode, rng=rng, prefix=CLA)
    target = Xb.astype(mu.dtype, copy=False)
    recon = loss_reconstruction(target, xhat[:, 0])
    kl = loss_kl(mu, lv)
    cla = loss_classification(probs, yb)
    comps = {
        "recon": recon,
        "kl": kl,
        "cla": cla,
        "total": recon + beta * kl + lam * cla,
    }
    state = {
        "Xb": target, "yb": yb, "mu": mu, "lv": lv, "mask": mask, "eps": eps,
        "sigma": sigma, "probs": probs, "xhat": xhat, "beta": beta, "lam": lam,
        "enc_tapes": enc_tapes, "tape_dec": tape_dec, "tape_cla": tape_cla,
    }
    return comps, state


def loss_and_grads(X, y, p, params: nn.ParamStore, config: ModelConfig,
                   rng: np.random.Generator, beta: float | None = None,
                   lam: float | None = None) -> dict:
    """Train-mode loss plus parameter gradients accumulated in `params`.

    Call `params.zero_grads()` first when gradients should not accumulate
    across batches.
    """
    comps, st = _forward_loss(X, y, p, params, config, rng, "train", beta, lam)
    n = st["Xb"].shape[0]
    beta, lam = st["beta"], st["lam"]
    tape_tr, tape_mu, tape_lv = st["enc_tapes"]

    dxhat = (2.0 / st["Xb"].size) * (st["xhat"][:, 0] - st["Xb"])
    d_dec_in = nn.backward(st["tape_dec"], dxhat[:, None, :, :])
    dz = d_dec_in[:, :config.d_z].copy()

    dprobs = np.zeros_like(st["probs"])
    picked = st["probs"][np.arange(n), st["yb"]]
    live = picked > PROB_FLOOR
    rows = np.arange(n)[live]
    dprobs[rows, st["yb"][live]] = -lam / (picked[live] * n)
    dz += nn.backward(st["tape_cla"], dprobs)

    dmu = dz + beta * st["mu"] / n
    dlv = dz * st["eps"] * 0.5 * st["sigma"] + beta * 0.5 * (np.exp(st["lv"]) - 1.0) / n
    dflat = nn.backward(tape_mu, dmu)
    dflat = dflat + nn.backward(tape_lv, dlv * st["mask"])
    nn.backward(tape_tr, dflat, need_input_grad=False)
    return comps
