"""Training loop, checkpointing, and post-training sample generation.

Models are MLP encoder/decoders: a shared relu trunk feeding separate mean
and log-variance heads, and a sigmoid-output decoder (data lives in
[0, 1]).  Conditioning never enters the networks; class information flows
only through the learnable latent class means, so conditional and
unconditional variants share identical architectures.

Checkpoints are a directory of tensor files plus a flat-text manifest that
also carries the optimizer moments, the RNG state, and the running mean of
the posterior log-determinant (the representative scale the exact sampler
variance needs).  A save/load round trip restores training bit-exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .autograd import Tensor
from .data import LabeledDataset, read_tensor, write_tensor
from .errors import ConfigError, NumericError
from .models import (ClassPriors, CONDITIONAL_FAMILIES, EncoderOutput, ModelConfig,
                     batch_loss, init_class_priors)
from .nn import AdamW, Layer, Mlp, mlp_init
from .sampling import build_mixture_sampler, gaussian_class_sample, mixture_sample


@dataclass(frozen=True)
class TrainSettings:
    epochs: int = 150
    batch_size: int = 64
    lr: float = 1e-3
    weight_decay: float = 1e-2
    hidden: int = 64
    seed: int = 0


class Model:
    def __init__(self, config: ModelConfig, hidden: int, rng):
        self.config = config
        self.hidden = hidden
        n, m = config.n, config.m
        self.trunk = mlp_init((n, hidden, hidden), ("relu", "relu"), rng)
        self.head_mu = mlp_init((hidden, m), ("identity",), rng)
        self.head_log_var = mlp_init((hidden, m), ("identity",), rng)
        self.decoder = mlp_init((m, hidden, hidden, n), ("relu", "relu", "sigmoid"), rng)
        if config.family in CONDITIONAL_FAMILIES:
            self.class_priors = init_class_priors(config.K, m, rng)
        else:
            self.class_priors = None

    def named_parameters(self):
        named = []
        for prefix, mlp in (("enc_trunk", self.trunk), ("enc_mu", self.head_mu),
                            ("enc_log_var", self.head_log_var), ("dec", self.decoder)):
            for i, layer in enumerate(mlp.layers):
                named.append((f"{prefix}.l{i}.w", layer.weight))
                named.append((f"{prefix}.l{i}.b", layer.bias))
        if self.class_priors is not None:
            named.append(("class_priors.mu_y", self.class_priors.mu_y))
        return named

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def encode(self, x) -> EncoderOutput:
        h = self.trunk.forward(x if isinstance(x, Tensor) else Tensor(x))
        return EncoderOutput(self.head_mu.forward(h), self.head_log_var.forward(h))

    def decode(self, z) -> Tensor:
        return self.decoder.forward(z if isinstance(z, Tensor) else Tensor(z))

    def decode_array(self, z) -> np.ndarray:
        return self.decode(z).data


def reparameterize(config: ModelConfig, enc: EncoderOutput, rng) -> Tensor:
    """One latent draw per sample, differentiable through mean and variance."""
    batch, m = enc.mu_phi.shape
    eps = rng.standard_normal((batch, m))
    if config.family in ("vae", "cvae"):
        noise = eps
    else:
        shrink = 1.0 + config.n / config.nu
        dof = config.nu + config.n
        v = rng.chisquare(dof, size=batch)
        noise = eps * np.sqrt(dof / v)[:, None] / math.sqrt(shrink)
    return enc.mu_phi + (enc.log_var * 0.5).exp() * Tensor(noise)


@dataclass
class TrainerState:
    model: Model
    optimizer: AdamW
    rng: np.random.Generator
    epochs_done: int = 0
    log_det_sigma_phi_mean: float = 0.0


def init_trainer(config: ModelConfig, settings: TrainSettings) -> TrainerState:
    rng = np.random.default_rng(settings.seed)
    model = Model(config, settings.hidden, rng)
    optimizer = AdamW(model.parameters(), lr=settings.lr,
                      weight_decay=settings.weight_decay)
    return TrainerState(model=model, optimizer=optimizer, rng=rng)


def train_epochs(state: TrainerState, dataset: LabeledDataset,
                 settings: TrainSettings, epochs: int):
    """Advance training; returns one log row per epoch."""
    config = state.model.config
    conditional = config.family in CONDITIONAL_FAMILIES
    if conditional and dataset.K > config.K:
        raise ConfigError(
            f"dataset has {dataset.K} classes but the model holds {config.K}")
    x_all = dataset.samples
    labels_all = dataset.labels
    n_rows = x_all.shape[0]
    rows = []
    for _ in range(epochs):
        order = state.rng.permutation(n_rows)
        sums = np.zeros(5)
        for start in range(0, n_rows, settings.batch_size):
            idx = order[start:start + settings.batch_size]
            x = Tensor(x_all[idx])
            enc = state.model.encode(x)
            z = reparameterize(config, enc, state.rng)
            recon = state.model.decode(z)
            out = batch_loss(config, enc, recon, x,
                             labels=labels_all[idx] if conditional else None,
                             class_priors=state.model.class_priors)
            if not math.isfinite(out.total):
                raise NumericError(f"non-finite loss at epoch {state.epochs_done + 1}")
            state.optimizer.zero_grad()
            out.total_tensor.backward()
            state.optimizer.step()
            weight = idx.shape[0] / n_rows
            sums += weight * np.array([out.reconstruction, out.latent_mean_term,
                                       out.trace_term, out.logdet_term, out.total])
        state.epochs_done += 1
        rows.append({
            "epoch": state.epochs_done,
            "reconstruction": sums[0],
            "latent_mean": sums[1],
            "trace": sums[2],
            "logdet": sums[3],
            "total": sums[4],
        })
    state.log_det_sigma_phi_mean = representative_log_det(state.model, x_all)
    return rows


def representative_log_det(model: Model, samples) -> float:
    """Training-set mean of the posterior log-determinant (cached for sampling)."""
    enc = model.encode(Tensor(np.asarray(samples, dtype=np.float64)))
    return float(enc.log_var.data.sum(axis=1).mean())


# -- generation --------------------------------------------------------------------


def sample_model(model: Model, count: int, rng, tau: float | None = None,
                 alpha=None, log_det_sigma_phi: float | None = None):
    """Decode fresh latents; returns (samples, labels or None).

    ``tau`` overrides the sampler scale of the heavy-tailed families;
    ``alpha`` re-weights the class mixture of the conditional families.
    """
    config = model.config
    if alpha is not None and config.family not in CONDITIONAL_FAMILIES:
        raise ConfigError(f"family {config.family!r} has no class mixture to weight")
    if tau is not None and config.family in ("vae", "cvae"):
        raise ConfigError(f"family {config.family!r} does not use a sampler scale")
    labels = None
    if config.family == "vae":
        latents = rng.standard_normal((count, config.m))
    elif config.family == "cvae":
        weights = _mixture_weights(alpha, config.K)
        labels = rng.choice(config.K, size=count, p=weights)
        latents = np.empty((count, config.m))
        for y in range(config.K):
            sel = np.nonzero(labels == y)[0]
            if sel.size:
                latents[sel] = gaussian_class_sample(model.class_priors, y, sel.size, rng)
    else:
        tau2 = None if tau is None else float(tau) ** 2
        if tau2 is None and config.tau is not None:
            tau2 = config.tau ** 2
        means = (model.class_priors.mu_y.data if config.family == "ct3vae"
                 else np.zeros((1, config.m)))
        sampler = build_mixture_sampler(
            config, means, tau2=tau2, log_det_sigma_phi=log_det_sigma_phi,
            weights=_mixture_weights(alpha, means.shape[0]))
        latents, labels = mixture_sample(sampler, count, rng)
        if config.family == "t3vae":
            labels = None
    samples = model.decode_array(latents) if count else np.zeros((0, config.n))
    return samples, (labels.astype(np.int64) if labels is not None else None)


def _mixture_weights(alpha, K):
    if alpha is None:
        return np.full(K, 1.0 / K)
    weights = np.asarray(alpha, dtype=np.float64).reshape(-1)
    if weights.shape[0] != K:
        raise ConfigError(f"alpha needs {K} entries, got {weights.shape[0]}")
    if np.any(weights < 0.0) or weights.sum() <= 0.0:
        raise ConfigError("alpha entries must be nonnegative with a positive sum")
    return weights / weights.sum()


# -- checkpoint I/O --------------------------------------------------------------------


_ACT_BY_PREFIX = {
    "enc_trunk": ("relu", "relu"),
    "enc_mu": ("identity",),
    "enc_log_var": ("identity",),
    "dec": ("relu", "relu", "sigmoid"),
}


def save_checkpoint(state: TrainerState, settings: TrainSettings, directory) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    config = state.model.config
    named = state.model.named_parameters()
    for name, param in named:
        write_tensor(directory / f"{name}.htvt", param.data)
    m_list, v_list = state.optimizer.state_arrays()
    for (name, _), m_arr, v_arr in zip(named, m_list, v_list):
        write_tensor(directory / f"opt_m.{name}.htvt", m_arr)
        write_tensor(directory / f"opt_v.{name}.htvt", v_arr)

    bg = state.rng.bit_generator.state
    lines = {
        "format_version": "1",
        "family": config.family,
        "n": str(config.n),
        "m": str(config.m),
        "classes": str(config.K),
        "nu": repr(config.nu),
        "sigma": repr(config.sigma),
        "beta": repr(config.beta),
        "tau": "none" if config.tau is None else repr(config.tau),
        "hidden": str(state.model.hidden),
        "epochs_done": str(state.epochs_done),
        "step_count": str(state.optimizer.step_count),
        "lr": repr(settings.lr),
        "weight_decay": repr(settings.weight_decay),
        "batch_size": str(settings.batch_size),
        "seed": str(settings.seed),
        "epochs_target": str(settings.epochs),
        "log_det_sigma_phi_mean": repr(state.log_det_sigma_phi_mean),
        "rng_kind": bg["bit_generator"],
        "rng_state": str(bg["state"]["state"]),
        "rng_inc": str(bg["state"]["inc"]),
        "rng_has_uint32": str(bg["has_uint32"]),
        "rng_uinteger": str(bg["uinteger"]),
        "params": ",".join(name for name, _ in named),
    }
    text = "\n".join(f"{k}={v}" for k, v in lines.items()) + "\n"
    (directory / "manifest.txt").write_text(text)
    return directory


def load_checkpoint(directory):
    """Rebuild the trainer exactly as saved; returns (state, settings)."""
    directory = Path(directory)
    manifest = directory / "manifest.txt"
    if not manifest.exists():
        raise ConfigError(f"no checkpoint manifest at {manifest}")
    meta = {}
    for line in manifest.read_text().splitlines():
        key, _, value = line.partition("=")
        meta[key.strip()] = value.strip()
    config = ModelConfig(
        n=int(meta["n"]), m=int(meta["m"]), K=int(meta["classes"]),
        nu=float(meta["nu"]), sigma=float(meta["sigma"]), beta=float(meta["beta"]),
        family=meta["family"],
        tau=None if meta["tau"] == "none" else float(meta["tau"]))
    settings = TrainSettings(
        epochs=int(meta["epochs_target"]), batch_size=int(meta["batch_size"]),
        lr=float(meta["lr"]), weight_decay=float(meta["weight_decay"]),
        hidden=int(meta["hidden"]), seed=int(meta["seed"]))

    rng = np.random.default_rng(0)
    if meta["rng_kind"] != rng.bit_generator.state["bit_generator"]:
        raise ConfigError(f"unsupported generator {meta['rng_kind']!r}")
    model = Model.__new__(Model)
    model.config = config
    model.hidden = int(meta["hidden"])
    names = meta["params"].split(",")
    tensors = {name: Tensor(read_tensor(directory / f"{name}.htvt"), requires_grad=True)
               for name in names}

    def build_mlp(prefix):
        acts = _ACT_BY_PREFIX[prefix]
        layers = []
        for i, act in enumerate(acts):
            layers.append(Layer(tensors[f"{prefix}.l{i}.w"],
                                tensors[f"{prefix}.l{i}.b"], act))
        return Mlp(layers)

    model.trunk = build_mlp("enc_trunk")
    model.head_mu = build_mlp("enc_mu")
    model.head_log_var = build_mlp("enc_log_var")
    model.decoder = build_mlp("dec")
    model.class_priors = (ClassPriors(tensors["class_priors.mu_y"])
                          if "class_priors.mu_y" in tensors else None)

    optimizer = AdamW(model.parameters(), lr=settings.lr,
                      weight_decay=settings.weight_decay)
    m_list = [read_tensor(directory / f"opt_m.{name}.htvt") for name in names]
    v_list = [read_tensor(directory / f"opt_v.{name}.htvt") for name in names]
    optimizer.load_state(m_list, v_list, int(meta["step_count"]))

    state = {
        "bit_generator": meta["rng_kind"],
        "state": {"state": int(meta["rng_state"]), "inc": int(meta["rng_inc"])},
        "has_uint32": int(meta["rng_has_uint32"]),
        "uinteger": int(meta["rng_uinteger"]),
    }
    rng.bit_generator.state = state
    trainer = TrainerState(model=model, optimizer=optimizer, rng=rng,
                           epochs_done=int(meta["epochs_done"]),
                           log_det_sigma_phi_mean=float(meta["log_det_sigma_phi_mean"]))
    return trainer, settings
