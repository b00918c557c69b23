"""The full fusion network: backbones -> attention -> concatenation -> decision.

Four attention modes are supported.  ``SELF_AND_CROSS`` runs per-modality
self-attention and then bi-directional cross-modal attention over every
modality pair; ``SELF_ONLY`` stops after self-attention; ``CROSS_ONLY``
feeds backbone outputs straight into the cross-modal blocks (the self layer
is removed, not replaced by an identity); ``NO_ATTENTION`` concatenates
backbone outputs directly.  In the cross modes only the cross-modal outputs
reach the decision layer, so its input width is ``pairs * 2 * d_model``;
otherwise it is ``modalities * d_model``.

Each sample's latent vector is treated as a token sequence: with
``tokens_per_modality == 1`` (the default) one token of width ``d_model``,
otherwise ``t`` tokens of width ``d_model / t``.  More than one token lets
attention weights depend on both modalities of a pair, which is what makes
cross-modal interactions expressible at all.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
from dataclasses import dataclass, fields
from enum import Enum

import numpy as np

from . import backbones as bb
from .attention import AttentionBlock, AttentionConfig, attention_weights_to_csv, cross_modal_pair, self_attention
from .errors import ConfigError, DataError, ParseError
from .seeding import rng_for
from .tensor import Tensor, concat, glorot_uniform, matmul, no_grad, read_xten, write_xten

log = logging.getLogger("xmf.fusion")

MODALITIES = ("clinical", "genetic", "imaging")

# Canonical cross-attention pair order; the orientation fixes which direction
# fills the first half of each concatenated pair output.
PAIR_ORDER = (("clinical", "genetic"), ("genetic", "imaging"), ("imaging", "clinical"))


class AttentionMode(str, Enum):
    SELF_AND_CROSS = "self_and_cross"
    SELF_ONLY = "self_only"
    CROSS_ONLY = "cross_only"
    NO_ATTENTION = "no_attention"


def normalize_modalities(modalities) -> tuple[str, ...]:
    mods = tuple(m for m in MODALITIES if m in set(modalities))
    unknown = set(modalities) - set(MODALITIES)
    if unknown:
        raise ConfigError(f"unknown modalities {sorted(unknown)}; choose from {MODALITIES}")
    if not mods:
        raise ConfigError("modality set must not be empty")
    return mods


@dataclass(frozen=True)
class ModelConfig:
    """Architecture and training hyperparameters plus the attention switch."""

    mode: AttentionMode = AttentionMode.SELF_AND_CROSS
    modalities: tuple[str, ...] = MODALITIES
    d_model: int = 32
    num_heads: int = 2
    tokens_per_modality: int = 1
    qk_init_gain: float = 4.0
    dropout_rates: tuple[float, float, float] = (0.2, 0.3, 0.5)
    learning_rate: float = 1e-3
    batch_size: int = 32
    epochs: int = 50
    seed: int = 0
    clinical_dim: int = 29
    genetic_dim: int = 1000
    image_shape: tuple[int, int, int] = (3, 72, 72)
    clinical_hidden: tuple[int, int] = (128, 64)
    genetic_hidden: tuple[int, int] = (256, 64)
    conv_channels: tuple[int, int, int] = (8, 16, 32)
    conv_kernels: tuple[int, int, int] = (3, 3, 3)
    conv_strides: tuple[int, int, int] = (2, 2, 2)

    def __post_init__(self):
        object.__setattr__(self, "mode", AttentionMode(self.mode))
        object.__setattr__(self, "modalities", normalize_modalities(self.modalities))
        for name in ("image_shape", "clinical_hidden", "genetic_hidden", "conv_channels", "conv_kernels", "conv_strides", "dropout_rates"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        if self.tokens_per_modality < 1:
            raise ConfigError(f"tokens_per_modality must be positive, got {self.tokens_per_modality}")
        if self.d_model % self.tokens_per_modality != 0:
            raise ConfigError(f"d_model={self.d_model} is not divisible by tokens_per_modality={self.tokens_per_modality}")
        token_width = self.d_model // self.tokens_per_modality
        if token_width % self.num_heads != 0:
            raise ConfigError(f"token width {token_width} is not divisible by num_heads={self.num_heads}")
        for r in self.dropout_rates:
            if not (0.0 <= r < 1.0):
                raise ConfigError(f"dropout rates must lie in [0, 1), got {self.dropout_rates}")
        if self.batch_size < 1 or self.epochs < 0 or self.learning_rate <= 0:
            raise ConfigError("batch_size must be >= 1, epochs >= 0, learning_rate > 0")

    @property
    def token_width(self) -> int:
        return self.d_model // self.tokens_per_modality

    def to_dict(self) -> dict:
        out = {}
        for f in fields(self):
            value = getattr(self, f.name)
            if isinstance(value, Enum):
                value = value.value
            elif isinstance(value, tuple):
                value = list(value)
            out[f.name] = value
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "ModelConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise ConfigError(f"unknown config fields {sorted(unknown)}")
        return cls(**data)


def config_hash(config: ModelConfig) -> str:
    """SHA-256 of the canonical (sorted-key, compact) JSON form."""
    canon = json.dumps(config.to_dict(), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()


@dataclass
class MultimodalBatch:
    """One batch of per-patient inputs; absent modalities are ``None``."""

    clinical: np.ndarray | None = None
    genetic: np.ndarray | None = None
    images: np.ndarray | None = None
    labels: np.ndarray | None = None

    def modality(self, name: str) -> np.ndarray | None:
        return {"clinical": self.clinical, "genetic": self.genetic, "imaging": self.images}[name]

    @property
    def n(self) -> int:
        for arr in (self.clinical, self.genetic, self.images):
            if arr is not None:
                return arr.shape[0]
        return 0


class FusionModel:
    """An instantiated fusion network; use :func:`build` to construct one."""

    def __init__(self, config: ModelConfig, rng: np.random.Generator):
        mode = config.mode
        if len(config.modalities) == 1 and mode in (AttentionMode.SELF_AND_CROSS, AttentionMode.CROSS_ONLY):
            log.warning("mode %s needs >= 2 modalities; %s degrades to self_only", mode.value, config.modalities)
            mode = AttentionMode.SELF_ONLY
        self.config = config
        self.effective_mode = mode

        d = config.d_model
        self.backbones: dict[str, object] = {}
        for m in config.modalities:
            if m == "clinical":
                self.backbones[m] = bb.DenseBackbone(config.clinical_dim, config.clinical_hidden, d, config.dropout_rates, rng)
            elif m == "genetic":
                self.backbones[m] = bb.DenseBackbone(config.genetic_dim, config.genetic_hidden, d, config.dropout_rates, rng)
            else:
                self.backbones[m] = bb.ConvBackbone(d, rng, config.image_shape, config.conv_channels, config.conv_kernels, config.conv_strides)

        att_cfg = AttentionConfig(config.token_width, config.num_heads, config.qk_init_gain)
        self.self_blocks: dict[str, AttentionBlock] = {}
        if mode in (AttentionMode.SELF_AND_CROSS, AttentionMode.SELF_ONLY):
            for m in config.modalities:
                self.self_blocks[m] = AttentionBlock(att_cfg, rng)

        self.pairs: tuple[tuple[str, str], ...] = ()
        self.cross_blocks: dict[tuple[str, str], AttentionBlock] = {}
        if mode in (AttentionMode.SELF_AND_CROSS, AttentionMode.CROSS_ONLY):
            self.pairs = tuple((a, b) for a, b in PAIR_ORDER if a in config.modalities and b in config.modalities)
            for a, b in self.pairs:
                self.cross_blocks[(a, b)] = AttentionBlock(att_cfg, rng)
                self.cross_blocks[(b, a)] = AttentionBlock(att_cfg, rng)

        if self.pairs:
            decision_in = len(self.pairs) * 2 * d
        else:
            decision_in = len(config.modalities) * d
        self.decision_weight = Tensor(glorot_uniform(rng, (decision_in, 3), decision_in, 3), requires_grad=True)
        self.decision_bias = Tensor(np.zeros(3), requires_grad=True)
        assert self.decision_weight.shape[0] == decision_in

    # -- parameter bookkeeping ---------------------------------------------

    def parameters(self) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for m, backbone in self.backbones.items():
            for name, t in backbone.parameters().items():
                out[f"{m}.{name}"] = t
        for m, block in self.self_blocks.items():
            for name, t in block.parameters().items():
                out[f"self.{m}.{name}"] = t
        for (a, b), block in self.cross_blocks.items():
            for name, t in block.parameters().items():
                out[f"cross.{a}->{b}.{name}"] = t
        out["decision.weight"] = self.decision_weight
        out["decision.bias"] = self.decision_bias
        return out

    def parameter_count(self) -> int:
        return sum(t.size for t in self.parameters().values())

    def zero_grad(self) -> None:
        for t in self.parameters().values():
            t.zero_grad()

    # -- forward -------------------------------------------------------------

    def _check_batch(self, batch: MultimodalBatch) -> None:
        for m in MODALITIES:
            present = batch.modality(m) is not None
            wanted = m in self.config.modalities
            if wanted and not present:
                raise DataError(f"batch is missing the {m!r} modality required by the config")
            if present and not wanted:
                raise DataError(f"batch carries {m!r} which the config does not include")

    def forward(self, batch: MultimodalBatch, training: bool = False, rng: np.random.Generator | None = None) -> Tensor:
        self._check_batch(batch)
        cfg = self.config
        t, w = cfg.tokens_per_modality, cfg.token_width

        latents: dict[str, Tensor] = {}
        for m in cfg.modalities:
            x = Tensor(batch.modality(m))
            latent = self.backbones[m].forward(x, training, rng)
            latents[m] = latent.reshape(latent.shape[0], t, w)

        if self.effective_mode in (AttentionMode.SELF_AND_CROSS, AttentionMode.SELF_ONLY):
            latents = {m: self_attention(self.self_blocks[m], latents[m]) for m in cfg.modalities}

        if self.pairs:
            parts = []
            for a, b in self.pairs:
                pair_out = cross_modal_pair(self.cross_blocks[(a, b)], self.cross_blocks[(b, a)], latents[a], latents[b])
                parts.append(pair_out.reshape(pair_out.shape[0], 2 * cfg.d_model))
        else:
            parts = [latents[m].reshape(latents[m].shape[0], cfg.d_model) for m in cfg.modalities]

        features = parts[0] if len(parts) == 1 else concat(parts, axis=-1)
        return matmul(features, self.decision_weight) + self.decision_bias

    def predict(self, batch: MultimodalBatch) -> np.ndarray:
        """Argmax class per row; ties resolve to the lowest class index."""
        with no_grad():
            logits = self.forward(batch, training=False)
        return np.argmax(logits.values, axis=-1)

    def export_attention_weights(self, directory) -> list[str]:
        """Dump each block's latest per-head weights as CSV files (diagnostics).

        Batched weights are averaged over the batch axis; every file is one
        (queries x keys) matrix.  Returns the written paths.
        """
        os.makedirs(directory, exist_ok=True)
        written = []
        blocks = [(f"self_{m}", blk) for m, blk in self.self_blocks.items()]
        blocks += [(f"cross_{a}_to_{b}", blk) for (a, b), blk in self.cross_blocks.items()]
        for name, block in blocks:
            if block.last_weights is None:
                continue
            w = block.last_weights
            if w.ndim == 4:  # (batch, heads, q, k) -> per-head batch mean
                w = w.mean(axis=0)
            for h in range(w.shape[0]):
                path = os.path.join(directory, f"{name}_head{h}.csv")
                attention_weights_to_csv(w[h], path)
                written.append(path)
        return written


def build(config: ModelConfig, rng: np.random.Generator | None = None) -> FusionModel:
    """Instantiate a fusion model with seed-deterministic parameters."""
    if rng is None:
        rng = rng_for(config.seed, "init")
    return FusionModel(config, rng)


def decision_input_width(config: ModelConfig) -> int:
    """Width bookkeeping without building the model."""
    mods = config.modalities
    mode = config.mode
    if len(mods) == 1 and mode in (AttentionMode.SELF_AND_CROSS, AttentionMode.CROSS_ONLY):
        mode = AttentionMode.SELF_ONLY
    if mode in (AttentionMode.SELF_AND_CROSS, AttentionMode.CROSS_ONLY):
        pairs = sum(1 for a, b in PAIR_ORDER if a in mods and b in mods)
        return pairs * 2 * config.d_model
    return len(mods) * config.d_model


# ---------------------------------------------------------------------------
# Checkpoints: <dir>/manifest.json names the parameters in order and embeds
# the config; <dir>/params.xten concatenates one XTEN record per parameter.
# ---------------------------------------------------------------------------


def save_checkpoint(model: FusionModel, directory) -> None:
    from . import __version__

    os.makedirs(directory, exist_ok=True)
    params = model.parameters()
    manifest = {
        "format": "xmf-checkpoint-v1",
        "tool_version": __version__,
        "config": model.config.to_dict(),
        "parameters": list(params.keys()),
    }
    with open(os.path.join(directory, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    with open(os.path.join(directory, "params.xten"), "wb") as fh:
        for name in manifest["parameters"]:
            write_xten(fh, params[name].values)


def load_checkpoint(directory) -> FusionModel:
    manifest_path = os.path.join(directory, "manifest.json")
    try:
        with open(manifest_path, encoding="utf-8") as fh:
            manifest = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ParseError(f"cannot read checkpoint manifest {manifest_path}: {exc}") from None
    config = ModelConfig.from_dict(manifest["config"])
    model = build(config)
    params = model.parameters()
    if list(params.keys()) != manifest["parameters"]:
        raise DataError("checkpoint manifest parameters do not match the rebuilt model")
    with open(os.path.join(directory, "params.xten"), "rb") as fh:
        for name in manifest["parameters"]:
            values = read_xten(fh)
            if values.shape != params[name].shape:
                raise DataError(f"checkpoint tensor {name} has shape {values.shape}, expected {params[name].shape}")
            params[name].values = values
    return model
