"""Fusion model tests: width bookkeeping, the attention-mode switch, the
compositional no-attention oracle, argmax prediction, and checkpoints."""

import logging

import numpy as np
import pytest

from xmf.errors import ConfigError, DataError
from xmf.fusion import (
    AttentionMode,
    ModelConfig,
    MultimodalBatch,
    build,
    config_hash,
    decision_input_width,
    load_checkpoint,
    save_checkpoint,
)
from xmf.tensor import Tensor, check_gradients, cross_entropy

TINY = dict(
    d_model=8,
    num_heads=2,
    tokens_per_modality=2,
    dropout_rates=(0.0, 0.0, 0.0),
    clinical_dim=5,
    genetic_dim=6,
    image_shape=(1, 8, 8),
    clinical_hidden=(6, 5),
    genetic_hidden=(6, 5),
    conv_channels=(2, 2, 2),
    conv_kernels=(3, 3, 2),
    strides_called_conv_strides=None,
)
TINY.pop("strides_called_conv_strides")
TINY["conv_strides"] = (1, 1, 1)

ALL_SUBSETS = [
    ("clinical",),
    ("genetic",),
    ("imaging",),
    ("clinical", "genetic"),
    ("genetic", "imaging"),
    ("clinical", "imaging"),
    ("clinical", "genetic", "imaging"),
]


def tiny_config(**overrides):
    return ModelConfig(**{**TINY, **overrides})


def tiny_batch(n, config, seed=0, label_values=(0, 1, 2)):
    rng = np.random.default_rng(seed)
    mods = config.modalities
    return MultimodalBatch(
        clinical=rng.normal(size=(n, config.clinical_dim)) if "clinical" in mods else None,
        genetic=rng.normal(size=(n, config.genetic_dim)) if "genetic" in mods else None,
        images=rng.uniform(size=(n, *config.image_shape)) if "imaging" in mods else None,
        labels=rng.choice(label_values, size=n),
    )


class TestBuild:
    def test_single_modality_no_attention_width(self):
        config = tiny_config(mode=AttentionMode.NO_ATTENTION, modalities=("clinical",))
        model = build(config)
        assert model.decision_weight.shape == (config.d_model, 3)

    def test_self_and_cross_three_modalities_width(self):
        config = tiny_config(mode=AttentionMode.SELF_AND_CROSS)
        model = build(config)
        # three pairs, each concatenating two unidirectional outputs
        assert model.decision_weight.shape == (6 * config.d_model, 3)
        assert decision_input_width(config) == 6 * config.d_model

    def test_same_seed_bit_identical(self):
        config = tiny_config(seed=13)
        p1 = build(config).parameters()
        p2 = build(config).parameters()
        assert p1.keys() == p2.keys()
        for name in p1:
            assert np.array_equal(p1[name].values, p2[name].values), name

    def test_empty_modalities_rejected(self):
        with pytest.raises(ConfigError):
            tiny_config(modalities=())

    def test_unknown_modality_rejected(self):
        with pytest.raises(ConfigError):
            tiny_config(modalities=("clinical", "audio"))

    def test_single_modality_cross_degrades_to_self_only(self, caplog):
        with caplog.at_level(logging.WARNING, logger="xmf.fusion"):
            model = build(tiny_config(mode=AttentionMode.CROSS_ONLY, modalities=("genetic",)))
        assert model.effective_mode == AttentionMode.SELF_ONLY
        assert "degrades" in caplog.text


class TestForward:
    def test_no_attention_equals_manual_concatenation(self):
        config = tiny_config(mode=AttentionMode.NO_ATTENTION)
        model = build(config)
        batch = tiny_batch(4, config)
        logits = model.forward(batch).values

        parts = []
        for m in config.modalities:
            x = Tensor(batch.modality(m))
            parts.append(model.backbones[m].forward(x).values)
        manual = np.concatenate(parts, axis=1) @ model.decision_weight.values + model.decision_bias.values
        np.testing.assert_allclose(logits, manual, atol=1e-12)

    @pytest.mark.parametrize("mode", list(AttentionMode))
    @pytest.mark.parametrize("subset", ALL_SUBSETS)
    def test_logits_shape_over_mode_modality_grid(self, mode, subset):
        config = tiny_config(mode=mode, modalities=subset)
        model = build(config)
        batch = tiny_batch(3, config)
        assert model.forward(batch).shape == (3, 3)

    def test_full_self_and_cross_gradient_check(self):
        config = tiny_config(mode=AttentionMode.SELF_AND_CROSS, d_model=4, clinical_hidden=(4, 3), genetic_hidden=(4, 3))
        model = build(config)
        batch = tiny_batch(2, config)
        params = list(model.parameters().values())
        # 1/64 is exact in binary; it keeps ulp(loss) (and with it the
        # finite-difference quantization) below the 1e-8 relative-error floor.
        err = check_gradients(lambda: cross_entropy(model.forward(batch), batch.labels) * 0.015625, params)
        assert err < 1e-4

    def test_missing_modality_rejected(self):
        config = tiny_config()
        model = build(config)
        batch = tiny_batch(2, config)
        batch.genetic = None
        with pytest.raises(DataError, match="missing"):
            model.forward(batch)

    def test_extra_modality_rejected(self):
        config = tiny_config(modalities=("clinical", "genetic"))
        model = build(config)
        batch = tiny_batch(2, tiny_config())
        with pytest.raises(DataError, match="does not include"):
            model.forward(batch)

    def test_single_token_default_matches_value_path(self):
        # With one token per modality the attention weight is identically 1,
        # so self-attention reduces to the W_V W_O linear image.
        config = tiny_config(mode=AttentionMode.SELF_ONLY, modalities=("clinical",), tokens_per_modality=1)
        model = build(config)
        batch = tiny_batch(3, config)
        latent = model.backbones["clinical"].forward(Tensor(batch.clinical))
        block = model.self_blocks["clinical"]
        manual = latent.values @ block.w_v.values @ block.w_o.values
        manual = manual @ model.decision_weight.values + model.decision_bias.values
        np.testing.assert_allclose(model.forward(batch).values, manual, atol=1e-12)


class TestPredict:
    def test_argmax(self):
        config = tiny_config(mode=AttentionMode.NO_ATTENTION, modalities=("clinical",))
        model = build(config)
        model.decision_weight.values[:] = 0.0
        model.decision_bias.values = np.array([0.1, 0.9, 0.2])
        batch = tiny_batch(2, config)
        np.testing.assert_array_equal(model.predict(batch), [1, 1])

    def test_tie_breaks_to_lowest_class(self):
        config = tiny_config(mode=AttentionMode.NO_ATTENTION, modalities=("clinical",))
        model = build(config)
        model.decision_weight.values[:] = 0.0
        model.decision_bias.values = np.array([0.5, 0.5, 0.1])
        batch = tiny_batch(3, config)
        np.testing.assert_array_equal(model.predict(batch), [0, 0, 0])

    def test_argmax_invariant_under_positive_affine(self):
        rng = np.random.default_rng(5)
        logits = rng.normal(size=(20, 3))
        base = np.argmax(logits, axis=-1)
        for scale, shift in ((2.0, 0.0), (1.0, 5.0), (0.3, -2.0)):
            np.testing.assert_array_equal(np.argmax(scale * logits + shift, axis=-1), base)


class TestParameterAccounting:
    def test_mode_lattice_strict_ordering(self):
        counts = {mode: build(tiny_config(mode=mode)).parameter_count() for mode in AttentionMode}
        assert counts[AttentionMode.NO_ATTENTION] < counts[AttentionMode.SELF_ONLY] < counts[AttentionMode.SELF_AND_CROSS]
        assert counts[AttentionMode.NO_ATTENTION] < counts[AttentionMode.CROSS_ONLY] < counts[AttentionMode.SELF_AND_CROSS]

    def test_excluding_a_modality_removes_its_parameters(self):
        full = build(tiny_config(mode=AttentionMode.SELF_AND_CROSS))
        reduced = build(tiny_config(mode=AttentionMode.SELF_AND_CROSS, modalities=("clinical", "genetic")))
        assert not any("imaging" in name for name in reduced.parameters())
        kept = {n for n in full.parameters() if "imaging" not in n and not n.startswith("decision.")}
        reduced_names = {n for n in reduced.parameters() if not n.startswith("decision.")}
        assert reduced_names == kept
        # decision layer shrinks from 3 pairs to 1 pair
        assert reduced.decision_weight.shape == (2 * reduced.config.d_model, 3)


class TestConfig:
    def test_round_trip_dict(self):
        config = tiny_config(mode=AttentionMode.CROSS_ONLY, seed=9)
        again = ModelConfig.from_dict(config.to_dict())
        assert again == config

    def test_hash_stable_and_sensitive(self):
        a = tiny_config(seed=1)
        assert config_hash(a) == config_hash(ModelConfig.from_dict(a.to_dict()))
        assert config_hash(a) != config_hash(tiny_config(seed=2))

    def test_invalid_token_split_rejected(self):
        with pytest.raises(ConfigError):
            tiny_config(d_model=8, tokens_per_modality=3)

    def test_unknown_field_rejected(self):
        with pytest.raises(ConfigError):
            ModelConfig.from_dict({"flux_capacitor": 1})

    def test_modalities_normalized_to_canonical_order(self):
        config = tiny_config(modalities=("imaging", "clinical"))
        assert config.modalities == ("clinical", "imaging")


class TestAttentionDiagnostics:
    def test_weight_export_writes_per_head_csv(self, tmp_path):
        config = tiny_config(mode=AttentionMode.SELF_AND_CROSS)
        model = build(config)
        batch = tiny_batch(4, config)
        model.forward(batch)
        written = model.export_attention_weights(tmp_path / "weights")
        # 3 self blocks + 6 cross directions, one file per head
        assert len(written) == 9 * config.num_heads
        sample = np.loadtxt(written[0], delimiter=",")
        t = config.tokens_per_modality
        assert sample.shape == (t, t) if t > 1 else sample.shape in ((), (1,))
        np.testing.assert_allclose(np.atleast_2d(sample).sum(axis=-1), 1.0, atol=1e-12)


class TestCheckpoint:
    def test_round_trip(self, tmp_path):
        config = tiny_config(mode=AttentionMode.SELF_AND_CROSS, seed=21)
        model = build(config)
        batch = tiny_batch(3, config)
        save_checkpoint(model, tmp_path / "ckpt")
        loaded = load_checkpoint(tmp_path / "ckpt")
        assert loaded.config == config
        for name, t in model.parameters().items():
            assert np.array_equal(t.values, loaded.parameters()[name].values), name
        np.testing.assert_array_equal(model.predict(batch), loaded.predict(batch))

    def test_checkpoint_distinguishes_trained_weights(self, tmp_path):
        config = tiny_config(seed=3)
        model = build(config)
        model.decision_bias.values[:] = 7.0
        save_checkpoint(model, tmp_path / "ckpt")
        loaded = load_checkpoint(tmp_path / "ckpt")
        np.testing.assert_array_equal(loaded.decision_bias.values, model.decision_bias.values)
