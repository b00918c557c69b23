"""Acceptance suite: one test per criterion, each printing a PASS line.

Run with ``pytest tests/test_acceptance.py -v -s``.  The two directional
ablation criteria train dozens of models and dominate the runtime.
"""

import json
import os
import time
from dataclasses import replace

import numpy as np
import pytest

from _probes import mlp_probe, macro_f1_from_predictions, probe_features
from xmf.attention import AttentionBlock, AttentionConfig, cross_modal_pair, scaled_dot_product, self_attention
from xmf.cli import main as cli_main
from xmf.datagen import GenSpec, export_dataset, generate, import_dataset
from xmf.fusion import AttentionMode, ModelConfig, build, decision_input_width
from xmf.metrics import macro_f1, tally, two_sample_z
from xmf.seeding import rng_for
from xmf.snp import MISSING, RegionSet, VariantSite, VariantTable, filter_variants, hwe_pvalue, region_filter, write_variant_table
from xmf.tensor import Tensor, check_gradients, conv2d, cross_entropy, matmul, softmax_rows
from xmf.training import GuardedDataset, ablation_matrix, grid_search, stratified_split, train_one

# The experiment configuration used by the directional criteria: two tokens
# per modality so cross-modal attention can express interactions, a raised
# q/k init gain so those interactions are learnable, and hidden widths small
# enough that seventy-odd training runs fit the stated time budgets.
EXPERIMENT_CONFIG = ModelConfig(
    mode=AttentionMode.SELF_AND_CROSS,
    d_model=32,
    num_heads=2,
    tokens_per_modality=2,
    qk_init_gain=6.0,
    dropout_rates=(0.15, 0.15, 0.15),
    learning_rate=3e-3,
    batch_size=32,
    epochs=60,
    clinical_hidden=(24, 16),
    genetic_hidden=(32, 16),
    conv_channels=(4, 8, 12),
    conv_strides=(3, 2, 2),
)

WORKERS = 2


def ok(criterion: str, detail: str = ""):
    print(f"\nACCEPTANCE {criterion}: PASS {detail}")


@pytest.fixture(scope="module")
def planted_dataset():
    """The 660-sample planted-interaction dataset (lambda = 1)."""
    return generate(GenSpec(seed=5, interaction_strength=1.0))


class TestCriterion1GradientSoundness:
    def test_every_op_and_full_model(self):
        t0 = time.perf_counter()
        rng = np.random.default_rng(0)
        worst_ops = 0.0

        for i in range(20):
            a = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
            b = Tensor(rng.normal(size=(4, 3)), requires_grad=True)
            worst_ops = max(worst_ops, check_gradients(lambda: matmul(a, b).sum(), [a, b]))

            x = Tensor(rng.normal(size=(3, 5)), requires_grad=True)
            worst_ops = max(worst_ops, check_gradients(lambda: (softmax_rows(x) * x).sum(), [x]))

            img = Tensor(rng.normal(size=(2, 5, 5)), requires_grad=True)
            ker = Tensor(rng.normal(size=(2, 2, 3, 3)), requires_grad=True)
            worst_ops = max(worst_ops, check_gradients(lambda: conv2d(img, ker, 2).sum(), [img, ker]))

            logits = Tensor(rng.normal(size=(4, 3)), requires_grad=True)
            labels = rng.integers(0, 3, size=4)
            worst_ops = max(worst_ops, check_gradients(lambda: cross_entropy(logits, labels), [logits]))

            q = Tensor(rng.normal(size=(2, 4)), requires_grad=True)
            k = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
            v = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
            worst_ops = max(worst_ops, check_gradients(lambda: scaled_dot_product(q, k, v).sum(), [q, k, v]))

            block = AttentionBlock(AttentionConfig(4, 2), rng_for(i, "acc1"))
            block2 = AttentionBlock(AttentionConfig(4, 2), rng_for(i, "acc1b"))
            xx = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
            worst_ops = max(worst_ops, check_gradients(lambda: self_attention(block, xx).sum(), [xx, *block.parameters().values()]))
            aa = Tensor(rng.normal(size=(2, 4)), requires_grad=True)
            bb = Tensor(rng.normal(size=(2, 4)), requires_grad=True)
            worst_ops = max(worst_ops, check_gradients(lambda: cross_modal_pair(block, block2, aa, bb).sum(), [aa, bb]))
        assert worst_ops < 1e-4

        config = ModelConfig(
            mode=AttentionMode.SELF_AND_CROSS,
            d_model=4,
            num_heads=2,
            tokens_per_modality=2,
            dropout_rates=(0.0, 0.0, 0.0),
            clinical_dim=3,
            genetic_dim=3,
            image_shape=(1, 6, 6),
            clinical_hidden=(4, 3),
            genetic_hidden=(4, 3),
            conv_channels=(2, 2, 2),
            conv_kernels=(3, 2, 2),
            conv_strides=(1, 1, 1),
        )
        worst_model = 0.0
        for i in range(20):
            model = build(replace(config, seed=i))
            brng = np.random.default_rng(1000 + i)
            batch = model_batch(brng, config)
            params = list(model.parameters().values())
            # exact power-of-two loss scale keeps the central-difference
            # quantization below the 1e-8 floor at eps=1e-5 (see ledger)
            err = check_gradients(lambda: cross_entropy(model.forward(batch), batch.labels) * 0.015625, params)
            worst_model = max(worst_model, err)
        assert worst_model < 1e-4

        elapsed = time.perf_counter() - t0
        assert elapsed < 60.0, f"gradient soundness took {elapsed:.1f}s"
        ok("1 (gradient soundness)", f"ops worst {worst_ops:.2e}, model worst {worst_model:.2e}, {elapsed:.1f}s")


def model_batch(rng, config):
    from xmf.fusion import MultimodalBatch

    return MultimodalBatch(
        clinical=rng.normal(size=(2, config.clinical_dim)),
        genetic=rng.normal(size=(2, config.genetic_dim)),
        images=rng.uniform(size=(2, *config.image_shape)),
        labels=np.array([0, 2]),
    )


class TestCriterion2AttentionOracle:
    def test_brute_force_equivalence(self):
        rng = np.random.default_rng(1)
        for _ in range(100):
            m, n, dk, dv = rng.integers(1, 9, size=4)
            q = rng.normal(size=(m, dk))
            k = rng.normal(size=(n, dk))
            v = rng.normal(size=(n, dv))
            out, weights = scaled_dot_product(Tensor(q), Tensor(k), Tensor(v), return_weights=True)
            scores = q @ k.T / np.sqrt(dk)
            e = np.exp(scores - scores.max(axis=-1, keepdims=True))
            w_expected = e / e.sum(axis=-1, keepdims=True)
            np.testing.assert_allclose(out.values, w_expected @ v, atol=1e-12)
            np.testing.assert_allclose(weights.values, w_expected, atol=1e-12)
            np.testing.assert_allclose(weights.values.sum(axis=-1), 1.0, atol=1e-12)
            assert (weights.values >= 0).all()
        ok("2 (attention oracle)", "100 instances within 1e-12, rows stochastic")


class TestCriterion3EquationFidelity:
    def test_width_bookkeeping_and_parameter_ordering(self):
        config = EXPERIMENT_CONFIG
        model = build(config)
        assert model.decision_weight.shape[0] == 6 * config.d_model
        assert decision_input_width(config) == 6 * config.d_model

        counts = {mode: build(replace(config, mode=mode)).parameter_count() for mode in AttentionMode}
        assert counts[AttentionMode.NO_ATTENTION] < counts[AttentionMode.SELF_ONLY] < counts[AttentionMode.SELF_AND_CROSS]
        assert counts[AttentionMode.NO_ATTENTION] < counts[AttentionMode.CROSS_ONLY] < counts[AttentionMode.SELF_AND_CROSS]
        ok("3 (equation fidelity)", f"decision width {6 * config.d_model}, counts {sorted(counts.values())}")


class TestCriterion4ProtocolFidelity:
    def test_split_grid_and_hygiene(self):
        labels = np.repeat([0, 1, 2], [165, 39, 35])
        plan = stratified_split(labels, test_frac=0.10, seed=3)
        counts = np.bincount(labels[plan.test_indices], minlength=3)
        for cls, n_cls in ((0, 165), (1, 39), (2, 35)):
            assert abs(counts[cls] - 0.1 * n_cls) <= 1.0

        dataset = generate(GenSpec(n_per_class=(12, 11, 10), n_snps=30, seed=2, interaction_strength=0.0))
        guard = GuardedDataset(dataset)
        split = stratified_split(guard.labels, seed=0)
        base = ModelConfig(
            mode=AttentionMode.NO_ATTENTION,
            modalities=("clinical",),
            d_model=8,
            num_heads=2,
            dropout_rates=(0.0, 0.0, 0.0),
            clinical_hidden=(12, 8),
            batch_size=8,
            epochs=2,
            seed=0,
        )
        best, trials = grid_search(base, {"learning_rate": [1e-3, 1e-2], "epochs": [0, 2]}, split, guard)
        winner = [t for t in trials if t.config == best][0]
        assert all(winner.mean_val_accuracy >= t.mean_val_accuracy for t in trials)
        touched = guard.reads_intersect(split.test_indices)
        assert touched == set(), f"tuning read {len(touched)} held-out rows"
        ok("4 (protocol fidelity)", f"test counts {counts.tolist()}, winner dominance, zero test reads")


class TestCriterion5AttentionDirectional:
    def test_self_and_cross_beats_no_attention(self, planted_dataset):
        t0 = time.perf_counter()
        split = stratified_split(planted_dataset.labels, seed=0)
        cells = ablation_matrix(
            planted_dataset,
            split,
            EXPERIMENT_CONFIG,
            modes=[AttentionMode.SELF_AND_CROSS, AttentionMode.NO_ATTENTION],
            subsets=[EXPERIMENT_CONFIG.modalities],
            seeds=range(25),
            workers=WORKERS,
        )
        by_mode = {c.mode: c for c in cells}
        sc = by_mode[AttentionMode.SELF_AND_CROSS]
        na = by_mode[AttentionMode.NO_ATTENTION]
        gap = sc.metric_means["f1"] - na.metric_means["f1"]
        assert sc.metric_means["f1"] >= na.metric_means["f1"], f"S&C {sc.metric_means['f1']:.3f} < no-attention {na.metric_means['f1']:.3f}"
        detail = f"F1 {sc.metric_means['f1']:.3f} vs {na.metric_means['f1']:.3f} (gap {gap:+.3f})"
        if gap >= 0.05:
            z, p = two_sample_z(sc.f1_scores, na.f1_scores)
            assert p < 0.05, f"gap {gap:.3f} but p={p:.3g}"
            detail += f", z={z:.2f}, p={p:.2e}"
        elapsed = time.perf_counter() - t0
        assert elapsed < 900.0, f"criterion 5 took {elapsed:.0f}s"
        ok("5 (attention beats no-attention, 25 seeds)", detail + f", {elapsed:.0f}s")


class TestCriterion6ModalityDirectional:
    def test_three_modalities_best_and_clinical_matters(self, planted_dataset):
        split = stratified_split(planted_dataset.labels, seed=0)
        config = EXPERIMENT_CONFIG
        subsets = [
            ("clinical", "genetic", "imaging"),
            ("clinical", "genetic"),
            ("genetic", "imaging"),
            ("clinical", "imaging"),
        ]
        cells = ablation_matrix(
            planted_dataset,
            split,
            config,
            modes=[AttentionMode.SELF_AND_CROSS],
            subsets=subsets,
            seeds=range(5),
            workers=WORKERS,
        )
        scores = {c.modalities: c.metric_means["f1"] for c in cells}
        triple = scores[("clinical", "genetic", "imaging")]
        for subset in subsets[1:]:
            assert triple >= scores[subset] - 0.02, f"three-modality {triple:.3f} trails {subset} {scores[subset]:.3f}"
        assert scores[("genetic", "imaging")] < scores[("clinical", "imaging")], (
            f"clinical withheld {scores[('genetic', 'imaging')]:.3f} should trail "
            f"clinical+imaging {scores[('clinical', 'imaging')]:.3f}"
        )
        ok("6 (modality importance)", ", ".join(f"{'+'.join(k)}={v:.3f}" for k, v in scores.items()))


class TestCriterion7FilterPipeline:
    def test_hand_computed_fixtures(self):
        assert hwe_pvalue((25, 50, 25)) == 1.0
        assert hwe_pvalue((50, 0, 50)) < 1e-20

        def site_table(genotypes, gq=None):
            genotypes = np.array([genotypes], dtype=np.int8)
            table_gq = np.full(genotypes.shape, 60, dtype=np.int32) if gq is None else np.array([gq], dtype=np.int32)
            return VariantTable([VariantSite("chr1", 100, "s")], genotypes, table_gq, [f"S{i}" for i in range(genotypes.shape[1])])

        kept, log = filter_variants(site_table([0] * 25 + [1] * 50 + [2] * 25))
        assert kept.n_sites == 1 and log == []

        kept, log = filter_variants(site_table([0] * 50 + [2] * 50))
        assert kept.n_sites == 0 and log[0].filter_name == "hwe"

        kept, log = filter_variants(site_table([0] * 100))
        assert kept.n_sites == 0 and log[0].filter_name == "maf"

        kept, log = filter_variants(site_table([MISSING] * 6 + [0] * 24 + [1] * 46 + [2] * 24))
        assert kept.n_sites == 0 and log[0].filter_name == "missing_rate" and abs(log[0].value - 0.06) < 1e-12

        gq = [20] * 90 + [19] * 10  # mean 19.9
        kept, log = filter_variants(site_table([0] * 25 + [1] * 50 + [2] * 25, gq))
        assert kept.n_sites == 0 and log[0].filter_name == "gq" and abs(log[0].value - 19.9) < 1e-12

        boundary = site_table([0, 1, 2])
        assert region_filter(boundary, RegionSet([("chr1", 100, 101)])).n_sites == 1
        assert region_filter(boundary, RegionSet([("chr1", 50, 100)])).n_sites == 0

        rng = np.random.default_rng(4)
        genotypes = rng.integers(0, 3, size=(1000, 50)).astype(np.int8)
        genotypes[rng.random(genotypes.shape) < 0.04] = MISSING
        big = VariantTable(
            [VariantSite("chr1", 10 * (i + 1), f"rs{i}") for i in range(1000)],
            genotypes,
            rng.integers(10, 60, size=genotypes.shape).astype(np.int32),
            [f"S{j}" for j in range(50)],
        )
        once, _ = filter_variants(big)
        twice, removals = filter_variants(once)
        assert removals == [] and [s.site_id for s in once.sites] == [s.site_id for s in twice.sites]
        ok("7 (filter pipeline)", f"fixtures pass; idempotent on 1000-site table ({once.n_sites} survivors)")


class TestCriterion8Metrics:
    def test_metric_identities(self):
        assert abs(macro_f1(tally([0, 1, 2], [0, 0, 0])) - 0.1667) < 1e-4

        rng = np.random.default_rng(5)
        for _ in range(20):
            truths = rng.integers(0, 3, size=30)
            preds = rng.integers(0, 3, size=30)
            cm = tally(truths, preds)
            from xmf.metrics import class_metrics

            assert abs(macro_f1(cm) - np.mean([class_metrics(cm, c)[3] for c in range(3)])) < 1e-12

        z, p = two_sample_z([0.3, 0.5, 0.7], [0.3, 0.5, 0.7])
        assert (z, p) == (0.0, 1.0)
        ok("8 (metrics)", "macro-F1 fixture, compositional consistency, z(a,a)=(0,1)")


class TestCriterion9Determinism:
    def test_datagen_roundtrips_and_training(self, tmp_path):
        spec = GenSpec(n_per_class=(5, 5, 4), n_snps=30, seed=17)
        ds = generate(spec)
        assert ds.equals(generate(spec))

        export_dataset(ds, tmp_path / "a")
        export_dataset(ds, tmp_path / "b")
        digests = []
        for sub in ("a", "b"):
            import hashlib

            h = hashlib.sha256()
            for base, _, files in sorted(os.walk(tmp_path / sub)):
                for name in sorted(files):
                    with open(os.path.join(base, name), "rb") as fh:
                        h.update(name.encode() + fh.read())
            digests.append(h.hexdigest())
        assert digests[0] == digests[1]

        assert import_dataset(tmp_path / "a").equals(ds)

        config = ModelConfig(
            mode=AttentionMode.SELF_AND_CROSS,
            d_model=8,
            num_heads=2,
            tokens_per_modality=2,
            dropout_rates=(0.2, 0.3, 0.5),
            learning_rate=3e-3,
            batch_size=8,
            epochs=2,
            seed=11,
            genetic_dim=30,
            clinical_hidden=(8, 8),
            genetic_hidden=(8, 8),
            conv_channels=(2, 3, 4),
            conv_strides=(3, 2, 2),
        )
        m1 = train_one(config, ds)
        m2 = train_one(config, ds)
        for name, t in m1.parameters().items():
            assert np.array_equal(t.values, m2.parameters()[name].values), name
        ok("9 (determinism and round-trips)", "byte-identical datagen, import identity, identical trained parameters")


class TestCriterion10EndToEndSmoke:
    def test_cli_pipeline(self, tmp_path):
        t0 = time.perf_counter()
        data_dir = tmp_path / "data"
        spec = {"n_per_class": [30, 22, 18], "n_snps": 60, "seed": 5}
        spec_path = tmp_path / "spec.json"
        spec_path.write_text(json.dumps(spec))
        assert cli_main(["datagen", "--spec", str(spec_path), "--out", str(data_dir)]) == 0

        # synthetic variant table through the filter pipeline
        rng = np.random.default_rng(0)
        sites = [VariantSite("chr1", 100 * (i + 1), f"rs{i}") for i in range(40)]
        genotypes = rng.integers(0, 3, size=(40, 30)).astype(np.int8)
        gq = rng.integers(25, 60, size=(40, 30)).astype(np.int32)
        table = VariantTable(sites, genotypes, gq, [f"S{j}" for j in range(30)])
        variants = tmp_path / "variants.tsv"
        write_variant_table(table, variants)
        assert cli_main(["preprocess-snps", "--variants", str(variants), "--out", str(tmp_path / "snps")]) == 0

        model = {
            "mode": "self_and_cross",
            "d_model": 16,
            "num_heads": 2,
            "tokens_per_modality": 2,
            "dropout_rates": [0.1, 0.1, 0.1],
            "learning_rate": 3e-3,
            "batch_size": 16,
            "epochs": 3,
            "seed": 0,
            "genetic_dim": 60,
            "clinical_hidden": [16, 8],
            "genetic_hidden": [16, 8],
            "conv_channels": [3, 6, 9],
            "conv_strides": [3, 2, 2],
        }
        config_path = tmp_path / "model.json"
        config_path.write_text(json.dumps(model))
        grid_path = tmp_path / "grid.json"
        grid_path.write_text(json.dumps({"learning_rate": [1e-3, 3e-3], "epochs": [2, 3], "dropout": [0.1, 0.2]}))

        tune_dir = tmp_path / "tune"
        assert cli_main(["tune", "--data", str(data_dir), "--out", str(tune_dir), "--config", str(config_path), "--grid", str(grid_path), "--budget", "4"]) == 0
        assert (tune_dir / "best_config.json").exists()

        att_dir = tmp_path / "att"
        assert cli_main(["ablate-attention", "--data", str(data_dir), "--out", str(att_dir), "--config", str(config_path), "--seeds", "5", "--workers", str(WORKERS)]) == 0
        rows = (att_dir / "attention_ablation.csv").read_text().splitlines()
        assert len(rows) == 5 and "p_vs_no_attention" in rows[0]

        assert cli_main(["report", "--report", str(att_dir / "report.json"), "--out", str(tmp_path / "rendered")]) == 0
        elapsed = time.perf_counter() - t0
        assert elapsed < 600.0, f"smoke took {elapsed:.0f}s"
        ok("10 (end-to-end smoke)", f"datagen -> preprocess-snps -> tune -> ablate-attention -> report in {elapsed:.0f}s")


class TestPlantedSignalGate:
    """The datagen acceptance gate backing criteria 5 and 6: the planted
    dataset really does hide the class-1-vs-class-0 distinction from every
    single modality while exposing it to their combination."""

    def test_lambda_one_concatenation_gate(self, planted_dataset):
        ds = planted_dataset
        binary = np.flatnonzero(ds.labels <= 1)
        rng = np.random.default_rng(0)
        binary = rng.permutation(binary)
        cut = int(0.8 * binary.size)
        train_idx, eval_idx = binary[:cut], binary[cut:]
        tr, ev = probe_features(ds, train_idx, eval_idx)
        y_tr, y_ev = ds.labels[train_idx], ds.labels[eval_idx]
        unimodal = {}
        for m in ("clinical", "genetic", "imaging"):
            predict = mlp_probe(tr[m], y_tr, seed=1)
            unimodal[m] = macro_f1_from_predictions(y_ev, predict(ev[m]), 2)
            assert 0.3 <= unimodal[m] <= 0.6
        predict = mlp_probe(np.hstack([tr[m] for m in ("clinical", "genetic", "imaging")]), y_tr, seed=1)
        joint = macro_f1_from_predictions(y_ev, predict(np.hstack([ev[m] for m in ("clinical", "genetic", "imaging")])), 2)
        assert joint > 0.8
        ok("planted-signal gate", f"unimodal {', '.join(f'{k}={v:.2f}' for k, v in unimodal.items())}; joint {joint:.2f}")
