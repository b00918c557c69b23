"""Deterministic synthetic three-modality datasets with a planted
cross-modal interaction.

Every sample carries a clinical vector (29 features: 20 z-scored continuous
columns, a 4-level and a 3-level one-hot block, and two binary columns), a
genotype vector over {0, 1, 2}, a 3x72x72 image stack with entries on the
256-level grid in [0, 1], and a class label (0=control, 1=impaired,
2=disease).

Each modality carries a weak unimodal class signal: class-shifted Gaussian
columns in the clinical block, class-biased allele frequencies at planted
loci, and a class-dependent bright disc in image slice 0.  On top of that,
``interaction_strength`` (lambda) plants an XOR-style interaction: a
clinical latent bit ``u`` (column 28) and an imaging latent bit ``v`` (the
horizontal position of a bright square in slice 1) are each marginally
independent of the label, but their agreement separates class 1 from
class 0.  At lambda = 1 every unimodal cue distinguishing classes 0 and 1 is
removed, so only a model that combines clinical and imaging evidence can
resolve them.

The disk layout is language-agnostic: ``clinical.csv``, ``genetic.csv``,
``labels.csv`` (comma separator, ``.`` decimal, LF endings, UTF-8),
``images/<patient_id>_<slice>.pgm`` (binary PGM P5, maxval 255), and
``manifest.json`` recording the seed and the generating spec.  Floats are
written with ``repr`` so the round-trip is bit-exact.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, fields

import numpy as np

from .errors import ConfigError, DataError, ParseError
from .fusion import MultimodalBatch
from .seeding import rng_for

N_CLINICAL = 29
N_CONTINUOUS = 20
IMAGE_SHAPE = (3, 72, 72)

# Clinical column roles.
_CAT4 = slice(20, 24)
_CAT3 = slice(24, 27)
_COL_NOISE_BIT = 27
_COL_XOR_BIT = 28

# Imaging geometry: class discs live in slice 0, the XOR square in slice 1.
_DISC_RADIUS = 8
_DISC_AD = (36, 36)
_DISC_MCI = (54, 18)
_SQUARE_ROWS = slice(27, 45)
_SQUARE_LEFT = slice(6, 24)
_SQUARE_RIGHT = slice(48, 66)
_SIGNAL_GAIN = 0.6


@dataclass(frozen=True)
class GenSpec:
    """Size, seed, and signal strengths for one synthetic dataset."""

    n_per_class: tuple[int, int, int] = (456, 108, 96)
    n_snps: int = 1000
    seed: int = 0
    interaction_strength: float = 1.0
    clinical_shift: float = 1.5
    genetic_planted: int = 20
    genetic_shift: float = 0.35
    image_noise: float = 0.25

    def __post_init__(self):
        object.__setattr__(self, "n_per_class", tuple(int(n) for n in self.n_per_class))
        if len(self.n_per_class) != 3 or any(n < 4 for n in self.n_per_class):
            raise ConfigError(f"n_per_class needs three counts >= 4, got {self.n_per_class}")
        if not (0.0 <= self.interaction_strength <= 1.0):
            raise ConfigError(f"interaction_strength must lie in [0, 1], got {self.interaction_strength}")
        if self.n_snps < self.genetic_planted or self.genetic_planted < 0:
            raise ConfigError(f"need 0 <= genetic_planted <= n_snps, got {self.genetic_planted} > {self.n_snps}")
        if not (0.0 < self.image_noise <= 1.0):
            raise ConfigError(f"image_noise must lie in (0, 1], got {self.image_noise}")

    def to_dict(self) -> dict:
        return {f.name: (list(v) if isinstance(v := getattr(self, f.name), tuple) else v) for f in fields(self)}

    @classmethod
    def from_dict(cls, data: dict) -> "GenSpec":
        names = {f.name for f in fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise ConfigError(f"unknown GenSpec fields {sorted(unknown)}")
        return cls(**data)


@dataclass
class MultimodalDataset:
    """Arrays for all samples plus patient ids and the generating spec."""

    clinical: np.ndarray
    genetic: np.ndarray
    images: np.ndarray
    labels: np.ndarray
    patient_ids: list[str]
    spec: GenSpec | None = None

    @property
    def n(self) -> int:
        return self.labels.shape[0]

    def take(self, indices, modalities=None) -> MultimodalBatch:
        idx = np.asarray(indices, dtype=np.int64)
        mods = set(modalities) if modalities is not None else {"clinical", "genetic", "imaging"}
        return MultimodalBatch(
            clinical=self.clinical[idx] if "clinical" in mods else None,
            genetic=self.genetic[idx] if "genetic" in mods else None,
            images=self.images[idx] if "imaging" in mods else None,
            labels=self.labels[idx],
        )

    def equals(self, other: "MultimodalDataset") -> bool:
        return (
            np.array_equal(self.clinical, other.clinical)
            and np.array_equal(self.genetic, other.genetic)
            and np.array_equal(self.images, other.images)
            and np.array_equal(self.labels, other.labels)
            and self.patient_ids == other.patient_ids
        )

    def validate(self) -> None:
        n = self.n
        if self.clinical.shape != (n, N_CLINICAL):
            raise DataError(f"clinical block must be (n, {N_CLINICAL}), got {self.clinical.shape}")
        if self.genetic.shape[0] != n or self.images.shape != (n, *IMAGE_SHAPE):
            raise DataError("modality arrays disagree on sample count or image shape")
        if not np.isin(self.genetic, (0, 1, 2)).all():
            raise DataError("genotype entries must be 0, 1, or 2")
        if self.images.min() < 0.0 or self.images.max() > 1.0:
            raise DataError("image entries must lie in [0, 1]")
        if not np.isin(self.labels, (0, 1, 2)).all():
            raise DataError("labels must lie in {0, 1, 2}")


def _disc_mask(center: tuple[int, int], radius: int) -> np.ndarray:
    rows, cols = np.ogrid[:72, :72]
    return (rows - center[0]) ** 2 + (cols - center[1]) ** 2 <= radius**2


def generate(spec: GenSpec) -> MultimodalDataset:
    """Generate one dataset; identical specs produce bit-identical arrays."""
    n = sum(spec.n_per_class)
    lam = spec.interaction_strength

    labels = np.repeat(np.arange(3, dtype=np.int64), spec.n_per_class)
    labels = labels[rng_for(spec.seed, "labels").permutation(n)]
    is_cn, is_mci, is_ad = labels == 0, labels == 1, labels == 2

    # Latent XOR bits: u is clinical, v imaging.  Marginally uniform in every
    # class; agreement (u == v) marks class 0 and disagreement class 1
    # whenever the lambda-coin enforces the interaction.
    bits_rng = rng_for(spec.seed, "bits")
    u = bits_rng.integers(0, 2, n)
    v_free = bits_rng.integers(0, 2, n)
    enforce = bits_rng.random(n) < lam
    v = np.where(is_cn & enforce, u, np.where(is_mci & enforce, 1 - u, v_free))

    # Clinical block.  The latent bit u also shifts a band of continuous
    # columns; u itself stays label-independent, so these columns carry no
    # marginal class signal, only a stronger footprint for the bit.
    crng = rng_for(spec.seed, "clinical")
    continuous = crng.normal(0.0, 1.0, (n, N_CONTINUOUS))
    continuous[is_ad, 0:6] += spec.clinical_shift
    continuous[is_mci, 6:12] += (1.0 - lam) * spec.clinical_shift
    # Strong footprint: the bit dominates these columns' variance, so it
    # survives an untrained backbone the way the imaging square does.
    continuous[:, 12:18] += np.where(u == 1, 2.2, -2.2)[:, None]
    continuous -= continuous.mean(axis=0)
    std = continuous.std(axis=0)
    continuous /= np.where(std > 0, std, 1.0)

    cat4_probs = {
        0: np.array([0.4, 0.3, 0.2, 0.1]),
        2: np.array([0.1, 0.2, 0.3, 0.4]),
    }
    cat4_probs[1] = lam * cat4_probs[0] + (1.0 - lam) * np.array([0.1, 0.4, 0.4, 0.1])
    cat4 = np.zeros((n, 4))
    for cls, probs in cat4_probs.items():
        rows = np.flatnonzero(labels == cls)
        draws = crng.choice(4, size=rows.size, p=probs)
        cat4[rows, draws] = 1.0
    cat3 = np.zeros((n, 3))
    cat3[np.arange(n), crng.integers(0, 3, n)] = 1.0

    clinical = np.zeros((n, N_CLINICAL))
    clinical[:, :N_CONTINUOUS] = continuous
    clinical[:, _CAT4] = cat4
    clinical[:, _CAT3] = cat3
    # Both binary columns carry the latent bit; redundancy concentrates its
    # footprint without giving it any marginal label signal.
    clinical[:, _COL_NOISE_BIT] = u
    clinical[:, _COL_XOR_BIT] = u

    # Genotypes: Binomial(2, f) per locus; the first half of the planted loci
    # separates class 2, the second half separates class 1 only while the
    # interaction is not fully enforced.
    grng = rng_for(spec.seed, "genetic")
    base_freq = grng.uniform(0.05, 0.5, spec.n_snps)
    planted = np.sort(grng.choice(spec.n_snps, spec.genetic_planted, replace=False))
    half = spec.genetic_planted // 2
    freqs = np.tile(base_freq, (n, 1))
    freqs[np.ix_(is_ad, planted[:half])] = np.clip(base_freq[planted[:half]] + spec.genetic_shift, 0.02, 0.98)
    freqs[np.ix_(is_mci, planted[half:])] = np.clip(base_freq[planted[half:]] + (1.0 - lam) * spec.genetic_shift, 0.02, 0.98)
    genetic = grng.binomial(2, freqs).astype(np.float64)

    # Images: uniform noise, class discs in slice 0, XOR square in slice 1.
    irng = rng_for(spec.seed, "images")
    images = irng.uniform(0.0, spec.image_noise, (n, *IMAGE_SHAPE))
    images[np.ix_(is_ad, [0])] += _SIGNAL_GAIN * _disc_mask(_DISC_AD, _DISC_RADIUS)[None, None]
    images[np.ix_(is_mci, [0])] += (1.0 - lam) * _SIGNAL_GAIN * _disc_mask(_DISC_MCI, _DISC_RADIUS)[None, None]
    left, right = v == 0, v == 1
    images[np.ix_(left, [1])] += _square_patch(_SQUARE_LEFT)[None, None]
    images[np.ix_(right, [1])] += _square_patch(_SQUARE_RIGHT)[None, None]
    images = np.round(np.clip(images, 0.0, 1.0) * 255.0) / 255.0

    ids = [f"P{i:05d}" for i in range(n)]
    dataset = MultimodalDataset(clinical, genetic, images, labels, ids, spec)
    dataset.validate()
    return dataset


def _square_patch(col_slice: slice) -> np.ndarray:
    patch = np.zeros((72, 72))
    patch[_SQUARE_ROWS, col_slice] = _SIGNAL_GAIN
    return patch


# ---------------------------------------------------------------------------
# Disk round-trip.
# ---------------------------------------------------------------------------


def _write_pgm(path, image01: np.ndarray) -> None:
    data = np.round(image01 * 255.0).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{data.shape[1]} {data.shape[0]}\n255\n".encode("ascii"))
        fh.write(data.tobytes())


def _read_pgm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        blob = fh.read()
    parts = blob.split(b"\n", 3)
    if len(parts) != 4 or parts[0] != b"P5" or parts[2] != b"255":
        raise ParseError(f"{path}: not a maxval-255 binary PGM")
    try:
        width, height = (int(x) for x in parts[1].split())
    except ValueError:
        raise ParseError(f"{path}: malformed PGM dimension line") from None
    raw = parts[3]
    if len(raw) != width * height:
        raise ParseError(f"{path}: expected {width * height} pixel bytes, got {len(raw)}")
    return np.frombuffer(raw, dtype=np.uint8).reshape(height, width) / 255.0


def export_dataset(dataset: MultimodalDataset, directory) -> None:
    os.makedirs(directory, exist_ok=True)
    os.makedirs(os.path.join(directory, "images"), exist_ok=True)
    n = dataset.n

    with open(os.path.join(directory, "labels.csv"), "w", encoding="utf-8", newline="\n") as fh:
        fh.write("patient_id,label\n")
        for pid, lab in zip(dataset.patient_ids, dataset.labels):
            fh.write(f"{pid},{int(lab)}\n")

    with open(os.path.join(directory, "clinical.csv"), "w", encoding="utf-8", newline="\n") as fh:
        fh.write("patient_id," + ",".join(f"f{j:02d}" for j in range(N_CLINICAL)) + "\n")
        for i in range(n):
            fh.write(dataset.patient_ids[i] + "," + ",".join(repr(float(x)) for x in dataset.clinical[i]) + "\n")

    with open(os.path.join(directory, "genetic.csv"), "w", encoding="utf-8", newline="\n") as fh:
        fh.write("patient_id," + ",".join(f"snp{j:04d}" for j in range(dataset.genetic.shape[1])) + "\n")
        for i in range(n):
            fh.write(dataset.patient_ids[i] + "," + ",".join(str(int(x)) for x in dataset.genetic[i]) + "\n")

    for i, pid in enumerate(dataset.patient_ids):
        for s in range(3):
            _write_pgm(os.path.join(directory, "images", f"{pid}_{s}.pgm"), dataset.images[i, s])

    manifest = {
        "seed": dataset.spec.seed if dataset.spec else None,
        "spec": dataset.spec.to_dict() if dataset.spec else None,
        "n_samples": n,
    }
    with open(os.path.join(directory, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _read_csv_rows(path, expected_fields: int) -> list[list[str]]:
    rows = []
    if not os.path.exists(path):
        raise DataError(f"dataset file missing: {path}")
    with open(path, encoding="utf-8") as fh:
        header = fh.readline()
        if not header:
            raise ParseError(f"{path}:1: empty file")
        for lineno, line in enumerate(fh, start=2):
            line = line.rstrip("\n")
            if not line:
                continue
            cells = line.split(",")
            if len(cells) != expected_fields:
                raise ParseError(f"{path}:{lineno}: expected {expected_fields} fields, got {len(cells)}")
            rows.append(cells)
    return rows


def import_dataset(directory) -> MultimodalDataset:
    labels_rows = _read_csv_rows(os.path.join(directory, "labels.csv"), 2)
    patient_ids = [r[0] for r in labels_rows]
    try:
        labels = np.array([int(r[1]) for r in labels_rows], dtype=np.int64)
    except ValueError as exc:
        raise ParseError(f"{directory}/labels.csv: non-integer label ({exc})") from None
    n = len(patient_ids)
    order = {pid: i for i, pid in enumerate(patient_ids)}
    if len(order) != n:
        raise DataError(f"{directory}/labels.csv: duplicate patient ids")

    clinical = np.zeros((n, N_CLINICAL))
    clin_path = os.path.join(directory, "clinical.csv")
    for lineno, row in enumerate(_read_csv_rows(clin_path, 1 + N_CLINICAL), start=2):
        if row[0] not in order:
            raise DataError(f"{clin_path}: patient {row[0]!r} not present in labels.csv")
        try:
            clinical[order[row[0]]] = [float(x) for x in row[1:]]
        except ValueError as exc:
            raise ParseError(f"{clin_path}:{lineno}: bad float ({exc})") from None

    gen_path = os.path.join(directory, "genetic.csv")
    if not os.path.exists(gen_path):
        raise DataError(f"dataset file missing: {gen_path}")
    with open(gen_path, encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n").split(",")
    n_snps = len(header) - 1
    if n_snps < 1:
        raise ParseError(f"{gen_path}:1: header has no SNP columns")
    genetic = np.zeros((n, n_snps))
    for lineno, row in enumerate(_read_csv_rows(gen_path, 1 + n_snps), start=2):
        if row[0] not in order:
            raise DataError(f"{gen_path}: patient {row[0]!r} not present in labels.csv")
        try:
            genetic[order[row[0]]] = [int(x) for x in row[1:]]
        except ValueError as exc:
            raise ParseError(f"{gen_path}:{lineno}: bad genotype ({exc})") from None

    images = np.zeros((n, *IMAGE_SHAPE))
    for pid, i in order.items():
        for s in range(3):
            path = os.path.join(directory, "images", f"{pid}_{s}.pgm")
            if not os.path.exists(path):
                raise DataError(f"missing image file for listed patient {pid!r}: {path}")
            images[i, s] = _read_pgm(path)

    spec = None
    manifest_path = os.path.join(directory, "manifest.json")
    if os.path.exists(manifest_path):
        with open(manifest_path, encoding="utf-8") as fh:
            manifest = json.load(fh)
        if manifest.get("spec"):
            spec = GenSpec.from_dict(manifest["spec"])

    dataset = MultimodalDataset(clinical, genetic, images, labels, patient_ids, spec)
    dataset.validate()
    return dataset
