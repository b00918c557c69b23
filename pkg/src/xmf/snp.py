"""Variant filtering and supervised SNP feature selection.

The variant table is a tabular stand-in for a VCF: a TSV whose header is
``#CHROM  POS  ID  <sample ids...>`` and whose cells are ``g:q`` with
``g`` in {0, 1, 2, .} (count of non-reference alleles, ``.`` = missing) and
``q`` a nonnegative integer genotype quality.

``filter_variants`` applies four criteria in order to each site and logs the
first failure: Hardy-Weinberg equilibrium p-value, mean genotype quality
over non-missing calls, minor allele frequency, and missing-call rate.
Statistics that are undefined for a site (no non-missing calls) pass, and
the missing-rate criterion then removes the site.

``forest_feature_select`` ranks features by mean decrease in Gini impurity
over a forest of bootstrap CART trees (sqrt-subsampled candidate features,
depth cap 8), mirroring the usual library defaults but implemented here so
the behavior is pinned.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, DegenerateInputError, ParameterError, ParseError
from .seeding import rng_for

MISSING = -1


@dataclass(frozen=True)
class VariantSite:
    chrom: str
    pos: int
    site_id: str


@dataclass
class VariantTable:
    """Per-site genotypes and quality scores for a set of samples."""

    sites: list[VariantSite]
    genotypes: np.ndarray  # (sites, samples), int8 over {0, 1, 2, MISSING}
    gq: np.ndarray  # (sites, samples), nonnegative int
    sample_ids: list[str]

    def __post_init__(self):
        self.genotypes = np.asarray(self.genotypes, dtype=np.int8)
        self.gq = np.asarray(self.gq, dtype=np.int32)
        shape = (len(self.sites), len(self.sample_ids))
        if self.genotypes.shape != shape or self.gq.shape != shape:
            raise DataError(f"genotype/gq matrices must both be {shape}, got {self.genotypes.shape} and {self.gq.shape}")
        if not np.isin(self.genotypes, (0, 1, 2, MISSING)).all():
            raise DataError("genotypes must be 0, 1, 2, or missing")
        if (self.gq < 0).any():
            raise DataError("genotype qualities must be nonnegative")
        last: dict[str, int] = {}
        for s in self.sites:
            if s.chrom in last and s.pos <= last[s.chrom]:
                raise DataError(f"positions must be strictly increasing within a chromosome; offender {s.chrom}:{s.pos}")
            last[s.chrom] = s.pos

    @property
    def n_sites(self) -> int:
        return len(self.sites)

    def subset(self, keep: np.ndarray) -> "VariantTable":
        keep = np.asarray(keep)
        return VariantTable(
            [self.sites[i] for i in np.flatnonzero(keep)] if keep.dtype == bool else [self.sites[i] for i in keep],
            self.genotypes[keep],
            self.gq[keep],
            list(self.sample_ids),
        )


def parse_variant_table(path) -> VariantTable:
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n")
        if not header.startswith("#CHROM"):
            raise ParseError(f"{path}:1: header must start with '#CHROM'")
        cols = header.split("\t")
        if len(cols) < 4 or cols[:3] != ["#CHROM", "POS", "ID"]:
            raise ParseError(f"{path}:1: header must be '#CHROM POS ID <samples...>'")
        sample_ids = cols[3:]

        sites: list[VariantSite] = []
        geno_rows, gq_rows = [], []
        seen: set[tuple[str, int]] = set()
        for lineno, line in enumerate(fh, start=2):
            line = line.rstrip("\n")
            if not line:
                continue
            cells = line.split("\t")
            if len(cells) != 3 + len(sample_ids):
                raise ParseError(f"{path}:{lineno}: expected {3 + len(sample_ids)} fields, got {len(cells)}")
            chrom, pos_str, site_id = cells[:3]
            try:
                pos = int(pos_str)
            except ValueError:
                raise ParseError(f"{path}:{lineno}: bad position {pos_str!r}") from None
            if (chrom, pos) in seen:
                raise DataError(f"{path}:{lineno}: duplicate site {chrom}:{pos}")
            seen.add((chrom, pos))
            genos, gqs = [], []
            for cell in cells[3:]:
                g, sep, q = cell.partition(":")
                if not sep:
                    raise ParseError(f"{path}:{lineno}: cell {cell!r} is not 'g:q'")
                if g == ".":
                    genos.append(MISSING)
                elif g in ("0", "1", "2"):
                    genos.append(int(g))
                else:
                    raise ParseError(f"{path}:{lineno}: genotype must be 0, 1, 2, or '.', got {g!r}")
                try:
                    gqs.append(int(q))
                except ValueError:
                    raise ParseError(f"{path}:{lineno}: bad quality {q!r}") from None
            sites.append(VariantSite(chrom, pos, site_id))
            geno_rows.append(genos)
            gq_rows.append(gqs)

    shape = (len(sites), len(sample_ids))
    genotypes = np.array(geno_rows, dtype=np.int8).reshape(shape)
    gq = np.array(gq_rows, dtype=np.int32).reshape(shape)
    return VariantTable(sites, genotypes, gq, sample_ids)


def write_variant_table(table: VariantTable, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("#CHROM\tPOS\tID\t" + "\t".join(table.sample_ids) + "\n")
        for i, site in enumerate(table.sites):
            cells = []
            for g, q in zip(table.genotypes[i], table.gq[i]):
                cells.append(("." if g == MISSING else str(int(g))) + ":" + str(int(q)))
            fh.write(f"{site.chrom}\t{site.pos}\t{site.site_id}\t" + "\t".join(cells) + "\n")


def hwe_pvalue(counts: tuple[int, int, int]) -> float:
    """Hardy-Weinberg 1-df chi-square p-value from genotype counts.

    ``counts`` is ``(n_AA, n_Aa, n_aa)``; the allele frequency estimate is
    ``p = (2 n_AA + n_Aa) / 2n``.  Zero-expected cells contribute zero to
    the statistic, so monomorphic sites get p = 1.  The tail probability is
    ``erfc(sqrt(x / 2))``, the exact survival function of chi-square with
    one degree of freedom.
    """
    n_aa_ref, n_het, n_alt = (int(c) for c in counts)
    if min(n_aa_ref, n_het, n_alt) < 0:
        raise DataError(f"genotype counts must be nonnegative, got {counts}")
    n = n_aa_ref + n_het + n_alt
    if n < 1:
        raise DegenerateInputError("HWE undefined for zero genotype calls")
    p = (2 * n_aa_ref + n_het) / (2 * n)
    expected = (n * p * p, 2 * n * p * (1 - p), n * (1 - p) * (1 - p))
    chi2 = 0.0
    for obs, exp in zip((n_aa_ref, n_het, n_alt), expected):
        if exp > 0:
            chi2 += (obs - exp) ** 2 / exp
    return math.erfc(math.sqrt(chi2 / 2.0))


@dataclass(frozen=True)
class FilterThresholds:
    hwe_p: float = 0.05
    min_gq: float = 20.0
    min_maf: float = 0.01
    max_missing: float = 0.05


@dataclass(frozen=True)
class Removal:
    site_id: str
    filter_name: str
    value: float


def filter_variants(table: VariantTable, thresholds: FilterThresholds = FilterThresholds()) -> tuple[VariantTable, list[Removal]]:
    """Apply the HWE, GQ, MAF, and missing-rate criteria in that order.

    Surviving sites keep their order; the log records each removed site with
    the first criterion it failed and the offending value.
    """
    keep = np.ones(table.n_sites, dtype=bool)
    log: list[Removal] = []
    for i, site in enumerate(table.sites):
        genos = table.genotypes[i]
        called = genos != MISSING
        n_called = int(called.sum())
        n_samples = genos.size

        if n_called:
            counts = (int((genos == 0).sum()), int((genos == 1).sum()), int((genos == 2).sum()))
            p_hwe = hwe_pvalue(counts)
            if p_hwe < thresholds.hwe_p:
                keep[i] = False
                log.append(Removal(site.site_id, "hwe", p_hwe))
                continue
            mean_gq = float(table.gq[i][called].mean())
            if mean_gq < thresholds.min_gq:
                keep[i] = False
                log.append(Removal(site.site_id, "gq", mean_gq))
                continue
            alt_freq = (2 * counts[2] + counts[1]) / (2 * n_called)
            maf = min(alt_freq, 1.0 - alt_freq)
            if maf < thresholds.min_maf:
                keep[i] = False
                log.append(Removal(site.site_id, "maf", maf))
                continue
        missing_rate = 1.0 - n_called / n_samples
        if missing_rate > thresholds.max_missing:
            keep[i] = False
            log.append(Removal(site.site_id, "missing_rate", missing_rate))
    return table.subset(keep), log


@dataclass
class RegionSet:
    """Half-open [start, end) intervals; normalized to non-overlapping."""

    intervals: list[tuple[str, int, int]] = field(default_factory=list)

    def normalized(self) -> "RegionSet":
        by_chrom: dict[str, list[tuple[int, int]]] = {}
        for chrom, start, end in self.intervals:
            if end <= start:
                raise DataError(f"empty interval {chrom}:{start}-{end}")
            by_chrom.setdefault(chrom, []).append((start, end))
        merged: list[tuple[str, int, int]] = []
        for chrom in sorted(by_chrom):
            spans = sorted(by_chrom[chrom])
            cur_start, cur_end = spans[0]
            for start, end in spans[1:]:
                if start <= cur_end:
                    cur_end = max(cur_end, end)
                else:
                    merged.append((chrom, cur_start, cur_end))
                    cur_start, cur_end = start, end
            merged.append((chrom, cur_start, cur_end))
        return RegionSet(merged)

    def contains(self, chrom: str, pos: int) -> bool:
        return any(c == chrom and start <= pos < end for c, start, end in self.intervals)


def read_bed(path) -> RegionSet:
    """Read a 3-column BED file (0-based, half-open) into a RegionSet."""
    intervals = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line or line.startswith(("track", "browser", "#")):
                continue
            cells = line.split("\t")
            if len(cells) < 3:
                raise ParseError(f"{path}:{lineno}: BED needs at least 3 columns")
            try:
                intervals.append((cells[0], int(cells[1]), int(cells[2])))
            except ValueError:
                raise ParseError(f"{path}:{lineno}: bad BED coordinates") from None
    return RegionSet(intervals).normalized()


def region_filter(table: VariantTable, regions: RegionSet) -> VariantTable:
    """Keep sites whose position falls in some [start, end) interval."""
    keep = np.array([regions.contains(s.chrom, s.pos) for s in table.sites], dtype=bool)
    return table.subset(keep)


def genotype_matrix(table: VariantTable) -> np.ndarray:
    """(samples x sites) {0,1,2} matrix; missing calls take the site mode."""
    geno = table.genotypes.astype(np.int64)
    out = np.empty_like(geno)
    for i in range(table.n_sites):
        row = geno[i]
        called = row != MISSING
        if called.any():
            mode = int(np.bincount(row[called], minlength=3).argmax())
        else:
            mode = 0
        out[i] = np.where(called, row, mode)
    return out.T.astype(np.float64)


# ---------------------------------------------------------------------------
# Random forest feature selection.
# ---------------------------------------------------------------------------


def _gini(class_counts: np.ndarray) -> np.ndarray:
    """Gini impurity from class-count vectors along the last axis."""
    totals = class_counts.sum(axis=-1, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        p = class_counts / totals
        g = 1.0 - (p * p).sum(axis=-1)
    return np.where(totals[..., 0] > 0, g, 0.0)


def _grow_tree(x, onehot, idx, depth, max_depth, n_sub, n_total, importances, rng):
    n_node = idx.size
    counts = onehot[idx].sum(axis=0)
    impurity = float(_gini(counts))
    if impurity == 0.0 or depth >= max_depth or n_node < 2:
        return

    candidates = rng.choice(x.shape[1], size=n_sub, replace=False)
    sub = x[np.ix_(idx, candidates)]
    # counts_vc[j, v] = class counts for value v of candidate j.
    counts_v = np.stack([((sub == v).T.astype(np.float64)) @ onehot[idx] for v in (0, 1, 2)], axis=1)

    best = None  # (decrease, candidate position, threshold)
    for cut, left_counts in ((0.5, counts_v[:, 0]), (1.5, counts_v[:, 0] + counts_v[:, 1])):
        right_counts = counts - left_counts
        n_left = left_counts.sum(axis=1)
        n_right = right_counts.sum(axis=1)
        valid = (n_left > 0) & (n_right > 0)
        if not valid.any():
            continue
        child = (n_left * _gini(left_counts) + n_right * _gini(right_counts)) / n_node
        decrease = np.where(valid, impurity - child, -np.inf)
        j = int(decrease.argmax())
        if best is None or decrease[j] > best[0] + 1e-15:
            best = (float(decrease[j]), j, cut)
    if best is None or best[0] <= 1e-12:
        return

    decrease, j, cut = best
    feature = int(candidates[j])
    importances[feature] += (n_node / n_total) * decrease

    go_left = x[idx, feature] <= cut
    _grow_tree(x, onehot, idx[go_left], depth + 1, max_depth, n_sub, n_total, importances, rng)
    _grow_tree(x, onehot, idx[~go_left], depth + 1, max_depth, n_sub, n_total, importances, rng)


def forest_feature_select(x, labels, n_trees: int, k_out: int, seed: int = 0, max_depth: int = 8) -> np.ndarray:
    """Rank features by mean decrease in impurity; return the top ``k_out``.

    Ties break toward the lower feature index, and identical seeds give
    identical rankings.  Per-tree importances are normalized to sum to one
    before averaging, matching the common library convention.
    """
    x = np.asarray(x)
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if x.ndim != 2 or x.shape[0] != labels.size:
        raise DataError(f"feature matrix {x.shape} does not align with {labels.size} labels")
    if not np.isin(x, (0, 1, 2)).all():
        raise DataError("feature matrix must contain only genotype values 0, 1, 2")
    classes = np.unique(labels)
    if classes.size < 2:
        raise DegenerateInputError("feature selection needs at least two classes")
    if n_trees < 1:
        raise ParameterError(f"n_trees must be positive, got {n_trees}")
    n, n_features = x.shape
    if not 1 <= k_out <= n_features:
        raise ParameterError(f"k_out must lie in [1, {n_features}], got {k_out}")

    onehot = np.zeros((n, classes.size))
    class_pos = {c: i for i, c in enumerate(classes)}
    onehot[np.arange(n), [class_pos[c] for c in labels]] = 1.0
    n_sub = max(1, int(math.isqrt(n_features)))

    total = np.zeros(n_features)
    for t in range(n_trees):
        rng = rng_for(seed, "tree", t)
        boot = rng.integers(0, n, n)
        imp = np.zeros(n_features)
        _grow_tree(x, onehot, boot, 0, max_depth, n_sub, n, imp, rng)
        s = imp.sum()
        if s > 0:
            total += imp / s
    total /= n_trees

    order = np.lexsort((np.arange(n_features), -total))
    return order[:k_out]
