"""Synthetic populations, trios, de novo events and intensity tracks with known truth.

Allele coding inside haplotypes: 0 = A, 1 = B, -1 = deletion allele D.
A panel's ``maf`` is the B frequency among non-deleted chromosomes, so at a
SNP covered by a deletion of frequency ``d`` the three-allele frequencies
are ``p = (1 - maf)(1 - d)``, ``q = maf (1 - d)`` and ``d``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .core import (
    BASELINE_STATE,
    CnvCall,
    GenotypeMatrix,
    IntensityTrack,
    SnpPanel,
    Trio,
    TrueGenotype,
    ValidationError,
    observe_copies,
    rng_for,
    state_segments,
)

DELETED = -1


@dataclass(frozen=True)
class DeletionModel:
    start: int
    end: int  # inclusive
    d: float

    def __post_init__(self):
        if not 0.0 <= self.d < 1.0:
            raise ValidationError(f"deletion frequency d={self.d} must lie in [0, 1)")
        if self.start > self.end or self.start < 0:
            raise ValidationError(f"bad deletion span {self.start}..{self.end}")


@dataclass(frozen=True)
class DuplicationModel:
    """Haploid insertion model.

    A chromosome whose allele at the region's first marker is A carries the
    insertion with probability ``d_a`` (``d_b`` for B).  At each covered SNP
    the inserted copy holds allele I with probability ``q[T, I]`` given the
    original allele T.
    """

    start: int
    end: int
    d_a: float
    d_b: float
    q: tuple = ((1.0, 0.0), (0.0, 1.0))

    def __post_init__(self):
        Q = np.asarray(self.q, dtype=float)
        if Q.shape != (2, 2) or np.any(Q < 0) or not np.allclose(Q.sum(axis=1), 1.0):
            raise ValidationError("Q must be a 2x2 matrix with rows summing to 1")
        for name in ("d_a", "d_b"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValidationError(f"{name}={v} outside [0, 1]")
        if self.start > self.end or self.start < 0:
            raise ValidationError(f"bad duplication span {self.start}..{self.end}")


@dataclass(frozen=True)
class IntensityModel:
    lrr_mean: tuple = (-3.5, -0.66, 0.0, 0.4, 0.75)
    lrr_sd: tuple = (0.2, 0.2, 0.2, 0.2, 0.2)
    baf_sd: float = 0.03
    wave_amplitude: float = 0.0
    wave_period: float = 500.0  # markers
    batch_shift: dict = field(default_factory=dict)

    def __post_init__(self):
        mean = np.asarray(self.lrr_mean)
        if len(mean) != 5 or len(self.lrr_sd) != 5:
            raise ValidationError("need one LRR mean and sd per copy state 0..4")
        if mean[BASELINE_STATE] != 0.0:
            raise ValidationError("baseline LRR mean must be 0")
        if np.any(np.diff(mean) <= 0):
            raise ValidationError("LRR means must increase with copy state")
        if min(self.lrr_sd) <= 0 or self.baf_sd <= 0:
            raise ValidationError("standard deviations must be positive")


@dataclass(frozen=True)
class HotspotModel:
    k: int
    mu: float
    epsilon: float

    def __post_init__(self):
        if self.k < 1 or self.mu < 0 or not 0.0 <= self.epsilon <= 1.0:
            raise ValidationError(f"invalid hotspot model {self}")


@dataclass(frozen=True, eq=False)
class Population:
    """Simulated samples with both observed and true states.

    ``haplotypes`` is (n, 2, m) allele codes; ``insertions`` is the allele
    carried by an inserted copy on each haplotype, -1 for none, or None when
    no duplication was modelled.
    """

    genotypes: GenotypeMatrix
    haplotypes: np.ndarray
    insertions: np.ndarray | None = None

    @property
    def copy_state(self) -> np.ndarray:
        cn = (self.haplotypes != DELETED).sum(axis=1)
        if self.insertions is not None:
            cn = cn + (self.insertions >= 0).sum(axis=1)
        return cn.astype(np.int8)

    @property
    def b_count(self) -> np.ndarray:
        b = (self.haplotypes == 1).sum(axis=1)
        if self.insertions is not None:
            b = b + (self.insertions == 1).sum(axis=1)
        return b.astype(np.int8)

    def true_genotypes(self) -> np.ndarray:
        """TrueGenotype codes; -1 where an insertion makes the code undefined."""
        return true_genotype_codes(self.haplotypes, self.insertions)

    def truth(self, source: str = "truth") -> list[CnvCall]:
        return truth_calls(self.copy_state, self.genotypes.sample_ids,
                           self.genotypes.panel, source)


def true_genotype_codes(haplotypes, insertions=None) -> np.ndarray:
    h0, h1 = haplotypes[:, 0], haplotypes[:, 1]
    lo, hi = np.minimum(h0, h1), np.maximum(h0, h1)
    # (lo, hi) -> code; deletion -1 sorts first
    table = {(0, 0): TrueGenotype.AA, (0, 1): TrueGenotype.AB, (1, 1): TrueGenotype.BB,
             (-1, 0): TrueGenotype.AD, (-1, 1): TrueGenotype.BD, (-1, -1): TrueGenotype.DD}
    out = np.full(h0.shape, -1, dtype=np.int8)
    for (a, b), code in table.items():
        out[(lo == a) & (hi == b)] = code
    if insertions is not None:
        out[(insertions >= 0).any(axis=1)] = -1
    return out


def truth_calls(copy_state, sample_ids, panel: SnpPanel, source="truth") -> list[CnvCall]:
    """Non-baseline runs of a true copy-state matrix as calls with confidence 1."""
    breaks = [s.start for s in panel.chromosome_slices()]
    calls = []
    for i, sid in enumerate(sample_ids):
        for s, e, state in state_segments(np.minimum(copy_state[i], 4), breaks=breaks):
            calls.append(CnvCall(sid, s, e, int(state), 1.0, source))
    return calls


def _check_models(panel, deletions, duplications):
    m = len(panel)
    covered = np.zeros(m, dtype=np.int8)
    for model in (*deletions, *duplications):
        if model.end >= m:
            raise ValidationError(f"region {model.start}..{model.end} exceeds panel of {m} markers")
    for model in deletions:
        covered[model.start:model.end + 1] |= 1
    for model in duplications:
        if np.any(covered[model.start:model.end + 1] & 1):
            raise ValidationError(
                f"unsupported configuration: duplication {model.start}..{model.end} overlaps a deletion")
        covered[model.start:model.end + 1] |= 2


def _draw_haplotypes(rng, maf, deletions, duplications, force_deletion=False):
    """One individual's two haplotypes (and insertion alleles)."""
    m = maf.size
    haps = (rng.random((2, m)) < maf).astype(np.int8)
    for j, model in enumerate(deletions):
        sl = slice(model.start, model.end + 1)
        if force_deletion:
            haps[0, sl] = DELETED
        else:
            dele = rng.random(2) < model.d
            haps[dele, sl] = DELETED
    ins = None
    if duplications:
        ins = np.full((2, m), -1, dtype=np.int8)
        for model in duplications:
            sl = slice(model.start, model.end + 1)
            Q = np.asarray(model.q, dtype=float)
            anchor = haps[:, model.start]
            carry = rng.random(2) < np.where(anchor == 0, model.d_a, model.d_b)
            orig = haps[:, sl]
            inserted = (rng.random(orig.shape) < Q[orig, 1]).astype(np.int8)
            ins[:, sl] = np.where(carry[:, None], inserted, -1)
    return haps, ins


def _maf_with_overrides(panel, maf_override):
    maf = np.array(panel.maf, dtype=float)
    if maf_override is not None:
        for idx, v in dict(maf_override).items():
            maf[idx] = v
    return maf


def simulate_population(panel: SnpPanel, deletions: Sequence[DeletionModel] = (),
                        duplications: Sequence[DuplicationModel] = (), n_samples: int = 100,
                        seed: int = 0, sample_prefix: str = "S", maf_override=None) -> Population:
    """Draw ``n_samples`` unrelated individuals under Hardy-Weinberg sampling of (A, B, D)."""
    _check_models(panel, deletions, duplications)
    maf = _maf_with_overrides(panel, maf_override)
    m = len(panel)
    haps = np.empty((n_samples, 2, m), dtype=np.int8)
    ins = np.empty((n_samples, 2, m), dtype=np.int8) if duplications else None
    for i in range(n_samples):
        h, x = _draw_haplotypes(rng_for(seed, "population", i), maf, deletions, duplications)
        haps[i] = h
        if ins is not None:
            ins[i] = x
    return _population(panel, haps, ins, [f"{sample_prefix}{i + 1}" for i in range(n_samples)])


def _population(panel, haps, ins, ids) -> Population:
    cn = (haps != DELETED).sum(axis=1, dtype=np.int8)
    b = (haps == 1).sum(axis=1, dtype=np.int8)
    if ins is not None:
        cn += (ins >= 0).sum(axis=1, dtype=np.int8)
        b += (ins == 1).sum(axis=1, dtype=np.int8)
    gm = GenotypeMatrix(observe_copies(cn, b), tuple(ids), panel)
    return Population(gm, haps, ins)


@dataclass(frozen=True, eq=False)
class TrioData:
    """Simulated families.

    ``transmitted[t, 0, c]`` is the index (0/1) of the paternal haplotype
    passed to the child on chromosome ``c``; ``[t, 1, c]`` the maternal one.
    """

    population: Population
    trios: tuple[Trio, ...]
    transmitted: np.ndarray

    @property
    def genotypes(self) -> GenotypeMatrix:
        return self.population.genotypes

    def deletion_transmitted(self, marker: int) -> np.ndarray:
        """(n_trios, 2) flags: did father / mother pass a deletion at ``marker``."""
        haps = self.population.haplotypes
        child = haps[2::3, :, marker]
        return child == DELETED


def simulate_trios(panel: SnpPanel, deletions: Sequence[DeletionModel] = (),
                   duplications: Sequence[DuplicationModel] = (), n_trios: int = 100,
                   seed: int = 0, hemizygous_father: bool = False, maf_override=None) -> TrioData:
    """Parents drawn from the population model, child by Mendelian transmission.

    One haplotype per parent is passed on per chromosome (no recombination
    within the panel).  With ``hemizygous_father`` the father carries exactly
    one deleted haplotype over every deletion region, whatever ``d`` is.
    Samples are ordered father, mother, child for each family.
    """
    _check_models(panel, deletions, duplications)
    maf = _maf_with_overrides(panel, maf_override)
    m = len(panel)
    slices = panel.chromosome_slices()
    haps = np.empty((3 * n_trios, 2, m), dtype=np.int8)
    ins = np.empty((3 * n_trios, 2, m), dtype=np.int8) if duplications else None
    transmitted = np.empty((n_trios, 2, len(slices)), dtype=np.int8)
    ids, trios = [], []
    for t in range(n_trios):
        rng = rng_for(seed, "trio", t)
        fh, fi = _draw_haplotypes(rng, maf, deletions, duplications, force_deletion=hemizygous_father)
        mh, mi = _draw_haplotypes(rng, maf, deletions, duplications)
        pick = rng.integers(0, 2, size=(2, len(slices)))
        ch = np.empty((2, m), dtype=np.int8)
        ci = np.full((2, m), -1, dtype=np.int8) if ins is not None else None
        for c, sl in enumerate(slices):
            ch[0, sl] = fh[pick[0, c], sl]
            ch[1, sl] = mh[pick[1, c], sl]
            if ci is not None:
                ci[0, sl] = fi[pick[0, c], sl]
                ci[1, sl] = mi[pick[1, c], sl]
        haps[3 * t], haps[3 * t + 1], haps[3 * t + 2] = fh, mh, ch
        if ins is not None:
            ins[3 * t], ins[3 * t + 1], ins[3 * t + 2] = fi, mi, ci
        transmitted[t] = pick
        fam = f"F{t + 1}"
        ids += [f"{fam}_father", f"{fam}_mother", f"{fam}_child"]
        trios.append(Trio(ids[-3], ids[-2], ids[-1], fam))
    return TrioData(_population(panel, haps, ins, ids), tuple(trios), transmitted)


@dataclass(frozen=True, eq=False)
class DenovoEvents:
    """De novo CNV events among the children of ``n_trios`` families.

    Event arrays are parallel: hotspot ordinal (index into ``hotspots``),
    child ordinal, and whether the event was detected.
    """

    n_trios: int
    hotspots: np.ndarray  # region index of each hotspot
    event_hotspot: np.ndarray
    event_trio: np.ndarray
    event_detected: np.ndarray
    causal_trio: np.ndarray
    causal_detected: np.ndarray
    causal_region: int | None = None

    @property
    def true_counts(self) -> np.ndarray:
        return np.bincount(self.event_hotspot, minlength=len(self.hotspots))

    @property
    def detected_counts(self) -> np.ndarray:
        return np.bincount(self.event_hotspot[self.event_detected], minlength=len(self.hotspots))

    @property
    def max_detected(self) -> int:
        c = self.detected_counts
        return int(c.max()) if c.size else 0

    @property
    def causal_count(self) -> int:
        return int(self.causal_detected.sum())


def inject_denovo(trios, model: HotspotModel, seed: int = 0, n_regions: int | None = None,
                  causal_fraction: float = 0.0) -> DenovoEvents:
    """Scatter de novo CNVs over ``model.k`` hotspots among the trios' children.

    ``trios`` is a sequence of :class:`Trio` or a family count.  Each of the
    ``2n`` meioses contributes Poisson(``mu``) noncausal events spread
    uniformly over the hotspots, and every event is detected with probability
    ``epsilon``, so detected counts per hotspot are Poisson(2 mu n eps / k).
    With ``causal_fraction`` p, each child independently carries a de novo
    event at one further (causal) region with probability p; detected causal
    counts are Binomial(n, eps p).  Hotspots and the causal region are drawn
    without replacement from ``n_regions`` candidate regions (default
    ``k + 1``).
    """
    n = trios if isinstance(trios, (int, np.integer)) else len(trios)
    k = model.k
    n_regions = k + 1 if n_regions is None else n_regions
    need = k + (1 if causal_fraction > 0 else 0)
    if need > n_regions:
        raise ValidationError(f"k={k} hotspots (plus causal locus) exceed {n_regions} available regions")
    if not 0.0 <= causal_fraction <= 1.0:
        raise ValidationError(f"causal fraction {causal_fraction} outside [0, 1]")
    rng = rng_for(seed, "denovo")
    regions = rng.choice(n_regions, size=need, replace=False)
    counts = rng.poisson(2.0 * model.mu * n / k, size=k)
    ev_hot = np.repeat(np.arange(k), counts)
    ev_trio = rng.integers(0, max(n, 1), size=ev_hot.size)
    ev_det = rng.random(ev_hot.size) < model.epsilon
    carriers = np.flatnonzero(rng.random(n) < causal_fraction) if causal_fraction > 0 else np.empty(0, dtype=np.int64)
    c_det = rng.random(carriers.size) < model.epsilon
    return DenovoEvents(n, regions[:k], ev_hot, ev_trio, ev_det, carriers, c_det,
                        int(regions[k]) if causal_fraction > 0 else None)


def simulate_intensity(copy_state, b_count, model: IntensityModel | None = None,
                       sample_ids: Sequence[str] | None = None, batches: Sequence | None = None,
                       seed: int = 0, cn_probes=None) -> list[IntensityTrack]:
    """LRR/BAF tracks for true copy states and B-allele copy counts.

    LRR = state mean + wave + batch shift + Gaussian noise.  BAF sits at
    ``b / copies`` plus noise, truncated to [0, 1]; homozygous deletions get
    uniform BAF and copy-number probes (``cn_probes`` mask) get NaN.
    """
    model = model or IntensityModel()
    copy_state = np.atleast_2d(np.asarray(copy_state))
    b_count = np.atleast_2d(np.asarray(b_count))
    n, m = copy_state.shape
    sample_ids = list(sample_ids) if sample_ids is not None else [f"S{i + 1}" for i in range(n)]
    mean = np.asarray(model.lrr_mean, dtype=float)
    sd = np.asarray(model.lrr_sd, dtype=float)
    idx = np.arange(m)
    cn_mask = np.zeros(m, dtype=bool) if cn_probes is None else np.asarray(cn_probes, dtype=bool)
    tracks = []
    for i in range(n):
        rng = rng_for(seed, "intensity", i)
        cs = np.clip(copy_state[i], 0, 4)
        lrr = mean[cs] + sd[cs] * rng.standard_normal(m)
        if model.wave_amplitude:
            phase = rng.uniform(0, 2 * np.pi)
            lrr += model.wave_amplitude * np.sin(2 * np.pi * idx / model.wave_period + phase)
        if batches is not None:
            lrr += model.batch_shift.get(batches[i], 0.0)
        with np.errstate(invalid="ignore", divide="ignore"):
            center = np.where(cs > 0, b_count[i] / np.maximum(cs, 1), 0.5)
        baf = np.clip(center + model.baf_sd * rng.standard_normal(m), 0.0, 1.0)
        baf = np.where(cs == 0, rng.random(m), baf)
        baf[cn_mask] = np.nan
        tracks.append(IntensityTrack(sample_ids[i], lrr, baf))
    return tracks


@dataclass(frozen=True, eq=False)
class CnvCorpus:
    """Copy-state ground truth for intensity-level detector benchmarks."""

    panel: SnpPanel
    sample_ids: tuple[str, ...]
    copy_state: np.ndarray
    b_count: np.ndarray

    def truth(self) -> list[CnvCall]:
        return truth_calls(self.copy_state, self.sample_ids, self.panel)


def simulate_cnv_corpus(panel: SnpPanel, n_samples: int, n_cnvs: int, min_markers: int = 10,
                        max_markers: int = 50, state_probs=(0.05, 0.45, 0.0, 0.4, 0.1),
                        seed: int = 0) -> CnvCorpus:
    """Diploid background in HWE with ``n_cnvs`` CNVs placed on random samples.

    CNVs never overlap within a sample and never cross a chromosome boundary.
    Allele copies inside a CNV are Binomial(copies, maf).
    """
    m = len(panel)
    maf = np.asarray(panel.maf)
    rng = rng_for(seed, "corpus")
    cs = np.full((n_samples, m), BASELINE_STATE, dtype=np.int8)
    placed = 0
    chrom = np.asarray(panel.chrom_codes)
    probs = np.asarray(state_probs, dtype=float)
    probs = probs / probs.sum()
    attempts = 0
    while placed < n_cnvs:
        attempts += 1
        if attempts > 100 * n_cnvs + 1000:
            raise ValidationError("could not place the requested CNVs; panel too small")
        length = int(rng.integers(min_markers, max_markers + 1))
        i = int(rng.integers(n_samples))
        s = int(rng.integers(0, m - length + 1))
        e = s + length - 1
        if chrom[s] != chrom[e]:
            continue
        lo, hi = max(s - 1, 0), min(e + 2, m)
        if np.any(cs[i, lo:hi] != BASELINE_STATE):
            continue
        cs[i, s:e + 1] = rng.choice(5, p=probs)
        placed += 1
    b = np.empty_like(cs)
    for i in range(n_samples):
        b[i] = rng_for(seed, "corpus-alleles", i).binomial(cs[i].astype(np.int64), maf)
    ids = tuple(f"S{i + 1}" for i in range(n_samples))
    return CnvCorpus(panel, ids, cs, b)
