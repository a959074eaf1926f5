"""Shared domain types: marker panels, genotypes, intensity tracks and CNV calls.

Genotypes are stored as small integers so that matrices stay compact numpy
arrays.  Observed genotype codes count B alleles (AA=0, AB=1, BB=2) and use
-1 for a missing call.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Iterable, Mapping, Sequence

import numpy as np

N_STATES = 5
BASELINE_STATE = 2


class ValidationError(ValueError):
    """Raised when inputs violate a documented precondition."""


class Genotype(IntEnum):
    AA = 0
    AB = 1
    BB = 2
    MISSING = -1

    @classmethod
    def parse(cls, text: str) -> "Genotype":
        try:
            return _GENOTYPE_TEXT[text]
        except KeyError:
            raise ValidationError(f"unknown genotype {text!r}") from None

    def __str__(self) -> str:
        return "NA" if self is Genotype.MISSING else self.name


_GENOTYPE_TEXT = {"AA": Genotype.AA, "AB": Genotype.AB, "BB": Genotype.BB,
                  "NA": Genotype.MISSING, "./.": Genotype.MISSING}


class TrueGenotype(IntEnum):
    """Underlying genotype when a deletion allele D segregates at a SNP."""

    AA = 0
    AB = 1
    BB = 2
    AD = 3
    BD = 4
    DD = 5


_OBSERVED = {
    TrueGenotype.AA: Genotype.AA,
    TrueGenotype.AB: Genotype.AB,
    TrueGenotype.BB: Genotype.BB,
    TrueGenotype.AD: Genotype.AA,
    TrueGenotype.BD: Genotype.BB,
    TrueGenotype.DD: Genotype.MISSING,
}


def observe_genotype(t: TrueGenotype | Genotype) -> Genotype:
    """Genotype an assay reports for a true genotype.

    Hemizygotes are read as homozygotes for the remaining allele and a
    homozygous deletion fails to genotype.  Already-observed genotypes map
    to themselves.
    """
    if isinstance(t, Genotype):
        return t
    return _OBSERVED[TrueGenotype(t)]


def observe_copies(copies, b_count):
    """Vectorised observation from total copy number and B-allele copies.

    Works for deletions and duplications alike: a call is homozygous when
    only one allele type is present among all copies.
    """
    copies = np.asarray(copies)
    b_count = np.asarray(b_count)
    out = np.full(np.broadcast_shapes(copies.shape, b_count.shape), Genotype.AB, dtype=np.int8)
    out[b_count == copies] = Genotype.BB
    out[b_count == 0] = Genotype.AA
    out[copies == 0] = Genotype.MISSING
    return out


@dataclass(frozen=True)
class Locus:
    marker_id: str
    chrom: str
    position: int
    allele_a: str = "A"
    allele_b: str = "B"
    maf: float = 0.5  # frequency of allele_b


def chrom_key(chrom: str):
    """Natural sort key: 1 < 2 < ... < 22 < X < Y < other names."""
    c = re.sub(r"^chr", "", str(chrom), flags=re.IGNORECASE)
    if c.isdigit():
        return (0, int(c), "")
    return (1, {"X": 0, "Y": 1, "M": 2, "MT": 2}.get(c.upper(), 3), c)


@dataclass(frozen=True, eq=False)
class SnpPanel:
    """Ordered marker map.  Build one with :func:`canonicalize_panel`."""

    loci: tuple[Locus, ...]
    _index: Mapping[str, int] = field(init=False, repr=False)

    def __post_init__(self):
        index = {}
        for i, locus in enumerate(self.loci):
            if locus.marker_id in index:
                raise ValidationError(f"duplicate marker id {locus.marker_id!r}")
            index[locus.marker_id] = i
        object.__setattr__(self, "_index", index)
        object.__setattr__(self, "positions", _frozen(np.array([l.position for l in self.loci], dtype=np.int64)))
        object.__setattr__(self, "maf", _frozen(np.array([l.maf for l in self.loci], dtype=float)))
        chroms = [l.chrom for l in self.loci]
        object.__setattr__(self, "chroms", tuple(chroms))
        codes = np.zeros(len(chroms), dtype=np.int32)
        for i in range(1, len(chroms)):
            codes[i] = codes[i - 1] + (chroms[i] != chroms[i - 1])
        object.__setattr__(self, "chrom_codes", _frozen(codes))

    def __len__(self) -> int:
        return len(self.loci)

    def __getitem__(self, i: int) -> Locus:
        return self.loci[i]

    def ordinal(self, marker_id: str) -> int:
        return self._index[marker_id]

    def marker_id(self, ordinal: int) -> str:
        return self.loci[ordinal].marker_id

    @property
    def ids(self) -> list[str]:
        return [l.marker_id for l in self.loci]

    def chromosome_slices(self) -> list[slice]:
        """Contiguous marker ranges, one per chromosome."""
        bounds = np.flatnonzero(np.diff(self.chrom_codes)) + 1
        edges = [0, *bounds.tolist(), len(self)]
        return [slice(a, b) for a, b in zip(edges[:-1], edges[1:]) if b > a]


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


def canonicalize_panel(raw: Iterable[Locus | Mapping]) -> SnpPanel:
    """Sort loci by (chromosome, position) and fold allele frequencies.

    ``raw`` items are :class:`Locus` objects or mappings with keys
    ``id``, ``chrom``, ``pos`` and optionally ``alleles`` (pair) and
    ``freq`` (frequency of the second allele).  An allele frequency above
    0.5 swaps the allele labels so that ``allele_b`` is always the minor
    allele.  Any repeated (chromosome, position) is rejected.
    """
    loci = []
    for n, item in enumerate(raw):
        if isinstance(item, Locus):
            loci.append(item)
            continue
        try:
            alleles = tuple(item.get("alleles", ("A", "B")))
            loci.append(Locus(str(item.get("id", f"m{n}")), str(item["chrom"]),
                              int(item["pos"]), alleles[0], alleles[1],
                              float(item.get("freq", 0.5))))
        except (KeyError, ValueError, TypeError, IndexError) as exc:
            raise ValidationError(f"locus #{n}: cannot parse {item!r}: {exc}") from None
    if not loci:
        raise ValidationError("panel is empty")

    folded = []
    for l in loci:
        if l.position < 0:
            raise ValidationError(f"{l.marker_id}: negative position {l.position}")
        if not 0.0 <= l.maf <= 1.0:
            raise ValidationError(f"{l.marker_id}: allele frequency {l.maf} outside [0, 1]")
        if l.maf > 0.5:
            l = Locus(l.marker_id, l.chrom, l.position, l.allele_b, l.allele_a, 1.0 - l.maf)
        folded.append(l)

    folded.sort(key=lambda l: (chrom_key(l.chrom), l.position))
    dups = [f"{b.chrom}:{b.position} ({a.marker_id}, {b.marker_id})"
            for a, b in zip(folded, folded[1:])
            if a.chrom == b.chrom and a.position == b.position]
    if dups:
        raise ValidationError("duplicate loci: " + "; ".join(dups))
    return SnpPanel(tuple(folded))


def make_panel(n_markers: int, n_chrom: int = 1, spacing: int = 3000, maf=0.3,
               seed: int | None = None) -> SnpPanel:
    """Regularly spaced synthetic panel.

    ``maf`` is either a scalar or a ``(low, high)`` range sampled uniformly
    with ``seed``.
    """
    if np.ndim(maf) == 0:
        mafs = np.full(n_markers, float(maf))
    else:
        lo, hi = maf
        mafs = rng_for(seed if seed is not None else 0, "panel").uniform(lo, hi, n_markers)
    per = -(-n_markers // n_chrom)
    loci = []
    for i in range(n_markers):
        c, j = divmod(i, per)
        loci.append(Locus(f"rs{i + 1}", str(c + 1), (j + 1) * spacing, "A", "B", float(mafs[i])))
    return SnpPanel(tuple(loci))


@dataclass(frozen=True, eq=False)
class GenotypeMatrix:
    """Observed genotype codes, samples x markers."""

    calls: np.ndarray
    sample_ids: tuple[str, ...]
    panel: SnpPanel

    def __post_init__(self):
        calls = np.array(self.calls, dtype=np.int8, copy=True)
        if calls.shape != (len(self.sample_ids), len(self.panel)):
            raise ValidationError(
                f"genotype matrix shape {calls.shape} does not match "
                f"{len(self.sample_ids)} samples x {len(self.panel)} markers")
        if len(set(self.sample_ids)) != len(self.sample_ids):
            raise ValidationError("duplicate sample ids")
        if calls.size and (calls.min() < -1 or calls.max() > 2):
            raise ValidationError("genotype codes must be in {-1, 0, 1, 2}")
        object.__setattr__(self, "calls", _frozen(calls))
        object.__setattr__(self, "sample_ids", tuple(self.sample_ids))
        object.__setattr__(self, "_rows", {s: i for i, s in enumerate(self.sample_ids)})

    @property
    def shape(self):
        return self.calls.shape

    def row(self, sample_id: str) -> int:
        return self._rows[sample_id]

    def __contains__(self, sample_id: str) -> bool:
        return sample_id in self._rows

    def genotype(self, sample_id: str, marker: int) -> Genotype:
        return Genotype(int(self.calls[self._rows[sample_id], marker]))

    def counts(self) -> np.ndarray:
        """Per-marker (C_AA, C_AB, C_BB) counts, missing excluded."""
        return np.stack([(self.calls == g).sum(axis=0) for g in (0, 1, 2)], axis=1)

    def missing_rate(self) -> np.ndarray:
        return (self.calls == Genotype.MISSING).mean(axis=0)


@dataclass(frozen=True)
class Trio:
    father: str
    mother: str
    child: str
    family: str = ""

    def __post_init__(self):
        if len({self.father, self.mother, self.child}) != 3:
            raise ValidationError(f"trio members must be distinct: {self}")

    def check(self, genotypes: GenotypeMatrix) -> None:
        missing = [s for s in (self.father, self.mother, self.child) if s not in genotypes]
        if missing:
            raise ValidationError(f"trio {self.family or self.child}: samples {missing} not in genotype matrix")


@dataclass(frozen=True, eq=False)
class IntensityTrack:
    """Per-marker LRR and BAF for one sample; BAF is NaN at copy-number probes."""

    sample_id: str
    lrr: np.ndarray
    baf: np.ndarray

    def __post_init__(self):
        lrr = np.asarray(self.lrr, dtype=float)
        baf = np.asarray(self.baf, dtype=float)
        if lrr.shape != baf.shape or lrr.ndim != 1:
            raise ValidationError(f"{self.sample_id}: LRR and BAF must be 1-d arrays of equal length")
        ok = ~np.isnan(baf)
        if np.any((baf[ok] < 0) | (baf[ok] > 1)):
            raise ValidationError(f"{self.sample_id}: BAF outside [0, 1]")
        object.__setattr__(self, "lrr", _frozen(lrr.copy()))
        object.__setattr__(self, "baf", _frozen(baf.copy()))

    def __len__(self) -> int:
        return len(self.lrr)


@dataclass(frozen=True, order=True)
class CnvCall:
    sample_id: str
    start: int  # first marker ordinal, inclusive
    end: int  # last marker ordinal, inclusive
    copy_state: int
    confidence: float
    source: str

    def __post_init__(self):
        if self.start > self.end:
            raise ValidationError(f"call start {self.start} after end {self.end}")
        if self.copy_state not in (0, 1, 3, 4):
            raise ValidationError(f"invalid call copy state {self.copy_state}")
        if not 0.0 <= self.confidence <= 1.0:
            raise ValidationError(f"confidence {self.confidence} outside [0, 1]")

    @property
    def n_markers(self) -> int:
        return self.end - self.start + 1

    def overlaps(self, other: "CnvCall") -> bool:
        return self.start <= other.end and other.start <= self.end

    @property
    def is_loss(self) -> bool:
        return self.copy_state < BASELINE_STATE


def rng_for(seed: int, *key) -> np.random.Generator:
    """Independent generator for ``seed`` and a stream key.

    The key may mix strings and integers (e.g. ``("intensity", ordinal)``);
    streams for different keys are statistically independent, so per-sample
    work can be scheduled in any order.
    """
    words = []
    for k in key:
        if isinstance(k, str):
            words.append(int.from_bytes(k.encode()[:8].ljust(8, b"\0"), "little"))
        else:
            words.append(int(k))
    return np.random.default_rng(np.random.SeedSequence(int(seed) & (2**64 - 1), spawn_key=tuple(words)))


def segments(mask: np.ndarray) -> list[tuple[int, int]]:
    """Inclusive (start, end) index pairs of True runs in a 1-d boolean array."""
    m = np.concatenate([[False], np.asarray(mask, dtype=bool), [False]])
    d = np.diff(m.astype(np.int8))
    starts = np.flatnonzero(d == 1)
    ends = np.flatnonzero(d == -1) - 1
    return list(zip(starts.tolist(), ends.tolist()))


def state_segments(path: np.ndarray, baseline: int = BASELINE_STATE,
                   breaks: Sequence[int] = ()) -> list[tuple[int, int, int]]:
    """Maximal runs of constant non-baseline state as (start, end, state).

    ``breaks`` lists indices where a new run must start (chromosome starts).
    """
    path = np.asarray(path)
    if path.size == 0:
        return []
    change = np.ones(path.size, dtype=bool)
    change[1:] = path[1:] != path[:-1]
    for b in breaks:
        if 0 <= b < path.size:
            change[b] = True
    starts = np.flatnonzero(change)
    ends = np.append(starts[1:] - 1, path.size - 1)
    return [(int(s), int(e), int(path[s])) for s, e in zip(starts, ends) if path[s] != baseline]
