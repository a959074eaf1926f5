"""Deletion evidence from called genotypes.

Two signals are scanned: Mendelian inconsistencies in trios, and an excess
of homozygotes relative to Hardy-Weinberg proportions.  The closed-form
genotype-frequency algebra for SNPs under a deletion or an insertion lives
here as well.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np
from scipy import stats
from scipy.special import gammaln

from .core import CnvCall, Genotype, GenotypeMatrix, Trio, ValidationError, segments

# _CONSISTENT[f, m, c] for B-allele counts 0/1/2
_CONSISTENT = np.zeros((3, 3, 3), dtype=bool)
for _f in range(3):
    for _m in range(3):
        for _a in {0: (0,), 1: (0, 1), 2: (1,)}[_f]:
            for _b in {0: (0,), 1: (0, 1), 2: (1,)}[_m]:
                _CONSISTENT[_f, _m, _a + _b] = True


class GenotypeFreqs(NamedTuple):
    aa: float
    ab: float
    bb: float


def detect_nmi(father: Genotype, mother: Genotype, child: Genotype) -> bool | None:
    """True if the observed trio genotypes break Mendel's rules.

    Returns None when any genotype is missing (not evaluable).
    """
    if Genotype.MISSING in (father, mother, child):
        return None
    return not _CONSISTENT[int(father), int(mother), int(child)]


def nmi_probability(maf: float) -> float:
    """Chance that one hemizygous parent produces an NMI at a SNP: half the heterozygosity."""
    if not 0.0 <= maf <= 0.5:
        raise ValidationError(f"maf={maf} outside [0, 0.5]")
    return maf * (1.0 - maf)


@dataclass(frozen=True, eq=False)
class NmiFlagTrack:
    """NMI flags per (trio, marker); ``evaluable`` is False where a genotype is missing."""

    trios: tuple[Trio, ...]
    flags: np.ndarray
    evaluable: np.ndarray


def nmi_flags(genotypes: GenotypeMatrix, trios: Sequence[Trio]) -> NmiFlagTrack:
    trios = tuple(trios)
    for t in trios:
        t.check(genotypes)
    rows = np.array([[genotypes.row(t.father), genotypes.row(t.mother), genotypes.row(t.child)]
                     for t in trios], dtype=np.intp).reshape(-1, 3)
    g = genotypes.calls
    f, m, c = g[rows[:, 0]], g[rows[:, 1]], g[rows[:, 2]]
    ok = (f >= 0) & (m >= 0) & (c >= 0)
    flags = ~_CONSISTENT[np.where(ok, f, 0), np.where(ok, m, 0), np.where(ok, c, 0)] & ok
    return NmiFlagTrack(trios, flags, ok)


def scan_nmi_runs(track: NmiFlagTrack, panel, min_run: int = 3, max_gap: int = 1) -> list[CnvCall]:
    """Runs of flagged markers per trio, reported as hemizygous calls on the child.

    A run holds at least ``min_run`` flagged markers with no more than
    ``max_gap`` consecutive unflagged evaluable markers between flags.
    Markers that cannot be evaluated neither extend nor break a run.  Runs
    never cross chromosomes.  Confidence is the flagged share of evaluable
    markers inside the run; it is a density, not a posterior.
    """
    if min_run < 2:
        raise ValidationError("min_run must be at least 2")
    calls = []
    chrom = np.asarray(panel.chrom_codes)
    for t, trio in enumerate(track.trios):
        hits = np.flatnonzero(track.flags[t])
        if hits.size < min_run:
            continue
        ev = track.evaluable[t].astype(np.int64)
        cum_ev = np.concatenate([[0], np.cumsum(ev)])
        run = [hits[0]]
        for h in hits[1:]:
            prev = run[-1]
            gap = cum_ev[h] - cum_ev[prev + 1]  # evaluable, unflagged markers between
            if gap <= max_gap and chrom[h] == chrom[prev]:
                run.append(h)
                continue
            _emit(run, min_run, cum_ev, trio, calls)
            run = [h]
        _emit(run, min_run, cum_ev, trio, calls)
    return calls


def _emit(run, min_run, cum_ev, trio, calls):
    if len(run) < min_run:
        return
    s, e = int(run[0]), int(run[-1])
    n_ev = cum_ev[e + 1] - cum_ev[s]
    calls.append(CnvCall(trio.child, s, e, 1, min(1.0, len(run) / max(n_ev, 1)), "nmi"))


def _check_simplex(p, q, d, tol=1e-9):
    for name, v in (("p", p), ("q", q), ("d", d)):
        if not 0.0 <= v <= 1.0:
            raise ValidationError(f"{name}={v} outside [0, 1]")
    if abs(p + q + d - 1.0) > tol:
        raise ValidationError(f"p + q + d = {p + q + d} must equal 1")
    if d >= 1.0:
        raise ValidationError("deletion frequency must be below 1")


def deletion_genotype_freq(p: float, q: float, d: float) -> GenotypeFreqs:
    """Observed genotype frequencies at a SNP inside a deletion of frequency ``d``.

    Hemizygotes are called homozygous and DD individuals fail, so
    P(AA) = (p^2 + 2dp) / (1 - d^2), P(AB) = 2pq / (1 - d^2),
    P(BB) = (q^2 + 2dq) / (1 - d^2).
    """
    _check_simplex(p, q, d)
    z = 1.0 - d * d
    return GenotypeFreqs((p * p + 2 * d * p) / z, 2 * p * q / z, (q * q + 2 * d * q) / z)


def insertion_genotype_freq(p: float, d_a: float, d_b: float, Q) -> GenotypeFreqs:
    """Observed genotype frequencies at a SNP whose region is duplicated elsewhere.

    ``Q[T][I]`` is the chance the inserted copy carries allele I given allele
    T at the original site; ``d_a``/``d_b`` are per-chromosome insertion
    probabilities on A/B backgrounds.
    """
    Q = np.asarray(Q, dtype=float)
    if Q.shape != (2, 2) or np.any(Q < 0) or np.any(Q > 1) or not np.allclose(Q.sum(axis=1), 1.0):
        raise ValidationError("Q must be 2x2 with rows summing to 1")
    for name, v in (("p", p), ("d_a", d_a), ("d_b", d_b)):
        if not 0.0 <= v <= 1.0:
            raise ValidationError(f"{name}={v} outside [0, 1]")
    q = 1.0 - p
    aa = p * p * (1.0 - d_a * Q[0, 1]) ** 2
    bb = q * q * (1.0 - d_b * Q[1, 0]) ** 2
    return GenotypeFreqs(aa, 1.0 - aa - bb, bb)


def expected_hwe_departure(n: int, p: float, q: float, d: float) -> float:
    """E[C_AB^2 - 4 C_AA C_BB] for n individuals sampled from the deletion model.

    Exact multinomial moments:
    2npq/(1-d^2) - 8n(n-1) d p q / ((1-d)(1-d^2)).  At d = 0 this is the
    pure variance term 2npq.
    """
    _check_simplex(p, q, d)
    if n < 1:
        raise ValidationError("n must be at least 1")
    z = 1.0 - d * d
    return 2 * n * p * q / z + 8 * n * d * p * q * (1 - n) / ((1 - d) * z)


def estimate_deletion_freq(c_aa: float, c_ab: float, c_bb: float) -> float:
    """Deletion frequency from the heterozygote deficit; NaN if inapplicable.

    With r = f_AB / (2 p_est q_est) the deletion model gives
    r = (1 - d)/(1 + d), so d = (1 - r)/(1 + r), clamped to [0, 1).
    """
    if min(c_aa, c_ab, c_bb) < 0:
        raise ValidationError("counts must be non-negative")
    n = c_aa + c_ab + c_bb
    if n <= 0:
        return float("nan")
    p_est = (c_aa + 0.5 * c_ab) / n
    q_est = 1.0 - p_est
    if p_est <= 0 or q_est <= 0:
        return float("nan")
    r = (c_ab / n) / (2 * p_est * q_est)
    return float(min(max((1 - r) / (1 + r), 0.0), np.nextafter(1.0, 0.0)))


def het_distribution(n: int, n_b: int) -> np.ndarray:
    """Exact null distribution of the heterozygote count given allele counts.

    ``n`` genotyped individuals carrying ``n_b`` copies of allele B.  Index
    h of the result is P(C_AB = h); entries with the wrong parity are 0.
    """
    n_b = min(n_b, 2 * n - n_b)
    out = np.zeros(n_b + 1)
    hets = np.arange(n_b % 2, n_b + 1, 2)
    hom_b = (n_b - hets) // 2
    hom_a = n - hets - hom_b
    ok = hom_a >= 0
    hets, hom_b, hom_a = hets[ok], hom_b[ok], hom_a[ok]
    logp = (gammaln(n + 1) - gammaln(hom_a + 1) - gammaln(hets + 1) - gammaln(hom_b + 1)
            + hets * np.log(2.0) - gammaln(2 * n + 1) + gammaln(n_b + 1) + gammaln(2 * n - n_b + 1))
    out[hets] = np.exp(logp - logp.max())
    return out / out.sum()


def homozygote_excess_pvalue(c_aa: int, c_ab: int, c_bb: int, exact_below: int = 200) -> float:
    """One-sided p-value for too few heterozygotes.

    Exact mid-p from the conditional heterozygote distribution when fewer
    than ``exact_below`` samples are genotyped, otherwise the score test
    z = sqrt(n) * F with F = 1 - observed/expected heterozygosity.
    """
    n = c_aa + c_ab + c_bb
    n_b = c_ab + 2 * c_bb
    if n == 0 or n_b == 0 or n_b == 2 * n:
        return float("nan")
    if n < exact_below:
        dist = het_distribution(n, n_b)
        return float(dist[:c_ab].sum() + 0.5 * dist[c_ab])
    p_est = (2 * c_aa + c_ab) / (2 * n)
    f = 1.0 - (c_ab / n) / (2 * p_est * (1 - p_est))
    return float(stats.norm.sf(np.sqrt(n) * f))


@dataclass(frozen=True, eq=False)
class HweSiteStats:
    counts: np.ndarray  # (m, 3) C_AA, C_AB, C_BB
    p_est: np.ndarray
    excess: np.ndarray  # inbreeding-style F = 1 - obs/exp heterozygosity
    pvalue: np.ndarray  # one-sided homozygote excess
    d_hat: np.ndarray
    missing_rate: np.ndarray
    evaluable: np.ndarray


def hwe_site_stats(genotypes: GenotypeMatrix, min_samples: int = 30, exact_below: int = 200) -> HweSiteStats:
    counts = genotypes.counts()
    n = counts.sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        p_est = (counts[:, 0] + 0.5 * counts[:, 1]) / n
        exp_het = 2 * p_est * (1 - p_est)
        excess = 1.0 - (counts[:, 1] / n) / exp_het
        r = (counts[:, 1] / n) / exp_het
        dhat = np.clip((1 - r) / (1 + r), 0.0, np.nextafter(1.0, 0.0))
        z = np.sqrt(n) * excess
    poly = (p_est > 0) & (p_est < 1)
    dhat = np.where(poly, dhat, np.nan)
    pval = np.where(poly & (n >= min_samples), stats.norm.sf(z), np.nan)
    for j in np.flatnonzero(poly & (n >= min_samples) & (n < exact_below)):
        pval[j] = homozygote_excess_pvalue(*(int(x) for x in counts[j]), exact_below=exact_below)
    evaluable = (n >= min_samples) & ~np.isnan(pval)
    return HweSiteStats(counts, p_est, excess, pval, dhat, genotypes.missing_rate(), evaluable)


@dataclass(frozen=True)
class HweRegion:
    start: int
    end: int
    d_hat: float  # median over significant markers; heuristic under LD
    n_significant: int

    def as_call(self, sample_id: str = "*") -> CnvCall:
        frac = self.n_significant / (self.end - self.start + 1)
        return CnvCall(sample_id, self.start, self.end, 1, float(frac), "hwe")


def scan_hwe(genotypes: GenotypeMatrix, window: int = 5, w_min: int = 3, alpha: float = 0.01,
             min_samples: int = 30, site_stats: HweSiteStats | None = None) -> list[HweRegion]:
    """Population-level deletion candidates from runs of homozygote excess.

    Every window of ``window`` consecutive markers (within a chromosome) with
    at least ``w_min`` significant markers is flagged; overlapping flagged
    windows merge, and the region spans the first to last significant marker.
    """
    st = site_stats or hwe_site_stats(genotypes, min_samples)
    sig = st.evaluable & (st.pvalue < alpha)
    regions = []
    for sl in genotypes.panel.chromosome_slices():
        s = sig[sl].astype(np.int64)
        if s.size < window:
            continue
        wins = np.convolve(s, np.ones(window, dtype=np.int64), mode="valid") >= w_min
        covered = np.zeros(s.size, dtype=bool)
        for w in np.flatnonzero(wins):
            covered[w:w + window] = True
        for a, b in segments(covered):
            idx = np.flatnonzero(s[a:b + 1]) + a
            lo, hi = int(idx[0]) + sl.start, int(idx[-1]) + sl.start
            d = st.d_hat[lo:hi + 1][sig[lo:hi + 1]]
            regions.append(HweRegion(lo, hi, float(np.median(d)), int(idx.size)))
    return regions


def window_false_positive_rate(window: int, w_min: int, alpha: float) -> float:
    """Chance a window of independent null markers reaches ``w_min`` significant."""
    return float(stats.binom.sf(w_min - 1, window, alpha))
