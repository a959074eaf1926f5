import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cnvgwas.core import Genotype, GenotypeMatrix, Trio, ValidationError, make_panel
from cnvgwas.genotype_scan import (
    NmiFlagTrack,
    deletion_genotype_freq,
    detect_nmi,
    estimate_deletion_freq,
    expected_hwe_departure,
    het_distribution,
    homozygote_excess_pvalue,
    hwe_site_stats,
    insertion_genotype_freq,
    nmi_flags,
    nmi_probability,
    scan_hwe,
    scan_nmi_runs,
    window_false_positive_rate,
)
from cnvgwas.simulator import DeletionModel, simulate_population, simulate_trios

GAMETES = {0: (0,), 1: (0, 1), 2: (1,)}


def test_detect_nmi_matches_transmission_enumeration():
    for f, m, c in itertools.product(range(3), repeat=3):
        possible = {a + b for a in GAMETES[f] for b in GAMETES[m]}
        assert detect_nmi(Genotype(f), Genotype(m), Genotype(c)) == (c not in possible)


def test_detect_nmi_missing_is_not_evaluable():
    assert detect_nmi(Genotype.MISSING, Genotype.AA, Genotype.BB) is None


@pytest.mark.parametrize("maf", [0.05, 0.1, 0.25, 0.5])
def test_nmi_probability_by_enumeration(maf):
    # hemizygous father (one D haplotype), normal mother, all in HWE
    freq = {0: 1 - maf, 1: maf}
    total = 0.0
    for x, y1, y2 in itertools.product((0, 1), repeat=3):
        w = freq[x] * freq[y1] * freq[y2]
        father_obs = 2 * x
        mother_obs = y1 + y2
        for from_father, from_mother in itertools.product(("D", x), (y1, y2)):
            child_obs = 2 * from_mother if from_father == "D" else from_father + from_mother
            if detect_nmi(Genotype(father_obs), Genotype(mother_obs), Genotype(child_obs)):
                total += w * 0.25
    assert total == pytest.approx(nmi_probability(maf), abs=1e-12)


def test_nmi_probability_peak():
    assert nmi_probability(0.5) == 0.25
    with pytest.raises(ValidationError):
        nmi_probability(0.7)


def _track(flags, evaluable=None):
    flags = np.atleast_2d(np.array(flags, dtype=bool))
    ev = np.ones_like(flags) if evaluable is None else np.atleast_2d(np.array(evaluable, dtype=bool))
    return NmiFlagTrack((Trio("f", "m", "c", "F1"),), flags, ev)


def test_nmi_runs_gap_tolerance():
    panel = make_panel(12)
    flags = [0, 1, 1, 0, 1, 0, 0, 1, 1, 1, 0, 0]
    calls = scan_nmi_runs(_track(flags), panel, min_run=3, max_gap=1)
    assert [(c.start, c.end) for c in calls] == [(1, 4), (7, 9)]
    assert calls[0].sample_id == "c" and calls[0].copy_state == 1
    assert calls[0].confidence == pytest.approx(3 / 4)
    merged = scan_nmi_runs(_track(flags), panel, min_run=3, max_gap=2)
    assert [(c.start, c.end) for c in merged] == [(1, 9)]


def test_nmi_runs_skip_unevaluable_markers():
    panel = make_panel(6)
    flags = [1, 0, 0, 1, 1, 0]
    ev = [1, 0, 0, 1, 1, 1]
    calls = scan_nmi_runs(_track(flags, ev), panel, min_run=3, max_gap=0)
    assert [(c.start, c.end, c.confidence) for c in calls] == [(0, 4, 1.0)]


def test_nmi_runs_do_not_cross_chromosomes():
    panel = make_panel(8, n_chrom=2)
    flags = [0, 0, 1, 1, 1, 1, 0, 0]
    calls = scan_nmi_runs(_track(flags), panel, min_run=2, max_gap=1)
    assert [(c.start, c.end) for c in calls] == [(2, 3), (4, 5)]


def test_nmi_scan_finds_transmitted_deletion():
    panel = make_panel(400, maf=0.5)
    td = simulate_trios(panel, [DeletionModel(100, 159, 0.01)], n_trios=40, seed=11, hemizygous_father=True)
    track = nmi_flags(td.genotypes, td.trios)
    calls = scan_nmi_runs(track, panel)
    passed = td.deletion_transmitted(100)[:, 0]
    hit = {c.sample_id for c in calls if c.start >= 100 and c.end <= 159}
    children = [t.child for t in td.trios]
    assert all(children[i] in hit for i in np.flatnonzero(passed))
    assert not any(c.start < 100 or c.end > 159 for c in calls)


def test_deletion_freq_sum_and_limits():
    f = deletion_genotype_freq(0.5, 0.3, 0.2)
    assert sum(f) == pytest.approx(1.0)
    assert deletion_genotype_freq(0.6, 0.4, 0.0) == pytest.approx((0.36, 0.48, 0.16))
    with pytest.raises(ValidationError, match="p \\+ q \\+ d"):
        deletion_genotype_freq(0.5, 0.5, 0.2)


@given(st.floats(0.01, 0.99), st.floats(0.0, 0.9))
def test_estimate_inverts_deletion_freq(a, d):
    p, q = a * (1 - d), (1 - a) * (1 - d)
    f = deletion_genotype_freq(p, q, d)
    assert estimate_deletion_freq(*f) == pytest.approx(d, abs=1e-9)


def test_estimate_deletion_freq_undefined_and_clamped():
    assert np.isnan(estimate_deletion_freq(10, 0, 0))
    assert np.isnan(estimate_deletion_freq(0, 0, 0))
    assert estimate_deletion_freq(25, 60, 15) == 0.0  # heterozygote surplus clamps to zero


def test_insertion_reduces_to_hwe_without_insertions():
    assert insertion_genotype_freq(0.3, 0.0, 0.0, np.eye(2)) == pytest.approx((0.09, 0.42, 0.49))
    # a copy of the same allele changes nothing observable
    assert insertion_genotype_freq(0.3, 0.4, 0.7, np.eye(2)) == pytest.approx((0.09, 0.42, 0.49))


@given(st.floats(0.01, 0.99), st.floats(0, 1), st.floats(0, 1), st.floats(0, 1))
def test_insertion_neutral_for_aa(p, d_b, q_ab, q_ba):
    Q = np.array([[1.0, 0.0], [q_ba, 1 - q_ba]])
    assert insertion_genotype_freq(p, 0.6, d_b, Q).aa == pytest.approx(p * p, abs=1e-15)
    Q2 = np.array([[1 - q_ab, q_ab], [q_ba, 1 - q_ba]])
    assert insertion_genotype_freq(p, 0.0, d_b, Q2).aa == pytest.approx(p * p, abs=1e-15)


def test_insertion_validates_q():
    with pytest.raises(ValidationError):
        insertion_genotype_freq(0.3, 0.1, 0.1, [[0.5, 0.4], [0, 1]])


def test_expected_departure_limits():
    # pure sampling-variance term when nothing is deleted
    assert expected_hwe_departure(100, 0.6, 0.4, 0.0) == pytest.approx(2 * 100 * 0.24)
    assert expected_hwe_departure(1, 0.5, 0.3, 0.2) == pytest.approx(2 * 0.15 / 0.96)


def test_expected_departure_small_monte_carlo():
    n, p, q, d = 30, 0.5, 0.3, 0.2
    f = np.array(deletion_genotype_freq(p, q, d))
    rng = np.random.default_rng(0)
    c = rng.multinomial(n, f, size=200_000)
    stat = c[:, 1] ** 2 - 4.0 * c[:, 0] * c[:, 2]
    se = stat.std() / np.sqrt(stat.size)
    assert abs(stat.mean() - expected_hwe_departure(n, p, q, d)) < 4 * se


@pytest.mark.parametrize("n,n_b", [(3, 2), (4, 3), (5, 5), (5, 4), (6, 1)])
def test_het_distribution_by_exhaustive_pairing(n, n_b):
    counts = np.zeros(n_b + 1)
    for pos in itertools.combinations(range(2 * n), n_b):
        alleles = np.zeros(2 * n, dtype=int)
        alleles[list(pos)] = 1
        counts[int((alleles[0::2] != alleles[1::2]).sum())] += 1
    assert het_distribution(n, n_b) == pytest.approx(counts / counts.sum(), abs=1e-12)


def test_homozygote_excess_pvalue_direction():
    deficit = homozygote_excess_pvalue(40, 10, 30)
    surplus = homozygote_excess_pvalue(15, 60, 5)
    assert deficit < 1e-6 and surplus > 0.99
    assert np.isnan(homozygote_excess_pvalue(50, 0, 0))
    big = homozygote_excess_pvalue(400, 300, 300)
    assert 0 <= big < 1e-10


def test_homozygote_excess_calibrated_under_hwe():
    rng = np.random.default_rng(3)
    hits = 0
    reps = 4000
    for _ in range(reps):
        c = rng.multinomial(120, [0.49, 0.42, 0.09])
        hits += homozygote_excess_pvalue(*c) < 0.01
    assert hits / reps < 0.01 + 3 * np.sqrt(0.01 * 0.99 / reps)


def test_site_stats_match_scalar_functions():
    panel = make_panel(30, maf=(0.05, 0.5), seed=1)
    pop = simulate_population(panel, [DeletionModel(5, 10, 0.3)], n_samples=120, seed=2)
    st_ = hwe_site_stats(pop.genotypes, min_samples=30, exact_below=200)
    for j in range(30):
        c = tuple(int(x) for x in st_.counts[j])
        assert st_.pvalue[j] == pytest.approx(homozygote_excess_pvalue(*c), rel=1e-9)
        assert st_.d_hat[j] == pytest.approx(estimate_deletion_freq(*c), abs=1e-12)


def test_scan_hwe_finds_planted_deletion():
    panel = make_panel(600, n_chrom=2, maf=(0.2, 0.5), seed=4)
    pop = simulate_population(panel, [DeletionModel(200, 229, 0.2)], n_samples=1000, seed=5)
    regions = scan_hwe(pop.genotypes, alpha=0.001)
    assert len(regions) == 1
    r = regions[0]
    assert 200 <= r.start <= 202 and 227 <= r.end <= 229
    assert r.d_hat == pytest.approx(0.2, abs=0.05)
    call = r.as_call()
    assert call.sample_id == "*" and call.source == "hwe"


def test_window_false_positive_rate():
    assert window_false_positive_rate(5, 3, 0.01) == pytest.approx(
        sum(math.comb(5, k) * 0.01 ** k * 0.99 ** (5 - k) for k in range(3, 6)))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31))
def test_nmi_flags_vectorised_equals_scalar(seed):
    rng = np.random.default_rng(seed)
    panel = make_panel(20)
    calls = rng.integers(-1, 3, size=(6, 20))
    gm = GenotypeMatrix(calls, tuple(f"s{i}" for i in range(6)), panel)
    trios = [Trio("s0", "s1", "s2"), Trio("s3", "s4", "s5")]
    tr = nmi_flags(gm, trios)
    for t, trio in enumerate(trios):
        for j in range(20):
            r = detect_nmi(*(gm.genotype(s, j) for s in (trio.father, trio.mother, trio.child)))
            assert tr.evaluable[t, j] == (r is not None)
            assert tr.flags[t, j] == bool(r)
