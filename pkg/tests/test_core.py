import numpy as np
import pytest
from hypothesis import given, strategies as st

from cnvgwas.core import (
    CnvCall,
    Genotype,
    GenotypeMatrix,
    IntensityTrack,
    Locus,
    Trio,
    TrueGenotype,
    ValidationError,
    canonicalize_panel,
    chrom_key,
    make_panel,
    observe_copies,
    observe_genotype,
    rng_for,
    segments,
    state_segments,
)


def test_observe_genotype_hemizygotes_look_homozygous():
    assert observe_genotype(TrueGenotype.AD) == Genotype.AA
    assert observe_genotype(TrueGenotype.BD) == Genotype.BB
    assert observe_genotype(TrueGenotype.DD) == Genotype.MISSING
    assert observe_genotype(TrueGenotype.AB) == Genotype.AB


def test_observe_genotype_is_identity_on_observed():
    for g in Genotype:
        assert observe_genotype(g) is g


def test_observe_copies_matches_scalar_rule():
    copies = np.array([0, 1, 1, 2, 2, 2, 3, 3, 4])
    b = np.array([0, 0, 1, 0, 1, 2, 1, 3, 2])
    assert observe_copies(copies, b).tolist() == [-1, 0, 2, 0, 1, 2, 1, 2, 1]


def test_genotype_text():
    assert Genotype.parse("AB") == Genotype.AB
    assert str(Genotype.MISSING) == "NA"
    with pytest.raises(ValidationError):
        Genotype.parse("AC")


def test_chrom_key_natural_order():
    names = ["X", "10", "2", "chr1", "MT", "Y", "foo"]
    assert sorted(names, key=chrom_key) == ["chr1", "2", "10", "X", "Y", "MT", "foo"]


def test_canonicalize_sorts_and_folds():
    raw = [
        {"id": "b", "chrom": "2", "pos": 5, "alleles": ("C", "T"), "freq": 0.8},
        {"id": "a", "chrom": "10", "pos": 1},
        Locus("c", "2", 1, "G", "A", 0.1),
    ]
    panel = canonicalize_panel(raw)
    assert panel.ids == ["c", "b", "a"]
    b = panel[1]
    assert (b.allele_a, b.allele_b) == ("T", "C")
    assert b.maf == pytest.approx(0.2)
    assert np.all(panel.maf <= 0.5)


def test_canonicalize_rejects_duplicate_positions_naming_both():
    raw = [Locus("x", "1", 100), Locus("y", "1", 100), Locus("z", "1", 200)]
    with pytest.raises(ValidationError, match=r"1:100 \(x, y\)"):
        canonicalize_panel(raw)


def test_canonicalize_empty_panel():
    with pytest.raises(ValidationError):
        canonicalize_panel([])


def test_chromosome_slices():
    panel = make_panel(10, n_chrom=3)
    sl = panel.chromosome_slices()
    assert [(s.start, s.stop) for s in sl] == [(0, 4), (4, 8), (8, 10)]
    assert panel.chrom_codes.tolist() == [0] * 4 + [1] * 4 + [2] * 2


def test_make_panel_range_is_reproducible():
    a = make_panel(50, maf=(0.05, 0.5), seed=3)
    b = make_panel(50, maf=(0.05, 0.5), seed=3)
    assert np.array_equal(a.maf, b.maf)
    assert a.maf.min() >= 0.05 and a.maf.max() <= 0.5


def test_genotype_matrix_counts_exclude_missing():
    panel = make_panel(3)
    gm = GenotypeMatrix([[0, 1, -1], [2, 1, -1], [0, 0, 2]], ("s1", "s2", "s3"), panel)
    assert gm.counts().tolist() == [[2, 0, 1], [1, 2, 0], [0, 0, 1]]
    assert gm.missing_rate().tolist() == pytest.approx([0, 0, 2 / 3])
    assert gm.genotype("s2", 0) == Genotype.BB


def test_genotype_matrix_validates():
    panel = make_panel(2)
    with pytest.raises(ValidationError):
        GenotypeMatrix([[0, 3]], ("s",), panel)
    with pytest.raises(ValidationError):
        GenotypeMatrix([[0, 1]], ("s", "t"), panel)
    with pytest.raises(ValidationError):
        GenotypeMatrix([[0, 1], [0, 1]], ("s", "s"), panel)


def test_trio_members_distinct():
    with pytest.raises(ValidationError):
        Trio("a", "a", "c")
    gm = GenotypeMatrix([[0]], ("a",), make_panel(1))
    with pytest.raises(ValidationError, match="not in genotype matrix"):
        Trio("a", "b", "c").check(gm)


def test_intensity_track_rejects_baf_out_of_range():
    with pytest.raises(ValidationError):
        IntensityTrack("s", [0.0, 0.1], [0.5, 1.2])
    t = IntensityTrack("s", [0.0, 0.1], [np.nan, 0.5])
    assert len(t) == 2
    with pytest.raises(ValueError):
        t.lrr[0] = 1.0


def test_cnv_call_invariants():
    with pytest.raises(ValidationError):
        CnvCall("s", 5, 4, 1, 0.5, "x")
    with pytest.raises(ValidationError):
        CnvCall("s", 1, 4, 2, 0.5, "x")
    with pytest.raises(ValidationError):
        CnvCall("s", 1, 4, 1, 1.5, "x")
    a = CnvCall("s", 1, 4, 1, 0.5, "x")
    assert a.n_markers == 4 and a.is_loss
    assert a.overlaps(CnvCall("t", 4, 9, 3, 0.5, "x"))
    assert not a.overlaps(CnvCall("t", 5, 9, 3, 0.5, "x"))


def test_rng_streams_are_independent_of_order():
    a = rng_for(7, "intensity", 3).random(4)
    rng_for(7, "intensity", 2).random(100)
    b = rng_for(7, "intensity", 3).random(4)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, rng_for(7, "intensity", 4).random(4))
    assert not np.array_equal(a, rng_for(8, "intensity", 3).random(4))


@given(st.lists(st.booleans(), max_size=40))
def test_segments_roundtrip(mask):
    mask = np.array(mask, dtype=bool)
    rebuilt = np.zeros(mask.size, dtype=bool)
    for s, e in segments(mask):
        assert s <= e
        rebuilt[s:e + 1] = True
    assert np.array_equal(rebuilt, mask)


def test_state_segments_breaks_at_chromosome_start():
    path = np.array([2, 1, 1, 1, 1, 2, 3])
    assert state_segments(path) == [(1, 4, 1), (6, 6, 3)]
    assert state_segments(path, breaks=[3]) == [(1, 2, 1), (3, 4, 1), (6, 6, 3)]
