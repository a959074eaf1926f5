import json
import os

import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings, strategies as st

from cnvgwas import io as fio
from cnvgwas.cli import RunConfig, main
from cnvgwas.core import CnvCall, GenotypeMatrix, IntensityTrack, Locus, Trio, ValidationError, canonicalize_panel

ids = st.text("abcdefghijklmnopqrstuvwxyz0123456789_-.", min_size=1, max_size=8)


@st.composite
def panels(draw, max_markers=12):
    n = draw(st.integers(1, max_markers))
    chroms = draw(st.lists(st.sampled_from(["1", "2", "10", "X"]), min_size=n, max_size=n))
    pos = draw(st.lists(st.integers(1, 10**8), min_size=n, max_size=n, unique=True))
    mafs = draw(st.lists(st.floats(0, 0.5), min_size=n, max_size=n))
    loci = [Locus(f"rs{i}", c, p, "A", "G", m) for i, (c, p, m) in enumerate(zip(chroms, pos, mafs))]
    return canonicalize_panel(loci)


_settings = settings(max_examples=40, deadline=None, suppress_health_check=[HealthCheck.function_scoped_fixture])


@_settings
@given(panel=panels())
def test_panel_roundtrip(tmp_path, panel):
    fio.write_panel(tmp_path / "m.tsv", panel, {"seed": 1})
    back = fio.read_panel(tmp_path / "m.tsv")
    assert back.loci == panel.loci


@_settings
@given(panel=panels(), data=st.data())
def test_genotype_roundtrip(tmp_path, panel, data):
    n = data.draw(st.integers(1, 6))
    sids = data.draw(st.lists(ids, min_size=n, max_size=n, unique=True))
    calls = np.array(data.draw(st.lists(st.lists(st.integers(-1, 2), min_size=len(panel), max_size=len(panel)),
                                        min_size=n, max_size=n)))
    gm = GenotypeMatrix(calls, tuple(sids), panel)
    fio.write_genotypes(tmp_path / "g.tsv", gm)
    back = fio.read_genotypes(tmp_path / "g.tsv", panel)
    assert back.sample_ids == gm.sample_ids
    assert np.array_equal(back.calls, gm.calls)


floats_or_nan = st.one_of(st.floats(-10, 10, allow_nan=False), st.just(float("nan")))


@_settings
@given(panel=panels(6), data=st.data())
def test_intensity_roundtrip(tmp_path, panel, data):
    m = len(panel)
    tracks = []
    for sid in data.draw(st.lists(ids, min_size=1, max_size=3, unique=True)):
        lrr = data.draw(st.lists(floats_or_nan, min_size=m, max_size=m))
        baf = data.draw(st.lists(st.one_of(st.floats(0, 1), st.just(float("nan"))), min_size=m, max_size=m))
        tracks.append(IntensityTrack(sid, lrr, baf))
    fio.write_intensity(tmp_path / "i.tsv", tracks, panel)
    back = fio.read_intensity(tmp_path / "i.tsv", panel)
    assert [t.sample_id for t in back] == [t.sample_id for t in tracks]
    for a, b in zip(tracks, back):
        assert np.array_equal(a.lrr, b.lrr, equal_nan=True)
        assert np.array_equal(a.baf, b.baf, equal_nan=True)


@_settings
@given(panel=panels(), data=st.data())
def test_calls_roundtrip(tmp_path, panel, data):
    m = len(panel)
    calls = []
    for _ in range(data.draw(st.integers(0, 5))):
        s = data.draw(st.integers(0, m - 1))
        e = data.draw(st.integers(s, m - 1))
        calls.append(CnvCall(data.draw(ids), s, e, data.draw(st.sampled_from([0, 1, 3, 4])),
                             data.draw(st.floats(0, 1)), data.draw(st.sampled_from(["hmm", "nmi", "hwe"]))))
    fio.write_calls(tmp_path / "c.tsv", calls, panel)
    assert fio.read_calls(tmp_path / "c.tsv", panel) == sorted(calls)


@_settings
@given(data=st.data())
def test_pedigree_labels_regions_roundtrip(tmp_path, data):
    people = data.draw(st.lists(ids, min_size=3, max_size=9, unique=True))
    trios = [Trio(*people[i:i + 3], family=f"F{i}") for i in range(0, len(people) - 2, 3)]
    fio.write_pedigree(tmp_path / "p.tsv", trios)
    assert fio.read_pedigree(tmp_path / "p.tsv") == trios
    labels = {p: data.draw(st.booleans()) for p in people}
    fio.write_labels(tmp_path / "l.tsv", labels)
    assert fio.read_labels(tmp_path / "l.tsv") == labels
    regions = [(data.draw(st.sampled_from(["1", "X"])), s, s + data.draw(st.integers(1, 1000)), f"r{i}")
               for i, s in enumerate(data.draw(st.lists(st.integers(0, 10**6), max_size=4)))]
    fio.write_regions(tmp_path / "r.bed", regions)
    assert fio.read_regions(tmp_path / "r.bed") == regions


def test_header_carries_seed_and_version(tmp_path):
    fio.write_labels(tmp_path / "l.tsv", {"a": True}, {"seed": 42, "n": 3})
    first = (tmp_path / "l.tsv").read_text().splitlines()[0]
    assert first == "##format=cnvgwas-labels;version=1.0"
    assert fio.read_meta(tmp_path / "l.tsv")["seed"] == "42"


def test_reader_rejects_unknown_major_version(tmp_path):
    p = tmp_path / "l.tsv"
    p.write_text("##format=cnvgwas-labels;version=2.0\nsample\tstatus\na\tcase\n")
    with pytest.raises(fio.FormatError, match="unsupported format version"):
        fio.read_labels(p)
    p.write_text("##format=cnvgwas-labels;version=1.7\nsample\tstatus\na\tcase\n")
    assert fio.read_labels(p) == {"a": True}


def test_reader_rejects_wrong_kind_and_missing_header(tmp_path):
    p = tmp_path / "x.tsv"
    p.write_text("##format=cnvgwas-calls;version=1.0\nsample\tstatus\n")
    with pytest.raises(fio.FormatError, match="expected format cnvgwas-labels"):
        fio.read_labels(p)
    p.write_text("sample\tstatus\n")
    with pytest.raises(fio.FormatError, match=":1: missing ##format"):
        fio.read_labels(p)


def test_malformed_line_reports_file_and_line(tmp_path):
    p = tmp_path / "l.tsv"
    p.write_text("##format=cnvgwas-labels;version=1.0\n##seed=1\nsample\tstatus\na\tcase\nb\tmaybe\n")
    with pytest.raises(fio.FormatError, match=r"l\.tsv:5: status"):
        fio.read_labels(p)
    p.write_text("##format=cnvgwas-labels;version=1.0\nsample\tstatus\na\tcase\textra\n")
    with pytest.raises(fio.FormatError, match=r"l\.tsv:3: expected 2 fields"):
        fio.read_labels(p)


def test_bad_genotype_token_location(tmp_path):
    panel = canonicalize_panel([Locus("a", "1", 1), Locus("b", "1", 2)])
    p = tmp_path / "g.tsv"
    p.write_text("##format=cnvgwas-genotypes;version=1.0\nsample\ta\tb\ns1\tAA\tAB\ns2\tAB\tCC\n")
    with pytest.raises(fio.FormatError, match=r"g\.tsv:4: unknown genotype 'CC'"):
        fio.read_genotypes(p, panel)


def test_atomic_write_leaves_no_partial_file(tmp_path):
    target = tmp_path / "out.tsv"
    target.write_text("old")
    with pytest.raises(RuntimeError):
        with fio.atomic_open(target) as fh:
            fh.write("new")
            raise RuntimeError("boom")
    assert target.read_text() == "old"
    assert os.listdir(tmp_path) == ["out.tsv"]


def test_region_marker_mapping():
    panel = canonicalize_panel([Locus(f"m{i}", "1", 100 * (i + 1)) for i in range(10)])
    assert fio.region_markers(panel, "1", 199, 500) == (1, 4)
    assert fio.region_markers(panel, "1", 200, 250) is None
    assert fio.region_markers(panel, "2", 0, 10**6) is None
    reg = fio.marker_region(panel, 1, 4, "x")
    assert fio.region_markers(panel, *reg[:3]) == (1, 4)


# --- command line -------------------------------------------------------------

SMALL = {"seed": 5, "n_samples": 60, "n_trios": 20, "n_markers": 400, "n_chromosomes": 2,
         "deletions": [{"start": 50, "end": 70, "d": 0.3}], "intensity": True}


def _config(tmp_path, cfg=SMALL, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(cfg))
    return str(p)


def _files(d):
    return {f: (d / f).read_bytes() for f in sorted(os.listdir(d))}


def test_run_config_rejects_unknown_keys():
    with pytest.raises(ValidationError, match="unknown config keys: n_sample"):
        RunConfig.from_mapping({"n_sample": 10})


def test_simulate_is_byte_identical(tmp_path):
    cfg = _config(tmp_path)
    assert main(["simulate", "--config", cfg, "--out", str(tmp_path / "a")]) == 0
    assert main(["simulate", "--config", cfg, "--out", str(tmp_path / "b")]) == 0
    a, b = _files(tmp_path / "a"), _files(tmp_path / "b")
    assert a == b
    assert set(a) == {"markers.tsv", "genotypes.tsv", "pedigree.tsv", "intensity.tsv", "truth.tsv",
                      "regions.bed", "labels.tsv"}
    assert b"##seed=5" in a["genotypes.tsv"]


def test_seed_env_override(tmp_path, monkeypatch):
    cfg = _config(tmp_path)
    main(["simulate", "--config", cfg, "--out", str(tmp_path / "a")])
    monkeypatch.setenv("CNVGWAS_SEED", "6")
    main(["simulate", "--config", cfg, "--out", str(tmp_path / "b")])
    ga = (tmp_path / "a" / "genotypes.tsv").read_text()
    gb = (tmp_path / "b" / "genotypes.tsv").read_text()
    assert "##seed=6" in gb and ga != gb
    monkeypatch.setenv("CNVGWAS_SEED", "x")
    assert main(["simulate", "--config", cfg, "--out", str(tmp_path / "c")]) == 2


def test_simplex_violation_exits_2(tmp_path, capsys):
    cfg = dict(SMALL, deletions=[{"start": 1, "end": 3, "p": 0.5, "q": 0.4, "d": 0.2}])
    assert main(["simulate", "--config", _config(tmp_path, cfg), "--out", str(tmp_path / "o")]) == 2
    assert "p + q + d" in capsys.readouterr().err


def test_simplex_spec_sets_allele_frequency(tmp_path):
    cfg = dict(SMALL, n_samples=2000, n_trios=0, intensity=False,
               deletions=[{"start": 10, "end": 12, "p": 0.2, "q": 0.6, "d": 0.2}])
    assert main(["simulate", "--config", _config(tmp_path, cfg), "--out", str(tmp_path / "o")]) == 0
    panel = fio.read_panel(tmp_path / "o" / "markers.tsv")
    gm = fio.read_genotypes(tmp_path / "o" / "genotypes.tsv", panel)
    c = gm.counts()[11]
    n = c.sum()
    # P(BB) = (q^2 + 2dq)/(1 - d^2)
    assert c[2] / n == pytest.approx((0.36 + 0.24) / 0.96, abs=0.04)


def test_invalid_json_and_unwritable_output(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text("{oops")
    assert main(["simulate", "--config", str(bad), "--out", str(tmp_path / "o")]) == 2
    assert "bad.json:1" in capsys.readouterr().err
    blocker = tmp_path / "file"
    blocker.write_text("")
    assert main(["simulate", "--config", _config(tmp_path), "--out", str(blocker / "sub")]) == 1


def test_scan_empty_genotype_file_exits_2(tmp_path, capsys):
    cfg = _config(tmp_path)
    main(["simulate", "--config", cfg, "--out", str(tmp_path / "d")])
    empty = tmp_path / "empty.tsv"
    empty.write_text("")
    rc = main(["scan", "hwe", "--genotypes", str(empty), "--markers", str(tmp_path / "d" / "markers.tsv"),
               "--out", str(tmp_path / "c.tsv")])
    assert rc == 2
    assert "empty.tsv:1" in capsys.readouterr().err


def test_scan_pipeline_is_deterministic_and_finds_truth(tmp_path, capsys):
    main(["simulate", "--config", _config(tmp_path), "--out", str(tmp_path / "d")])
    d = tmp_path / "d"
    base = ["--markers", str(d / "markers.tsv")]
    runs = {
        "nmi": ["--genotypes", str(d / "genotypes.tsv"), "--pedigree", str(d / "pedigree.tsv")],
        "hwe": ["--genotypes", str(d / "genotypes.tsv"), "--alpha", "0.01"],
        "hmm": ["--intensity", str(d / "intensity.tsv"), "--threads", "2"],
        "region": ["--intensity", str(d / "intensity.tsv"), "--regions", str(d / "regions.bed")],
    }
    for det, extra in runs.items():
        for out in ("1", "2"):
            assert main(["scan", det, *extra, *base, "--out", str(tmp_path / f"{det}{out}.tsv")]) == 0
        assert (tmp_path / f"{det}1.tsv").read_bytes() == (tmp_path / f"{det}2.tsv").read_bytes()
    err = capsys.readouterr().err
    assert "scan hmm:" in err and "scan region:" in err

    panel = fio.read_panel(d / "markers.tsv")
    truth = [c for c in fio.read_calls(d / "truth.tsv", panel)]
    hmm = fio.read_calls(tmp_path / "hmm1.tsv", panel)
    hits = sum(any(h.sample_id == t.sample_id and h.overlaps(t) and h.is_loss == t.is_loss for h in hmm)
               for t in truth)
    assert hits / len(truth) > 0.9
    hwe = fio.read_calls(tmp_path / "hwe1.tsv", panel)
    assert any(c.start <= 60 <= c.end for c in hwe)


def test_assoc_command(tmp_path):
    main(["simulate", "--config", _config(tmp_path), "--out", str(tmp_path / "d")])
    d = tmp_path / "d"
    rc = main(["assoc", "--calls", str(d / "truth.tsv"), "--labels", str(d / "labels.tsv"),
               "--markers", str(d / "markers.tsv"), "--regions", str(d / "regions.bed"),
               "--out", str(tmp_path / "a.tsv")])
    assert rc == 0
    lines = (tmp_path / "a.tsv").read_text().splitlines()
    assert lines[0] == "##format=cnvgwas-assoc;version=1.0"
    assert any(line.startswith("##load_test=") for line in lines)
    row = lines[-1].split("\t")
    assert row[0] == "del1" and float(row[10]) > 0


def test_design_commands(tmp_path, capsys):
    assert main(["design", "table1", "--out", str(tmp_path / "t1.tsv")]) == 0
    rows = [l.split("\t") for l in (tmp_path / "t1.tsv").read_text().splitlines() if not l.startswith("#")]
    assert rows[1][:4] == ["0.01", "0.9", "1.74", "0.57"]
    grid = tmp_path / "grid.json"
    grid.write_text(json.dumps({"k": 500, "n": 1000, "p_case": 0.01}))
    assert main(["design", "table2", "--config", str(grid), "--out", str(tmp_path / "t2.tsv")]) == 0
    body = [l for l in (tmp_path / "t2.tsv").read_text().splitlines() if not l.startswith("#")]
    assert len(body) == 2 and body[1].split("\t")[7] == "5"
    grid.write_text(json.dumps({"kk": 1}))
    assert main(["design", "table2", "--config", str(grid)]) == 2
    assert main(["design", "samplesize", "--p-case", "0.01"]) == 0
    assert "5504" in capsys.readouterr().out


def test_help_lists_every_subcommand(capsys):
    with pytest.raises(SystemExit) as e:
        main(["--help"])
    assert e.value.code == 0
    out = capsys.readouterr().out
    for cmd in ("simulate", "scan", "design", "assoc"):
        assert cmd in out
    with pytest.raises(SystemExit) as e:
        main(["scan", "bogus"])
    assert e.value.code == 2
