"""Tab-separated file formats.

Every file opens with ``##format=cnvgwas-<kind>;version=<major>.<minor>``
followed by optional ``##key=value`` metadata lines (seed, parameters),
one column-header line and the data rows.  Readers reject unknown major
versions and report malformed lines as ``path:line: message``.
"""

from __future__ import annotations

import contextlib
import math
import os
import tempfile
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from .core import (
    CnvCall,
    GenotypeMatrix,
    IntensityTrack,
    Locus,
    SnpPanel,
    Trio,
    ValidationError,
    canonicalize_panel,
)

FORMAT_VERSION = (1, 0)

MARKER_COLUMNS = ("id", "chrom", "pos", "allele_a", "allele_b", "maf")
PEDIGREE_COLUMNS = ("family", "child", "father", "mother")
INTENSITY_COLUMNS = ("sample", "marker", "lrr", "baf")
CALL_COLUMNS = ("sample", "chrom", "start_bp", "end_bp", "start_idx", "end_idx",
                "state", "confidence", "source")
REGION_COLUMNS = ("chrom", "start", "end", "name")
LABEL_COLUMNS = ("sample", "status")

_GENO_TEXT = np.array(["AA", "AB", "BB", "NA"])  # code -1 indexes the last entry


class FormatError(ValidationError):
    pass


@contextlib.contextmanager
def atomic_open(path):
    """Text handle on a temporary file that replaces ``path`` only on success."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", newline="\n") as fh:
            yield fh
        umask = os.umask(0)
        os.umask(umask)
        os.chmod(tmp, 0o666 & ~umask)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write(path, text: str) -> None:
    with atomic_open(path) as fh:
        fh.write(text)


def header(kind: str, meta: Mapping | None = None) -> str:
    lines = [f"##format=cnvgwas-{kind};version={FORMAT_VERSION[0]}.{FORMAT_VERSION[1]}"]
    for k, v in (meta or {}).items():
        lines.append(f"##{k}={v}")
    return "\n".join(lines) + "\n"


class _Reader:
    """Streaming line reader that validates the format header and tracks line numbers."""

    def __init__(self, path, kind: str, columns: tuple | None = None):
        self.path = str(path)
        self.kind = kind
        try:
            self._fh = open(path)
        except OSError as exc:
            raise FormatError(f"{path}: cannot read: {exc.strerror}") from None
        try:
            self._read_header(kind, columns)
        except BaseException:
            self._fh.close()
            raise

    def _read_header(self, kind, columns):
        path = self.path
        first = self._fh.readline().rstrip("\n")
        if not first:
            raise FormatError(f"{path}:1: empty file")
        if not first.startswith("##format="):
            raise FormatError(f"{path}:1: missing ##format header")
        fmt = dict(part.split("=", 1) for part in first[2:].split(";") if "=" in part)
        if fmt.get("format") != f"cnvgwas-{kind}":
            raise FormatError(f"{path}:1: expected format cnvgwas-{kind}, found {fmt.get('format')}")
        try:
            major = int(fmt.get("version", "").split(".")[0])
        except ValueError:
            raise FormatError(f"{path}:1: unreadable version {fmt.get('version')!r}") from None
        if major != FORMAT_VERSION[0]:
            raise FormatError(f"{path}:1: unsupported format version {fmt.get('version')}")
        self.meta = {}
        n = 1
        line = self._fh.readline()
        while line.startswith("##"):
            n += 1
            key, _, val = line[2:].rstrip("\n").partition("=")
            self.meta[key] = val
            line = self._fh.readline()
        n += 1
        if not line.strip():
            raise FormatError(f"{path}:{n}: missing column header")
        self.columns = tuple(line.rstrip("\n").lstrip("#").split("\t"))
        if columns is not None and self.columns != columns:
            raise FormatError(f"{path}:{n}: expected columns {columns}, found {self.columns}")
        self.header_line = n

    def lines(self):
        """(line number, raw line without newline) for non-blank data lines."""
        with self._fh:
            for n, line in enumerate(self._fh, self.header_line + 1):
                line = line.rstrip("\n")
                if line.strip():
                    yield n, line

    def rows(self):
        width = len(self.columns)
        for n, line in self.lines():
            fields = line.split("\t")
            if len(fields) != width:
                raise FormatError(f"{self.path}:{n}: expected {width} fields, found {len(fields)}")
            yield n, fields

    def fail(self, lineno: int, msg: str):
        raise FormatError(f"{self.path}:{lineno}: {msg}")


def _num(v: float) -> str:
    return "NA" if math.isnan(v) else repr(v)


# --- markers -----------------------------------------------------------------

def write_panel(path, panel: SnpPanel, meta=None) -> None:
    out = [header("markers", meta), "\t".join(MARKER_COLUMNS) + "\n"]
    for l in panel.loci:
        out.append(f"{l.marker_id}\t{l.chrom}\t{l.position}\t{l.allele_a}\t{l.allele_b}\t{l.maf!r}\n")
    atomic_write(path, "".join(out))


def read_panel(path) -> SnpPanel:
    r = _Reader(path, "markers", MARKER_COLUMNS)
    loci = []
    for n, f in r.rows():
        try:
            loci.append(Locus(f[0], f[1], int(f[2]), f[3], f[4], float(f[5])))
        except ValueError as exc:
            r.fail(n, str(exc))
    if not loci:
        raise FormatError(f"{path}: no markers")
    panel = canonicalize_panel(loci)
    if [l.marker_id for l in panel.loci] != [l.marker_id for l in loci]:
        raise FormatError(f"{path}: markers are not in canonical order")
    return panel


# --- genotypes ---------------------------------------------------------------

def write_genotypes(path, gm: GenotypeMatrix, meta=None) -> None:
    with atomic_open(path) as fh:
        fh.write(header("genotypes", meta))
        fh.write("sample\t" + "\t".join(gm.panel.ids) + "\n")
        for sid, row in zip(gm.sample_ids, gm.calls):
            fh.write(sid + "\t" + "\t".join(_GENO_TEXT[row.astype(np.intp)].tolist()) + "\n")


# two-letter genotype token -> code, indexed by (first byte, second byte)
_GENO_CODE = np.full((256, 256), -2, dtype=np.int8)
for _code, _tok in ((0, b"AA"), (1, b"AB"), (2, b"BB"), (-1, b"NA")):
    _GENO_CODE[_tok[0], _tok[1]] = _code


def _parse_genotype_row(text: str, m: int) -> np.ndarray | None:
    """Codes for ``m`` tab-separated two-letter tokens; None if malformed."""
    raw = np.frombuffer(text.encode("ascii", "replace"), dtype=np.uint8)
    if raw.size != 3 * m - 1 or np.any(raw[2::3] != 9):
        return None
    codes = _GENO_CODE[raw[0::3], raw[1::3]]
    return None if np.any(codes == -2) else codes


def read_genotypes(path, panel: SnpPanel) -> GenotypeMatrix:
    r = _Reader(path, "genotypes")
    if r.columns[0] != "sample":
        r.fail(r.header_line, "first column must be 'sample'")
    if list(r.columns[1:]) != panel.ids:
        r.fail(r.header_line, "marker columns do not match the marker file")
    m = len(panel)
    ids, rows = [], []
    for n, line in r.lines():
        sid, _, rest = line.partition("\t")
        codes = _parse_genotype_row(rest, m)
        if codes is None:
            fields = rest.split("\t")
            if len(fields) != m:
                r.fail(n, f"expected {m + 1} fields, found {len(fields) + 1}")
            bad = next(g for g in fields if g not in ("AA", "AB", "BB", "NA"))
            r.fail(n, f"unknown genotype {bad!r}")
        ids.append(sid)
        rows.append(codes)
    if not ids:
        raise FormatError(f"{path}: no genotype rows")
    return GenotypeMatrix(np.vstack(rows), tuple(ids), panel)


# --- pedigree ----------------------------------------------------------------

def write_pedigree(path, trios: Iterable[Trio], meta=None) -> None:
    out = [header("pedigree", meta), "\t".join(PEDIGREE_COLUMNS) + "\n"]
    for t in trios:
        out.append(f"{t.family}\t{t.child}\t{t.father}\t{t.mother}\n")
    atomic_write(path, "".join(out))


def read_pedigree(path) -> list[Trio]:
    r = _Reader(path, "pedigree", PEDIGREE_COLUMNS)
    trios = []
    for n, f in r.rows():
        try:
            trios.append(Trio(father=f[2], mother=f[3], child=f[1], family=f[0]))
        except ValidationError as exc:
            r.fail(n, str(exc))
    return trios


# --- intensity ---------------------------------------------------------------

def write_intensity(path, tracks: Iterable[IntensityTrack], panel: SnpPanel, meta=None) -> None:
    ids = panel.ids
    with atomic_open(path) as fh:
        fh.write(header("intensity", meta))
        fh.write("\t".join(INTENSITY_COLUMNS) + "\n")
        for t in tracks:
            lrr = [_num(v) for v in t.lrr.tolist()]
            baf = [_num(v) for v in t.baf.tolist()]
            fh.writelines(f"{t.sample_id}\t{mid}\t{a}\t{b}\n" for mid, a, b in zip(ids, lrr, baf))


def read_intensity(path, panel: SnpPanel) -> list[IntensityTrack]:
    """Long-format intensity; markers absent for a sample are NaN."""
    r = _Reader(path, "intensity", INTENSITY_COLUMNS)
    m = len(panel)
    order, data = [], {}
    for n, f in r.rows():
        sid, mid = f[0], f[1]
        try:
            j = panel.ordinal(mid)
        except KeyError:
            r.fail(n, f"unknown marker {mid!r}")
        try:
            lrr = float("nan") if f[2] == "NA" else float(f[2])
            baf = float("nan") if f[3] == "NA" else float(f[3])
        except ValueError as exc:
            r.fail(n, str(exc))
        if not (math.isnan(baf) or 0.0 <= baf <= 1.0):
            r.fail(n, f"BAF {baf} outside [0, 1]")
        if sid not in data:
            order.append(sid)
            data[sid] = (np.full(m, np.nan), np.full(m, np.nan))
        data[sid][0][j] = lrr
        data[sid][1][j] = baf
    if not order:
        raise FormatError(f"{path}: no intensity rows")
    return [IntensityTrack(s, *data[s]) for s in order]


# --- calls -------------------------------------------------------------------

def write_calls(path, calls: Iterable[CnvCall], panel: SnpPanel, meta=None) -> None:
    out = [header("calls", meta), "\t".join(CALL_COLUMNS) + "\n"]
    for c in sorted(calls):
        a, b = panel[c.start], panel[c.end]
        out.append(f"{c.sample_id}\t{a.chrom}\t{a.position}\t{b.position}\t{c.start}\t{c.end}\t"
                   f"{c.copy_state}\t{c.confidence!r}\t{c.source}\n")
    atomic_write(path, "".join(out))


def read_calls(path, panel: SnpPanel | None = None) -> list[CnvCall]:
    r = _Reader(path, "calls", CALL_COLUMNS)
    calls = []
    for n, f in r.rows():
        try:
            c = CnvCall(f[0], int(f[4]), int(f[5]), int(f[6]), float(f[7]), f[8])
        except ValueError as exc:
            r.fail(n, str(exc))
        if panel is not None:
            if c.end >= len(panel):
                r.fail(n, f"marker index {c.end} beyond panel")
            if panel[c.start].position != int(f[2]) or panel[c.end].position != int(f[3]):
                r.fail(n, "base-pair coordinates disagree with marker indices")
        calls.append(c)
    return calls


# --- regions (BED-like) -------------------------------------------------------

def write_regions(path, regions: Iterable[tuple], meta=None) -> None:
    """``regions`` are (chrom, start, end, name) with 0-based half-open coordinates."""
    out = [header("regions", meta), "#" + "\t".join(REGION_COLUMNS) + "\n"]
    for chrom, s, e, name in regions:
        out.append(f"{chrom}\t{s}\t{e}\t{name}\n")
    atomic_write(path, "".join(out))


def read_regions(path) -> list[tuple[str, int, int, str]]:
    r = _Reader(path, "regions", REGION_COLUMNS)
    out = []
    for n, f in r.rows():
        try:
            s, e = int(f[1]), int(f[2])
        except ValueError as exc:
            r.fail(n, str(exc))
        if s < 0 or e <= s:
            r.fail(n, f"invalid interval {s}-{e}")
        out.append((f[0], s, e, f[3]))
    return out


def region_markers(panel: SnpPanel, chrom: str, start: int, end: int) -> tuple[int, int] | None:
    """Inclusive marker ordinals whose 1-based positions fall in the 0-based interval [start, end)."""
    pos = np.asarray(panel.positions)
    hit = np.flatnonzero((np.array(panel.chroms) == chrom) & (pos > start) & (pos <= end))
    if hit.size == 0:
        return None
    return int(hit[0]), int(hit[-1])


def marker_region(panel: SnpPanel, start: int, end: int, name: str) -> tuple:
    return (panel[start].chrom, panel[start].position - 1, panel[end].position, name)


# --- labels ------------------------------------------------------------------

def write_labels(path, labels: Mapping[str, bool], meta=None) -> None:
    out = [header("labels", meta), "\t".join(LABEL_COLUMNS) + "\n"]
    for sid, case in labels.items():
        out.append(f"{sid}\t{'case' if case else 'control'}\n")
    atomic_write(path, "".join(out))


def read_labels(path) -> dict[str, bool]:
    r = _Reader(path, "labels", LABEL_COLUMNS)
    out = {}
    for n, f in r.rows():
        status = f[1].lower()
        if status in ("case", "1"):
            out[f[0]] = True
        elif status in ("control", "0"):
            out[f[0]] = False
        else:
            r.fail(n, f"status must be case/control, found {f[1]!r}")
    return out


def read_meta(path) -> dict:
    """Metadata lines of any cnvgwas file (without validating the body)."""
    meta = {}
    with open(path) as fh:
        for line in fh:
            if not line.startswith("##"):
                break
            key, _, val = line[2:].rstrip("\n").partition("=")
            meta[key] = val
    return meta
