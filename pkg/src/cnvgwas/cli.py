"""Command-line entry point.

Exit codes: 0 success, 1 runtime failure, 2 invalid input or configuration.
``CNVGWAS_SEED`` and ``CNVGWAS_THREADS`` override the seed and thread count.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from . import __version__
from . import io as fio
from .association import association_test, cnv_load_test, table1_report, UndefinedTest
from .core import BASELINE_STATE, GenotypeMatrix, ValidationError, make_panel
from .design import DesignScenario, case_control_sample_size, table2_grid, table2_report
from .genotype_scan import _check_simplex, nmi_flags, scan_hwe, scan_nmi_runs
from .intensity import HmmSpec, region_call, region_calls, segment_tracks
from .simulator import (
    DeletionModel,
    DuplicationModel,
    IntensityModel,
    simulate_intensity,
    simulate_population,
    simulate_trios,
    truth_calls,
)

log = logging.getLogger("cnvgwas")


def _env_seed(seed: int) -> int:
    v = os.environ.get("CNVGWAS_SEED")
    if v is None:
        return seed
    try:
        return int(v)
    except ValueError:
        raise ValidationError(f"CNVGWAS_SEED={v!r} is not an integer") from None


def _env_threads(threads: int | None) -> int:
    v = os.environ.get("CNVGWAS_THREADS")
    if v is not None:
        try:
            threads = int(v)
        except ValueError:
            raise ValidationError(f"CNVGWAS_THREADS={v!r} is not an integer") from None
    if threads is None:
        threads = len(os.sched_getaffinity(0)) if hasattr(os, "sched_getaffinity") else (os.cpu_count() or 1)
    if threads < 1:
        raise ValidationError("thread count must be at least 1")
    return threads


@dataclass
class RunConfig:
    """Simulation config read from JSON; unknown keys are rejected."""

    seed: int = 0
    n_samples: int = 100
    n_trios: int = 0
    n_markers: int = 1000
    n_chromosomes: int = 1
    spacing: int = 3000
    maf: object = (0.05, 0.5)
    deletions: list = field(default_factory=list)
    duplications: list = field(default_factory=list)
    intensity: object = False
    case_fraction: float = 0.5

    @classmethod
    def from_mapping(cls, raw: dict) -> "RunConfig":
        if not isinstance(raw, dict):
            raise ValidationError("config must be a JSON object")
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(raw) - known)
        if unknown:
            raise ValidationError(f"unknown config keys: {', '.join(unknown)}")
        cfg = cls(**raw)
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            raw = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ValidationError(f"{path}:{exc.lineno}: invalid JSON: {exc.msg}") from None
        return cls.from_mapping(raw)

    def validate(self):
        for name in ("n_samples", "n_trios"):
            if getattr(self, name) < 0:
                raise ValidationError(f"{name} must be non-negative")
        if self.n_samples + self.n_trios == 0:
            raise ValidationError("need n_samples or n_trios above zero")
        if self.n_markers < 1 or self.n_chromosomes < 1 or self.spacing < 1:
            raise ValidationError("n_markers, n_chromosomes and spacing must be positive")
        if not 0.0 <= self.case_fraction <= 1.0:
            raise ValidationError("case_fraction must lie in [0, 1]")
        maf = np.atleast_1d(np.asarray(self.maf, dtype=float))
        if maf.size not in (1, 2) or np.any(maf < 0) or np.any(maf > 0.5):
            raise ValidationError("maf must be a number or [low, high] within [0, 0.5]")

    def meta(self) -> dict:
        return {"seed": self.seed, "config": json.dumps(self.__dict__, sort_keys=True, default=list)}


def _deletion_models(cfg: RunConfig, m: int):
    """Deletion models plus per-marker maf overrides from (p, q) specs."""
    models, override = [], {}
    for i, spec in enumerate(cfg.deletions):
        extra = set(spec) - {"start", "end", "d", "p", "q"}
        if extra:
            raise ValidationError(f"deletions[{i}]: unknown keys {sorted(extra)}")
        try:
            start, end, d = int(spec["start"]), int(spec["end"]), float(spec["d"])
        except KeyError as exc:
            raise ValidationError(f"deletions[{i}]: missing key {exc.args[0]}") from None
        if end >= m:
            raise ValidationError(f"deletions[{i}]: end {end} beyond {m} markers")
        if "p" in spec or "q" in spec:
            p = float(spec["p"]) if "p" in spec else 1.0 - d - float(spec["q"])
            q = float(spec["q"]) if "q" in spec else 1.0 - d - p
            _check_simplex(p, q, d)
            if p + q > 0:
                for j in range(start, end + 1):
                    override[j] = q / (p + q)
        models.append(DeletionModel(start, end, d))
    return models, override


def _duplication_models(cfg: RunConfig, m: int):
    out = []
    for i, spec in enumerate(cfg.duplications):
        extra = set(spec) - {"start", "end", "d_a", "d_b", "q"}
        if extra:
            raise ValidationError(f"duplications[{i}]: unknown keys {sorted(extra)}")
        if int(spec["end"]) >= m:
            raise ValidationError(f"duplications[{i}]: end beyond {m} markers")
        q = tuple(tuple(r) for r in spec.get("q", ((1.0, 0.0), (0.0, 1.0))))
        out.append(DuplicationModel(int(spec["start"]), int(spec["end"]), float(spec["d_a"]), float(spec["d_b"]), q))
    return out


def cmd_simulate(args) -> int:
    cfg = RunConfig.load(args.config)
    cfg.seed = _env_seed(cfg.seed if args.seed is None else args.seed)
    maf = cfg.maf if np.ndim(cfg.maf) == 0 else tuple(cfg.maf)
    panel = make_panel(cfg.n_markers, cfg.n_chromosomes, cfg.spacing, maf, seed=cfg.seed)
    dels, override = _deletion_models(cfg, len(panel))
    dups = _duplication_models(cfg, len(panel))
    imodel = None
    if cfg.intensity:
        params = cfg.intensity if isinstance(cfg.intensity, dict) else {}
        try:
            imodel = IntensityModel(**{k: tuple(v) if isinstance(v, list) else v for k, v in params.items()})
        except TypeError as exc:
            raise ValidationError(f"intensity: {exc}") from None

    parts, trios = [], []
    if cfg.n_trios:
        td = simulate_trios(panel, dels, dups, cfg.n_trios, seed=cfg.seed, maf_override=override or None)
        parts.append(td.population)
        trios = list(td.trios)
    if cfg.n_samples:
        parts.append(simulate_population(panel, dels, dups, cfg.n_samples, seed=cfg.seed,
                                         maf_override=override or None))
    ids = [s for p in parts for s in p.genotypes.sample_ids]
    calls = np.concatenate([p.genotypes.calls for p in parts])
    copy_state = np.concatenate([p.copy_state for p in parts])
    gm = GenotypeMatrix(calls, tuple(ids), panel)

    out = Path(args.out)
    meta = cfg.meta()
    fio.write_panel(out / "markers.tsv", panel, meta)
    fio.write_genotypes(out / "genotypes.tsv", gm, meta)
    if trios:
        fio.write_pedigree(out / "pedigree.tsv", trios, meta)
    fio.write_calls(out / "truth.tsv", truth_calls(copy_state, ids, panel), panel, meta)
    regions = [fio.marker_region(panel, m.start, m.end, f"del{i + 1}") for i, m in enumerate(dels)]
    regions += [fio.marker_region(panel, m.start, m.end, f"dup{i + 1}") for i, m in enumerate(dups)]
    fio.write_regions(out / "regions.bed", regions, meta)
    if cfg.n_samples:
        unrelated = parts[-1].genotypes.sample_ids
        rng = np.random.default_rng(np.random.SeedSequence(cfg.seed, spawn_key=(7,)))
        case = rng.random(len(unrelated)) < cfg.case_fraction
        fio.write_labels(out / "labels.tsv", dict(zip(unrelated, case.tolist())), meta)
    if imodel is not None:
        b = np.concatenate([p.b_count for p in parts])
        tracks = simulate_intensity(copy_state, b, imodel, ids, seed=cfg.seed)
        fio.write_intensity(out / "intensity.tsv", tracks, panel, meta)
    n_cnv = int(np.sum(copy_state != BASELINE_STATE))
    print(f"simulate: {len(ids)} samples x {len(panel)} markers, {len(trios)} trios, "
          f"{n_cnv} non-baseline genotypes, seed {cfg.seed} -> {out}", file=sys.stderr)
    return 0


def _summary(kind: str, calls) -> None:
    n_samples = len({c.sample_id for c in calls})
    loss = sum(c.is_loss for c in calls)
    print(f"scan {kind}: {len(calls)} calls ({loss} loss, {len(calls) - loss} gain) in {n_samples} samples",
          file=sys.stderr)


def _scan_meta(args, **extra) -> dict:
    meta = {"command": f"scan {args.detector}"}
    meta.update(extra)
    return meta


def cmd_scan(args) -> int:
    panel = fio.read_panel(args.markers)
    if args.detector == "nmi":
        gm = fio.read_genotypes(args.genotypes, panel)
        trios = fio.read_pedigree(args.pedigree)
        calls = scan_nmi_runs(nmi_flags(gm, trios), panel, args.min_run, args.max_gap)
        meta = _scan_meta(args, min_run=args.min_run, max_gap=args.max_gap)
    elif args.detector == "hwe":
        gm = fio.read_genotypes(args.genotypes, panel)
        regions = scan_hwe(gm, args.window, args.w_min, args.alpha, args.min_samples)
        calls = [r.as_call() for r in regions]
        meta = _scan_meta(args, window=args.window, w_min=args.w_min, alpha=args.alpha)
        for r in regions:
            print(f"hwe region {panel[r.start].chrom}:{panel[r.start].position}-{panel[r.end].position} "
                  f"markers={r.end - r.start + 1} significant={r.n_significant} d_hat={r.d_hat:.4f}",
                  file=sys.stderr)
    elif args.detector == "hmm":
        tracks = fio.read_intensity(args.intensity, panel)
        threads = _env_threads(args.threads)
        calls = segment_tracks(tracks, panel, HmmSpec(expected_cnvs=args.expected_cnvs),
                               args.detrend or None, threads)
        meta = _scan_meta(args, expected_cnvs=args.expected_cnvs, detrend=args.detrend)
    else:
        tracks = fio.read_intensity(args.intensity, panel)
        calls = []
        for chrom, s, e, name in fio.read_regions(args.regions):
            span = fio.region_markers(panel, chrom, s, e)
            if span is None:
                log.warning("region %s has no markers", name)
                continue
            fit = region_call(tracks, *span, min_samples=args.min_samples)
            calls += region_calls(fit, *span)
            print(f"region {name}: weights " + " ".join(f"{w:.3f}" for w in fit.weights)
                  + f" converged={fit.converged}", file=sys.stderr)
        meta = _scan_meta(args)
    calls = sorted(calls)
    fio.write_calls(args.out, calls, panel, meta)
    _summary(args.detector, calls)
    return 0


def _write_or_print(path, text: str) -> None:
    if path:
        fio.atomic_write(path, text)
    else:
        sys.stdout.write(text)


def cmd_design(args) -> int:
    if args.report == "table1":
        rep = table1_report()
        _write_or_print(args.out, fio.header("table1") + rep.to_tsv(args.digits))
        print(f"design table1: {rep.inflation.size} (IF, r2) pairs", file=sys.stderr)
        return 0
    if args.report == "table2":
        grid = {}
        if args.config:
            grid = json.loads(Path(args.config).read_text())
            unknown = sorted(set(grid) - {"k", "n", "p_case", "mu", "epsilon", "alpha"})
            if unknown:
                raise ValidationError(f"unknown grid keys: {', '.join(unknown)}")
        listify = lambda v: v if isinstance(v, list) else [v]
        base = DesignScenario(**{k: grid[k] for k in ("mu", "epsilon", "alpha") if k in grid})
        scen = table2_grid(listify(grid.get("k", [500, 2000])), listify(grid.get("n", [500, 1000, 2000])),
                           listify(grid.get("p_case", [0.01, 0.005, 0.0025])), base)
        seed = _env_seed(args.seed)
        rep = table2_report(scen, simulate=args.simulate, replicates=args.replicates, seed=seed,
                            cc_method=args.cc_method)
        meta = {"seed": seed, "replicates": args.replicates if args.simulate else 0, "cc_method": args.cc_method}
        _write_or_print(args.out, fio.header("table2", meta) + rep.to_tsv())
        print(f"design table2: {len(rep.rows)} scenarios", file=sys.stderr)
        return 0
    lines = ["p_case\talpha\tpower\tmethod\ttotal_n"]
    for p in args.p_case:
        n = case_control_sample_size(p, args.alpha, args.power, args.method)
        lines.append(f"{p:g}\t{args.alpha:g}\t{args.power:g}\t{args.method}\t{n}")
    _write_or_print(args.out, fio.header("samplesize") + "\n".join(lines) + "\n")
    return 0


_MINOR_ALLELES = {0: 2, 1: 1, 3: 1, 4: 2}


def cmd_assoc(args) -> int:
    panel = fio.read_panel(args.markers)
    calls = fio.read_calls(args.calls, panel)
    labels = fio.read_labels(args.labels)
    ids = list(labels)
    is_case = np.array([labels[s] for s in ids])
    n_case, n_ctrl = int(is_case.sum()), int((~is_case).sum())
    by_sample = {}
    for c in calls:
        if c.sample_id in labels:
            by_sample.setdefault(c.sample_id, []).append(c)

    lines = ["name\tchrom\tstart\tend\tcase_minor\tcase_major\tcontrol_minor\tcontrol_major\t"
             "test\tstatistic\tpvalue\tdirection"]
    for chrom, s, e, name in fio.read_regions(args.regions):
        span = fio.region_markers(panel, chrom, s, e)
        if span is None:
            continue
        alleles = {}
        for sid, cs in by_sample.items():
            hit = [c for c in cs if c.start <= span[1] and span[0] <= c.end and c.is_loss == (args.kind == "loss")]
            if hit:
                alleles[sid] = max(_MINOR_ALLELES[c.copy_state] for c in hit)
        x1 = sum(v for k, v in alleles.items() if labels[k])
        x0 = sum(v for k, v in alleles.items() if not labels[k])
        table = [[x1, 2 * n_case - x1], [x0, 2 * n_ctrl - x0]]
        try:
            r = association_test(table)
            res = f"{r.test}\t{r.statistic:.6g}\t{r.pvalue:.6g}\t{r.direction}"
        except UndefinedTest:
            res = "none\tNA\tNA\t0"
        lines.append(f"{name}\t{chrom}\t{s}\t{e}\t{x1}\t{2 * n_case - x1}\t{x0}\t{2 * n_ctrl - x0}\t{res}")

    load = np.array([sum(1 for c in by_sample.get(s, []) if c.is_loss == (args.kind == "loss")) for s in ids])
    lt = cnv_load_test(load, is_case, args.load_method)
    meta = {"kind": args.kind, "load_test": f"{lt.test} statistic={lt.statistic:.6g} pvalue={lt.pvalue:.6g}"}
    fio.atomic_write(args.out, fio.header("assoc", meta) + "\n".join(lines) + "\n")
    print(f"assoc: {len(lines) - 1} regions, {n_case} cases, {n_ctrl} controls; load test "
          f"{lt.test} p={lt.pvalue:.4g}", file=sys.stderr)
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="cnvgwas", description="CNV inference from genotype and intensity data.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="write a synthetic dataset with truth sidecar")
    p.add_argument("--config", required=True, help="JSON run config")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("scan", help="call CNVs with one detector")
    det = p.add_subparsers(dest="detector", required=True)
    d = det.add_parser("nmi", help="runs of Mendelian inconsistencies in trios")
    d.add_argument("--genotypes", required=True)
    d.add_argument("--pedigree", required=True)
    d.add_argument("--min-run", type=int, default=3)
    d.add_argument("--max-gap", type=int, default=1)
    d = det.add_parser("hwe", help="runs of homozygote excess")
    d.add_argument("--genotypes", required=True)
    d.add_argument("--window", type=int, default=5)
    d.add_argument("--w-min", type=int, default=3)
    d.add_argument("--alpha", type=float, default=0.01)
    d.add_argument("--min-samples", type=int, default=30)
    d = det.add_parser("hmm", help="per-sample intensity segmentation")
    d.add_argument("--intensity", required=True)
    d.add_argument("--expected-cnvs", type=float, default=HmmSpec().expected_cnvs)
    d.add_argument("--detrend", type=int, default=0, help="median-filter window for LRR waves (0 = off)")
    d.add_argument("--threads", type=int, default=None)
    d = det.add_parser("region", help="mixture calling at known regions")
    d.add_argument("--intensity", required=True)
    d.add_argument("--regions", required=True, help="BED-like region file")
    d.add_argument("--min-samples", type=int, default=50)
    for d in det.choices.values():
        d.add_argument("--markers", required=True, help="marker file")
        d.add_argument("--out", required=True, help="call file to write")
    p.set_defaults(func=cmd_scan)

    p = sub.add_parser("design", help="study-design reports")
    rep = p.add_subparsers(dest="report", required=True)
    d = rep.add_parser("table1", help="inflation factor and equivalent r^2 grid")
    d.add_argument("--digits", type=int, default=2)
    d = rep.add_parser("table2", help="de novo critical values and power")
    d.add_argument("--config", help="JSON grid with k, n, p_case lists and mu, epsilon, alpha")
    d.add_argument("--simulate", action="store_true", help="add Monte-Carlo power and type I error")
    d.add_argument("--replicates", type=int, default=10_000)
    d.add_argument("--seed", type=int, default=0)
    d.add_argument("--cc-method", choices=("normal", "fisher"), default="normal")
    d = rep.add_parser("samplesize", help="case-control sample size for a case-only CNV")
    d.add_argument("--p-case", type=float, nargs="+", required=True)
    d.add_argument("--alpha", type=float, default=1e-5)
    d.add_argument("--power", type=float, default=0.8)
    d.add_argument("--method", choices=("normal", "fisher"), default="normal")
    for d in rep.choices.values():
        d.add_argument("--out", help="report file (default stdout)")
    p.set_defaults(func=cmd_design)

    p = sub.add_parser("assoc", help="per-region allelic tests and a genome-wide load test")
    p.add_argument("--calls", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--markers", required=True)
    p.add_argument("--regions", required=True)
    p.add_argument("--kind", choices=("loss", "gain"), default="loss")
    p.add_argument("--load-method", choices=("poisson", "ranksum"), default="poisson")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_assoc)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (KeyError, TypeError) as exc:
        print(f"error: invalid configuration: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
