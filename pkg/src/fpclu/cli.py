"""Command-line driver: synth, extract, cluster, evaluate and pipeline.

Configuration is a plain ``key = value`` file with flat dotted keys.
Values given with ``--set key=value`` override the file, which overrides the
built-in defaults; the effective configuration is written next to the
artifacts of every command that uses it.

Exit codes: 0 success, 1 usage, 2 data error, 3 seed shortfall, 4 finished
with a warning (nothing to do).
"""
from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

from . import cluster as clu
from . import evaluate as ev
from .errors import DataError, FpcluError, IoFailure, SeedShortfall
from .metabase import PipelineParams, build_metabase, format_skips, load_metabase, save_metabase
from .mining import MiningParams, save_seeds, seeds_from_metabase
from .preprocess import EnhanceParams
from .raster import (
    DatasetManifest,
    ManifestEntry,
    atomic_write_text,
    load_manifest,
    save_gray_image,
    save_manifest,
)
from .synth import dataset_plan, synth_fingerprint

log = logging.getLogger("fpclu")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_SHORTFALL, EXIT_WARNING = 0, 1, 2, 3, 4

DEFAULTS: dict[str, object] = {
    "enhance.exponent_k": 0.55,
    "enhance.block": 32,
    "binarize.block": 16,
    "orient.block": 16,
    "seg.tau": 0.1,
    "nmc.n": 32,
    "nmc.stride": 8,
    "nmc.quantize": "octant",
    "nmc.start_offset": 32,
    "nmc.start_reach": 64,
    "mining.min_support": 0.1,
    "mining.alpha": 3,
    "mining.delta_s": 8,
    "mining.tie_break": "medoid",
    "mining.distinct_seeds": True,
    "cluster.measure": "euclidean",
    "cluster.k_classes": 5,
    "cluster.refine": False,
}

STAGES = ("extract", "cluster")


class UsageError(Exception):
    pass


def _coerce(key: str, text: str) -> object:
    kind = type(DEFAULTS[key])
    text = text.strip()
    try:
        if kind is bool:
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        return kind(text)
    except ValueError:
        raise UsageError(f"{key}: cannot read {text!r} as {kind.__name__}") from None


@dataclass
class PipelineConfig:
    values: dict = field(default_factory=lambda: dict(DEFAULTS))

    def set(self, key: str, text: str) -> None:
        key = key.strip()
        if key not in DEFAULTS:
            raise UsageError(f"unknown config key {key!r}")
        self.values[key] = _coerce(key, text)

    def __getitem__(self, key: str):
        return self.values[key]

    @classmethod
    def load(cls, path: Optional[str] = None, overrides: Sequence[str] = ()) -> "PipelineConfig":
        cfg = cls()
        if path is not None:
            try:
                text = Path(path).read_text(encoding="utf-8")
            except OSError as exc:
                raise UsageError(f"cannot read config {path}: {exc}") from None
            for lineno, line in enumerate(text.splitlines(), start=1):
                line = line.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise UsageError(f"{path}:{lineno}: expected key = value")
                key, value = line.split("=", 1)
                cfg.set(key, value)
        for item in overrides:
            if "=" not in item:
                raise UsageError(f"--set expects key=value, got {item!r}")
            key, value = item.split("=", 1)
            cfg.set(key, value)
        cfg.check()
        return cfg

    def pipeline_params(self) -> PipelineParams:
        return PipelineParams(
            exponent_k=self["enhance.exponent_k"],
            enhance_block=self["enhance.block"],
            binarize_block=self["binarize.block"],
            orient_block=self["orient.block"],
            seg_tau_factor=self["seg.tau"],
            n=self["nmc.n"],
            stride=self["nmc.stride"],
            quantize=self["nmc.quantize"],
            start_offset=self["nmc.start_offset"],
            start_reach=self["nmc.start_reach"],
        )

    def mining_params(self) -> MiningParams:
        return MiningParams(
            min_support=self["mining.min_support"],
            alpha=self["mining.alpha"],
            k_classes=self["cluster.k_classes"],
            delta_s=self["mining.delta_s"],
            tie_break=self["mining.tie_break"],
            distinct_seeds=self["mining.distinct_seeds"],
        )

    def measure(self) -> clu.DistanceMeasure:
        return clu.DistanceMeasure.parse(self["cluster.measure"])

    def check(self) -> None:
        """Build every parameter object once so range errors surface early."""
        try:
            self.pipeline_params()
            self.mining_params()
            self.measure()
            EnhanceParams(self["enhance.block"], self["enhance.exponent_k"])
        except ValueError as exc:
            raise UsageError(f"invalid configuration: {exc}") from None

    def to_text(self) -> str:
        lines = []
        for key in DEFAULTS:
            v = self.values[key]
            lines.append(f"{key} = {str(v).lower() if isinstance(v, bool) else v}")
        return "\n".join(lines) + "\n"

    def echo(self, out_dir: Path) -> None:
        atomic_write_text(out_dir / "config_effective.txt", self.to_text())


# ---------------------------------------------------------------------------
# commands


def cmd_synth(count_per_class: int, rng_seed: int, out_dir: Path) -> int:
    if count_per_class < 0:
        raise UsageError("--count-per-class must be >= 0")
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for image_id, label, seed in dataset_plan(count_per_class, rng_seed):
        path = out_dir / "images" / f"{image_id}.pgm"
        save_gray_image(synth_fingerprint(label, seed), path)
        entries.append(ManifestEntry(image_id, path, label))
    save_manifest(DatasetManifest(entries), out_dir / "manifest.csv")
    if not entries:
        log.warning("count_per_class is 0: wrote an empty manifest")
        return EXIT_WARNING
    log.info("wrote %d images and %s", len(entries), out_dir / "manifest.csv")
    return EXIT_OK


def cmd_extract(manifest_path: Path, cfg: PipelineConfig, out_metabase: Path, jobs: int = 1) -> int:
    if not manifest_path.is_file():
        raise UsageError(f"manifest {manifest_path} not found")
    manifest = load_manifest(manifest_path)
    if not len(manifest):
        raise DataError(f"manifest {manifest_path} lists no images")
    mb = build_metabase(manifest, cfg.pipeline_params(), jobs)
    save_metabase(mb, out_metabase)
    atomic_write_text(out_metabase.with_name(out_metabase.stem + "_skips.csv"), format_skips(mb.skipped))
    cfg.echo(out_metabase.parent)
    log.info("metabase: %d rows, %d skipped", mb.m, len(mb.skipped))
    return EXIT_OK


def cmd_cluster(
    metabase_path: Path,
    cfg: PipelineConfig,
    out_dir: Path,
    compare: bool = False,
    plot_data: bool = False,
    baseline_seed: Optional[int] = None,
) -> int:
    if not metabase_path.is_file():
        raise UsageError(f"metabase {metabase_path} not found")
    mb = load_metabase(metabase_path)
    out_dir.mkdir(parents=True, exist_ok=True)
    cfg.echo(out_dir)
    params = cfg.mining_params()
    measure = cfg.measure()
    seeds = seeds_from_metabase(mb, params)
    save_seeds(seeds, mb.n, out_dir / "seeds.csv")
    assignment = clu.fpclu(mb, seeds, measure, params.delta_s)
    if cfg["cluster.refine"]:
        assignment = clu.lloyd_refine(mb, assignment, measure)
    clu.save_assignment(assignment, out_dir / "assignment.csv")
    report = ev.evaluate(assignment, measure=measure.value)
    ev.save_report([report], out_dir / "report.csv")
    atomic_write_text(out_dir / "confusion.csv", ev.format_confusion(report))
    reports = [report]
    if compare:
        reports = ev.compare_measures(mb, seeds, delta_s=params.delta_s, baseline_seed=baseline_seed)
        ev.save_report(reports, out_dir / "measures.csv")
    if plot_data:
        atomic_write_text(out_dir / "plot_data.txt", ev.format_plot_data(reports))
    _log_report(report)
    return EXIT_OK


def cmd_evaluate(assignment_path: Path, out_path: Path, manifest_path: Optional[Path] = None, measure: Optional[str] = None) -> int:
    if not assignment_path.is_file():
        raise UsageError(f"assignment {assignment_path} not found")
    assignment = clu.load_assignment(assignment_path)
    labels = load_manifest(manifest_path).labels() if manifest_path is not None else None
    report = ev.evaluate(assignment, labels, measure or "unspecified")
    ev.save_report([report], out_path)
    _log_report(report)
    return EXIT_OK


def cmd_pipeline(
    cfg: PipelineConfig,
    out_dir: Path,
    manifest_path: Optional[Path] = None,
    count_per_class: int = 40,
    rng_seed: int = 7,
    start: str = "extract",
    compare: bool = False,
    plot_data: bool = False,
    jobs: int = 1,
) -> int:
    """Synth (unless a manifest is given), extract, cluster and evaluate.

    ``start="cluster"`` reuses ``out_dir/metabase.csv`` from an earlier run.
    """
    out_dir.mkdir(parents=True, exist_ok=True)
    metabase_path = out_dir / "metabase.csv"
    if start == "extract":
        if manifest_path is None:
            code = cmd_synth(count_per_class, rng_seed, out_dir / "data")
            if code != EXIT_OK:
                return code
            manifest_path = out_dir / "data" / "manifest.csv"
        cmd_extract(manifest_path, cfg, metabase_path, jobs)
    elif not metabase_path.is_file():
        raise UsageError(f"--from cluster needs {metabase_path} from an earlier run")
    return cmd_cluster(metabase_path, cfg, out_dir, compare, plot_data, baseline_seed=rng_seed if compare else None)


def _log_report(r: ev.EvalReport) -> None:
    if r.labeled:
        log.info(
            "%s: M_E=%.4f accuracy=%.4f far=%.4f noise=%d",
            r.measure, r.misclassification_error, r.accuracy, r.far, r.noise_count,
        )
    else:
        log.info("%s: no labels, noise=%d", r.measure, r.noise_count)


# ---------------------------------------------------------------------------
# argument parsing


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _add_config(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key = value configuration file")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override one config key")


def _add_cluster_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--measure", choices=[m.value for m in clu.DistanceMeasure], help="distance measure")
    p.add_argument("--compare-measures", action="store_true", help="also write measures.csv over all measures")
    p.add_argument("--emit-plot-data", action="store_true", help="write accuracy/FAR pairs to plot_data.txt")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="fpclu", description="Fingerprint clustering by frequent ridge-flow patterns.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="render a labeled synthetic dataset")
    p.add_argument("--count-per-class", type=int, default=40)
    p.add_argument("--rng-seed", type=int, default=7)
    p.add_argument("--out-dir", required=True)

    p = sub.add_parser("extract", help="build the metabase from a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="metabase CSV path")
    p.add_argument("--jobs", type=int, default=1)
    _add_config(p)

    p = sub.add_parser("cluster", help="mine seeds, cluster and report")
    p.add_argument("--metabase", required=True)
    p.add_argument("--out-dir", required=True)
    _add_config(p)
    _add_cluster_flags(p)

    p = sub.add_parser("evaluate", help="score an assignment CSV")
    p.add_argument("--assignment", required=True)
    p.add_argument("--manifest", help="take labels from this manifest instead of the assignment")
    p.add_argument("--measure", help="name written in the report row")
    p.add_argument("--out", required=True)

    p = sub.add_parser("pipeline", help="synth or manifest through to the report")
    p.add_argument("--manifest", help="use these images instead of a synthetic set")
    p.add_argument("--count-per-class", type=int, default=40)
    p.add_argument("--rng-seed", type=int, default=7)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--from", dest="start", choices=STAGES, default="extract", help="first stage to run")
    p.add_argument("--jobs", type=int, default=1)
    _add_config(p)
    _add_cluster_flags(p)
    return ap


def _config(args) -> PipelineConfig:
    overrides = list(args.set)
    if getattr(args, "measure", None):
        overrides.append(f"cluster.measure={args.measure}")
    return PipelineConfig.load(args.config, overrides)


def run(args) -> int:
    if args.command == "synth":
        return cmd_synth(args.count_per_class, args.rng_seed, Path(args.out_dir))
    if args.command == "extract":
        return cmd_extract(Path(args.manifest), _config(args), Path(args.out), args.jobs)
    if args.command == "cluster":
        return cmd_cluster(Path(args.metabase), _config(args), Path(args.out_dir), args.compare_measures, args.emit_plot_data)
    if args.command == "evaluate":
        manifest = Path(args.manifest) if args.manifest else None
        return cmd_evaluate(Path(args.assignment), Path(args.out), manifest, args.measure)
    return cmd_pipeline(
        _config(args),
        Path(args.out_dir),
        Path(args.manifest) if args.manifest else None,
        args.count_per_class,
        args.rng_seed,
        args.start,
        args.compare_measures,
        args.emit_plot_data,
        args.jobs,
    )


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format="%(levelname)s %(message)s")
    try:
        return run(args)
    except UsageError as exc:
        log.error("%s", exc)
        return EXIT_USAGE
    except SeedShortfall as exc:
        log.error("%s; try a lower mining.min_support or mining.alpha", exc)
        return EXIT_SHORTFALL
    except (DataError, IoFailure) as exc:
        log.error("%s", exc)
        return EXIT_DATA
    except FpcluError as exc:
        log.error("%s", exc)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
