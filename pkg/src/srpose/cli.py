"""Command-line front end for the evaluation toolkit.

Commands: downsample, upscale, eval, route, subgroups, report. Every command
accepts --config pointing at a JSON file whose keys mirror the long flag
names; explicit flags win over config values. Each run writes a manifest
recording the resolved configuration, input hashes, backend identities, and
emitted artifacts.

Exit codes: 0 success, 1 usage error, 2 data error, 3 backend failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import math
import shlex
import sys
from dataclasses import dataclass, field
from pathlib import Path
from types import SimpleNamespace

from . import __version__, backends, coco, metrics, reports, resample, router, subgroups

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_BACKEND = 3

MANIFEST_NAME = "run_manifest.json"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse parser whose usage failures follow our exit-code contract."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        sys.exit(EXIT_USAGE)


def _hash_file(path) -> str:
    digest = hashlib.sha256()
    with Path(path).open("rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            digest.update(block)
    return digest.hexdigest()


def _hash_input(path) -> str:
    """Content hash for a file; structural fingerprint for a directory."""
    path = Path(path)
    if path.is_file():
        return _hash_file(path)
    digest = hashlib.sha256()
    for child in sorted(path.rglob("*")):
        if child.is_file():
            rel = child.relative_to(path).as_posix()
            digest.update(f"{rel}:{child.stat().st_size}\n".encode("utf-8"))
    return digest.hexdigest()


@dataclass
class RunManifest:
    command: str
    config: dict
    input_hashes: dict
    backends: dict = field(default_factory=dict)
    outputs: list = field(default_factory=list)

    @property
    def run_id(self) -> str:
        body = json.dumps(
            [self.command, self.config, self.input_hashes], sort_keys=True
        )
        return hashlib.sha256(body.encode("utf-8")).hexdigest()[:12]

    def write(self, path) -> None:
        payload = {
            "run_id": self.run_id,
            "tool_version": __version__,
            "command": self.command,
            "config": self.config,
            "input_hashes": self.input_hashes,
            "backends": self.backends,
            "outputs": [str(p) for p in self.outputs],
        }
        Path(path).write_text(
            json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )


def _load_config_file(path, allowed) -> dict:
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise UsageError(f"cannot read config file: {exc}")
    except json.JSONDecodeError as exc:
        raise UsageError(f"config file is not valid JSON: {exc}")
    if not isinstance(raw, dict):
        raise UsageError("config file must hold a JSON object")
    values = {}
    for key, value in raw.items():
        dest = key.replace("-", "_")
        if dest not in allowed:
            raise UsageError(f"config key {key!r} is not a known option")
        values[dest] = value
    return values


def _merge_options(args: argparse.Namespace, defaults: dict) -> SimpleNamespace:
    """defaults < config file < explicit flags."""
    provided = {
        k: v
        for k, v in vars(args).items()
        if k not in ("_runner", "_defaults", "config")
    }
    merged = dict(defaults)
    if getattr(args, "config", None):
        allowed = set(defaults) | set(provided)
        merged.update(_load_config_file(args.config, allowed))
    merged.update(provided)
    return SimpleNamespace(**merged)


def _add_common(parser) -> None:
    parser.add_argument(
        "--config",
        help="JSON file of option defaults; explicit flags win",
    )
    parser.add_argument(
        "--verbose",
        action="store_true",
        default=argparse.SUPPRESS,
        help="log per-image progress and warnings",
    )


def _backend_from_option(option, role):
    """builtin | executable command string -> backend instance."""
    if option in (None, "", "builtin"):
        if role == "upscaler":
            return backends.BicubicUpscaler()
        raise UsageError(f"--{role} requires an executable command")
    return backends.SubprocessBackend(shlex.split(str(option)))


def _image_paths_for(dataset, images_dir) -> dict:
    images_dir = Path(images_dir)
    return {img.id: images_dir / img.file_name for img in dataset.images}


def _parse_threshold(value) -> float:
    text = str(value).strip().lower()
    if text in ("inf", "infinity", "none"):
        return math.inf
    try:
        return float(text)
    except ValueError:
        # argparse only maps ArgumentTypeError/ValueError to usage errors
        raise argparse.ArgumentTypeError(f"not a number or 'inf': {value}")


# --- downsample ------------------------------------------------------------

DOWNSAMPLE_DEFAULTS = {
    "factor": 0.5,
    "workers": None,
    "kernel_a": -0.5,
    "verbose": False,
}


def _configure_downsample(p):
    p.add_argument("--annotations", required=True, help="COCO person keypoints JSON")
    p.add_argument("--images", required=True, help="directory of source images")
    p.add_argument("--out", required=True, help="output dataset directory")
    p.add_argument(
        "--factor",
        type=float,
        default=argparse.SUPPRESS,
        help="scale factor in (0, 1], e.g. 0.5 or 0.25 (default 0.5)",
    )
    p.add_argument(
        "--workers", type=int, default=argparse.SUPPRESS, help="parallel image workers"
    )
    p.add_argument(
        "--kernel-a",
        dest="kernel_a",
        type=float,
        default=argparse.SUPPRESS,
        help="cubic kernel free parameter (default -0.5)",
    )


def _run_downsample(opts) -> int:
    dataset = coco.parse_dataset(opts.annotations)
    out_dir = Path(opts.out)
    result = resample.build_lr_dataset(
        dataset,
        opts.images,
        opts.factor,
        out_dir,
        kernel_a=opts.kernel_a,
        workers=opts.workers,
    )
    manifest = RunManifest(
        command="downsample",
        config={"factor": opts.factor, "kernel_a": opts.kernel_a},
        input_hashes={
            "annotations": _hash_input(opts.annotations),
            "images": _hash_input(opts.images),
        },
        outputs=[
            out_dir / "annotations.json",
            out_dir / "manifest.json",
            out_dir / "images",
        ],
    )
    manifest.write(out_dir / MANIFEST_NAME)
    kept = len(result.manifest)
    print(
        f"downsampled {kept}/{len(dataset.images)} images by {opts.factor} "
        f"-> {out_dir}"
    )
    if result.failures:
        print(f"{len(result.failures)} images failed; see log", file=sys.stderr)
    return EXIT_OK


# --- upscale ----------------------------------------------------------------

UPSCALE_DEFAULTS = {
    "scale": 4,
    "backend": "builtin",
    "verbose": False,
}


def _configure_upscale(p):
    p.add_argument("--images", required=True, help="directory of input images")
    p.add_argument("--out", required=True, help="output image directory")
    p.add_argument(
        "--scale",
        type=int,
        default=argparse.SUPPRESS,
        help="integer upscale factor (default 4)",
    )
    p.add_argument(
        "--backend",
        default=argparse.SUPPRESS,
        help="'builtin' bicubic or an executable command (default builtin)",
    )


def _run_upscale(opts) -> int:
    backend = _backend_from_option(opts.backend, "upscaler")
    out_dir = Path(opts.out)
    backend.upscale(opts.images, out_dir, opts.scale)
    manifest = RunManifest(
        command="upscale",
        config={"scale": opts.scale},
        input_hashes={"images": _hash_input(opts.images)},
        backends={"upscaler": {"name": backend.name, "version": backend.version}},
        outputs=[out_dir],
    )
    manifest.write(out_dir / MANIFEST_NAME)
    n = len(backends.image_files(out_dir))
    print(f"upscaled {n} images x{opts.scale} -> {out_dir}")
    return EXIT_OK


# --- eval -------------------------------------------------------------------

EVAL_DEFAULTS = {
    "mode": "keypoint",
    "pin_annotations": None,
    "max_detections": 20,
    "label": None,
    "report": None,
    "table": None,
    "subgroup_width": None,
    "subgroup_count": 24,
    "subgroup_metric": "ap",
    "csv": None,
    "verbose": False,
}


def _configure_eval(p):
    p.add_argument("--annotations", required=True, help="ground-truth COCO JSON")
    p.add_argument("--results", required=True, help="COCO results JSON to score")
    p.add_argument(
        "--mode",
        choices=("detection", "keypoint"),
        default=argparse.SUPPRESS,
        help="score boxes by IoU or keypoints by OKS (default keypoint)",
    )
    p.add_argument(
        "--pin-annotations",
        dest="pin_annotations",
        default=argparse.SUPPRESS,
        help="reference COCO JSON whose areas pin size and subgroup labels",
    )
    p.add_argument(
        "--max-detections",
        dest="max_detections",
        type=int,
        default=argparse.SUPPRESS,
        help="per-image detection cap (default 20)",
    )
    p.add_argument(
        "--label",
        default=argparse.SUPPRESS,
        help="row label in the text table (default: results filename)",
    )
    p.add_argument(
        "--report", default=argparse.SUPPRESS, help="write the report JSON here"
    )
    p.add_argument(
        "--table", default=argparse.SUPPRESS, help="write the text table here"
    )
    p.add_argument(
        "--subgroup-width",
        dest="subgroup_width",
        type=float,
        default=argparse.SUPPRESS,
        help="area bin width for per-subgroup metrics (e.g. 500 or 125)",
    )
    p.add_argument(
        "--subgroup-count",
        dest="subgroup_count",
        type=int,
        default=argparse.SUPPRESS,
        help="number of area bins (default 24)",
    )
    p.add_argument(
        "--subgroup-metric",
        dest="subgroup_metric",
        choices=("ap", "ar", "detection_rate"),
        default=argparse.SUPPRESS,
        help="metric tabulated per subgroup (default ap)",
    )
    p.add_argument(
        "--csv", default=argparse.SUPPRESS, help="write the per-subgroup CSV here"
    )


def _evaluate_results(annotations_path, results_path, opts):
    """Shared scoring path for cmd_eval and cmd_subgroups."""
    dataset = coco.parse_dataset(annotations_path)
    records = coco.parse_results(
        results_path, known_image_ids=dataset.images_by_id.keys()
    )
    config = metrics.EvalConfig(mode=opts.mode, max_detections=opts.max_detections)
    tables = metrics.build_match_tables(dataset, records, config)
    return dataset, records, config, tables


def _run_eval(opts) -> int:
    dataset, records, config, tables = _evaluate_results(
        opts.annotations, opts.results, opts
    )

    labels = None
    pinned_sizes = None
    if opts.pin_annotations or opts.subgroup_width:
        reference = (
            coco.parse_dataset(opts.pin_annotations)
            if opts.pin_annotations
            else dataset
        )
        spec = subgroups.SubgroupSpec(
            bin_width=opts.subgroup_width or 500.0,
            bin_count=opts.subgroup_count,
        )
        labels = subgroups.assign_subgroups(reference, spec, config)
        if opts.pin_annotations:
            pinned_sizes = labels.size_of

    report = metrics.average_precision(tables, config, pinned_sizes=pinned_sizes)

    if opts.subgroup_width:
        values = subgroups.per_subgroup_metrics(
            tables, labels, config, metric=opts.subgroup_metric
        )
        report.subgroups = {
            k + 1: values[k] for k in range(labels.spec.bin_count)
        }
        if opts.csv:
            subgroups.write_subgroup_csv(opts.csv, labels, baseline=values)

    label = opts.label or Path(opts.results).stem
    table_text = reports.format_metric_table([(label, report)])
    print(table_text, end="")
    if opts.table:
        Path(opts.table).write_text(table_text, encoding="utf-8")
    if opts.report:
        reports.write_report_json(report, opts.report)
        manifest = RunManifest(
            command="eval",
            config={
                "mode": opts.mode,
                "max_detections": opts.max_detections,
                "pinned": bool(pinned_sizes),
                "subgroup_width": opts.subgroup_width,
                "subgroup_metric": opts.subgroup_metric,
            },
            input_hashes={
                "annotations": _hash_input(opts.annotations),
                "results": _hash_input(opts.results),
            },
            outputs=[p for p in (opts.report, opts.table, opts.csv) if p],
        )
        manifest.write(Path(opts.report).with_suffix(".manifest.json"))
    return EXIT_OK


# --- route ------------------------------------------------------------------

ROUTE_DEFAULTS = {
    "scale": router.DEFAULT_SCALE,
    "threshold": router.DEFAULT_AREA_THRESHOLD,
    "sr_backend": "builtin",
    "workers": None,
    "no_eval": False,
    "verbose": False,
}


def _configure_route(p):
    p.add_argument("--annotations", required=True, help="ground-truth COCO JSON")
    p.add_argument("--images", required=True, help="directory of input images")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument(
        "--scale",
        type=int,
        default=argparse.SUPPRESS,
        help="SR upscale ratio r (default 4)",
    )
    p.add_argument(
        "--threshold",
        type=_parse_threshold,
        default=argparse.SUPPRESS,
        help="initial-area routing threshold in px^2, or 'inf' (default 3500)",
    )
    p.add_argument(
        "--sr-backend",
        dest="sr_backend",
        default=argparse.SUPPRESS,
        help="'builtin' bicubic or an executable command",
    )
    p.add_argument(
        "--detect-backend",
        dest="detect_backend",
        required=True,
        help="executable command for the person detector",
    )
    p.add_argument(
        "--keypoint-backend",
        dest="keypoint_backend",
        required=True,
        help="executable command for the keypoint estimator",
    )
    p.add_argument(
        "--workers", type=int, default=argparse.SUPPRESS, help="parallel image workers"
    )
    p.add_argument(
        "--no-eval",
        dest="no_eval",
        action="store_true",
        default=argparse.SUPPRESS,
        help="skip scoring the routed keypoints against the annotations",
    )


def _run_route(opts) -> int:
    dataset = coco.parse_dataset(opts.annotations)
    image_paths = _image_paths_for(dataset, opts.images)
    config = router.RouterConfig(scale=opts.scale, area_threshold=opts.threshold)
    pipeline_backends = router.PipelineBackends(
        upscaler=_backend_from_option(opts.sr_backend, "upscaler"),
        detector=_backend_from_option(opts.detect_backend, "detect-backend"),
        keypoints=_backend_from_option(opts.keypoint_backend, "keypoint-backend"),
    )
    out_dir = Path(opts.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    result = router.run_pipeline(
        image_paths,
        config,
        pipeline_backends,
        work_dir=out_dir / "work",
        workers=opts.workers,
        ledger_path=out_dir / "decisions.jsonl",
    )
    coco.write_results(result.keypoints, out_dir / "results.json")

    outputs = [out_dir / "results.json", out_dir / "decisions.jsonl"]
    if not opts.no_eval:
        eval_config = metrics.EvalConfig(mode="keypoint")
        tables = metrics.build_match_tables(dataset, result.keypoints, eval_config)
        report = metrics.average_precision(tables, eval_config)
        reports.write_report_json(report, out_dir / "report.json")
        outputs.append(out_dir / "report.json")
        print(reports.format_metric_table([("routed", report)]), end="")

    manifest = RunManifest(
        command="route",
        config={
            "scale": config.scale,
            "threshold": config.area_threshold,
            "eval": not opts.no_eval,
        },
        input_hashes={
            "annotations": _hash_input(opts.annotations),
            "images": _hash_input(opts.images),
        },
        backends={
            role: {"name": b.name, "version": b.version}
            for role, b in (
                ("upscaler", pipeline_backends.upscaler),
                ("detector", pipeline_backends.detector),
                ("keypoints", pipeline_backends.keypoints),
            )
        },
        outputs=outputs,
    )
    manifest.write(out_dir / MANIFEST_NAME)

    n_sr = sum(1 for d in result.decisions if d.branch == router.BRANCH_SR)
    print(
        f"routed {len(result.decisions)} detections "
        f"({n_sr} sr, {len(result.decisions) - n_sr} original), "
        f"{len(result.failures)} image failures -> {out_dir}"
    )
    return EXIT_OK


# --- subgroups ----------------------------------------------------------------

SUBGROUPS_DEFAULTS = {
    "mode": "keypoint",
    "metric": "ap",
    "bin_width": 500.0,
    "bin_count": 24,
    "max_detections": 20,
    "treated_annotations": None,
    "verbose": False,
}


def _configure_subgroups(p):
    p.add_argument(
        "--reference",
        required=True,
        help="COCO JSON whose areas define the subgroup labels",
    )
    p.add_argument(
        "--baseline-annotations",
        dest="baseline_annotations",
        required=True,
        help="ground truth for the baseline run",
    )
    p.add_argument(
        "--baseline-results",
        dest="baseline_results",
        required=True,
        help="results JSON for the baseline run",
    )
    p.add_argument(
        "--treated-annotations",
        dest="treated_annotations",
        default=argparse.SUPPRESS,
        help="ground truth for the treated run (default: baseline's)",
    )
    p.add_argument(
        "--treated-results",
        dest="treated_results",
        required=True,
        help="results JSON for the treated run",
    )
    p.add_argument("--csv", required=True, help="output CSV path")
    p.add_argument(
        "--mode",
        choices=("detection", "keypoint"),
        default=argparse.SUPPRESS,
        help="scoring mode (default keypoint)",
    )
    p.add_argument(
        "--metric",
        choices=("ap", "ar", "detection_rate"),
        default=argparse.SUPPRESS,
        help="per-bin metric (default ap)",
    )
    p.add_argument(
        "--bin-width",
        dest="bin_width",
        type=float,
        default=argparse.SUPPRESS,
        help="area bin width in px^2 (default 500)",
    )
    p.add_argument(
        "--bin-count",
        dest="bin_count",
        type=int,
        default=argparse.SUPPRESS,
        help="number of bins (default 24)",
    )
    p.add_argument(
        "--max-detections",
        dest="max_detections",
        type=int,
        default=argparse.SUPPRESS,
        help="per-image detection cap (default 20)",
    )


def _run_subgroups(opts) -> int:
    reference = coco.parse_dataset(opts.reference)
    spec = subgroups.SubgroupSpec(bin_width=opts.bin_width, bin_count=opts.bin_count)
    config = metrics.EvalConfig(mode=opts.mode, max_detections=opts.max_detections)
    labels = subgroups.assign_subgroups(reference, spec, config)

    def side(annotations_path, results_path):
        dataset = coco.parse_dataset(annotations_path)
        records = coco.parse_results(
            results_path, known_image_ids=dataset.images_by_id.keys()
        )
        tables = metrics.build_match_tables(dataset, records, config)
        return subgroups.per_subgroup_metrics(
            tables, labels, config, metric=opts.metric
        )

    baseline = side(opts.baseline_annotations, opts.baseline_results)
    treated = side(
        opts.treated_annotations or opts.baseline_annotations, opts.treated_results
    )
    subgroups.write_subgroup_csv(opts.csv, labels, baseline=baseline, treated=treated)
    manifest = RunManifest(
        command="subgroups",
        config={
            "mode": opts.mode,
            "metric": opts.metric,
            "bin_width": opts.bin_width,
            "bin_count": opts.bin_count,
        },
        input_hashes={
            "reference": _hash_input(opts.reference),
            "baseline_results": _hash_input(opts.baseline_results),
            "treated_results": _hash_input(opts.treated_results),
        },
        outputs=[opts.csv],
    )
    manifest.write(Path(opts.csv).with_suffix(".manifest.json"))
    print(f"wrote {spec.bin_count}-bin {opts.metric} comparison -> {opts.csv}")
    return EXIT_OK


# --- report -------------------------------------------------------------------

REPORT_DEFAULTS = {
    "out": None,
    "digits": 3,
    "verbose": False,
}


def _configure_report(p):
    p.add_argument(
        "--add",
        action="append",
        required=True,
        metavar="LABEL=REPORT_JSON",
        help="table row: label and report JSON path (repeatable)",
    )
    p.add_argument(
        "--out", default=argparse.SUPPRESS, help="write the table here as well"
    )
    p.add_argument(
        "--digits",
        type=int,
        default=argparse.SUPPRESS,
        help="decimal places per cell (default 3)",
    )


def _run_report(opts) -> int:
    rows = []
    for item in opts.add:
        label, sep, path = item.partition("=")
        if not sep or not label or not path:
            raise UsageError(f"--add expects LABEL=PATH, got {item!r}")
        loaded = reports.read_report_json(path)
        if not isinstance(loaded, metrics.MetricReport):
            raise coco.ValidationError(f"{path}: not a single-run report")
        rows.append((label, loaded))
    text = reports.format_metric_table(rows, digits=opts.digits)
    print(text, end="")
    if opts.out:
        Path(opts.out).write_text(text, encoding="utf-8")
    return EXIT_OK


# --- entry point ---------------------------------------------------------------

_COMMANDS = (
    (
        "downsample",
        "build a bicubicly downscaled dataset with rescaled annotations",
        _configure_downsample,
        _run_downsample,
        DOWNSAMPLE_DEFAULTS,
    ),
    (
        "upscale",
        "super-resolve a directory of images",
        _configure_upscale,
        _run_upscale,
        UPSCALE_DEFAULTS,
    ),
    (
        "eval",
        "score a results file with AP/AR and optional subgroup breakdown",
        _configure_eval,
        _run_eval,
        EVAL_DEFAULTS,
    ),
    (
        "route",
        "run the threshold-routed SR pose pipeline",
        _configure_route,
        _run_route,
        ROUTE_DEFAULTS,
    ),
    (
        "subgroups",
        "compare two runs per segmentation-area subgroup",
        _configure_subgroups,
        _run_subgroups,
        SUBGROUPS_DEFAULTS,
    ),
    (
        "report",
        "merge report JSONs into one aligned text table",
        _configure_report,
        _run_report,
        REPORT_DEFAULTS,
    ),
)


def build_parser() -> _Parser:
    parser = _Parser(
        prog="srpose",
        description=__doc__.splitlines()[0],
    )
    parser.add_argument("--version", action="version", version=f"srpose {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text, configure, runner, defaults in _COMMANDS:
        p = sub.add_parser(name, help=help_text)
        configure(p)
        _add_common(p)
        p.set_defaults(_runner=runner, _defaults=defaults)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        opts = _merge_options(args, args._defaults)
        logging.basicConfig(
            level=logging.DEBUG if opts.verbose else logging.WARNING,
            format="%(levelname)s %(name)s: %(message)s",
        )
        return args._runner(opts)
    except UsageError as exc:
        print(f"srpose: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ValueError as exc:
        print(f"srpose: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (coco.DataError, metrics.MetricError, resample.ResampleError) as exc:
        print(f"srpose: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (backends.BackendError, router.PipelineError) as exc:
        print(f"srpose: backend error: {exc}", file=sys.stderr)
        return EXIT_BACKEND


if __name__ == "__main__":
    sys.exit(main())
