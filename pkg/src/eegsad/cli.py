"""Command-line experiment harness.

    eegsad synth --subjects 64 --patients 32 --seed 7 --out runs/cohort
    eegsad cv --manifest runs/cohort/manifest.json --model grid --classifier cnn --out runs/cv
    eegsad interp-compare --manifest ... --methods idw-nn nearest --d-max-values 2 4 6 --out runs/interp
    eegsad stride-compare --manifest ... --out runs/stride
    eegsad report runs/cv/report.json

Exit codes: 0 success, 1 usage error, 2 data error, 3 internal numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import io
import json
import logging
import os
import sys
from pathlib import Path

from .core import (CLASSIFIERS, INTERP_METHODS, MODELS, ConfigError, DataError, EegsadError, LayoutError,
                   NumericalError, PipelineConfig, default_layout, fingerprint, load_layout)

log = logging.getLogger("eegsad")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
THREADS_ENV = "EEGSAD_THREADS"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _choice(values):
    """argparse type accepting either hyphen or underscore spellings."""
    def convert(s: str) -> str:
        v = s.replace("-", "_")
        if v not in values:
            raise argparse.ArgumentTypeError(f"invalid choice {s!r} (choose from {', '.join(values)})")
        return v
    return convert


_PIPELINE_HELP = {
    "window_size": "window length in samples",
    "window_stride": "window shift in samples",
    "wavelet": "'haar' or 'dbN'",
    "wpt_depth": "wavelet packet depth",
    "model": "feature model",
    "interp_method": "grid interpolation method",
    "d_max": "IDW neighbourhood radius in pixels",
    "subject_threshold": "fraction of positive windows that marks a patient",
}


def _add_pipeline_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("pipeline")
    for f in dataclasses.fields(PipelineConfig):
        flag = "--" + f.name.replace("_", "-")
        kw: dict = {"dest": f.name, "default": None, "help": _PIPELINE_HELP.get(f.name)}
        if f.name == "model":
            kw["type"] = _choice(MODELS)
        elif f.name == "interp_method":
            kw["type"] = _choice(INTERP_METHODS)
            g.add_argument(flag, "--interp", **kw)
            continue
        elif f.name == "classifier":
            kw["type"] = _choice(CLASSIFIERS)
        elif f.name == "svm_c":
            kw.update(type=float, nargs="+")
        elif f.name == "svm_gamma":
            kw["type"] = float
        elif f.name in ("wavelet", "cnn_dtype"):
            kw["type"] = str
        else:
            kw["type"] = type(f.default)
        g.add_argument(flag, **kw)


def _pipeline_config(args) -> PipelineConfig:
    base = {}
    if getattr(args, "config", None):
        doc = json.loads(Path(args.config).read_text())
        base = doc.get("pipeline", doc)
    overrides = {f.name: getattr(args, f.name) for f in dataclasses.fields(PipelineConfig)
                 if getattr(args, f.name, None) is not None}
    return PipelineConfig.from_dict({**base, **overrides})


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="eegsad", description="EEG band-energy classification experiments")
    parser.add_argument("--log-level", default="WARNING")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser, required=True)

    def common(p, manifest=True):
        p.add_argument("--out", required=True, type=Path, help="output directory")
        p.add_argument("--layout", type=Path, help="electrode layout file (default: bundled 34-site layout)")
        if manifest:
            p.add_argument("--manifest", required=True, type=Path)
            p.add_argument("--config", type=Path, help="resolved config JSON to start from")
            _add_pipeline_flags(p)

    p = sub.add_parser("synth", help="write a seeded synthetic cohort")
    common(p, manifest=False)
    p.add_argument("--subjects", type=int, default=64)
    p.add_argument("--patients", type=int, default=32)
    p.add_argument("--duration", type=float, default=120.0, help="seconds per subject")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--effect-band", default="alpha")
    p.add_argument("--effect-electrodes", nargs="+", default=None)
    p.add_argument("--effect-ratio", type=float, default=3.0)

    p = sub.add_parser("featurize", help="compute and cache band energies")
    common(p)
    p.add_argument("--dump", action="store_true", help="also write a per-window CSV feature dump")

    p = sub.add_parser("cv", help="stratified subject-level cross-validation")
    common(p)

    p = sub.add_parser("interp-compare", help="compare interpolation methods and d_max values")
    common(p)
    p.add_argument("--methods", nargs="*", type=_choice(INTERP_METHODS), default=list(INTERP_METHODS))
    p.add_argument("--d-max-values", "--dmax", dest="d_max_values", nargs="+", type=float, default=None)

    p = sub.add_parser("stride-compare", help="compare window strides N/4, N/2, N, 3N/2")
    common(p)

    p = sub.add_parser("report", help="print the metric table of one or more reports")
    p.add_argument("reports", nargs="+", type=Path)
    p.add_argument("--out", type=Path, help="also write the table as CSV here")
    return parser


# --------------------------------------------------------------------------

def _layout(args):
    return load_layout(args.layout) if args.layout else default_layout()


def _write_json(path: Path, obj) -> None:
    from .eval import atomic_write
    atomic_write(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _resolved(args, cfg: PipelineConfig | None, **extra) -> dict:
    doc = {"command": args.command, **extra}
    if cfg is not None:
        doc["pipeline"] = cfg.to_dict()
        doc["fingerprint"] = cfg.fingerprint()
    if getattr(args, "manifest", None):
        doc["manifest"] = str(args.manifest)
    if getattr(args, "layout", None):
        doc["layout"] = str(args.layout)
    return doc


class FeatureCache:
    """Band energies for a manifest, stored under <out>/cache and reused when
    the featurization settings and manifest bytes are unchanged."""

    def __init__(self, args, layout):
        self.manifest = Path(args.manifest)
        self.root = args.out / "cache"
        self.layout = layout
        self._recordings = None
        self._manifest_hash = hashlib.sha256(self.manifest.read_bytes()).hexdigest()[:16]

    def path(self, cfg: PipelineConfig) -> Path:
        key = fingerprint({"features": cfg.feature_key(), "manifest": self._manifest_hash,
                           "manifest_path": str(self.manifest.resolve())})
        return self.root / f"features-{key}.npz"

    def __call__(self, cfg: PipelineConfig, *_):
        from .eval import featurize_cohort, load_features, save_features
        from .ingest import load_cohort

        cache = self.path(cfg)
        if cache.exists():
            log.info("using cached features %s", cache)
            return load_features(cache)
        if self._recordings is None:
            self._recordings = load_cohort(self.manifest, self.layout)
        table = featurize_cohort(self._recordings, cfg)
        cache.parent.mkdir(parents=True, exist_ok=True)
        save_features(cache, table)
        return table


def _features(args, cfg: PipelineConfig, layout):
    return FeatureCache(args, layout)(cfg)


def cmd_synth(args) -> int:
    from .ingest import DEFAULT_EFFECT_ELECTRODES, CohortSpec, Effect, generate_synthetic_cohort, write_cohort

    layout = _layout(args)
    effect = Effect(args.effect_band, tuple(args.effect_electrodes or DEFAULT_EFFECT_ELECTRODES), args.effect_ratio)
    spec = CohortSpec(n_subjects=args.subjects, n_patients=args.patients, duration_s=args.duration,
                      effect=effect, seed=args.seed)
    spec.validate(layout)
    recordings = generate_synthetic_cohort(spec, layout)
    args.out.mkdir(parents=True, exist_ok=True)
    write_cohort(args.out, recordings)
    _write_json(args.out / "config.json", _resolved(args, None, cohort=spec.to_dict()))
    n_pat = sum(r.label for r in recordings)
    print(f"wrote {len(recordings)} subjects ({n_pat} patients, {len(recordings) - n_pat} controls) "
          f"to {args.out / 'manifest.json'}")
    return EXIT_OK


def cmd_featurize(args) -> int:
    from .dsp import BandEnergyMatrix, write_feature_dump

    cfg = _pipeline_config(args)
    layout = _layout(args)
    table = _features(args, cfg, layout)
    _write_json(args.out / "config.json", _resolved(args, cfg))
    if args.dump:
        mats = [BandEnergyMatrix(m, sid, table.labels[sid], i)
                for sid, e in table.energies.items() for i, m in enumerate(e)]
        write_feature_dump(args.out / "features.csv", mats)
    n = sum(len(e) for e in table.energies.values())
    print(f"featurized {len(table.energies)} subjects, {n} windows")
    return EXIT_OK


def cmd_cv(args) -> int:
    from .eval import run_experiment, write_report

    cfg = _pipeline_config(args)
    layout = _layout(args)
    table = _features(args, cfg, layout)
    report = run_experiment(table, cfg, layout)
    args.out.mkdir(parents=True, exist_ok=True)
    _write_json(args.out / "config.json", _resolved(args, cfg))
    rpath, _ = write_report(args.out, report)
    p = report["pooled"]
    print(f"{cfg.model}/{cfg.classifier}: pooled accuracy {p['accuracy']:.4f} "
          f"(tp={p['tp']} fn={p['fn']} fp={p['fp']} tn={p['tn']}) -> {rpath}")
    return EXIT_OK


def _rows_csv(rows: list[dict], columns: list[str]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow(["" if r.get(c) is None else r.get(c) for c in columns])
    return buf.getvalue()


_TABLE_COLUMNS = ["model", "classifier", "interp_method", "d_max", "window_stride", "accuracy", "accuracy_percent"]


def cmd_interp_compare(args) -> int:
    from .eval import atomic_write, compare_interpolation

    if not args.methods:
        raise UsageError("interp-compare: at least one method is required")
    cfg = _pipeline_config(args).replace(model="grid")
    layout = _layout(args)
    table = _features(args, cfg, layout)
    d_values = args.d_max_values or [cfg.d_max]
    rows = compare_interpolation(table, cfg, args.methods, d_values, layout)
    args.out.mkdir(parents=True, exist_ok=True)
    _write_json(args.out / "config.json", _resolved(args, cfg, methods=args.methods, d_max_values=d_values))
    _write_json(args.out / "interp_compare.json", {"fingerprint": cfg.fingerprint(), "rows": rows})
    atomic_write(args.out / "interp_compare.csv", _rows_csv(rows, _TABLE_COLUMNS))
    _print_rows(rows)
    return EXIT_OK


def cmd_stride_compare(args) -> int:
    from .eval import atomic_write, compare_strides

    cfg = _pipeline_config(args)
    layout = _layout(args)
    cache = FeatureCache(args, layout)
    rows = compare_strides([], cfg, layout, featurize=lambda _recs, c: cache(c))
    args.out.mkdir(parents=True, exist_ok=True)
    _write_json(args.out / "config.json", _resolved(args, cfg))
    _write_json(args.out / "stride_compare.json", {"fingerprint": cfg.fingerprint(), "rows": rows})
    atomic_write(args.out / "stride_compare.csv", _rows_csv(rows, _TABLE_COLUMNS + ["n_windows"]))
    _print_rows(rows)
    return EXIT_OK


def _print_rows(rows: list[dict]) -> None:
    print(f"{'model':8} {'classifier':10} {'interp':20} {'d_max':>6} {'stride':>7} {'accuracy':>9}")
    for r in rows:
        d = "" if r.get("d_max") is None else f"{r['d_max']:g}"
        print(f"{r['model']:8} {r['classifier']:10} {r.get('interp_method') or '-':20} {d:>6} "
              f"{r['window_stride']:>7} {r['accuracy']:>9.4f}")


def cmd_report(args) -> int:
    rows = []
    for path in args.reports:
        try:
            doc = json.loads(Path(path).read_text())
        except (OSError, ValueError) as exc:
            raise DataError(f"cannot read report {path}: {exc}") from exc
        rows += doc.get("table") or doc.get("rows") or []
    if not rows:
        raise DataError("no metric rows found in the given reports")
    _print_rows(rows)
    if args.out:
        from .eval import atomic_write
        atomic_write(args.out, _rows_csv(rows, _TABLE_COLUMNS))
    return EXIT_OK


COMMANDS = {"synth": cmd_synth, "featurize": cmd_featurize, "cv": cmd_cv, "interp-compare": cmd_interp_compare,
            "stride-compare": cmd_stride_compare, "report": cmd_report}


def _limit_threads():
    n = os.environ.get(THREADS_ENV)
    if not n:
        return None
    from threadpoolctl import threadpool_limits
    return threadpool_limits(limits=int(n))


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    logging.basicConfig(level=args.log_level.upper(), format="%(levelname)s %(name)s: %(message)s")
    _limit_threads()
    try:
        return COMMANDS[args.command](args)
    except (UsageError, ConfigError) as exc:
        print(f"eegsad {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, LayoutError, OSError) as exc:
        print(f"eegsad {args.command}: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericalError, EegsadError, FloatingPointError) as exc:
        print(f"eegsad {args.command}: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


def main_entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    main_entry()
