"""``ilseg`` command line: phantoms, likelihood models, training, inference and comparisons.

Every subcommand writes into a run directory (``--out``) that holds a ``run.json``
manifest with the config snapshot, seeds, inputs and outputs (with sha256).
Run directories are append-only; ``--force`` allows overwriting.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import math
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__, ildist, metrics, trainer
from .errors import ConfigError, DataError, NumericalError
from .phantom import PhantomSpec, generate_dataset
from .tensornet.checkpoint import load_checkpoint
from .volgrid import MaskVolume, Volume, read_svol, write_svol

log = logging.getLogger("ilseg")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERICAL = 0, 2, 3, 4
RUN_MANIFEST = "run.json"


# --------------------------------------------------------------------------- run directories


def sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


class RunDir:
    """A run directory and the manifest describing it."""

    def __init__(self, path, command, argv, force=False):
        self.path = Path(path)
        if (self.path / RUN_MANIFEST).exists() and not force:
            raise ConfigError(f"{self.path} already holds a run; choose a new --out or pass --force")
        self.path.mkdir(parents=True, exist_ok=True)
        self.manifest = {
            "command": command,
            "argv": list(argv),
            "version": __version__,
            "config": None,
            "seeds": {},
            "inputs": {},
            "outputs": {},
            "started": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
        }

    def file(self, name) -> Path:
        p = self.path / name
        p.parent.mkdir(parents=True, exist_ok=True)
        return p

    def add_input(self, key, path):
        path = Path(path)
        entry = {"path": str(path.resolve())}
        if path.is_file():
            entry["sha256"] = sha256(path)
        self.manifest["inputs"][key] = entry

    def add_output(self, path):
        path = Path(path)
        rel = path.resolve().relative_to(self.path.resolve()).as_posix()
        self.manifest["outputs"][rel] = {"sha256": sha256(path), "bytes": path.stat().st_size}

    def write_text(self, name, text) -> Path:
        p = self.file(name)
        p.write_text(text)
        self.add_output(p)
        return p

    def finish(self, status="ok", **extra):
        self.manifest["finished"] = time.strftime("%Y-%m-%dT%H:%M:%S%z")
        self.manifest["status"] = status
        self.manifest.update(extra)
        (self.path / RUN_MANIFEST).write_text(json.dumps(self.manifest, indent=1, sort_keys=True))


# --------------------------------------------------------------------------- config helpers


PRESETS = {"default": trainer.ExperimentConfig, "desk": trainer.ExperimentConfig.desk,
           "full": trainer.ExperimentConfig.full}


def load_config(args, keys=("seed", "precision", "steps")) -> trainer.ExperimentConfig:
    overrides = {}
    if getattr(args, "config", None):
        try:
            overrides = json.loads(Path(args.config).read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{args.config}: {exc}") from exc
        if not isinstance(overrides, dict):
            raise ConfigError("config file must hold a JSON object")
    for key in keys:
        value = getattr(args, key, None)
        if value is not None:
            overrides[key] = value
    if getattr(args, "data", None):
        overrides["data"] = str(args.data)
    try:
        base = PRESETS[getattr(args, "preset", "default")]
        return base(**overrides)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def _manifest_path(cfg) -> Path:
    if not cfg.data:
        raise ConfigError("no dataset given; pass --data or set 'data' in the config")
    p = Path(cfg.data)
    if p.is_dir():
        p = p / "manifest.json"
    if not p.is_file():
        raise DataError(f"dataset manifest {p} not found")
    return p


def _load_dataset(cfg, run):
    path = _manifest_path(cfg)
    run.add_input("manifest", path)
    return trainer.load_cases(path)


def _fold_cases(cfg, cases, fold):
    split = trainer.make_folds([c.case_id for c in cases], cfg.folds, cfg.seed)
    if fold is None:
        return cases, split
    if not 0 <= fold < cfg.folds:
        raise ConfigError(f"fold {fold} outside 0..{cfg.folds - 1}")
    keep = set(split.training(fold))
    return [c for c in cases if c.case_id in keep], split


def _set_threads(n):
    if n is None:
        return
    if n < 1:
        raise ConfigError("--threads must be >= 1")
    from threadpoolctl import threadpool_limits

    threadpool_limits(n)


# --------------------------------------------------------------------------- subcommands


def cmd_gen_phantoms(args, run):
    spec = PhantomSpec()
    if args.spec:
        run.add_input("spec", args.spec)
        try:
            spec = PhantomSpec.from_dict(json.loads(Path(args.spec).read_text()))
        except (OSError, json.JSONDecodeError, TypeError, ValueError) as exc:
            raise ConfigError(f"bad phantom spec {args.spec}: {exc}") from exc
    if args.seed is not None:
        spec = replace(spec, seed=args.seed)
    if args.n < 1:
        raise ConfigError("--n must be >= 1")
    manifest = generate_dataset(spec, args.n, run.path)
    for entry in manifest["cases"]:
        run.add_output(run.path / entry["volume"])
        run.add_output(run.path / entry["mask"])
    run.add_output(run.path / "manifest.json")
    run.manifest["config"] = spec.to_dict()
    run.manifest["seeds"] = {"cases": [c["seed"] for c in manifest["cases"]]}


def _histogram_csv(values):
    lo, hi = math.floor(values.min()), math.floor(values.max()) + 1
    counts, edges = np.histogram(values, bins=np.arange(lo, hi + 1, 1.0))
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["bin_left", "bin_right", "count"])
    for a, b, c in zip(edges[:-1], edges[1:], counts):
        w.writerow([f"{a:g}", f"{b:g}", int(c)])
    return buf.getvalue()


def _curve_csv(model, spacing=1.0):
    grid, values = ildist.curve_table(model, spacing)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["intensity", "likelihood"])
    for x, y in zip(grid, values):
        w.writerow([f"{x:.6f}", f"{y:.9f}"])
    return buf.getvalue()


def _harvest(cfg, cases):
    values = [c.smooth(cfg.diffusion).data[c.mask.data.astype(bool)].astype(np.float64) for c in cases]
    values = [v for v in values if v.size]
    if not values:
        raise DataError("no foreground voxels in the selected cases")
    return ildist.IntensitySample(np.concatenate(values), len(values))


def cmd_build_likelihood(args, run):
    cfg = load_config(args)
    cases, _ = _fold_cases(cfg, _load_dataset(cfg, run), args.fold)
    sample = _harvest(cfg, cases)
    model = ildist.fit_kde(sample, args.bin_width)
    if args.shift:
        model = ildist.shifted(model, args.shift)
    path = run.file("model.json")
    model.save(path)
    run.add_output(path)
    run.write_text("intensities.csv", _histogram_csv(sample.values))
    run.write_text("likelihood.csv", _curve_csv(model))
    run.manifest["config"] = cfg.to_dict()
    run.manifest["seeds"] = {"folds": cfg.seed}
    run.manifest["model"] = {"bandwidth": model.bandwidth, "samples": int(sample.values.size),
                             "cases": [c.case_id for c in cases]}


def cmd_train(args, run):
    cfg = load_config(args, ("seed", "precision", "steps", "variant"))
    if cfg.variant not in trainer.TRAINABLE:
        raise ConfigError(f"variant {cfg.variant!r} is not trained directly; train {cfg.spec.trains_as!r}")
    fold = args.fold if args.fold is not None else 0
    train_cases, split = _fold_cases(cfg, _load_dataset(cfg, run), fold)
    model = trainer.resolve_likelihood(cfg, train_cases)
    if cfg.likelihood != trainer.FIT_PER_FOLD:
        run.add_input("likelihood", cfg.likelihood)
    run.manifest["config"] = cfg.to_dict()
    init_seed, _ = trainer._fold_seeds(cfg.seed, fold)
    run.manifest["seeds"] = {"experiment": cfg.seed, "fold": fold, "init": init_seed}
    run.manifest["split"] = {"train": split.training(fold), "validation": split.validation(fold)}

    def progress(step, loss):
        if step % 100 == 0 or step == cfg.steps - 1:
            log.info("step %d loss %.5f (seg %.5f il %.5f)", step, loss.total, loss.seg_component, loss.il_component)

    result = trainer.train_variant(cfg, train_cases, model, fold, progress)
    outputs = trainer.save_training(result, cfg, run.path, fold, model)
    for p in outputs.values():
        run.add_output(p)


def _checkpoint_config(path, args) -> trainer.ExperimentConfig:
    _, _, extra = load_checkpoint(path)
    base = dict(extra.get("experiment", {}))
    if getattr(args, "config", None):
        base.update(json.loads(Path(args.config).read_text()))
    if args.variant:
        trained = base.get("variant")
        base["variant"] = args.variant
        spec = trainer.VARIANT_SPECS.get(args.variant)
        if spec is not None and trained and spec.trains_as != trainer.VARIANT_SPECS[trained].trains_as:
            raise ConfigError(f"checkpoint was trained as {trained!r}; it cannot serve variant {args.variant!r}")
    if args.precision:
        base["precision"] = args.precision
    return trainer.ExperimentConfig.from_dict(base)


def _model_for(cfg, args, run, ckpt_dir):
    if not (cfg.spec.il_input or cfg.spec.post_multiply):
        return None
    path = Path(args.model) if args.model else None
    if path is None:
        found = sorted(Path(ckpt_dir).glob("likelihood_fold*.json"))
        if len(found) != 1:
            raise ConfigError(f"variant {cfg.variant} needs --model (likelihood model JSON)")
        path = found[0]
    run.add_input("likelihood", path)
    try:
        return ildist.LikelihoodModel.load(path)
    except (OSError, ValueError, KeyError) as exc:
        raise ConfigError(f"cannot load likelihood model {path}: {exc}") from exc


def cmd_predict(args, run):
    ckpt = Path(args.ckpt)
    if not ckpt.is_file():
        raise DataError(f"checkpoint {ckpt} not found")
    run.add_input("checkpoint", ckpt)
    cfg = _checkpoint_config(ckpt, args)
    model = _model_for(cfg, args, run, ckpt.parent)
    inputs = [Path(p) for p in args.inputs]
    for i, path in enumerate(inputs):
        run.add_input(f"volume{i}", path)
        vol = read_svol(path)
        if not isinstance(vol, Volume):
            raise DataError(f"{path} is not an intensity volume")
        prob = trainer.predict(ckpt, vol, cfg, model)
        stem = path.name[: -len(".svol")] if path.name.endswith(".svol") else path.stem
        p_path, m_path = run.file(f"{stem}_prob.svol"), run.file(f"{stem}_pred.svol")
        write_svol(prob, p_path)
        write_svol(trainer.binarize(prob, cfg.threshold), m_path)
        run.add_output(p_path)
        run.add_output(m_path)
    run.manifest["config"] = cfg.to_dict()


def _write_reports(run, reports, reference):
    rows = metrics.report(reports, reference if len(reports) > 1 else None)
    run.write_text("metrics.csv", metrics.rows_to_csv(rows))
    run.write_text("metrics.md", metrics.rows_to_markdown(rows))

    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["variant", "case_id", "dice"])
    for r in reports:
        for cid, v in zip(r.case_ids, r.per_case):
            w.writerow([r.variant, cid, f"{v:.6f}"])
    run.write_text("per_case.csv", buf.getvalue())

    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["variant", "case_id", "tumor", "large", "dice"])
    for r in reports:
        for (cid, idx), v, big in zip(r.tumor_keys, r.per_tumor, r.large_mask):
            w.writerow([r.variant, cid, idx, int(big), f"{v:.6f}"])
    run.write_text("per_tumor.csv", buf.getvalue())
    return rows


def cmd_evaluate(args, run):
    cfg = load_config(args)
    cases = _load_dataset(cfg, run)
    pred_dir = Path(args.predictions)
    if not pred_dir.is_dir():
        raise DataError(f"prediction directory {pred_dir} not found")
    triples = []
    for case in cases:
        candidates = [pred_dir / f"{case.case_id}_pred.svol", pred_dir / f"{case.case_id}_volume_pred.svol",
                      pred_dir / f"{case.case_id}.svol"]
        found = next((p for p in candidates if p.is_file()), None)
        if found is None:
            if args.allow_missing:
                continue
            raise DataError(f"no prediction for case {case.case_id} in {pred_dir}")
        pred = read_svol(found)
        if not isinstance(pred, MaskVolume) or pred.shape != case.mask.shape:
            raise DataError(f"{found}: expected a mask of shape {case.mask.shape}")
        run.add_input(f"pred/{case.case_id}", found)
        triples.append((case.case_id, pred, case.mask))
    if not triples:
        raise DataError("no predictions to evaluate")
    label = args.variant or "prediction"
    report = metrics.evaluate_cases(label, triples, cfg.margin_vox, cfg.min_tumor_mm3)
    _write_reports(run, [report], None)
    run.manifest["config"] = cfg.to_dict()


def cmd_compare(args, run):
    cfg = load_config(args)
    cases = _load_dataset(cfg, run)
    variants = args.variants or list(trainer.VARIANTS)
    workers = args.workers or 1
    run.manifest["config"] = cfg.to_dict()
    run.manifest["seeds"] = {
        "experiment": cfg.seed,
        "init": {k: trainer._fold_seeds(cfg.seed, k)[0] for k in range(cfg.folds)},
    }
    reports, outcomes, split = trainer.cross_validate(cfg, cases, variants, workers)
    run.write_text("split.json", json.dumps({"folds": [list(f) for f in split.folds]}, indent=1))
    for o in outcomes:
        if o.variant == trainer.VARIANT_SPECS[o.variant].trains_as:
            buf = io.StringIO()
            w = csv.writer(buf, lineterminator="\n")
            w.writerow(["step", "total", "seg", "il"])
            for row in o.history:
                w.writerow([row[0], *(repr(float(v)) for v in row[1:])])
            run.write_text(f"losses/{o.variant}_fold{o.fold}.csv", buf.getvalue())
    reference = args.reference if args.reference in variants else None
    _write_reports(run, reports, reference)


# --------------------------------------------------------------------------- SVG plot


def likelihood_svg(model, values=None, width=640, height=400, bins=60) -> str:
    """Histogram of ``values`` (left axis, counts) overlaid with the likelihood curve (right axis)."""
    grid, curve = ildist.curve_table(model, 0.5)
    peak = float(curve.max())
    x_lo, x_hi = float(grid[0]), float(grid[-1])
    if values is not None and len(values):
        x_lo, x_hi = min(x_lo, float(np.min(values))), max(x_hi, float(np.max(values)))
        counts, edges = np.histogram(values, bins=bins, range=(x_lo, x_hi))
    else:
        counts, edges = np.histogram(model.bin_centers + model.shift, bins=bins, range=(x_lo, x_hi),
                                     weights=model.bin_weights)
    left, right, top, bottom = 70, width - 70, 40, height - 50
    c_max = max(float(counts.max()), 1.0)

    def sx(x):
        return left + (right - left) * (x - x_lo) / (x_hi - x_lo)

    def sy_count(c):
        return bottom - (bottom - top) * c / c_max

    def sy_like(v):
        return bottom - (bottom - top) * v

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">',
        '<rect x="0" y="0" width="100%" height="100%" fill="white"/>',
        '<g id="histogram" fill="#4daf4a" fill-opacity="0.6" stroke="none">',
    ]
    for a, b, c in zip(edges[:-1], edges[1:], counts):
        if c <= 0:
            continue
        y = sy_count(c)
        out.append(f'<rect x="{sx(a):.2f}" y="{y:.2f}" width="{sx(b) - sx(a):.2f}" height="{bottom - y:.2f}"/>')
    out.append("</g>")
    points = " ".join(f"{sx(x):.2f},{sy_like(v):.2f}" for x, v in zip(grid, curve))
    out.append(f'<polyline id="likelihood" fill="none" stroke="#377eb8" stroke-width="2" points="{points}"/>')

    # axes
    out.append(f'<line x1="{left}" y1="{bottom}" x2="{right}" y2="{bottom}" stroke="black"/>')
    out.append(f'<line x1="{left}" y1="{top}" x2="{left}" y2="{bottom}" stroke="#4daf4a"/>')
    out.append(f'<line x1="{right}" y1="{top}" x2="{right}" y2="{bottom}" stroke="#377eb8"/>')
    for frac in (0.0, 0.5, 1.0):
        x = x_lo + frac * (x_hi - x_lo)
        out.append(f'<text x="{sx(x):.2f}" y="{bottom + 18}" font-size="11" text-anchor="middle">{x:.0f}</text>')
        out.append(f'<text x="{left - 6}" y="{sy_count(frac * c_max) + 4:.2f}" font-size="11" '
                   f'text-anchor="end">{frac * c_max:.0f}</text>')
        out.append(f'<text x="{right + 6}" y="{sy_like(frac) + 4:.2f}" font-size="11">{frac:.1f}</text>')
    out.append(f'<text x="{(left + right) / 2}" y="{height - 12}" font-size="12" text-anchor="middle">Intensity (HU)</text>')
    out.append(f'<text id="left-axis-label" x="16" y="{(top + bottom) / 2}" font-size="12" text-anchor="middle" '
               f'transform="rotate(-90 16 {(top + bottom) / 2})">Voxel count</text>')
    out.append(f'<text id="right-axis-label" x="{width - 16}" y="{(top + bottom) / 2}" font-size="12" '
               f'text-anchor="middle" transform="rotate(90 {width - 16} {(top + bottom) / 2})">Likelihood</text>')
    arg = float(grid[int(np.argmax(curve))])
    out.append(f'<circle cx="{sx(arg):.2f}" cy="{sy_like(peak):.2f}" r="3" fill="#377eb8"/>')
    out.append(f'<text id="max-annotation" x="{sx(arg) + 6:.2f}" y="{sy_like(peak) - 6:.2f}" font-size="11" '
               f'data-value="{peak:.6f}">max = {peak:.1f} at {arg:.1f}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def cmd_plot_likelihood(args, run):
    cfg = load_config(args)
    model_path = Path(args.model)
    run.add_input("model", model_path)
    try:
        model = ildist.LikelihoodModel.load(model_path)
    except (OSError, ValueError, KeyError) as exc:
        raise ConfigError(f"cannot load likelihood model {model_path}: {exc}") from exc
    values = None
    if args.data or cfg.data:
        cases, _ = _fold_cases(cfg, _load_dataset(cfg, run), args.fold)
        values = _harvest(cfg, cases).values
    run.write_text("likelihood.svg", likelihood_svg(model, values))
    run.manifest["config"] = cfg.to_dict()


# --------------------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", required=True, help="run directory to create (append-only)")
    common.add_argument("--force", action="store_true", help="overwrite an existing run directory")
    common.add_argument("--config", help="experiment config JSON (keys of ExperimentConfig)")
    common.add_argument("--preset", choices=sorted(PRESETS), default="default",
                        help="base settings that the config file overrides (default: %(default)s)")
    common.add_argument("--seed", type=int, help="override the experiment / phantom seed")
    common.add_argument("--threads", type=int, help="BLAS threads per process")
    common.add_argument("--precision", choices=["f32", "f64"], help="network arithmetic precision")
    common.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")

    parser = argparse.ArgumentParser(prog="ilseg", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=f"ilseg {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-phantoms", parents=[common], help="write a synthetic phantom dataset")
    p.add_argument("--spec", help="phantom spec JSON (fields of PhantomSpec)")
    p.add_argument("--n", type=int, default=20, help="number of cases (default: %(default)s)")
    p.set_defaults(func=cmd_gen_phantoms)

    p = sub.add_parser("build-likelihood", parents=[common], help="fit the intensity likelihood model")
    p.add_argument("--data", help="dataset manifest (or its directory)")
    p.add_argument("--fold", type=int, help="fit on the training cases of this fold only")
    p.add_argument("--bin-width", type=float, default=1.0, help="histogram bin width in HU; 0 keeps raw samples")
    p.add_argument("--shift", type=float, default=0.0, help="translate the fitted model by this many HU")
    p.set_defaults(func=cmd_build_likelihood)

    p = sub.add_parser("train", parents=[common], help="train one variant on one fold")
    p.add_argument("--data", help="dataset manifest (or its directory)")
    p.add_argument("--fold", type=int, help="validation fold to hold out (default: 0)")
    p.add_argument("--variant", choices=trainer.TRAINABLE, help="variant to train")
    p.add_argument("--steps", type=int, help="override the number of optimizer steps")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", parents=[common], help="tiled inference with a checkpoint")
    p.add_argument("--ckpt", required=True, help="SNET checkpoint")
    p.add_argument("--in", dest="inputs", nargs="+", required=True, help="input SVOL volume(s)")
    p.add_argument("--variant", choices=trainer.VARIANTS, help="inference variant (e.g. seg_pp on a seg checkpoint)")
    p.add_argument("--model", help="likelihood model JSON for seg_pp / seg_il_in")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("evaluate", parents=[common], help="Dice report for a directory of predicted masks")
    p.add_argument("--data", help="dataset manifest (or its directory)")
    p.add_argument("--predictions", required=True, help="directory with <case>_pred.svol masks")
    p.add_argument("--variant", help="label for the report row")
    p.add_argument("--allow-missing", action="store_true", help="skip cases without a prediction")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("compare", parents=[common], help="cross-validated comparison of all variants")
    p.add_argument("--data", help="dataset manifest (or its directory)")
    p.add_argument("--variants", nargs="+", choices=trainer.VARIANTS, help="subset of variants (default: all)")
    p.add_argument("--reference", default="seg_il", help="variant the p-values are computed against")
    p.add_argument("--workers", type=int, help="parallel fold processes (default: 1)")
    p.add_argument("--steps", type=int, help="override the number of optimizer steps")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("plot-likelihood", parents=[common], help="SVG of intensity histogram and likelihood curve")
    p.add_argument("--model", required=True, help="likelihood model JSON")
    p.add_argument("--data", help="dataset whose lesion intensities form the histogram")
    p.add_argument("--fold", type=int, help="restrict the histogram to the training cases of this fold")
    p.set_defaults(func=cmd_plot_likelihood)
    return parser


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(message)s")
    run = None
    try:
        _set_threads(args.threads)
        run = RunDir(args.out, args.command, argv, args.force)
        args.func(args, run)
        run.finish()
        return EXIT_OK
    except ConfigError as exc:
        print(f"ilseg: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"ilseg: numerical failure: {exc}", file=sys.stderr)
        if run is not None:
            (run.path / "failure.json").write_text(json.dumps(exc.snapshot, indent=1, default=str))
            run.finish("numerical-failure")
        return EXIT_NUMERICAL
    except (DataError, FileNotFoundError) as exc:
        print(f"ilseg: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
