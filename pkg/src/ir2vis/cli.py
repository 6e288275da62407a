"""``ir2vis`` command line.

Subcommands: synth, preprocess, train, predict, evaluate, baseline, montage.
Errors are reported on stderr as one JSON object and mapped to exit codes:

    2 usage   3 missing file   4 checkpoint/spec mismatch
    5 invalid data or config   6 degenerate metric or divergence   1 other
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import knn
from .errors import (
    CheckpointError,
    ConfigError,
    DegenerateMaskError,
    DivergenceError,
    DimensionError,
    Ir2visError,
    ValidationError,
)
from .imagery import (
    DatasetManifest,
    ManifestRecord,
    apply_filter,
    load_manifest,
    load_pairs,
    read_image,
    save_ivt_image,
    save_manifest,
    save_png,
    synth_dataset,
    write_corpus,
)
from .metrics import SsimParams
from .reporting import MetricsReport, method_label, method_sort_key

logger = logging.getLogger("ir2vis")

EXIT_OK, EXIT_ERROR, EXIT_USAGE, EXIT_MISSING, EXIT_CHECKPOINT, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2, 3, 4, 5, 6


class CliError(Exception):
    def __init__(self, message: str, code: int = EXIT_INVALID):
        super().__init__(message)
        self.code = code


def _emit_error(kind: str, message: str, code: int) -> int:
    print(json.dumps({"error": kind, "message": message, "exit_code": code}), file=sys.stderr)
    return code


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.exit(_emit_error("usage", message, EXIT_USAGE))


# -- helpers -------------------------------------------------------------------

def _defaults_banner(quiet: bool) -> None:
    if quiet:
        return
    from .training.config import REFERENCE_DEFAULTS, UNETPP_DESK_LR

    doc = {k: {kk: list(vv) if isinstance(vv, tuple) else vv for kk, vv in v.items()}
           for k, v in REFERENCE_DEFAULTS.items()}
    doc["unetpp"]["desk_lr"] = UNETPP_DESK_LR
    doc["ssim"] = {"window": 11, "c1": "(0.01 L)^2", "c2": "(0.03 L)^2"}
    doc["knn_k"] = 3
    print("reference defaults: " + json.dumps(doc), file=sys.stderr)


def _need_file(path, what: str) -> Path:
    p = Path(path)
    if not p.exists():
        raise CliError(f"{what} not found: {p}", EXIT_MISSING)
    return p


def _int_list(text: Optional[str]):
    if text is None:
        return None
    vals = [int(v) for v in str(text).split(",") if v.strip()]
    return vals[0] if len(vals) == 1 else tuple(vals)


def _load_json_arg(text: Optional[str]) -> dict:
    if not text:
        return {}
    p = Path(text)
    if p.exists():
        return json.loads(p.read_text(encoding="utf-8"))
    if text.strip().startswith("{"):
        return json.loads(text)
    raise CliError(f"JSON file not found: {text}", EXIT_MISSING)


def _pairs_for_eval(manifest: DatasetManifest, split: Optional[str]):
    recs = manifest.by_split(split) if split else []
    if not recs:
        recs = [r for r in manifest.records if r.visible_path is not None]
    sub = DatasetManifest(recs, manifest.l_raw, manifest.root, manifest.size)
    return load_pairs(sub)


def _report_outputs(report: MetricsReport, path: Path, merge: bool) -> dict:
    from .plotting import plot_report

    if merge and path.exists():
        report = MetricsReport.read_json(path).merge(report)
    path.parent.mkdir(parents=True, exist_ok=True)
    report.write_json(path)
    csv_path = report.write_csv(path.with_suffix(".csv"))
    fig_path = plot_report(report, path.with_suffix(".png"))
    summary = {label: {"ssim": s, "rmse": r} for label, s, r in report.rows()}
    return {"report": str(path), "csv": str(csv_path), "figure": str(fig_path), "methods": summary}


def _load_model_dir(ckpt: Path, spec_arg: Optional[str] = None):
    from .models import ModelSpec, load_checkpoint, read_sidecar

    if (ckpt / "generator").is_dir():
        ckpt = ckpt / "generator"
    _need_file(ckpt / "model.json", "checkpoint sidecar")
    side = read_sidecar(ckpt)
    spec = None
    if spec_arg:
        spec = ModelSpec.from_json({**side["spec"], **_load_json_arg(spec_arg)})
    return load_checkpoint(ckpt, spec), side.get("meta", {})


# -- subcommands -----------------------------------------------------------------

def cmd_synth(args) -> dict:
    pairs = synth_dataset(args.n, args.size, args.seed, night_fraction=args.night,
                          dark_patch_fraction=args.dark_patches, patch=args.patch)
    if args.split:
        from .imagery import split_by_date

        manifest = write_corpus(pairs, args.out, args.format)
        bounds = args.split.split(",")
        manifest = split_by_date(manifest, bounds, args.gap)
        save_manifest(manifest, Path(args.out) / "manifest.json")
        counts = {s: len(manifest.by_split(s)) for s in ("train", "val", "test")}
    else:
        manifest = write_corpus(pairs, args.out, args.format)
        counts = {"unsplit": len(manifest)}
    return {"manifest": str(Path(args.out) / "manifest.json"), "pairs": len(pairs), "splits": counts}


def cmd_preprocess(args) -> dict:
    manifest = load_manifest(_need_file(args.manifest, "manifest"))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with_vis = [r for r in manifest.records if r.visible_path is not None]
    passthrough = [r for r in manifest.records if r.visible_path is None]
    sub = DatasetManifest(with_vis, manifest.l_raw, manifest.root, manifest.size)
    pairs = load_pairs(sub)
    kept, dropped = apply_filter(pairs, args.filter)
    by_id = {r.id: r for r in with_vis}
    records = []
    mask_dir = out.parent / f"{out.stem}_masked"
    n_masked = 0
    for pair in kept:
        rec = by_id[pair.id]
        if pair.mask is not None and not pair.mask.is_all_valid:
            mask_dir.mkdir(parents=True, exist_ok=True)
            vis_path = mask_dir / f"{pair.id}.ivt"
            save_ivt_image(vis_path, pair.visible, pair.mask)
            rec = ManifestRecord(rec.id, str(manifest.resolve(rec.ir_path).resolve()), str(vis_path.resolve()),
                                 rec.timestamp, rec.split)
            n_masked += 1
        records.append(rec)
    records.extend(passthrough)
    save_manifest(DatasetManifest(records, manifest.l_raw, manifest.root, manifest.size), out)
    return {"filter": args.filter, "input": len(pairs), "kept": len(kept), "dropped": len(dropped),
            "masked": n_masked, "passthrough_deploy": len(passthrough), "out": str(out)}


def _train_config(args, recipe: str):
    from .training import TrainConfig

    overrides = _load_json_arg(args.config)
    if "ssim" in overrides and isinstance(overrides["ssim"], dict):
        overrides["ssim"] = SsimParams(**overrides["ssim"])
    for key, val in (("lr", args.lr), ("epochs", _int_list(args.epochs)),
                     ("batch_size", _int_list(args.batch_size)), ("max_steps", args.max_steps),
                     ("patience", args.patience), ("ckpt_every", args.ckpt_every), ("seed", args.seed)):
        if val is not None:
            overrides[key] = val
    return TrainConfig.for_recipe(recipe, **overrides)


def cmd_train(args) -> dict:
    from .models import build_generator, build_patchgan, build_unet, build_unetpp, default_spec, save_checkpoint
    from .models.networks import ModelSpec
    from .plotting import plot_train_log
    from .training import RECIPE_FILTER, TrainLog, train_cgan, train_unet, train_unetpp

    recipe = args.recipe
    manifest = load_manifest(_need_file(args.manifest, "manifest"))
    cfg = _train_config(args, recipe)
    strategy = args.filter or RECIPE_FILTER[recipe]
    if strategy != RECIPE_FILTER[recipe]:
        logger.warning("filter %s overrides the %s default %s", strategy, recipe, RECIPE_FILTER[recipe])
    unsplit = all(r.split is None for r in manifest.records)
    if unsplit:
        logger.warning("manifest has no split labels: training on every record, no validation")
    train_pairs, _ = apply_filter(load_pairs(manifest, None if unsplit else "train"), strategy)
    val_pairs, _ = apply_filter(load_pairs(manifest, "val"), strategy) if manifest.by_split("val") else ([], [])
    if not train_pairs:
        raise ConfigError("no training pairs left after filtering")

    spec_doc = _load_json_arg(args.spec)
    d_doc = spec_doc.pop("discriminator", {})
    spec = default_spec(recipe).replace(seed=cfg.seed)
    if spec_doc:
        spec = ModelSpec.from_json({**spec.to_json(), **spec_doc})
    dtype = np.dtype(args.dtype)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    log = TrainLog(out / "trainlog.ndjson")
    meta = {"recipe": recipe, "filter": strategy, "config": cfg.to_json()}

    def ckpt_fn(epoch, models):
        for name, m in models.items():
            sub = out / f"epoch_{epoch + 1:04d}" / ("" if name == "model" else name)
            save_checkpoint(sub, m, {**meta, "epoch": epoch + 1})

    if recipe == "cgan":
        G = build_generator(spec, dtype)
        d_spec = default_spec("patchgan").replace(base_channels=spec.base_channels, seed=spec.seed + 1)
        if d_doc:
            d_spec = ModelSpec.from_json({**d_spec.to_json(), **d_doc})
        D = build_patchgan(d_spec, dtype)
        G, D, log = train_cgan(G, D, train_pairs, cfg, val_pairs or None, log, ckpt_fn)
        save_checkpoint(out / "generator", G, meta)
        save_checkpoint(out / "discriminator", D, meta)
    else:
        build = build_unet if recipe == "unet" else build_unetpp
        train = train_unet if recipe == "unet" else train_unetpp
        model, log = train(build(spec, dtype), train_pairs, cfg, val_pairs or None, log, ckpt_fn)
        save_checkpoint(out, model, meta)
    plot_train_log(log, out / "train_curve.png")
    (out / "config.json").write_text(json.dumps(meta, indent=1), encoding="utf-8")
    last = log.of_kind("epoch")[-1] if log.of_kind("epoch") else {}
    return {"recipe": recipe, "train_pairs": len(train_pairs), "val_pairs": len(val_pairs),
            "steps": log.n_steps, "last_epoch": last, "out": str(out)}


def cmd_predict(args) -> dict:
    from .training.evaluation import run_predictor

    manifest = load_manifest(_need_file(args.manifest, "manifest"))
    model, _ = _load_model_dir(_need_file(args.ckpt, "checkpoint"), args.spec)
    recs = manifest.by_split(args.split) if args.split else manifest.records
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for rec in recs:
        ir, _ = read_image(manifest.resolve(rec.ir_path), manifest.l_raw)
        pred, used = run_predictor(model, ir, args.passes, args.seed)
        save_png(out / f"{rec.id}.png", pred)
        save_ivt_image(out / f"{rec.id}.ivt", pred)
    return {"predicted": len(recs), "out": str(out), "passes": args.passes}


def _pred_array(pred_dir: Path, pair_id: str) -> np.ndarray:
    for ext in (".ivt", ".png"):
        p = pred_dir / f"{pair_id}{ext}"
        if p.exists():
            return read_image(p)[0]
    raise CliError(f"no prediction for {pair_id} in {pred_dir}", EXIT_MISSING)


def cmd_evaluate(args) -> dict:
    from .training.evaluation import evaluate, score_predictions

    manifest = load_manifest(_need_file(args.manifest, "manifest"))
    pairs = _pairs_for_eval(manifest, args.split)
    if args.filter:
        pairs, _ = apply_filter(pairs, args.filter)
    if bool(args.ckpt) == bool(args.pred):
        raise CliError("evaluate needs exactly one of --ckpt or --pred", EXIT_USAGE)
    if args.ckpt:
        model, meta = _load_model_dir(_need_file(args.ckpt, "checkpoint"), args.spec)
        label = method_label(args.label or meta.get("recipe", "model"))
        report = evaluate(model, pairs, label, passes=args.passes, seed=args.seed)
    else:
        pred_dir = _need_file(args.pred, "prediction directory")
        preds = [_pred_array(pred_dir, p.id) for p in pairs]
        label = method_label(args.label or pred_dir.name)
        report = MetricsReport({label: score_predictions(pairs, preds)})
    return _report_outputs(report, Path(args.report), args.merge)


def cmd_baseline(args) -> dict:
    from .training.evaluation import evaluate

    train_m = load_manifest(_need_file(args.train, "train manifest"))
    test_m = load_manifest(_need_file(args.test, "test manifest"))
    train_pairs = load_pairs(train_m, "train") or load_pairs(
        DatasetManifest([r for r in train_m.records if r.visible_path], train_m.l_raw, train_m.root))
    if args.filter:
        train_pairs, _ = apply_filter(train_pairs, args.filter)
    index = knn.fit(train_pairs, args.k)
    report = evaluate(index, _pairs_for_eval(test_m, "test"), method_label("knn"))
    return _report_outputs(report, Path(args.report), args.merge)


def cmd_montage(args) -> dict:
    from .plotting import save_labeled_montage, save_montage

    manifest = load_manifest(_need_file(args.manifest, "manifest"))
    methods = []
    for item in args.pred or []:
        if "=" not in item:
            raise CliError(f"--pred expects LABEL=DIR, got {item!r}", EXIT_USAGE)
        name, path = item.split("=", 1)
        methods.append((method_label(name), _need_file(path, "prediction directory")))
    methods.sort(key=lambda m: method_sort_key(m[0]))
    by_id = {r.id: r for r in manifest.records}
    if args.ids:
        ids = args.ids.split(",")
    else:
        have = [r.id for r in manifest.records
                if all(any((path / f"{r.id}{ext}").exists() for ext in (".ivt", ".png")) for _, path in methods)]
        ids = have[:2]
        if not ids:
            raise CliError("no record has a prediction in every --pred directory", EXIT_MISSING)
    missing = [i for i in ids if i not in by_id]
    if missing:
        raise CliError(f"ids not in manifest: {missing}", EXIT_INVALID)
    recs = [by_id[i] for i in ids]
    show_truth = any(r.visible_path for r in recs)
    rows = []
    for rec in recs:
        ir, _ = read_image(manifest.resolve(rec.ir_path), manifest.l_raw)
        row = [ir]
        if show_truth:
            row.append(read_image(manifest.resolve(rec.visible_path), manifest.l_raw)[0]
                       if rec.visible_path else None)
        row.extend(_pred_array(path, rec.id) for _, path in methods)
        rows.append(row)
    titles = ["IR input"] + (["Ground truth"] if show_truth else []) + [m[0] for m in methods]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    grid = save_montage(out / "montage.png", rows)
    labeled = save_labeled_montage(out / "montage_labeled.png", rows, titles, ids)
    return {"montage": str(grid), "labeled": str(labeled), "panels": titles, "rows": ids}


# -- parser ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="ir2vis", description="Infra-red to visible satellite image translation.")
    p.add_argument("--quiet", action="store_true", help="suppress the reference-defaults banner")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", help="write a synthetic IR/visible corpus")
    s.add_argument("--n", type=int, default=64)
    s.add_argument("--size", type=int, default=127)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--format", choices=("png", "ivt"), default="png")
    s.add_argument("--night", type=float, default=0.0, help="fraction of all-black visible images")
    s.add_argument("--dark-patches", type=float, default=0.0, help="fraction with one black square")
    s.add_argument("--patch", type=int, default=5, help="side of the black square")
    s.add_argument("--split", help="boundary date(s), e.g. 2019-12-31 or 2019-12-10,2019-12-20")
    s.add_argument("--gap", type=int, default=14, help="days excluded before each boundary")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("preprocess", help="apply a dark-image filter")
    s.add_argument("--manifest", required=True)
    s.add_argument("--filter", choices=("a", "b", "c"), required=True)
    s.add_argument("--out", required=True, help="filtered manifest path")
    s.set_defaults(func=cmd_preprocess)

    s = sub.add_parser("train", help="train one recipe")
    s.add_argument("--manifest", required=True)
    s.add_argument("--recipe", choices=("unet", "unetpp", "cgan"), required=True)
    s.add_argument("--filter", choices=("a", "b", "c"))
    s.add_argument("--spec", help="ModelSpec overrides: JSON file or inline JSON")
    s.add_argument("--config", help="TrainConfig overrides: JSON file or inline JSON")
    s.add_argument("--seed", type=int)
    s.add_argument("--out", required=True)
    s.add_argument("--ckpt-every", type=int)
    s.add_argument("--lr", type=float)
    s.add_argument("--epochs", help="int, or comma list for staged schedules")
    s.add_argument("--batch-size", help="int, or comma list for staged schedules")
    s.add_argument("--max-steps", type=int)
    s.add_argument("--patience", type=int)
    s.add_argument("--dtype", choices=("float32", "float64"), default="float32")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("predict", help="generate visible images (no ground truth needed)")
    s.add_argument("--manifest", required=True)
    s.add_argument("--ckpt", required=True)
    s.add_argument("--spec", help="expected ModelSpec (overrides the sidecar); must fit the stored tensors")
    s.add_argument("--out", required=True)
    s.add_argument("--split")
    s.add_argument("--passes", type=int, default=1)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_predict)

    s = sub.add_parser("evaluate", help="score a checkpoint or stored predictions")
    s.add_argument("--manifest", required=True)
    s.add_argument("--ckpt")
    s.add_argument("--spec", help="expected ModelSpec (overrides the sidecar)")
    s.add_argument("--pred", help="directory of <id>.ivt / <id>.png predictions")
    s.add_argument("--label", help="method name (knn, cgan, unet, unetpp or free text)")
    s.add_argument("--split", default="test")
    s.add_argument("--filter", choices=("a", "b", "c"))
    s.add_argument("--passes", type=int, default=1)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--report", required=True)
    s.add_argument("--merge", action="store_true", help="add to an existing report")
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("baseline", help="kNN regression baseline")
    s.add_argument("--train", required=True)
    s.add_argument("--test", required=True)
    s.add_argument("--k", type=int, default=3)
    s.add_argument("--filter", choices=("a", "b", "c"))
    s.add_argument("--report", required=True)
    s.add_argument("--merge", action="store_true")
    s.set_defaults(func=cmd_baseline)

    s = sub.add_parser("montage", help="IR | ground truth | predictions panels")
    s.add_argument("--manifest", required=True)
    s.add_argument("--pred", action="append", help="LABEL=DIR, repeatable")
    s.add_argument("--ids", help="comma-separated record ids (default: first two with predictions)")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_montage)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    _defaults_banner(args.quiet)
    try:
        result = args.func(args)
    except CliError as exc:
        return _emit_error("cli", str(exc), exc.code)
    except FileNotFoundError as exc:
        return _emit_error("missing_file", str(exc), EXIT_MISSING)
    except CheckpointError as exc:
        return _emit_error("checkpoint", str(exc), EXIT_CHECKPOINT)
    except (DegenerateMaskError, DivergenceError) as exc:
        return _emit_error(type(exc).__name__, str(exc), EXIT_RUNTIME)
    except (ValidationError, ConfigError, DimensionError) as exc:
        return _emit_error(type(exc).__name__, str(exc), EXIT_INVALID)
    except OSError as exc:
        return _emit_error("io", str(exc), EXIT_MISSING)
    except Ir2visError as exc:
        return _emit_error(type(exc).__name__, str(exc), EXIT_ERROR)
    print(json.dumps(result, default=str))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
