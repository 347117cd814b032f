"""Command-line pipeline: synth -> train-toy -> explain -> segx / eval / segu.

Stages communicate only through interchange files (NPY, PNG, manifest),
so any stage can be replaced by an external producer.  Exit codes:
0 success, 2 argument/config error, 3 data/format error, 4 numerical
failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__, dataio, segeval, synth, tinynet
from .errors import (
    ArgumentError,
    CapabilityError,
    FormatError,
    NumericalError,
    SegxaiError,
    StateError,
    ValidationError,
)
from .masks import BinaryMask, intersect, normalize, threshold_top_fraction
from .segu import (
    CertaintyScore,
    EmptySegMaskError,
    aggregate_group_stats,
    alignment_table,
    certainty_auitc,
    certainty_iou,
    partition_by_correctness,
)
from .xai import SuperpixelGrid, grad_cam, kernel_shap, tinynet_adapter


def _write_run_metadata(out_dir: Path, subcommand: str, args: argparse.Namespace) -> None:
    config = {k: v for k, v in sorted(vars(args).items()) if k != "func" and v is not None}
    config = {k: (str(v) if isinstance(v, Path) else v) for k, v in config.items()}
    meta = {"tool": "segxai", "version": __version__, "subcommand": subcommand, "config": config}
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "run_metadata.json", "w", encoding="utf-8", newline="\n") as f:
        json.dump(meta, f, sort_keys=True, indent=2)
        f.write("\n")


def _load_split_records(manifest, split):
    records = manifest.records
    if split != "all":
        records = [r for r in records if r.split == split]
    return sorted(records, key=lambda r: r.record_id)


def _gt_label_by_image(manifest):
    gt = {}
    for rec in manifest.records:
        if rec.gt_positive:
            gt.setdefault(rec.image_id, rec.label_id)
    return gt


# ---------------------------------------------------------------------------
# Subcommands

def cmd_synth(args) -> int:
    config = synth.SynthConfig(
        n_images=args.n_images,
        width=args.width,
        height=args.height,
        n_classes=args.classes,
        noise_amplitude=args.noise,
        n_distractors=args.distractors,
        seed=args.seed,
    )
    dataset = synth.generate(config)
    out = Path(args.out)
    manifest_path = synth.write_dataset(dataset, out, seed=args.seed)
    _write_run_metadata(out, "synth", args)
    print(f"wrote {config.n_images} images and {manifest_path}")
    return 0


def cmd_train_toy(args) -> int:
    manifest = dataio.load_manifest(args.manifest)
    if manifest.mode != "multiclass":
        raise ArgumentError("train-toy supports multiclass manifests only")
    records = _load_split_records(manifest, args.split)
    if not records:
        raise ArgumentError(f"no records in split {args.split!r}")
    images = np.stack([dataio.read_image(manifest.resolve(r.image_ref)) for r in records])
    labels = np.array([r.label_id for r in records])

    net = tinynet.init(args.seed, images.shape[3], manifest.n_classes, head="softmax")
    history = tinynet.train(net, images, labels, epochs=args.epochs, lr=args.lr,
                            seed=args.seed, batch_size=args.batch_size)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    tinynet.save_checkpoint(net, out / "checkpoint.tnet")
    with open(out / "losses.txt", "w", encoding="utf-8", newline="\n") as f:
        for epoch, value in enumerate(history, start=1):
            f.write(f"epoch {epoch} loss {value:.6f}\n")
    lines = []
    for name in ("train", "val", "test"):
        recs = _load_split_records(manifest, name)
        if not recs:
            continue
        imgs = np.stack([dataio.read_image(manifest.resolve(r.image_ref)) for r in recs])
        labs = np.array([r.label_id for r in recs])
        lines.append(f"{name} accuracy {tinynet.evaluate_accuracy(net, imgs, labs):.6f}")
    with open(out / "accuracy.txt", "w", encoding="utf-8", newline="\n") as f:
        f.write("\n".join(lines) + "\n")
    _write_run_metadata(out, "train-toy", args)
    print("\n".join(lines))
    return 0


def cmd_explain(args) -> int:
    manifest = dataio.load_manifest(args.manifest)
    net = tinynet.load_checkpoint(args.checkpoint)
    if net.n_classes != manifest.n_classes:
        raise ArgumentError(
            f"checkpoint has {net.n_classes} classes, manifest {manifest.n_classes}"
        )
    adapter = tinynet_adapter(net)
    records = _load_split_records(manifest, args.split)
    gt_label = _gt_label_by_image(manifest)
    image_ids = sorted({r.image_id for r in records})
    image_ref = {r.image_id: r.image_ref for r in records}
    seg_ref = {r.image_id: r.seg_mask_ref for r in records}
    gt_ref = {r.image_id: r.gt_mask_ref for r in records}
    split_of = {r.image_id: r.split for r in records}

    out = Path(args.out)
    (out / "saliency").mkdir(parents=True, exist_ok=True)
    thresholds = np.array(manifest.thresholds)
    grid = SuperpixelGrid(args.shap_regions, args.shap_regions)

    def explain_image(image_id: str):
        image = dataio.read_image(manifest.resolve(image_ref[image_id]))
        probs = adapter.forward(image)
        if manifest.mode == "multiclass":
            targets = [int(np.argmax(probs))]
        else:
            targets = [j for j in range(net.n_classes) if probs[j] > thresholds[j]]
        saliency_refs = {}
        for j in targets:
            if args.xai == "gradcam":
                smap = grad_cam(adapter, image, j)
            else:
                smap = kernel_shap(adapter, image, grid, j,
                                   n_coalitions=args.shap_coalitions, seed=args.seed)
            ref = f"saliency/{image_id}_c{j}.npy"
            dataio.write_saliency(smap, out / ref)
            saliency_refs[j] = ref
        return probs, saliency_refs

    if args.jobs > 1:
        with ThreadPoolExecutor(max_workers=args.jobs) as pool:
            results = dict(zip(image_ids, pool.map(explain_image, image_ids)))
    else:
        results = {iid: explain_image(iid) for iid in image_ids}

    def rel(ref):
        if ref is None:
            return None
        return os.path.relpath(manifest.resolve(ref), out)

    new_records = []
    for image_id in image_ids:
        probs, saliency_refs = results[image_id]
        for j in range(net.n_classes):
            new_records.append(
                dataio.EvalRecord(
                    image_id=image_id,
                    label_id=j,
                    prob=float(probs[j]),
                    predicted=bool(probs[j] > thresholds[j]),
                    gt_positive=(gt_label.get(image_id) == j),
                    seg_mask_ref=rel(seg_ref[image_id]),
                    saliency_ref=saliency_refs.get(j),
                    gt_mask_ref=rel(gt_ref[image_id]),
                    image_ref=rel(image_ref[image_id]),
                    split=split_of[image_id],
                )
            )
    out_manifest = dataio.DatasetManifest(
        mode=manifest.mode,
        class_names=manifest.class_names,
        thresholds=manifest.thresholds,
        records=new_records,
        model_tag=manifest.model_tag,
        xai_tag=args.xai,
        base_dir=out,
    )
    dataio.save_manifest(out_manifest, out / "manifest.jsonl")
    _write_run_metadata(out, "explain", args)
    print(f"explained {len(image_ids)} images -> {out / 'manifest.jsonl'}")
    return 0


def _scored_records(manifest):
    return sorted(
        (r for r in manifest.records if r.saliency_ref is not None),
        key=lambda r: r.record_id,
    )


def cmd_segx(args) -> int:
    manifest = dataio.load_manifest(args.manifest)
    records = _scored_records(manifest)
    if not records:
        raise ArgumentError("manifest has no records with saliency maps; run explain first")
    out = Path(args.out)
    (out / "segx").mkdir(parents=True, exist_ok=True)
    (out / "overlays").mkdir(parents=True, exist_ok=True)
    for rec in records:
        smap = dataio.read_saliency(manifest.resolve(rec.saliency_ref))
        seg = dataio.read_mask(manifest.resolve(rec.seg_mask_ref))
        top = threshold_top_fraction(smap, args.top_fraction)
        segx = intersect(top, seg)
        stem = f"{rec.image_id}_c{rec.label_id}"
        dataio.write_mask(segx, out / "segx" / f"{stem}.png")
        image = dataio.read_image(manifest.resolve(rec.image_ref))
        dataio.render_overlay(image, top, segx, out / "overlays" / f"{stem}.png")
    _write_run_metadata(out, "segx", args)
    print(f"wrote {len(records)} SegX masks and overlays under {out}")
    return 0


def cmd_eval(args) -> int:
    manifest = dataio.load_manifest(args.manifest)
    records = _scored_records(manifest)
    if not records:
        raise ArgumentError("manifest has no records with saliency maps; run explain first")
    entries = []
    xai_tag = manifest.xai_tag or "unknown"
    for rec in records:
        smap = dataio.read_saliency(manifest.resolve(rec.saliency_ref))
        seg = dataio.read_mask(manifest.resolve(rec.seg_mask_ref))
        gt = dataio.read_mask(manifest.resolve(rec.gt_mask_ref)) if rec.gt_mask_ref else None
        entries.append((manifest.model_tag, xai_tag, smap, seg, gt))
    table = alignment_table(entries, p=args.top_fraction, n_samples=args.auitc_samples)
    report = dataio.ReportTable(
        name="alignment",
        columns=["dataset", "model", "xai", "n",
                 "iou_original", "iou_segx", "auitc_original", "auitc_segx"],
        rows=[
            [args.dataset_tag, row.model, row.xai, row.n,
             row.mean_iou_original, row.mean_iou_segx,
             row.mean_auitc_original, row.mean_auitc_segx]
            for row in table.rows
        ],
        footer=[f"records skipped for missing ground-truth mask: {table.skipped}"],
    )
    out = Path(args.out)
    dataio.emit_report([report], out / "eval")
    _write_run_metadata(out, "eval", args)
    print(f"alignment table over {sum(r.n for r in table.rows)} records -> {out}")
    return 0


def cmd_segu(args) -> int:
    manifest = dataio.load_manifest(args.manifest)
    mode = args.mode or manifest.mode
    records = _scored_records(manifest)
    if not records:
        raise ArgumentError("manifest has no records with saliency maps; run explain first")
    scores = []
    excluded = 0
    for rec in records:
        smap = dataio.read_saliency(manifest.resolve(rec.saliency_ref))
        seg = dataio.read_mask(manifest.resolve(rec.seg_mask_ref))
        try:
            c_iou = certainty_iou(smap, seg, p=args.top_fraction)
            c_auitc = certainty_auitc(smap, seg, n_samples=args.auitc_samples)
        except EmptySegMaskError:
            excluded += 1
            continue
        scores.append(CertaintyScore(record_id=rec.record_id, c_iou=c_iou, c_auitc=c_auitc))

    correct, incorrect = partition_by_correctness(manifest.records, mode)
    stats = aggregate_group_stats(
        scores,
        {r.record_id for r in correct},
        {r.record_id for r in incorrect},
    )
    score_table = dataio.ReportTable(
        name="scores",
        columns=["dataset", "model", "xai", "record_id", "c_iou", "c_auitc"],
        rows=[[args.dataset_tag, manifest.model_tag, manifest.xai_tag or "unknown",
               s.record_id, s.c_iou, s.c_auitc] for s in scores],
        footer=[f"records excluded for empty clinical mask: {excluded}"],
    )
    group_table = dataio.ReportTable(
        name="groups",
        columns=["dataset", "model", "xai", "group", "n",
                 "mean_c_iou", "mean_c_auitc", "std_c_iou", "std_c_auitc"],
        rows=[
            [args.dataset_tag, manifest.model_tag, manifest.xai_tag or "unknown",
             g.group, g.n,
             g.mean_c_iou if g.mean_c_iou is not None else "n/a",
             g.mean_c_auitc if g.mean_c_auitc is not None else "n/a",
             g.std_c_iou if g.std_c_iou is not None else "n/a",
             g.std_c_auitc if g.std_c_auitc is not None else "n/a"]
            for g in stats
        ],
        footer=["grouping granularity: per (image, label) record"],
    )
    out = Path(args.out)
    dataio.emit_report([score_table, group_table], out / "segu")
    _write_run_metadata(out, "segu", args)
    for g in stats:
        mean = "n/a" if g.mean_c_iou is None else f"{g.mean_c_iou:.6f}"
        print(f"{g.group}: n={g.n} mean_c_iou={mean}")
    return 0


def cmd_report(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    merged = out / "report_merged.csv"
    with open(merged, "w", encoding="utf-8", newline="\n") as dst:
        for path in args.inputs:
            path = Path(path)
            if not path.is_file():
                raise FormatError(f"report input {path} does not exist")
            dst.write(f"# {path.name}\n")
            dst.write(path.read_text(encoding="utf-8"))
    _write_run_metadata(out, "report", args)
    print(f"merged {len(args.inputs)} tables -> {merged}")
    return 0


def cmd_segloss(args) -> int:
    pred_map = dataio.read_saliency(args.pred)
    values = pred_map.values
    if values.min() < 0.0 or values.max() > 1.0:
        raise ValidationError("predicted soft mask must hold probabilities in [0, 1]")
    pred = segeval.SoftMask(values)
    gt = dataio.read_mask(args.gt)
    loss = segeval.composite_loss(pred, gt, args.lam, epsilon=args.epsilon)
    dice = segeval.dice_score(BinaryMask(values >= 0.5), gt)
    line = f"composite_loss {loss:.6f} dice@0.5 {dice:.6f} lambda {args.lam:.6f}"
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "segloss.txt", "w", encoding="utf-8", newline="\n") as f:
            f.write(line + "\n")
        _write_run_metadata(out, "segloss", args)
    print(line)
    return 0


# ---------------------------------------------------------------------------
# Parser

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="segxai", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="subcommand", required=True)

    def add_common(p, manifest=True):
        if manifest:
            p.add_argument("--manifest", required=True, help="manifest file path")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--jobs", type=int, default=1, help="worker cap for per-record work")

    p = sub.add_parser("synth", help="generate a synthetic lesion dataset + manifest")
    add_common(p, manifest=False)
    p.add_argument("--n-images", type=int, default=200)
    p.add_argument("--width", type=int, default=64)
    p.add_argument("--height", type=int, default=64)
    p.add_argument("--classes", type=int, default=2)
    p.add_argument("--noise", type=float, default=0.05)
    p.add_argument("--distractors", type=int, default=3)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train-toy", help="train the built-in tiny CNN")
    add_common(p)
    p.add_argument("--epochs", type=int, default=5)
    p.add_argument("--lr", type=float, default=0.2)
    p.add_argument("--batch-size", type=int, default=16)
    p.add_argument("--split", default="train", choices=["train", "val", "test", "all"])
    p.set_defaults(func=cmd_train_toy)

    p = sub.add_parser("explain", help="produce saliency maps over a manifest")
    add_common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--xai", default="gradcam", choices=["gradcam", "kernelshap"])
    p.add_argument("--split", default="test", choices=["train", "val", "test", "all"])
    p.add_argument("--shap-regions", type=int, default=8, metavar="R",
                   help="superpixel grid is R x R regions")
    p.add_argument("--shap-coalitions", type=int, default=2048, metavar="N")
    p.set_defaults(func=cmd_explain)

    p = sub.add_parser("segx", help="SegX masks and overlay renderings")
    add_common(p)
    p.add_argument("--top-fraction", type=float, default=0.05)
    p.set_defaults(func=cmd_segx)

    p = sub.add_parser("eval", help="original-vs-SegX alignment table")
    add_common(p)
    p.add_argument("--top-fraction", type=float, default=0.05)
    p.add_argument("--auitc-samples", type=int, default=101)
    p.add_argument("--dataset-tag", default="synthetic")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("segu", help="certainty scores and correct/incorrect group stats")
    add_common(p)
    p.add_argument("--top-fraction", type=float, default=0.05)
    p.add_argument("--auitc-samples", type=int, default=101)
    p.add_argument("--mode", choices=["multiclass", "multilabel"], default=None)
    p.add_argument("--dataset-tag", default="synthetic")
    p.set_defaults(func=cmd_segu)

    p = sub.add_parser("report", help="merge prior table outputs")
    p.add_argument("--inputs", nargs="+", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("segloss", help="composite CE+Dice evaluation of a soft mask")
    p.add_argument("--pred", required=True, help="predicted soft mask (NPY)")
    p.add_argument("--gt", required=True, help="ground-truth mask (PNG)")
    p.add_argument("--lambda", dest="lam", type=float, required=True)
    p.add_argument("--epsilon", type=float, default=1.0)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_segloss)
    return parser


def run(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ArgumentError, ValidationError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except (FormatError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 3
    except (NumericalError, StateError, CapabilityError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 4


def main() -> None:
    sys.exit(run())
