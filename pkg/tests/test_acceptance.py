"""Acceptance gate: one test per release criterion, each printing a verdict line."""
import json
import time
from pathlib import Path

import numpy as np
import pytest

from segxai import dataio, segeval, synth, tinynet
from segxai.errors import FormatError, ManifestError
from segxai.masks import (
    BinaryMask,
    SaliencyMap,
    auitc,
    intersect,
    iou,
    normalize,
    threshold_top_fraction,
)
from segxai.segu import EvalRecord, certainty_auitc, certainty_iou, _segx_auitc
from segxai.xai import SuperpixelGrid, exact_shapley, grad_cam, kernel_shap_attributions, tinynet_adapter

from test_cli import run_pipeline, tree_digest
from test_xai import additive_adapter


def verdict(number: int, label: str, ok: bool) -> None:
    print(f"ACCEPTANCE {number} ({label}): {'PASS' if ok else 'FAIL'}")
    assert ok, f"acceptance criterion {number} ({label}) failed"


class TestAcceptance:
    def test_criterion_1_segx_improvement(self):
        start = time.perf_counter()
        ds = synth.generate(synth.SynthConfig(n_images=200, seed=11))
        adapter = tinynet_adapter(tinynet.init(0, 1, 2))
        per_record_ok = True
        orig_auitc, segx_auitc = [], []
        for i in range(200):
            image = ds.images[i][..., None]
            j = int(np.argmax(adapter.forward(image)))
            smap = grad_cam(adapter, image, j)
            seg = gt = BinaryMask(ds.gt_masks[i])
            top = threshold_top_fraction(smap, 0.05)
            if iou(intersect(top, seg), gt) < iou(top, gt):
                per_record_ok = False
            orig_auitc.append(auitc(smap, gt))
            segx_auitc.append(_segx_auitc(smap, seg, gt, 101))
        elapsed = time.perf_counter() - start
        ok = per_record_ok and np.mean(segx_auitc) >= np.mean(orig_auitc) and elapsed < 30.0
        verdict(1, "SegX improvement on 200 records", ok)

    def test_criterion_2_segu_separation(self):
        start = time.perf_counter()
        ds = synth.generate(synth.SynthConfig(n_images=700, seed=42))
        images = ds.images[..., None]
        train_idx, _, test_idx = synth.split(700, seed=42)
        net = tinynet.init(42, 1, 2)
        tinynet.train(net, images[train_idx], ds.labels[train_idx], epochs=5, lr=0.2, seed=42)
        accuracy = tinynet.evaluate_accuracy(net, images[test_idx], ds.labels[test_idx])
        adapter = tinynet_adapter(net)
        scores = {True: ([], []), False: ([], [])}
        for i in range(700):
            j = int(np.argmax(adapter.forward(images[i])))
            smap = grad_cam(adapter, images[i], j)
            seg = BinaryMask(ds.gt_masks[i])
            ious, auitcs = scores[j == ds.labels[i]]
            ious.append(certainty_iou(smap, seg))
            auitcs.append(certainty_auitc(smap, seg))
        elapsed = time.perf_counter() - start
        ok = (
            accuracy >= 0.9
            and len(scores[True][0]) >= 10
            and len(scores[False][0]) >= 10
            and np.mean(scores[True][0]) > np.mean(scores[False][0])
            and np.mean(scores[True][1]) > np.mean(scores[False][1])
            and elapsed < 120.0
        )
        verdict(2, "SegU correct/incorrect separation", ok)

    def test_criterion_3_metric_oracles(self):
        rng = np.random.default_rng(3)
        ok = True
        for _ in range(10_000):
            a = rng.integers(0, 2, size=(3, 3)).astype(bool)
            b = rng.integers(0, 2, size=(3, 3)).astype(bool)
            inter = union = 0
            for y in range(3):
                for x in range(3):
                    inter += int(a[y, x] and b[y, x])
                    union += int(a[y, x] or b[y, x])
            expect_iou = 1.0 if union == 0 else inter / union
            total = int(a.sum()) + int(b.sum())
            expect_dice = 1.0 if total == 0 else 2.0 * inter / total
            ma, mb = BinaryMask(a), BinaryMask(b)
            if iou(ma, mb) != expect_iou or segeval.dice_score(ma, mb) != expect_dice:
                ok = False
        ramp = normalize(SaliencyMap(np.linspace(0.0, 1.0, 64 * 64).reshape(64, 64)))
        full = BinaryMask(np.ones((64, 64), dtype=bool))
        ok = ok and abs(auitc(ramp, full) - 0.5) <= 0.02
        for seed in range(5):
            vals = np.random.default_rng(seed).random((16, 16))
            smap = normalize(SaliencyMap(vals))
            ref = BinaryMask(vals > 0.6)
            ok = ok and abs(auitc(smap, ref, 101) - auitc(smap, ref, 201)) < 1e-3
        ok = ok and abs(auitc(ramp, full, 101) - auitc(ramp, full, 201)) < 1e-3
        verdict(3, "IoU/Dice/AUITC oracles", ok)

    def test_criterion_4_gradient_correctness(self):
        h = 1e-5
        worst = 0.0
        for instance in range(10):
            rng = np.random.default_rng(100 + instance)
            head = "softmax" if instance % 2 == 0 else "sigmoid"
            net = tinynet.init(instance, 1, 2, head=head)
            image = rng.random((8, 8, 1))
            target = 1 if head == "softmax" else np.array([1.0, 0.0])
            trace = tinynet.forward(net, image)

            analytic_act = tinynet.grad_activations(net, trace, 1)
            c, hh, ww = trace.a2.shape

            def logit_from_a2(a2):
                gap = np.stack([
                    a2[k].reshape(hh // 2, 2, ww // 2, 2).max(axis=(1, 3)).mean()
                    for k in range(c)
                ])
                return (net.head_w @ gap + net.head_b)[1]

            def block_gap(k, y, x):
                by, bx = (y // 2) * 2, (x // 2) * 2
                block = trace.a2[k, by:by + 2, bx:bx + 2].ravel()
                others = np.delete(block, (y - by) * 2 + (x - bx))
                return abs(trace.a2[k, y, x] - others.max())

            checked = 0
            for _ in range(100):
                if checked >= 12:
                    break
                k, y, x = rng.integers(c), rng.integers(hh), rng.integers(ww)
                if block_gap(k, y, x) <= 2 * h:
                    continue
                checked += 1
                up, dn = trace.a2.copy(), trace.a2.copy()
                up[k, y, x] += h
                dn[k, y, x] -= h
                fd = (logit_from_a2(up) - logit_from_a2(dn)) / (2 * h)
                denom = max(abs(fd), abs(analytic_act[k, y, x]), 1e-6)
                worst = max(worst, abs(analytic_act[k, y, x] - fd) / denom)

            analytic_param = np.concatenate(
                [g.ravel() for g in tinynet.loss_param_grads(net, trace, target)]
            )
            theta0 = net.flat_params()
            for i in rng.choice(theta0.size, size=40, replace=False):
                up, dn = theta0.copy(), theta0.copy()
                up[i] += h
                dn[i] -= h
                net.set_flat_params(up)
                lp = tinynet.loss(net, tinynet.forward(net, image), target)
                net.set_flat_params(dn)
                lm = tinynet.loss(net, tinynet.forward(net, image), target)
                net.set_flat_params(theta0)
                fd = (lp - lm) / (2 * h)
                denom = max(abs(fd), abs(analytic_param[i]), 1e-6)
                worst = max(worst, abs(analytic_param[i] - fd) / denom)
        verdict(4, f"finite-difference gradients (worst rel err {worst:.2e})", worst < 1e-5)

    def test_criterion_5_shapley_correctness(self):
        grid = SuperpixelGrid(3, 3)
        net = tinynet.init(21, 1, 2)
        adapter = tinynet_adapter(net)
        image = np.random.default_rng(21).random((12, 12, 1))
        phi = kernel_shap_attributions(adapter, image, grid, 1)
        exact = exact_shapley(adapter, image, grid, 1)
        ok = np.max(np.abs(phi - exact)) <= 1e-6
        phi_zero = kernel_shap_attributions(adapter, image, grid, 1, baseline=0.0)
        delta = adapter.forward(image)[1] - adapter.forward(np.zeros_like(image))[1]
        ok = ok and abs(phi_zero.sum() - delta) <= 1e-6
        weights = np.array([0.3, -0.1, 0.5, 0.0, 0.2, -0.4, 0.1, 0.25, -0.05])
        additive = additive_adapter(weights, grid, (12, 12))
        add_image = np.random.default_rng(5).random((12, 12, 1))
        region_map = grid.region_map(12, 12)
        means = np.array([add_image[:, :, 0][region_map == r].mean() for r in range(9)])
        expected = weights * means  # zero baseline contributes nothing per region
        phi_add = kernel_shap_attributions(additive, add_image, grid, 0, baseline=0.0)
        ok = ok and np.max(np.abs(phi_add - expected)) <= 1e-6
        verdict(5, "KernelSHAP vs exact Shapley (M=9)", ok)

    def test_criterion_6_composite_loss(self):
        rng = np.random.default_rng(6)
        pred = segeval.SoftMask(rng.random((8, 8)))
        gt = BinaryMask(rng.integers(0, 2, size=(8, 8)).astype(bool))
        ok = abs(segeval.composite_loss(pred, gt, 1.0) - segeval.cross_entropy(pred, gt)) <= 1e-12
        ok = ok and abs(segeval.composite_loss(pred, gt, 0.0) - segeval.dice_loss(pred, gt)) <= 1e-12
        perfect = segeval.SoftMask(gt.bits.astype(np.float64))
        ok = ok and segeval.composite_loss(perfect, gt, 1.0) < 1e-6
        ok = ok and segeval.composite_loss(perfect, gt, 0.0) == 0.0
        hand_pred = segeval.SoftMask(np.array([[1.0, 1.0], [1.0, 0.0]]))
        hand_gt = BinaryMask(np.ones((2, 2), dtype=bool))
        clip = 1e-7
        ce = -(3 * np.log(1 - clip) + np.log(clip)) / 4
        dice_l = 1.0 - (2 * 3 + 1.0) / (3 + 4 + 1.0)
        expected = 0.5 * ce + 0.5 * dice_l
        ok = ok and abs(segeval.composite_loss(hand_pred, hand_gt, 0.5) - expected) <= 1e-6
        verdict(6, "composite CE+Dice loss", ok)

    def test_criterion_7_determinism(self, tmp_path, monkeypatch):
        trees = []
        for name in ("first", "second"):
            base = tmp_path / name
            base.mkdir()
            monkeypatch.chdir(base)
            run_pipeline(base, seed=5, relative=True)
            trees.append(tree_digest(base))
        verdict(7, "byte-identical pipeline re-run", trees[0] == trees[1])

    def test_criterion_8_format_strictness(self, tmp_path):
        rng = np.random.default_rng(8)
        ok = True

        for i in range(400):
            shape = (int(rng.integers(1, 24)), int(rng.integers(1, 24)))
            values = rng.random(shape).astype(np.float32).astype(np.float64)
            path = tmp_path / f"s{i}.npy"
            dataio.write_saliency(SaliencyMap(values), path)
            back = dataio.read_saliency(path)
            if not np.array_equal(back.values, values):
                ok = False

        for i in range(400):
            shape = (int(rng.integers(1, 24)), int(rng.integers(1, 24)))
            bits = rng.integers(0, 2, size=shape).astype(bool)
            path = tmp_path / f"m{i}.png"
            dataio.write_mask(BinaryMask(bits), path)
            if not np.array_equal(dataio.read_mask(path).bits, bits):
                ok = False

        seg_path = tmp_path / "seg.png"
        dataio.write_mask(BinaryMask(np.ones((4, 4), dtype=bool)), seg_path)
        for i in range(20):
            records = []
            for r in range(10):
                prob = float(np.round(rng.random(), 6))
                records.append(EvalRecord(
                    image_id=f"img{r:03d}", label_id=int(rng.integers(0, 2)),
                    prob=prob, predicted=prob > 0.5,
                    gt_positive=bool(rng.integers(0, 2)), seg_mask_ref="seg.png",
                ))
            manifest = dataio.DatasetManifest(
                mode="multilabel", class_names=["a", "b"], thresholds=[0.5, 0.5],
                records=records, base_dir=tmp_path,
            )
            path = tmp_path / f"manifest{i}.jsonl"
            dataio.save_manifest(manifest, path)
            back = dataio.load_manifest(path)
            if [vars(r) for r in back.records] != [vars(r) for r in records]:
                ok = False

        malformed = []

        from PIL import Image
        gray = tmp_path / "bad_gray.png"
        Image.fromarray(np.full((4, 4), 128, dtype=np.uint8), mode="L").save(gray)
        malformed.append((gray, dataio.read_mask, FormatError))
        rgb = tmp_path / "bad_rgb.png"
        Image.fromarray(np.zeros((4, 4, 3), dtype=np.uint8), mode="RGB").save(rgb)
        malformed.append((rgb, dataio.read_mask, FormatError))

        threed = tmp_path / "bad_3d.npy"
        np.save(threed, np.zeros((2, 2, 2), dtype="<f4"))
        malformed.append((threed, dataio.read_saliency, FormatError))
        f8 = tmp_path / "bad_f8.npy"
        np.save(f8, np.zeros((2, 2), dtype="<f8"))
        malformed.append((f8, dataio.read_saliency, FormatError))
        bigend = tmp_path / "bad_be.npy"
        np.save(bigend, np.zeros((2, 2), dtype=">f4"))
        malformed.append((bigend, dataio.read_saliency, FormatError))
        fortran = tmp_path / "bad_fortran.npy"
        np.save(fortran, np.asfortranarray(np.arange(6, dtype="<f4").reshape(2, 3)))
        malformed.append((fortran, dataio.read_saliency, FormatError))
        truncated = tmp_path / "bad_trunc.npy"
        good = tmp_path / "good.npy"
        dataio.write_saliency(SaliencyMap(np.zeros((4, 4))), good)
        truncated.write_bytes(good.read_bytes()[:-8])
        malformed.append((truncated, dataio.read_saliency, FormatError))
        magic = tmp_path / "bad_magic.npy"
        magic.write_bytes(b"JUNKJUNKJUNKJUNK")
        malformed.append((magic, dataio.read_saliency, FormatError))

        header = {"version": 1, "mode": "multilabel", "class_names": ["a"],
                  "thresholds": [0.5], "model_tag": "tinynet"}
        inconsistent = tmp_path / "bad_predicted.jsonl"
        rec = {"image_id": "x", "label_id": 0, "prob": 0.1, "predicted": True,
               "gt_positive": True, "seg_mask_path": "seg.png"}
        inconsistent.write_text(json.dumps(header) + "\n" + json.dumps(rec) + "\n")
        malformed.append((inconsistent, dataio.load_manifest, ManifestError))
        missing = tmp_path / "bad_missing.jsonl"
        rec2 = dict(rec, predicted=False, seg_mask_path="nope.png")
        missing.write_text(json.dumps(header) + "\n" + json.dumps(rec2) + "\n")
        malformed.append((missing, dataio.load_manifest, ManifestError))

        assert len(malformed) == 10
        for path, reader, err in malformed:
            try:
                reader(path)
            except err:
                continue
            ok = False

        verdict(8, "format round trips and strict rejection", ok)
