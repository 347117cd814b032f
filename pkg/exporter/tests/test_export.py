"""Unit tests for the exporter package in isolation."""
import json

import numpy as np
import pytest
from PIL import Image

from segxai_exporter.export import ExportError, ExportJob, _write_mask, export
from segxai_exporter.models import ModelError, StubModel, load_model


def write_image(path, h=16, w=16, value=90):
    Image.fromarray(np.full((h, w), value, dtype=np.uint8), mode="L").save(path)


class TestModels:
    def test_load_stub(self):
        model = load_model("stub")
        assert model.n_classes == 2

    def test_load_stub_with_config(self):
        model = load_model('stub:{"probabilities": [0.1, 0.6, 0.9]}')
        assert model.n_classes == 3

    def test_unknown_reference_rejected(self):
        with pytest.raises(ModelError):
            load_model("resnet50.pth")

    def test_bad_stub_config_rejected(self):
        with pytest.raises(ModelError):
            load_model("stub:{not json}")

    def test_predictions_constant(self):
        model = StubModel(probabilities=[0.3, 0.7])
        a = model.predict(np.zeros((8, 8)))
        b = model.predict(np.ones((8, 8)))
        np.testing.assert_array_equal(a, b)
        np.testing.assert_array_equal(a, [0.3, 0.7])

    def test_saliency_is_checkerboard(self):
        model = StubModel(checker_period=2)
        sal = model.saliency(np.zeros((8, 8)), 0, "gradcam")
        assert sal.shape == (8, 8)
        assert len(np.unique(sal)) == 2
        # Adjacent 2x2 blocks alternate.
        assert sal[0, 0] != sal[0, 2]
        assert sal[0, 0] == sal[2, 2]

    def test_segmentation_has_soft_edges(self):
        soft = StubModel().segmentation(np.zeros((32, 32)))
        assert soft.min() == 0.0 and soft.max() == 1.0
        assert np.any((soft > 0.0) & (soft < 1.0)), "edges should be anti-aliased"


class TestExport:
    def test_one_image_one_predicted_label(self, tmp_path):
        data = tmp_path / "data"
        data.mkdir()
        write_image(data / "img0.png")
        job = ExportJob(model_ref="stub", data_dir=data, out_dir=tmp_path / "out")
        manifest = export(job)
        lines = manifest.read_text().splitlines()
        records = [json.loads(ln) for ln in lines[1:]]
        assert len(records) == 1  # stub probs (0.2, 0.9) against 0.5 thresholds
        assert records[0]["label_id"] == 1
        assert len(list((tmp_path / "out" / "saliency").glob("*.npy"))) == 1
        assert len(list((tmp_path / "out" / "masks").glob("*.png"))) >= 1

    def test_soft_mask_binarized_at_half(self, tmp_path):
        soft = np.array([[0.0, 0.49], [0.5, 1.0]])
        bits = _write_mask(soft, tmp_path / "m.png")
        np.testing.assert_array_equal(bits, [[False, False], [True, True]])
        levels = set(np.asarray(Image.open(tmp_path / "m.png")).ravel().tolist())
        assert levels <= {0, 255}

    def test_empty_data_dir_rejected(self, tmp_path):
        (tmp_path / "data").mkdir()
        job = ExportJob(model_ref="stub", data_dir=tmp_path / "data", out_dir=tmp_path / "out")
        with pytest.raises(ExportError):
            export(job)

    def test_bad_xai_method_rejected(self, tmp_path):
        with pytest.raises(ExportError):
            ExportJob(model_ref="stub", data_dir=tmp_path, out_dir=tmp_path, xai="lime")

    def test_threshold_count_mismatch_rejected(self, tmp_path):
        data = tmp_path / "data"
        data.mkdir()
        write_image(data / "img0.png")
        job = ExportJob(model_ref="stub", data_dir=data, out_dir=tmp_path / "out",
                        thresholds=[0.5, 0.5, 0.5])
        with pytest.raises(ExportError):
            export(job)

    def test_export_is_deterministic(self, tmp_path):
        data = tmp_path / "data"
        data.mkdir()
        write_image(data / "img0.png")
        write_image(data / "img1.png", value=40)
        outs = []
        for name in ("a", "b"):
            out = tmp_path / name
            export(ExportJob(model_ref="stub", data_dir=data, out_dir=out))
            outs.append({p.relative_to(out): p.read_bytes() for p in sorted(out.rglob("*")) if p.is_file()})
        assert outs[0] == outs[1]
