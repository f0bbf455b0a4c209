import numpy as np
import pytest

from epan.data import DatasetManifest, ManifestRecord
from epan.exceptions import DataError
from epan.inference import deblur, pad_to_multiple
from epan.io import append_jsonl, list_images, read_image, read_jsonl, to_uint8, write_image
from epan.metrics import evaluate
from epan.model import ModelConfig, build_model


@pytest.fixture
def pair_dir(tmp_path):
    rng = np.random.default_rng(0)
    records = []
    for i in range(2):
        sharp = rng.random((3, 20, 18))
        blurry = np.clip(sharp + rng.normal(0, 0.05, sharp.shape), 0, 1)
        write_image(tmp_path / f"sharp{i}.png", sharp)
        write_image(tmp_path / f"blurry{i}.png", blurry)
        records.append(ManifestRecord(str(tmp_path / f"sharp{i}.png"), str(tmp_path / f"blurry{i}.png"), f"s{i}", "test"))
    return DatasetManifest(records)


class TestImageIO:
    def test_png_round_trip(self, tmp_path):
        img = to_uint8(np.random.default_rng(0).random((3, 5, 7))) / 255.0
        write_image(tmp_path / "a.png", img)
        np.testing.assert_array_equal(read_image(tmp_path / "a.png"), img)

    def test_gray(self, tmp_path):
        img = np.random.default_rng(1).random((1, 4, 4))
        write_image(tmp_path / "g.png", img)
        assert read_image(tmp_path / "g.png").shape == (1, 4, 4)
        assert read_image(tmp_path / "g.png", channels=3).shape == (3, 4, 4)

    def test_unreadable(self, tmp_path):
        (tmp_path / "bad.png").write_bytes(b"garbage")
        with pytest.raises(DataError):
            read_image(tmp_path / "bad.png")

    def test_list_sorted_recursive(self, tmp_path):
        (tmp_path / "b").mkdir()
        for name in ("b/z.png", "a.png", "b/a.png", "note.txt"):
            (tmp_path / name).write_bytes(b"")
        assert [p.relative_to(tmp_path).as_posix() for p in list_images(tmp_path)] == ["a.png", "b/a.png", "b/z.png"]

    def test_jsonl(self, tmp_path):
        append_jsonl(tmp_path / "l.jsonl", {"b": 1, "a": 2})
        append_jsonl(tmp_path / "l.jsonl", {"c": 3})
        assert read_jsonl(tmp_path / "l.jsonl") == [{"a": 2, "b": 1}, {"c": 3}]


class TestInference:
    def test_pad_to_multiple(self):
        img = np.random.default_rng(0).random((3, 5, 6))
        padded, (h, w) = pad_to_multiple(img, 4)
        assert padded.shape == (3, 8, 8) and (h, w) == (5, 6)
        np.testing.assert_array_equal(padded[:, :5, :6], img)

    @pytest.mark.parametrize("variant", ["phi", "epan"])
    def test_odd_size_round_trip(self, variant):
        net = build_model(ModelConfig(variant=variant, cdn_base_channels=4, convs_per_level=1))
        img = np.random.default_rng(1).random((3, 13, 10))
        out, edges = deblur(net, img, return_edges=True)
        assert out.shape == img.shape and out.min() >= 0 and out.max() <= 1
        assert (edges is None) == (variant == "phi")

    def test_identity_network_matches_blurry_baseline(self, pair_dir):
        net = build_model(ModelConfig(variant="epan", cdn_base_channels=4, convs_per_level=1), dtype=np.float64)
        net.params["cdn.out.weight"].data[...] = 0.0
        model = evaluate(net, pair_dir.records, prediction="model")
        base = evaluate(net, pair_dir.records, prediction="blurry")
        assert model.psnr == base.psnr and model.ssim == base.ssim

    def test_empty_split(self):
        with pytest.raises(DataError):
            evaluate(None, [])

    def test_missing_files_listed(self, tmp_path):
        rec = ManifestRecord(str(tmp_path / "s.png"), str(tmp_path / "b.png"), "x", "test")
        with pytest.raises(FileNotFoundError, match="s.png.*b.png"):
            evaluate(None, [rec])

    def test_report_means_consistent(self, pair_dir):
        net = build_model(ModelConfig(variant="phi", cdn_base_channels=4, convs_per_level=1))
        rep = evaluate(net, pair_dir.records, label="phi")
        assert abs(rep.mean_psnr - np.mean(rep.psnr)) < 1e-12
        assert rep.count == 2 and rep.label == "phi"
