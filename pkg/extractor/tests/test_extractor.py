import csv

import numpy as np
import pytest
from PIL import Image

from mint_extractor.cli import main as extract_main
from mint_extractor.dataset import list_dataset
from mint_extractor.encoders import ToyEncoder, make_encoder
from mint_extractor.extract import ExtractJob, corrupt_tag, ensemble_text, extract
from mint_tta.cli import main as mint_main
from mint_tta.dump_io import read_dump
from mint_tta.errors import DataError


class TestDataset:
    def test_sorted_class_order_and_labels(self, toy_dataset):
        paths, labels, names = list_dataset(toy_dataset)
        assert names == ["horiz", "vert"]  # lexicographic
        assert labels == [0] * 8 + [1] * 8
        assert [p.name for p in paths[:2]] == ["img_00.png", "img_01.png"]

    def test_empty_class_directory(self, toy_dataset):
        (toy_dataset / "zzz_empty").mkdir()
        with pytest.raises(DataError, match="empty class directory"):
            list_dataset(toy_dataset)

    def test_missing_root(self, tmp_path):
        with pytest.raises(DataError, match="not a directory"):
            list_dataset(tmp_path / "nope")


class TestEncoders:
    def test_toy_encoder_is_deterministic(self):
        enc1 = make_encoder("toy:32")
        enc2 = make_encoder("toy:32")
        img = Image.new("RGB", (64, 64), (128, 40, 200))
        assert np.array_equal(enc1.encode_images([img]), enc2.encode_images([img]))
        assert np.array_equal(enc1.encode_texts(["a"]), enc2.encode_texts(["a"]))

    def test_bad_toy_id(self):
        with pytest.raises(DataError, match="toy"):
            make_encoder("toy:abc")

    def test_clip_backend_needs_extra_or_download(self):
        # either transformers is missing or the weights cannot be fetched
        with pytest.raises(DataError, match="model load failure"):
            make_encoder("definitely/not-a-model")


class TestExtract:
    def test_dump_passes_validation(self, toy_dataset, tmp_path):
        out = tmp_path / "toy.mintdump"
        extract(ExtractJob(toy_dataset, "toy:64", out))
        emb, text = read_dump(out)  # full format validation happens here
        assert emb.n_samples == 16
        assert emb.dim == 64
        assert emb.n_classes == 2
        assert list(emb.labels) == [0] * 8 + [1] * 8
        assert text is not None and text.n_classes == 2
        assert np.max(np.abs(np.linalg.norm(emb.data, axis=1) - 1.0)) < 1e-3

    def test_file_length_arithmetic(self, toy_dataset, tmp_path):
        # 2 classes x 3 images at d=512
        small = tmp_path / "small"
        for cname in ("a", "b"):
            (small / cname).mkdir(parents=True)
            for i, src in enumerate(sorted((toy_dataset / "horiz").iterdir())[:3]):
                (small / cname / f"{i}.png").write_bytes(src.read_bytes())
        out = tmp_path / "len.mintdump"
        extract(ExtractJob(small, "toy:512", out))
        assert out.stat().st_size == 32 + 4 * 6 * 512 + 4 * 6 + 4 * 2 * 512

    def test_single_template_is_plain_normalized_encoding(self, toy_dataset, tmp_path):
        out = tmp_path / "one.mintdump"
        extract(ExtractJob(toy_dataset, "toy:64", out, prompt_templates=["itap of a {}"]))
        _, text = read_dump(out)
        enc = ToyEncoder(64)
        for c, name in enumerate(["horiz", "vert"]):
            raw = enc.encode_texts([f"itap of a {name}"])[0]
            expected = raw / np.linalg.norm(raw)
            assert np.allclose(text.t[c], expected, atol=1e-7)  # float32 storage

    def test_template_ensemble_matches_manual_computation(self):
        enc = ToyEncoder(32)
        templates = ["a photo of a {}", "art of the {}"]
        got = ensemble_text(enc, ["cat", "dog"], templates)
        for c, name in enumerate(["cat", "dog"]):
            acc = np.zeros(32)
            for template in templates:
                raw = enc.encode_texts([template.format(name)])[0]
                acc += raw / np.linalg.norm(raw)
            assert np.allclose(got[c], acc / np.linalg.norm(acc), atol=1e-12)

    def test_repeat_extraction_is_byte_identical(self, toy_dataset, tmp_path):
        a, b = tmp_path / "a.mintdump", tmp_path / "b.mintdump"
        extract(ExtractJob(toy_dataset, "toy:64", a))
        extract(ExtractJob(toy_dataset, "toy:64", b))
        assert a.read_bytes() == b.read_bytes()

    def test_empty_templates_rejected(self, toy_dataset, tmp_path):
        with pytest.raises(DataError, match="nonempty"):
            ExtractJob(toy_dataset, "toy:64", tmp_path / "x.mintdump", prompt_templates=[])


class TestCorruptTag:
    def test_one_dump_per_tag(self, corrupted_dataset, tmp_path):
        job = ExtractJob(corrupted_dataset, "toy:64", tmp_path / "world.mintdump")
        outs = corrupt_tag(job, ["clean", "s1", "s2"])
        assert [p.name for p in outs] == [
            "world__clean.mintdump", "world__s1.mintdump", "world__s2.mintdump"
        ]
        for p in outs:
            read_dump(p)

    def test_missing_tag_folder_lists_path(self, corrupted_dataset, tmp_path):
        job = ExtractJob(corrupted_dataset, "toy:64", tmp_path / "w.mintdump")
        with pytest.raises(DataError, match="s3"):
            corrupt_tag(job, ["clean", "s3"])

    def test_diag_shows_variance_collapse_trend(self, corrupted_dataset, tmp_path):
        """Downscale-blur corruption shrinks GT-inter variance of the dumps."""
        job = ExtractJob(corrupted_dataset, "toy:64", tmp_path / "world.mintdump")
        outs = corrupt_tag(job, ["clean", "s1", "s2"])
        out_csv = tmp_path / "diag.csv"
        code = mint_main(["diag", "--output", str(out_csv),
                          "--input"] + [str(p) for p in outs])
        assert code == 0
        with open(out_csv, encoding="utf-8") as fh:
            rows = list(csv.DictReader(fh))
        inters = [float(r["gt_inter"]) for r in rows]
        assert inters[0] > inters[1] > inters[2]


class TestCli:
    def test_basic_invocation(self, toy_dataset, tmp_path, capsys):
        out = tmp_path / "cli.mintdump"
        assert extract_main(["--dataset", str(toy_dataset), "--model", "toy:48",
                             "--output", str(out)]) == 0
        assert out.exists()
        assert "wrote" in capsys.readouterr().out

    def test_tags_mode(self, corrupted_dataset, tmp_path):
        out = tmp_path / "w.mintdump"
        assert extract_main(["--dataset", str(corrupted_dataset), "--model", "toy:32",
                             "--output", str(out), "--tags", "clean,s1"]) == 0
        assert (tmp_path / "w__clean.mintdump").exists()
        assert (tmp_path / "w__s1.mintdump").exists()

    def test_data_error_exit_code(self, tmp_path):
        assert extract_main(["--dataset", str(tmp_path / "missing"),
                             "--output", str(tmp_path / "x.mintdump")]) == 2

    def test_usage_error_exit_code(self):
        assert extract_main(["--output-only-no-dataset"]) == 1
