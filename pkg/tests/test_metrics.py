import json

import numpy as np
import pytest
from PIL import Image

from stylebooth.errors import DataValidationError
from stylebooth.metrics import (
    EvalRecord,
    clip_directional,
    clip_image_sim,
    clip_output_sim,
    cosine,
    evaluate_run,
    is_blank,
    load_benchmark,
)

from conftest import make_image


class FakeImageEncoder:
    """Maps images to preset vectors keyed by their top-left pixel value."""

    def __init__(self, table):
        self.table = table

    def embed_image(self, image):
        return np.asarray(self.table[int(image[0, 0, 0])], dtype=float)


class FakeTextEncoder:
    def __init__(self, table):
        self.table = table

    def embed_text(self, text):
        return np.asarray(self.table[text], dtype=float)


def tagged_image(tag, size=4):
    img = np.full((size, size, 3), 128, np.uint8)
    img[0, 0, 0] = tag
    img[1, 1, 1] = 7  # keep the image non-blank
    return img


def test_cosine_oracle_values():
    assert cosine([1, 0], [1, 0]) == pytest.approx(1.0)
    assert cosine([1, 0], [0, 1]) == pytest.approx(0.0)
    assert cosine([1, 1], [-1, -1]) == pytest.approx(-1.0)
    assert cosine([0, 0], [1, 0]) == 0.0


def test_directional_zero_for_unedited_output():
    img = tagged_image(1)
    image_enc = FakeImageEncoder({1: [0.3, 0.4]})
    text_enc = FakeTextEncoder({"a cat": [0.0, 1.0], "a dog": [1.0, 0.0]})
    rec = EvalRecord(
        id="r", input_image=img, output_image=None,
        input_caption="a cat", output_caption="a dog", instruction="dogify",
    )
    assert clip_directional(rec, img, text_enc, image_enc) == 0.0


def test_directional_parallel_and_orthogonal_deltas():
    image_enc = FakeImageEncoder({1: [0.0, 0.0], 2: [1.0, 0.0]})
    rec = EvalRecord(
        id="r", input_image=tagged_image(1), output_image=None,
        input_caption="before", output_caption="after", instruction="edit",
    )
    parallel = FakeTextEncoder({"before": [0.0, 0.0], "after": [1.0, 0.0]})
    assert clip_directional(rec, tagged_image(2), parallel, image_enc) == pytest.approx(1.0)
    orthogonal = FakeTextEncoder({"before": [0.0, 0.0], "after": [0.0, 1.0]})
    assert clip_directional(rec, tagged_image(2), orthogonal, image_enc) == pytest.approx(0.0)


def test_image_sim_identical_images(toy, rng):
    img = make_image(rng, 16)
    assert clip_image_sim(img, img, toy.image) == pytest.approx(1.0)


def test_similarities_match_brute_force(toy, rng):
    imgs = [make_image(rng, 16) for _ in range(4)]
    caption = "a painting of hills"
    for a in imgs:
        for b in imgs:
            u, v = toy.image.embed_image(a), toy.image.embed_image(b)
            oracle = float(u @ v / (np.linalg.norm(u) * np.linalg.norm(v)))
            assert abs(clip_image_sim(a, b, toy.image) - oracle) < 1e-6
        t = toy.text.embed_text(caption)
        u = toy.image.embed_image(a)
        oracle = float(u @ t / (np.linalg.norm(u) * np.linalg.norm(t)))
        assert abs(clip_output_sim(a, caption, toy.text, toy.image) - oracle) < 1e-6


def test_similarities_bounded(toy, rng):
    for _ in range(10):
        a, b = make_image(rng, 16), make_image(rng, 16)
        assert -1.0 <= clip_image_sim(a, b, toy.image) <= 1.0


def test_is_blank_detects_uniform_images():
    assert is_blank(np.zeros((8, 8, 3), np.uint8))
    assert is_blank(np.full((8, 8, 3), 50, np.uint8))
    assert not is_blank(tagged_image(1))


# ---------------------------------------------------------------------------
# benchmark loader
# ---------------------------------------------------------------------------

def _write_benchmark(tmp_path, rows, images):
    for name, img in images.items():
        Image.fromarray(img).save(tmp_path / name)
    with open(tmp_path / "records.jsonl", "w") as fh:
        for row in rows:
            fh.write(json.dumps(row) + "\n")
    return str(tmp_path)


def test_loader_drops_blank_records(tmp_path, rng):
    images = {
        "a.png": make_image(rng, 8),
        "b.png": make_image(rng, 8),
        "blank.png": np.zeros((8, 8, 3), np.uint8),
        "out.png": make_image(rng, 8),
    }
    rows = [
        {"id": "one", "input_image": "a.png", "output_image": "out.png",
         "input_caption": "a", "output_caption": "b", "instruction": "x"},
        {"id": "two", "input_image": "b.png", "output_image": "out.png",
         "input_caption": "a", "output_caption": "b", "instruction": "x"},
        {"id": "bad", "input_image": "blank.png", "output_image": "out.png",
         "input_caption": "a", "output_caption": "b", "instruction": "x"},
    ]
    records, rejected = load_benchmark(_write_benchmark(tmp_path, rows, images))
    assert [r.id for r in records] == ["one", "two"]
    assert rejected == [("bad", "blank input or output image")]


def test_loader_rejects_missing_caption(tmp_path, rng):
    images = {"a.png": make_image(rng, 8)}
    rows = [
        {"id": "r0", "input_image": "a.png", "input_caption": "a",
         "output_caption": "", "instruction": "x"},
    ]
    records, rejected = load_benchmark(_write_benchmark(tmp_path, rows, images))
    assert records == []
    assert rejected[0][0] == "r0"
    assert "output_caption" in rejected[0][1]


def test_loader_rejects_missing_image_file(tmp_path, rng):
    images = {"a.png": make_image(rng, 8)}
    rows = [
        {"id": "r0", "input_image": "gone.png", "input_caption": "a",
         "output_caption": "b", "instruction": "x"},
    ]
    records, rejected = load_benchmark(_write_benchmark(tmp_path, rows, images))
    assert records == [] and rejected[0][0] == "r0"


# ---------------------------------------------------------------------------
# evaluate_run
# ---------------------------------------------------------------------------

def _records(rng, n):
    return [
        EvalRecord(
            id=f"r{i}",
            input_image=make_image(rng, 16),
            output_image=None,
            input_caption="a plain photo",
            output_caption="a styled photo",
            instruction="style it",
        )
        for i in range(n)
    ]


def test_evaluate_empty_records_rejected(toy):
    with pytest.raises(DataValidationError):
        evaluate_run([], lambda r: None, toy.text, toy.image)


def test_evaluate_single_record_means_equal_scores(toy, rng):
    recs = _records(rng, 1)
    edited = make_image(rng, 16)
    report = evaluate_run(recs, lambda r: edited, toy.text, toy.image)
    assert report.means == {
        "clip_dir": report.rows[0]["clip_dir"],
        "clip_img": report.rows[0]["clip_img"],
        "clip_out": report.rows[0]["clip_out"],
    }


def test_evaluate_means_match_scripted_oracle(toy, rng):
    recs = _records(rng, 5)
    edits = {r.id: make_image(rng, 16) for r in recs}
    report = evaluate_run(recs, lambda r: edits[r.id], toy.text, toy.image)
    expected = {
        "clip_dir": np.mean([clip_directional(r, edits[r.id], toy.text, toy.image) for r in recs]),
        "clip_img": np.mean([clip_image_sim(r.load_input(), edits[r.id], toy.image) for r in recs]),
        "clip_out": np.mean(
            [clip_output_sim(edits[r.id], r.output_caption, toy.text, toy.image) for r in recs]
        ),
    }
    for key, val in expected.items():
        assert abs(report.means[key] - val) < 1e-6


def test_evaluate_order_independent(toy, rng):
    recs = _records(rng, 4)
    edits = {r.id: make_image(rng, 16) for r in recs}
    fwd = evaluate_run(recs, lambda r: edits[r.id], toy.text, toy.image)
    rev = evaluate_run(recs[::-1], lambda r: edits[r.id], toy.text, toy.image)
    for key in ("clip_dir", "clip_img", "clip_out"):
        assert fwd.means[key] == pytest.approx(rev.means[key])


def test_report_serializes(toy, rng):
    recs = _records(rng, 2)
    report = evaluate_run(recs, lambda r: r.load_input(), toy.text, toy.image)
    payload = json.loads(report.to_json())
    assert set(payload) == {"rows", "means", "reference"}
    assert "mean" in report.to_table()
