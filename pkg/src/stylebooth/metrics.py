"""Embedding-based editing metrics and benchmark ingestion.

Three scores per edited image: directional alignment between the caption
change and the image change, similarity to the input image, and similarity to
the output caption. All are cosines in the shared embedding space.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .backends import ImageEncoder, TextEncoder, load_image
from .errors import DataValidationError, InputError

# Published StyleBooth scores on the style-editing benchmark subset; reports
# carry them as context, never as assertions (backbones may differ).
REFERENCE_SCORES = {"clip_dir": 0.1062, "clip_out": 0.2293, "clip_img": 0.7030}


@dataclass
class EvalRecord:
    id: str
    input_image: np.ndarray | str
    output_image: np.ndarray | str | None
    input_caption: str
    output_caption: str
    instruction: str

    def load_input(self) -> np.ndarray:
        return self.input_image if isinstance(self.input_image, np.ndarray) else load_image(self.input_image)

    def load_output(self) -> np.ndarray | None:
        if self.output_image is None:
            return None
        return self.output_image if isinstance(self.output_image, np.ndarray) else load_image(self.output_image)


def cosine(u: np.ndarray, v: np.ndarray, zero_norm_value: float = 0.0) -> float:
    """Cosine similarity; degenerate (zero-norm) inputs score zero_norm_value."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0.0 or nv == 0.0:
        return zero_norm_value
    return float(u @ v / (nu * nv))


def clip_directional(
    record: EvalRecord,
    edited: np.ndarray,
    text_backend: TextEncoder,
    image_backend: ImageEncoder,
) -> float:
    """Alignment of the image-change direction with the caption-change direction.

    An unedited output (or identical captions) produces a zero-norm direction
    and scores 0 rather than erroring.
    """
    img_delta = image_backend.embed_image(edited) - image_backend.embed_image(record.load_input())
    txt_delta = text_backend.embed_text(record.output_caption) - text_backend.embed_text(
        record.input_caption
    )
    return cosine(img_delta, txt_delta)


def clip_image_sim(input_image: np.ndarray, edited: np.ndarray, image_backend: ImageEncoder) -> float:
    return cosine(image_backend.embed_image(input_image), image_backend.embed_image(edited))


def clip_output_sim(
    edited: np.ndarray, output_caption: str, text_backend: TextEncoder, image_backend: ImageEncoder
) -> float:
    return cosine(image_backend.embed_image(edited), text_backend.embed_text(output_caption))


# ---------------------------------------------------------------------------
# benchmark loading
# ---------------------------------------------------------------------------

def is_blank(image: np.ndarray) -> bool:
    """A blank image carries no content: every pixel identical (or empty)."""
    return image.size == 0 or bool((image == image.reshape(-1)[0]).all())


def load_benchmark(path: str) -> tuple[list[EvalRecord], list[tuple[str, str]]]:
    """Read a benchmark directory: records.jsonl + referenced images.

    Records with blank input or output images are excluded; records missing a
    caption (or an image file) are rejected. Returns (records, rejected) where
    rejected pairs are (record id, reason).
    """
    records_file = path if path.endswith(".jsonl") else os.path.join(path, "records.jsonl")
    base = os.path.dirname(os.path.abspath(records_file))
    records: list[EvalRecord] = []
    rejected: list[tuple[str, str]] = []
    with open(records_file, encoding="utf-8") as fh:
        for i, line in enumerate(fh):
            if not line.strip():
                continue
            raw = json.loads(line)
            rec_id = str(raw.get("id", i))
            missing = [
                k
                for k in ("input_image", "input_caption", "output_caption", "instruction")
                if not raw.get(k)
            ]
            if missing:
                rejected.append((rec_id, f"missing field(s): {', '.join(missing)}"))
                continue
            try:
                input_img = load_image(os.path.join(base, raw["input_image"]))
                output_path = raw.get("output_image")
                output_img = load_image(os.path.join(base, output_path)) if output_path else None
            except InputError as exc:
                rejected.append((rec_id, str(exc)))
                continue
            if is_blank(input_img) or (output_img is not None and is_blank(output_img)):
                rejected.append((rec_id, "blank input or output image"))
                continue
            records.append(
                EvalRecord(
                    id=rec_id,
                    input_image=input_img,
                    output_image=output_img,
                    input_caption=raw["input_caption"],
                    output_caption=raw["output_caption"],
                    instruction=raw["instruction"],
                )
            )
    return records, rejected


# ---------------------------------------------------------------------------
# run evaluation
# ---------------------------------------------------------------------------

@dataclass
class EvalReport:
    rows: list[dict] = field(default_factory=list)

    @property
    def means(self) -> dict[str, float]:
        return {
            key: float(np.mean([r[key] for r in self.rows]))
            for key in ("clip_dir", "clip_img", "clip_out")
        }

    def to_json(self) -> str:
        return json.dumps(
            {"rows": self.rows, "means": self.means, "reference": REFERENCE_SCORES}, indent=2
        )

    def to_table(self) -> str:
        lines = [f"{'id':<16}{'clip_dir':>10}{'clip_img':>10}{'clip_out':>10}"]
        for r in self.rows:
            lines.append(
                f"{r['id']:<16}{r['clip_dir']:>10.4f}{r['clip_img']:>10.4f}{r['clip_out']:>10.4f}"
            )
        m = self.means
        lines.append(f"{'mean':<16}{m['clip_dir']:>10.4f}{m['clip_img']:>10.4f}{m['clip_out']:>10.4f}")
        ref = REFERENCE_SCORES
        lines.append(
            f"{'reference':<16}{ref['clip_dir']:>10.4f}{ref['clip_img']:>10.4f}{ref['clip_out']:>10.4f}"
        )
        return "\n".join(lines)


def evaluate_run(
    records: list[EvalRecord],
    edit_fn: Callable[[EvalRecord], np.ndarray],
    text_backend: TextEncoder,
    image_backend: ImageEncoder,
) -> EvalReport:
    """Score every record's edit. Metric means are order-independent."""
    if not records:
        raise DataValidationError("no records to evaluate")
    report = EvalReport()
    for rec in records:
        edited = edit_fn(rec)
        report.rows.append(
            {
                "id": rec.id,
                "clip_dir": clip_directional(rec, edited, text_backend, image_backend),
                "clip_img": clip_image_sim(rec.load_input(), edited, image_backend),
                "clip_out": clip_output_sim(edited, rec.output_caption, text_backend, image_backend),
            }
        )
    return report
