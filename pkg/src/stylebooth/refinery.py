"""Paired-dataset construction by iterative style-destyle tuning and editing.

Starting from generated stylized (A) and plain (B) batches, the pipeline
alternates editing rounds with similarity filtering: de-style A into A1,
filter, train per-style style tuners on (A1 -> A), stylize B into B1, filter,
train de-style tuners on (B1 -> B), de-style A again into A2, filter. The
final training pairs couple original A images with their A2 renderings; the
high-quality originals are always the training targets.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
import time
from dataclasses import dataclass, field

import numpy as np

from .backends import ImageEncoder, T2IClient, load_image, save_image
from .errors import DataValidationError, PipelineError
from .metrics import cosine

STYLE = "style"
DESTYLE = "destyle"


# ---------------------------------------------------------------------------
# styles and prompts
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class StyleSpec:
    """A nameable style plus the prompt-expansion format used to render it."""

    name: str
    expansion_format: str

    def __post_init__(self):
        count = self.expansion_format.count("{prompt}")
        if count != 1:
            raise DataValidationError(
                f"style {self.name!r}: expansion format must contain '{{prompt}}' "
                f"exactly once, found {count}"
            )


def expand_prompt(style: StyleSpec, prompt: str) -> str:
    """Substitute the prompt into the style's format, byte-preserving the rest."""
    return style.expansion_format.replace("{prompt}", prompt)


def load_styles(path: str) -> list[StyleSpec]:
    """Styles fixture: TSV of (name, expansion format), one per line."""
    styles = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line.strip():
                continue
            name, _, fmt = line.partition("\t")
            if not fmt:
                raise DataValidationError(f"styles fixture line has no format: {line!r}")
            styles.append(StyleSpec(name=name, expansion_format=fmt))
    return styles


def load_lines(path: str) -> list[str]:
    with open(path, encoding="utf-8") as fh:
        return [line.strip() for line in fh if line.strip()]


# ---------------------------------------------------------------------------
# manifests
# ---------------------------------------------------------------------------

@dataclass
class Record:
    id: str
    batch: str
    style: str | None = None
    prompt: str | None = None
    image: str | None = None
    pair_of: str | None = None
    similarity: float | None = None
    verdict: str | None = None
    round: str | None = None
    error: str | None = None

    def to_json(self) -> dict:
        return {k: v for k, v in dataclasses.asdict(self).items() if v is not None}


@dataclass
class BatchManifest:
    label: str
    records: list[Record] = field(default_factory=list)

    def by_id(self) -> dict[str, Record]:
        return {r.id: r for r in self.records}

    def save(self, path: str) -> str:
        with open(path, "w", encoding="utf-8") as fh:
            for rec in self.records:
                fh.write(json.dumps(rec.to_json()) + "\n")
        return path

    @classmethod
    def load(cls, path: str, label: str | None = None) -> "BatchManifest":
        records = []
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    records.append(Record(**json.loads(line)))
        return cls(label=label or (records[0].batch if records else ""), records=records)


def make_batch_a(styles: list[StyleSpec], prompts: list[str], label: str = "A") -> BatchManifest:
    """Stylized batch: one record per (style, prompt)."""
    records = [
        Record(
            id=f"{label}-{spec.name}-{i:04d}",
            batch=label,
            style=spec.name,
            prompt=expand_prompt(spec, prompt),
            round=label,
        )
        for spec in styles
        for i, prompt in enumerate(prompts)
    ]
    return BatchManifest(label=label, records=records)


def make_batch_b(captions: list[str], label: str = "B") -> BatchManifest:
    """Plain batch: one record per caption, no style expansion."""
    records = [
        Record(id=f"{label}-{i:04d}", batch=label, prompt=caption, round=label)
        for i, caption in enumerate(captions)
    ]
    return BatchManifest(label=label, records=records)


def _record_seed(base_seed: int, record_id: str) -> int:
    digest = hashlib.blake2b(f"{base_seed}:{record_id}".encode(), digest_size=4).digest()
    return int.from_bytes(digest, "little")


def generate_batch(
    manifest: BatchManifest, t2i: T2IClient, out_dir: str, seed: int = 0
) -> BatchManifest:
    """Fill every record's image ref via the T2I client.

    Records that already have an image are skipped, so resuming a partially
    failed run regenerates only what is missing. Per-record failures are noted
    on the record and do not stop the batch.
    """
    os.makedirs(out_dir, exist_ok=True)
    for rec in manifest.records:
        if rec.image and os.path.exists(rec.image):
            continue
        try:
            img = t2i.generate(rec.prompt, seed=_record_seed(seed, rec.id), style=rec.style)
            rec.image = save_image(img, os.path.join(out_dir, f"{rec.id}.png"))
            rec.error = None
        except Exception as exc:
            rec.error = str(exc)
    return manifest


# ---------------------------------------------------------------------------
# pairs and filtering
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FilterThresholds:
    """Usability band on pair similarity; both bounds are inclusive PASSes."""

    lower: float = 0.2
    upper: float = 0.84

    def __post_init__(self):
        if not self.lower < self.upper:
            raise DataValidationError(
                f"lower threshold {self.lower} must be below upper {self.upper}"
            )


@dataclass(frozen=True)
class ImagePair:
    """An edited image paired with the original it derives from.

    source_ref is the round's edited output; target_ref is always the original
    high-quality batch image (the training target).
    """

    id: str
    source_ref: str
    target_ref: str
    style: str
    round: str
    similarity: float | None = None
    usable: str | None = None  # "pass" | "fail"
    reason: str | None = None

    def __post_init__(self):
        if self.similarity is not None and not -1.0 <= self.similarity <= 1.0:
            raise DataValidationError(f"similarity {self.similarity} outside [-1, 1]")
        if self.usable == "pass" and self.similarity is None:
            raise DataValidationError("a passing pair must carry its similarity")


class ClipImageSimilarity:
    """Cosine similarity of two images' embeddings under one image encoder."""

    def __init__(self, backend: ImageEncoder):
        self.backend = backend

    def score(self, ref_a: str, ref_b: str) -> float:
        a = self.backend.embed_image(load_image(ref_a))
        b = self.backend.embed_image(load_image(ref_b))
        return cosine(a, b)


def classify_similarity(similarity: float, thresholds: FilterThresholds) -> tuple[str, str]:
    """Pure verdict function: (usable, reason). Bounds are inclusive."""
    if similarity > thresholds.upper:
        return "fail", "TOO_SIMILAR"
    if similarity < thresholds.lower:
        return "fail", "TOO_DIFFERENT"
    return "pass", "PASS"


def filter_pairs(
    pairs: list[ImagePair], thresholds: FilterThresholds, scorer
) -> list[ImagePair]:
    """Score and verdict every pair. Unscorable pairs fail with the reason kept."""
    out = []
    for pair in pairs:
        try:
            sim = float(scorer.score(pair.source_ref, pair.target_ref))
        except Exception as exc:
            out.append(dataclasses.replace(pair, usable="fail", reason=f"UNSCORABLE: {exc}"))
            continue
        usable, reason = classify_similarity(sim, thresholds)
        out.append(dataclasses.replace(pair, similarity=sim, usable=usable, reason=reason))
    return out


def save_pairs(pairs: list[ImagePair], path: str) -> str:
    with open(path, "w", encoding="utf-8") as fh:
        for pair in pairs:
            fh.write(json.dumps(dataclasses.asdict(pair)) + "\n")
    return path


def load_pairs(path: str) -> list[ImagePair]:
    pairs = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                pairs.append(ImagePair(**json.loads(line)))
    return pairs


# ---------------------------------------------------------------------------
# editing rounds
# ---------------------------------------------------------------------------

@dataclass
class EditRoundResult:
    batch: BatchManifest
    pairs: list[ImagePair]
    skipped_styles: list[str] = field(default_factory=list)


@dataclass(frozen=True)
class TunerRef:
    """Handle to one trained per-style adapter."""

    style: str
    direction: str
    path: str
    rank: int = 256
    metadata: dict = field(default_factory=dict, hash=False, compare=False)


def edit_round(
    input_batch: BatchManifest,
    direction: str,
    editor,
    out_label: str,
    out_dir: str,
    styles: list[str] | None = None,
    tuners: dict[str, TunerRef] | None = None,
    seed: int = 0,
) -> EditRoundResult:
    """Edit every input record, emitting the new batch and its training pairs.

    Styled inputs are edited in place of their own style; plain inputs (no
    style on the record) fan out over ``styles``. When a tuner map is given, a
    style without a tuner is skipped and reported rather than failing the
    round. Pair targets are always the input batch's original images.
    """
    os.makedirs(out_dir, exist_ok=True)
    result = EditRoundResult(batch=BatchManifest(label=out_label), pairs=[])
    skipped: set[str] = set()

    def styles_for(rec: Record) -> list[str]:
        if rec.style is not None:
            return [rec.style]
        if not styles:
            raise DataValidationError(
                f"record {rec.id} has no style and no styles were given for the round"
            )
        return list(styles)

    for rec in input_batch.records:
        if not rec.image:
            continue
        for style in styles_for(rec):
            if tuners is not None and style not in tuners:
                skipped.add(style)
                continue
            image = load_image(rec.image)
            edited = editor.edit(
                image,
                style=style,
                direction=direction,
                tuned=tuners is not None,
                seed=_record_seed(seed, f"{out_label}:{rec.id}:{style}"),
            )
            new_id = f"{out_label}-{style}-{rec.id}" if rec.style is None else f"{out_label}-{rec.id}"
            ref = save_image(edited, os.path.join(out_dir, f"{new_id}.png"))
            result.batch.records.append(
                Record(
                    id=new_id,
                    batch=out_label,
                    style=style,
                    prompt=rec.prompt,
                    image=ref,
                    pair_of=rec.id,
                    round=out_label,
                )
            )
            result.pairs.append(
                ImagePair(
                    id=new_id,
                    source_ref=ref,
                    target_ref=rec.image,
                    style=style,
                    round=out_label,
                )
            )
    result.skipped_styles = sorted(skipped)
    return result


# ---------------------------------------------------------------------------
# tuner training
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TunerSchedule:
    steps: int = 10000
    lr: float = 1e-4
    batch_size: int = 4
    resolution: int = 1024
    resize_min: float = 1.0
    resize_max: float = 1.125
    rank: int = 256

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)


def augment_pair(
    source: np.ndarray,
    target: np.ndarray,
    resolution: int,
    resize_range: tuple[float, float],
    rng: np.random.Generator,
) -> tuple[np.ndarray, np.ndarray]:
    """Random resize into [min, max]× the training resolution, then center crop."""
    from PIL import Image

    factor = rng.uniform(*resize_range)
    size = max(resolution, int(round(resolution * factor)))
    out = []
    for img in (source, target):
        resized = np.asarray(Image.fromarray(img).resize((size, size), Image.BILINEAR))
        off = (size - resolution) // 2
        out.append(resized[off : off + resolution, off : off + resolution])
    return out[0], out[1]


def validate_tuner_pairs(style: str, pairs: list[ImagePair]) -> None:
    if not pairs:
        raise DataValidationError(f"no training pairs for style {style!r}")
    bad_style = {p.style for p in pairs} - {style}
    if bad_style:
        raise DataValidationError(
            f"tuner for {style!r} got pairs of other styles: {sorted(bad_style)}"
        )
    not_passing = [p.id for p in pairs if p.usable != "pass"]
    if not_passing:
        raise DataValidationError(
            f"tuner pairs must all be PASS; offending: {not_passing[:5]}"
        )


def train_tuner(
    style: str,
    direction: str,
    pairs: list[ImagePair],
    trainer,
    schedule: TunerSchedule | None = None,
    out_dir: str = ".",
) -> TunerRef:
    """Train one per-style adapter on its filtered pairs."""
    schedule = schedule or TunerSchedule()
    validate_tuner_pairs(style, pairs)
    os.makedirs(out_dir, exist_ok=True)
    out_path = os.path.join(out_dir, f"{style}.{direction}.tuner")
    return trainer.train(style, direction, pairs, schedule, out_path)


class StubTunerTrainer:
    """Zero-cost trainer for offline pipeline runs: records metadata only."""

    def train(self, style, direction, pairs, schedule: TunerSchedule, out_path) -> TunerRef:
        meta = {
            "style": style,
            "direction": direction,
            "pairs": len(pairs),
            "schedule": schedule.as_dict(),
        }
        with open(out_path + ".json", "w", encoding="utf-8") as fh:
            json.dump(meta, fh)
        return TunerRef(
            style=style,
            direction=direction,
            path=out_path + ".json",
            rank=schedule.rank,
            metadata=meta,
        )


class DiffusionTunerTrainer:
    """Fine-tunes a fresh editing model per (style, direction) on the pair set."""

    style_instruction = "Let this image be in the style of <style>"
    destyle_instruction = "Turn this image into a plain photograph"

    def __init__(self, model_factory, augment_copies: int = 1, seed: int = 0):
        self.model_factory = model_factory
        self.augment_copies = augment_copies
        self.seed = seed

    def build_records(self, style, direction, pairs, schedule: TunerSchedule):
        from .diffusion import EditRecord

        rng = np.random.default_rng(self.seed)
        records = []
        for pair in pairs:
            src = load_image(pair.source_ref)
            tgt = load_image(pair.target_ref)
            for _ in range(self.augment_copies):
                aug_src, aug_tgt = augment_pair(
                    src, tgt, schedule.resolution, (schedule.resize_min, schedule.resize_max), rng
                )
                if direction == STYLE:
                    records.append(
                        EditRecord(
                            source=aug_src,
                            target=aug_tgt,
                            instruction=self.style_instruction,
                            styles=(style,),
                        )
                    )
                else:
                    records.append(
                        EditRecord(
                            source=aug_src, target=aug_tgt, instruction=self.destyle_instruction
                        )
                    )
        return records

    def train(self, style, direction, pairs, schedule: TunerSchedule, out_path) -> TunerRef:
        from .diffusion import TrainConfig, TrainMode

        model = self.model_factory()
        records = self.build_records(style, direction, pairs, schedule)
        report = model.finetune(
            TrainMode.TEXT_BASED,
            records,
            TrainConfig(steps=schedule.steps, lr=schedule.lr, batch_size=schedule.batch_size),
            seed=self.seed,
        )
        meta = {
            "style": style,
            "direction": direction,
            "pairs": len(pairs),
            "schedule": schedule.as_dict(),
            "initial_loss": report.initial_loss,
            "final_loss": report.final_loss,
        }
        path = out_path + ".pt"
        model.save(path, extra=meta)
        return TunerRef(
            style=style, direction=direction, path=path, rank=schedule.rank, metadata=meta
        )


# ---------------------------------------------------------------------------
# usability reporting
# ---------------------------------------------------------------------------

@dataclass
class UsabilityReport:
    counts: dict[str, tuple[int, int]]  # style -> (pass, total)

    @classmethod
    def from_pairs(cls, pairs: list[ImagePair]) -> "UsabilityReport":
        if any(p.usable is None for p in pairs):
            raise DataValidationError("usability needs a verdict on every pair")
        counts: dict[str, list[int]] = {}
        for p in pairs:
            entry = counts.setdefault(p.style, [0, 0])
            entry[1] += 1
            if p.usable == "pass":
                entry[0] += 1
        return cls(counts={k: (v[0], v[1]) for k, v in counts.items()})

    @property
    def per_style(self) -> dict[str, float]:
        return {k: 100.0 * p / t for k, (p, t) in self.counts.items()}

    @property
    def average(self) -> float:
        rates = list(self.per_style.values())
        return float(np.mean(rates)) if rates else 0.0

    def rounded(self) -> dict[str, float]:
        out = {k: round(v, 2) for k, v in self.per_style.items()}
        out["__average__"] = round(self.average, 2)
        return out


def usability_rate(pairs: list[ImagePair]) -> UsabilityReport:
    return UsabilityReport.from_pairs(pairs)


def usability_table(first: UsabilityReport, final: UsabilityReport, first_label: str, final_label: str) -> str:
    """Per-style usability for two rounds plus the gain column."""
    width = max([len(s) for s in first.counts] + [len("Average")]) + 2
    lines = [f"{'Style Name':<{width}}{first_label:>10}{final_label:>10}{'Delta':>10}"]
    for style in sorted(first.counts):
        a = first.per_style[style]
        b = final.per_style.get(style, 0.0)
        lines.append(f"{style:<{width}}{a:>10.2f}{b:>10.2f}{b - a:>10.2f}")
    lines.append(
        f"{'Average':<{width}}{first.average:>10.2f}{final.average:>10.2f}"
        f"{final.average - first.average:>10.2f}"
    )
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# the pipeline
# ---------------------------------------------------------------------------

STAGES = (
    "generate_a",
    "generate_b",
    "destyle_a1",
    "filter_a1",
    "train_style_tuners",
    "stylize_b1",
    "filter_b1",
    "train_destyle_tuners",
    "destyle_a2",
    "filter_a2",
    "finalize",
)


@dataclass
class PipelineConfig:
    run_dir: str
    styles: list[StyleSpec]
    prompts: list[str]
    captions: list[str]
    thresholds: FilterThresholds = field(default_factory=FilterThresholds)
    tuner_schedule: TunerSchedule = field(default_factory=TunerSchedule)
    seed: int = 0

    def echo(self) -> dict:
        return {
            "run_dir": self.run_dir,
            "styles": [(s.name, s.expansion_format) for s in self.styles],
            "prompts": len(self.prompts),
            "captions": len(self.captions),
            "thresholds": {"lower": self.thresholds.lower, "upper": self.thresholds.upper},
            "tuner_schedule": self.tuner_schedule.as_dict(),
            "seed": self.seed,
        }


class PipelineState:
    """Completed-stage bookkeeping persisted as state.json in the run dir."""

    def __init__(self, path: str):
        self.path = path
        self.completed: list[str] = []
        self.log: list[dict] = []
        if os.path.exists(path):
            with open(path, encoding="utf-8") as fh:
                data = json.load(fh)
            self.completed = data.get("completed", [])
            self.log = data.get("log", [])

    def mark(self, stage: str) -> None:
        if stage not in self.completed:
            self.completed.append(stage)
            self.log.append({"stage": stage, "time": time.time()})
        with open(self.path, "w", encoding="utf-8") as fh:
            json.dump({"completed": self.completed, "log": self.log}, fh, indent=2)

    def done(self, stage: str) -> bool:
        return stage in self.completed


class Pipeline:
    """Runs the full stage sequence against injected editing/training seams."""

    def __init__(self, config: PipelineConfig, t2i, editor, trainer, scorer):
        self.config = config
        self.t2i = t2i
        self.editor = editor
        self.trainer = trainer
        self.scorer = scorer
        self.run_dir = config.run_dir
        os.makedirs(self.run_dir, exist_ok=True)
        for sub in ("manifests", "pairs", "images", "tuners"):
            os.makedirs(os.path.join(self.run_dir, sub), exist_ok=True)
        with open(os.path.join(self.run_dir, "config.json"), "w", encoding="utf-8") as fh:
            json.dump(config.echo(), fh, indent=2)
        self.state = PipelineState(os.path.join(self.run_dir, "state.json"))

    # path helpers
    def _manifest(self, label: str) -> str:
        return os.path.join(self.run_dir, "manifests", f"batch{label}.jsonl")

    def _pairs(self, label: str) -> str:
        return os.path.join(self.run_dir, "pairs", f"pairs{label}.jsonl")

    def _images(self, label: str) -> str:
        return os.path.join(self.run_dir, "images", label)

    def _tuners(self, direction: str) -> dict[str, TunerRef]:
        index_path = os.path.join(self.run_dir, "tuners", f"{direction}.json")
        if not os.path.exists(index_path):
            return {}
        with open(index_path, encoding="utf-8") as fh:
            raw = json.load(fh)
        return {k: TunerRef(**v) for k, v in raw.items()}

    def _save_tuners(self, direction: str, tuners: dict[str, TunerRef]) -> None:
        index_path = os.path.join(self.run_dir, "tuners", f"{direction}.json")
        with open(index_path, "w", encoding="utf-8") as fh:
            json.dump({k: dataclasses.asdict(v) for k, v in tuners.items()}, fh, indent=2)

    # stages
    def _generate(self, label: str) -> None:
        path = self._manifest(label)
        if os.path.exists(path):
            manifest = BatchManifest.load(path)
        elif label == "A":
            manifest = make_batch_a(self.config.styles, self.config.prompts)
        else:
            manifest = make_batch_b(self.config.captions)
        generate_batch(manifest, self.t2i, self._images(label), seed=self.config.seed)
        manifest.save(path)
        failed = [r.id for r in manifest.records if not r.image]
        if failed:
            raise PipelineError(
                f"batch {label}: {len(failed)} record(s) failed to generate "
                f"(e.g. {failed[0]}); rerun to resume"
            )

    def _edit(self, in_label: str, out_label: str, direction: str, tuned: bool) -> None:
        input_batch = BatchManifest.load(self._manifest(in_label))
        tuners = self._tuners(STYLE if direction == STYLE else DESTYLE) if tuned else None
        result = edit_round(
            input_batch,
            direction=direction,
            editor=self.editor,
            out_label=out_label,
            out_dir=self._images(out_label),
            styles=[s.name for s in self.config.styles],
            tuners=tuners,
            seed=self.config.seed,
        )
        result.batch.save(self._manifest(out_label))
        save_pairs(result.pairs, self._pairs(out_label))
        if result.skipped_styles:
            print(f"[{out_label}] skipped styles without tuners: {result.skipped_styles}")

    def _filter(self, label: str) -> None:
        pairs = load_pairs(self._pairs(label))
        pairs = filter_pairs(pairs, self.config.thresholds, self.scorer)
        save_pairs(pairs, self._pairs(label))
        # reflect verdicts into the batch manifest records
        manifest = BatchManifest.load(self._manifest(label))
        verdicts = {p.id: p for p in pairs}
        for rec in manifest.records:
            if rec.id in verdicts:
                rec.similarity = verdicts[rec.id].similarity
                rec.verdict = verdicts[rec.id].reason
        manifest.save(self._manifest(label))

    def _train(self, direction: str, pairs_label: str) -> None:
        pairs = [p for p in load_pairs(self._pairs(pairs_label)) if p.usable == "pass"]
        tuners: dict[str, TunerRef] = {}
        for spec in self.config.styles:
            style_pairs = [p for p in pairs if p.style == spec.name]
            if not style_pairs:
                print(f"[{direction}] no passing pairs for {spec.name}; skipping tuner")
                continue
            tuners[spec.name] = train_tuner(
                spec.name,
                direction,
                style_pairs,
                trainer=self.trainer,
                schedule=self.config.tuner_schedule,
                out_dir=os.path.join(self.run_dir, "tuners"),
            )
        self._save_tuners(direction, tuners)

    def _finalize(self) -> None:
        pairs = [p for p in load_pairs(self._pairs("A2")) if p.usable == "pass"]
        originals = BatchManifest.load(self._manifest("A")).by_id()
        a2 = BatchManifest.load(self._manifest("A2")).by_id()
        dataset = BatchManifest(label="dataset")
        for pair in pairs:
            rec = a2[pair.id]
            original = originals[rec.pair_of]
            dataset.records.append(
                Record(
                    id=pair.id,
                    batch="dataset",
                    style=pair.style,
                    prompt=original.prompt,
                    image=pair.source_ref,
                    pair_of=original.image,
                    similarity=pair.similarity,
                    verdict=pair.reason,
                    round="A2",
                )
            )
        dataset.save(os.path.join(self.run_dir, "dataset.jsonl"))
        first = usability_rate(load_pairs(self._pairs("A1")))
        final = usability_rate(load_pairs(self._pairs("A2")))
        report = {
            "rounds": {"first": "A1", "final": "A2"},
            "first": first.rounded(),
            "final": final.rounded(),
            "delta": round(final.average - first.average, 2),
            "final_pairs": len(dataset.records),
        }
        with open(os.path.join(self.run_dir, "report.json"), "w", encoding="utf-8") as fh:
            json.dump(report, fh, indent=2)

    def run(self) -> str:
        """Execute all stages, skipping completed ones. Returns the dataset path."""
        actions = {
            "generate_a": lambda: self._generate("A"),
            "generate_b": lambda: self._generate("B"),
            "destyle_a1": lambda: self._edit("A", "A1", DESTYLE, tuned=False),
            "filter_a1": lambda: self._filter("A1"),
            "train_style_tuners": lambda: self._train(STYLE, "A1"),
            "stylize_b1": lambda: self._edit("B", "B1", STYLE, tuned=True),
            "filter_b1": lambda: self._filter("B1"),
            "train_destyle_tuners": lambda: self._train(DESTYLE, "B1"),
            "destyle_a2": lambda: self._edit("A", "A2", DESTYLE, tuned=True),
            "filter_a2": lambda: self._filter("A2"),
            "finalize": self._finalize,
        }
        for stage in STAGES:
            if self.state.done(stage):
                continue
            actions[stage]()
            self.state.mark(stage)
        return os.path.join(self.run_dir, "dataset.jsonl")


def run_pipeline(config: PipelineConfig, t2i, editor, trainer, scorer) -> str:
    return Pipeline(config, t2i, editor, trainer, scorer).run()
