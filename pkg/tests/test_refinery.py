import json
import os

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stylebooth.backends import BackendProfile, StubT2IClient, ToyEditor, get_backends
from stylebooth.diffusion import EditingModel, NoiseSchedule
from stylebooth.errors import DataValidationError, PipelineError
from stylebooth.refinery import (
    DESTYLE,
    STAGES,
    STYLE,
    BatchManifest,
    ClipImageSimilarity,
    DiffusionTunerTrainer,
    FilterThresholds,
    ImagePair,
    Pipeline,
    PipelineConfig,
    StubTunerTrainer,
    StyleSpec,
    TunerSchedule,
    augment_pair,
    classify_similarity,
    edit_round,
    expand_prompt,
    filter_pairs,
    generate_batch,
    load_pairs,
    load_styles,
    make_batch_a,
    make_batch_b,
    train_tuner,
    usability_rate,
    usability_table,
)

FIXTURES = os.path.join(os.path.dirname(__file__), "..", "src", "stylebooth", "fixtures")


# ---------------------------------------------------------------------------
# prompt expansion and fixtures
# ---------------------------------------------------------------------------

PSYCHEDELIC_FORMAT = (
    "psychedelic style {prompt} . vibrant colors, swirling patterns, "
    "abstract forms, surreal, trippy"
)


def test_expand_prompt_psychedelic():
    spec = StyleSpec(name="artstyle-psychedelic", expansion_format=PSYCHEDELIC_FORMAT)
    assert expand_prompt(spec, "A man with a beard") == (
        "psychedelic style A man with a beard . vibrant colors, swirling patterns, "
        "abstract forms, surreal, trippy"
    )


def test_expand_prompt_identity_format():
    spec = StyleSpec(name="plain", expansion_format="{prompt}")
    assert expand_prompt(spec, "anything at all") == "anything at all"


def test_style_spec_requires_single_placeholder():
    with pytest.raises(DataValidationError):
        StyleSpec(name="bad", expansion_format="no placeholder here")
    with pytest.raises(DataValidationError):
        StyleSpec(name="bad", expansion_format="{prompt} and {prompt}")


def test_expand_preserves_bytes_around_placeholder():
    spec = StyleSpec(name="s", expansion_format="pre {{x}} {prompt} post")
    assert expand_prompt(spec, "MID") == "pre {{x}} MID post"


def test_styles_fixture_loads():
    styles = load_styles(os.path.join(FIXTURES, "styles.tsv"))
    names = [s.name for s in styles]
    assert "artstyle-psychedelic" in names
    psychedelic = next(s for s in styles if s.name == "artstyle-psychedelic")
    assert psychedelic.expansion_format == PSYCHEDELIC_FORMAT
    assert len(styles) == 5


# ---------------------------------------------------------------------------
# thresholds and filtering
# ---------------------------------------------------------------------------

def test_thresholds_default_band():
    t = FilterThresholds()
    assert (t.lower, t.upper) == (0.2, 0.84)


def test_thresholds_must_be_ordered():
    with pytest.raises(DataValidationError):
        FilterThresholds(lower=0.9, upper=0.2)


@pytest.mark.parametrize(
    "similarity, usable, reason",
    [
        (0.90, "fail", "TOO_SIMILAR"),
        (0.10, "fail", "TOO_DIFFERENT"),
        (0.50, "pass", "PASS"),
        (0.84, "pass", "PASS"),  # inclusive upper bound
        (0.20, "pass", "PASS"),  # inclusive lower bound
    ],
)
def test_classification_band(similarity, usable, reason):
    assert classify_similarity(similarity, FilterThresholds()) == (usable, reason)


@given(
    st.floats(min_value=-1.0, max_value=1.0),
    st.floats(min_value=-0.9, max_value=0.4),
    st.floats(min_value=0.45, max_value=1.0),
)
@settings(max_examples=60, deadline=None)
def test_classification_pure_function_of_inputs(sim, lo, hi):
    thresholds = FilterThresholds(lower=lo, upper=hi)
    first = classify_similarity(sim, thresholds)
    assert first == classify_similarity(sim, thresholds)
    usable, reason = first
    if lo <= sim <= hi:
        assert (usable, reason) == ("pass", "PASS")
    elif sim > hi:
        assert (usable, reason) == ("fail", "TOO_SIMILAR")
    else:
        assert (usable, reason) == ("fail", "TOO_DIFFERENT")


class TableScorer:
    """Similarity lookup by source ref, for fixture-driven filtering."""

    def __init__(self, table):
        self.table = table

    def score(self, source_ref, target_ref):
        return self.table[source_ref]


def _pair(i, style="s", sim_ref=None, round_="A1"):
    return ImagePair(
        id=f"p{i}",
        source_ref=sim_ref or f"src{i}",
        target_ref=f"tgt{i}",
        style=style,
        round=round_,
    )


def test_filter_pairs_records_verdicts():
    pairs = [_pair(0), _pair(1), _pair(2)]
    scorer = TableScorer({"src0": 0.9, "src1": 0.5, "src2": 0.1})
    out = filter_pairs(pairs, FilterThresholds(), scorer)
    assert [(p.usable, p.reason) for p in out] == [
        ("fail", "TOO_SIMILAR"),
        ("pass", "PASS"),
        ("fail", "TOO_DIFFERENT"),
    ]
    assert [p.similarity for p in out] == [0.9, 0.5, 0.1]


def test_filter_unscorable_pair_fails_with_reason():
    class Broken:
        def score(self, a, b):
            raise OSError("cannot read")

    out = filter_pairs([_pair(0)], FilterThresholds(), Broken())
    assert out[0].usable == "fail"
    assert out[0].reason.startswith("UNSCORABLE")
    assert out[0].similarity is None


# ---------------------------------------------------------------------------
# usability rates
# ---------------------------------------------------------------------------

def _verdict_pairs(style, n_pass, n_total, round_="A1"):
    pairs = []
    for i in range(n_total):
        usable = "pass" if i < n_pass else "fail"
        pairs.append(
            ImagePair(
                id=f"{style}-{i}",
                source_ref=f"s{i}",
                target_ref=f"t{i}",
                style=style,
                round=round_,
                similarity=0.5 if usable == "pass" else 0.9,
                usable=usable,
                reason="PASS" if usable == "pass" else "TOO_SIMILAR",
            )
        )
    return pairs


def test_usability_19_of_217():
    report = usability_rate(_verdict_pairs("artstyle-psychedelic", 19, 217))
    assert report.rounded()["artstyle-psychedelic"] == 8.76


def test_usability_208_of_217():
    report = usability_rate(_verdict_pairs("artstyle-psychedelic", 208, 217))
    assert report.rounded()["artstyle-psychedelic"] == 95.85


def test_usability_zero_of_n():
    report = usability_rate(_verdict_pairs("s", 0, 40))
    assert report.rounded()["s"] == 0.0


def test_usability_requires_verdicts():
    with pytest.raises(DataValidationError):
        usability_rate([_pair(0)])


def test_reference_percentages_reverse_to_integer_counts():
    # each published 217-image rate must come from a whole pass count
    values = [8.76, 95.85, 14.75, 96.77, 5.53, 80.18, 20.74, 94.47, 23.50, 96.31]
    for pct in values:
        count = round(pct / 100 * 217)
        assert abs(pct / 100 * 217 - count) <= 0.5
        assert round(count / 217 * 100, 2) == pct


def test_usability_table_layout():
    first = usability_rate(
        _verdict_pairs("styleA", 2, 10) + _verdict_pairs("styleB", 4, 10)
    )
    final = usability_rate(
        _verdict_pairs("styleA", 9, 10, "A2") + _verdict_pairs("styleB", 8, 10, "A2")
    )
    table = usability_table(first, final, "A1", "A2")
    assert "styleA" in table and "Average" in table
    lines = table.splitlines()
    assert lines[-1].split()[-3:] == ["30.00", "85.00", "55.00"]


# ---------------------------------------------------------------------------
# batches and generation
# ---------------------------------------------------------------------------

def test_batch_a_scales_as_styles_times_prompts():
    styles = [StyleSpec(name=f"s{i}", expansion_format="{prompt}") for i in range(67)]
    prompts = [f"p{i}" for i in range(217)]
    manifest = make_batch_a(styles, prompts)
    assert len(manifest.records) == 67 * 217 == 14539


def test_batch_b_sized_by_captions():
    assert len(make_batch_b([f"c{i}" for i in range(200)]).records) == 200


def test_generate_batch_deterministic(tmp_path):
    styles = [StyleSpec(name="s0", expansion_format="{prompt}")]
    prompts = ["a", "b", "c", "d"]

    def run(sub):
        manifest = make_batch_a(styles, prompts)
        generate_batch(manifest, StubT2IClient(size=16), str(tmp_path / sub), seed=3)
        return [open(r.image, "rb").read() for r in manifest.records]

    assert run("one") == run("two")


class CountingT2I:
    def __init__(self, inner):
        self.inner = inner
        self.calls = 0

    def generate(self, prompt, seed, style=None):
        self.calls += 1
        return self.inner.generate(prompt, seed, style=style)


def test_generate_resume_only_fills_missing(tmp_path):
    styles = [StyleSpec(name="s0", expansion_format="{prompt}")]
    prompts = ["a", "b", "c", "d"]
    manifest = make_batch_a(styles, prompts)
    failing = StubT2IClient(size=16, fail_prompts=frozenset(["b"]))
    generate_batch(manifest, failing, str(tmp_path), seed=0)
    assert sum(1 for r in manifest.records if r.image) == 3
    assert sum(1 for r in manifest.records if r.error) == 1

    counting = CountingT2I(StubT2IClient(size=16))
    generate_batch(manifest, counting, str(tmp_path), seed=0)
    assert counting.calls == 1
    assert all(r.image for r in manifest.records)


def test_manifest_roundtrip(tmp_path):
    manifest = make_batch_b(["x", "y"])
    manifest.records[0].similarity = 0.5
    manifest.records[0].verdict = "PASS"
    path = manifest.save(str(tmp_path / "b.jsonl"))
    loaded = BatchManifest.load(path)
    assert loaded.records[0].similarity == 0.5
    assert loaded.records[1].verdict is None


# ---------------------------------------------------------------------------
# edit rounds
# ---------------------------------------------------------------------------

def _generated_batch(tmp_path, styles, prompts, label="A"):
    if label == "A":
        manifest = make_batch_a(styles, prompts)
    else:
        manifest = make_batch_b(prompts)
    generate_batch(manifest, StubT2IClient(size=16), str(tmp_path / f"images_{label}"), seed=0)
    return manifest


def test_vanilla_destyle_produces_pairs(tmp_path):
    styles = [StyleSpec(name="s0", expansion_format="{prompt}")]
    batch = _generated_batch(tmp_path, styles, ["a", "b"])
    result = edit_round(
        batch, DESTYLE, ToyEditor(), "A1", str(tmp_path / "a1"), styles=["s0"]
    )
    assert len(result.batch.records) == 2
    assert len(result.pairs) == 2
    for pair, rec in zip(result.pairs, batch.records):
        assert pair.target_ref == rec.image
        assert pair.round == "A1"
        assert os.path.exists(pair.source_ref)


def test_stylize_plain_batch_fans_out_over_styles(tmp_path):
    batch = _generated_batch(tmp_path, None, ["u", "v", "w"], label="B")
    tuners = {
        "s0": StubTunerTrainer().train("s0", STYLE, [], TunerSchedule(), str(tmp_path / "t0")),
        "s1": StubTunerTrainer().train("s1", STYLE, [], TunerSchedule(), str(tmp_path / "t1")),
    }
    result = edit_round(
        batch, STYLE, ToyEditor(), "B1", str(tmp_path / "b1"), styles=["s0", "s1"], tuners=tuners
    )
    assert len(result.batch.records) == 6
    assert {r.style for r in result.batch.records} == {"s0", "s1"}


def test_edit_round_skips_styles_without_tuner(tmp_path):
    batch = _generated_batch(tmp_path, None, ["u"], label="B")
    tuners = {
        "s0": StubTunerTrainer().train("s0", STYLE, [], TunerSchedule(), str(tmp_path / "t0"))
    }
    result = edit_round(
        batch, STYLE, ToyEditor(), "B1", str(tmp_path / "b1"), styles=["s0", "s1"], tuners=tuners
    )
    assert result.skipped_styles == ["s1"]
    assert {r.style for r in result.batch.records} == {"s0"}


def test_edit_round_empty_batch_is_empty(tmp_path):
    result = edit_round(
        BatchManifest(label="A"), DESTYLE, ToyEditor(), "A1", str(tmp_path / "a1"), styles=["s0"]
    )
    assert result.batch.records == [] and result.pairs == []


# ---------------------------------------------------------------------------
# tuner training
# ---------------------------------------------------------------------------

def test_tuner_defaults_echoed_in_metadata(tmp_path):
    pairs = _verdict_pairs("s0", 3, 3)
    ref = train_tuner("s0", STYLE, pairs, StubTunerTrainer(), out_dir=str(tmp_path))
    assert ref.rank == 256
    schedule = ref.metadata["schedule"]
    assert schedule["steps"] == 10000
    assert schedule["lr"] == 1e-4
    assert schedule["batch_size"] == 4
    assert schedule["resolution"] == 1024
    assert (schedule["resize_min"], schedule["resize_max"]) == (1.0, 1.125)


def test_tuner_rejects_empty_and_mixed_and_failing_pairs(tmp_path):
    with pytest.raises(DataValidationError):
        train_tuner("s0", STYLE, [], StubTunerTrainer(), out_dir=str(tmp_path))
    mixed = _verdict_pairs("s0", 2, 2) + _verdict_pairs("s1", 1, 1)
    with pytest.raises(DataValidationError):
        train_tuner("s0", STYLE, mixed, StubTunerTrainer(), out_dir=str(tmp_path))
    failing = _verdict_pairs("s0", 1, 3)
    with pytest.raises(DataValidationError):
        train_tuner("s0", STYLE, failing, StubTunerTrainer(), out_dir=str(tmp_path))


def test_augment_pair_resizes_and_crops(rng):
    src = (rng.uniform(0, 255, (32, 32, 3))).astype(np.uint8)
    tgt = (rng.uniform(0, 255, (32, 32, 3))).astype(np.uint8)
    a, b = augment_pair(src, tgt, 16, (1.0, 1.125), rng)
    assert a.shape == (16, 16, 3) and b.shape == (16, 16, 3)


def test_diffusion_tuner_smoke_loss_decreases(tmp_path, rng):
    from conftest import make_image
    from stylebooth.backends import save_image

    pairs = []
    for i in range(4):
        src = make_image(rng, 8)
        tgt = make_image(rng, 8)
        pairs.append(
            ImagePair(
                id=f"p{i}",
                source_ref=save_image(src, str(tmp_path / f"s{i}.png")),
                target_ref=save_image(tgt, str(tmp_path / f"t{i}.png")),
                style="s0",
                round="A1",
                similarity=0.5,
                usable="pass",
                reason="PASS",
            )
        )

    def factory():
        return EditingModel(
            backends=get_backends(BackendProfile(), kind="toy"),
            schedule=NoiseSchedule.linear(num_steps=50),
            hidden=16,
            seed=2,
        )

    trainer = DiffusionTunerTrainer(factory, seed=0)
    schedule = TunerSchedule(steps=50, lr=2e-3, batch_size=4, resolution=8)
    ref = train_tuner("s0", STYLE, pairs, trainer, schedule=schedule, out_dir=str(tmp_path))
    assert ref.metadata["final_loss"] < ref.metadata["initial_loss"]
    assert os.path.exists(ref.path)


# ---------------------------------------------------------------------------
# full pipeline
# ---------------------------------------------------------------------------

class CountingEditor:
    def __init__(self):
        self.inner = ToyEditor()
        self.calls = 0

    def edit(self, *args, **kwargs):
        self.calls += 1
        return self.inner.edit(*args, **kwargs)


def toy_pipeline(tmp_path, t2i=None, name="run"):
    backends = get_backends(BackendProfile(), kind="toy")
    styles = load_styles(os.path.join(FIXTURES, "styles.tsv"))[:2]
    config = PipelineConfig(
        run_dir=str(tmp_path / name),
        styles=styles,
        prompts=[f"subject number {i}" for i in range(8)],
        captions=[f"plain photo caption {i}" for i in range(6)],
        tuner_schedule=TunerSchedule(steps=1, resolution=16),
        seed=0,
    )
    editor = CountingEditor()
    pipeline = Pipeline(
        config,
        t2i=t2i or StubT2IClient(size=16),
        editor=editor,
        trainer=StubTunerTrainer(),
        scorer=ClipImageSimilarity(backends.image),
    )
    return pipeline, editor


def test_pipeline_smoke_end_to_end(tmp_path):
    pipeline, editor = toy_pipeline(tmp_path)
    dataset_path = pipeline.run()
    assert [e["stage"] for e in pipeline.state.log] == list(STAGES)
    assert os.path.exists(dataset_path)
    assert os.path.exists(os.path.join(pipeline.run_dir, "report.json"))
    # final training pairs always target original batch A images
    dataset = BatchManifest.load(dataset_path)
    originals = {r.image for r in BatchManifest.load(pipeline._manifest("A")).records}
    assert dataset.records, "pipeline produced no usable final pairs"
    for rec in dataset.records:
        assert rec.pair_of in originals
        assert rec.verdict == "PASS"


def test_pipeline_rerun_is_noop(tmp_path):
    pipeline, editor = toy_pipeline(tmp_path)
    pipeline.run()
    first_calls = editor.calls
    log_before = list(pipeline.state.log)

    again, editor2 = toy_pipeline(tmp_path)  # same run_dir, fresh seams
    again.run()
    assert editor2.calls == 0
    assert [e["stage"] for e in again.state.log] == [e["stage"] for e in log_before]
    assert first_calls > 0


def test_pipeline_resumes_after_generation_failure(tmp_path):
    failing = StubT2IClient(size=16, fail_prompts=frozenset(["plain photo caption 3"]))
    pipeline, _ = toy_pipeline(tmp_path, t2i=failing)
    with pytest.raises(PipelineError):
        pipeline.run()
    assert pipeline.state.done("generate_a")
    assert not pipeline.state.done("generate_b")

    counting = CountingT2I(StubT2IClient(size=16))
    resumed, _ = toy_pipeline(tmp_path, t2i=counting)
    resumed.run()
    assert counting.calls == 1  # only the failed caption is regenerated
    assert resumed.state.done("finalize")


def test_pipeline_stage_order_matches_design():
    assert STAGES == (
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


def test_pipeline_usability_improves_with_tuning(tmp_path):
    pipeline, _ = toy_pipeline(tmp_path)
    pipeline.run()
    first = usability_rate(load_pairs(pipeline._pairs("A1")))
    final = usability_rate(load_pairs(pipeline._pairs("A2")))
    assert final.average > first.average


def test_pipeline_report_contents(tmp_path):
    pipeline, _ = toy_pipeline(tmp_path)
    pipeline.run()
    with open(os.path.join(pipeline.run_dir, "report.json")) as fh:
        report = json.load(fh)
    assert report["rounds"] == {"first": "A1", "final": "A2"}
    assert "__average__" in report["first"]
