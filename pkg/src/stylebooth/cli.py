"""Command-line entry points for the pipeline, training, editing, eval, and serving.

Exit codes: 0 success, 1 usage/input errors, 2 runtime failures. All
randomness flows from --seed so runs are reproducible from their echoed
config files.
"""

from __future__ import annotations

import functools
import json
import os
import sys
from importlib import resources

import click

from .backends import BackendProfile, StubT2IClient, ToyEditor, get_backends, load_image, save_image
from .diffusion import (
    EditingModel,
    EditRecord,
    GuidanceConfig,
    NoiseSchedule,
    TrainConfig,
    TrainMode,
)
from .errors import DataValidationError, StyleBoothError
from .instructions import ExemplarRef, ScaleWeights, bind, parse_template
from .metrics import evaluate_run, load_benchmark
from .refinery import (
    ClipImageSimilarity,
    DiffusionTunerTrainer,
    FilterThresholds,
    Pipeline,
    PipelineConfig,
    StubTunerTrainer,
    TunerSchedule,
    load_lines,
    load_pairs,
    load_styles,
    train_tuner,
    usability_rate,
    usability_table,
)

click.UsageError.exit_code = 1


def _fixture(name: str) -> str:
    return str(resources.files("stylebooth") / "fixtures" / name)


def guarded(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except click.ClickException:
            raise
        except StyleBoothError as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(1)
        except Exception as exc:  # anything unexpected is a runtime failure
            click.echo(f"runtime error: {exc}", err=True)
            sys.exit(2)

    return wrapper


def _write_echo(path: str, payload: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, default=str)


def _model(checkpoint: str | None, seed: int = 0) -> EditingModel:
    backends = get_backends()
    if checkpoint:
        return EditingModel.load(checkpoint, backends=backends)
    return EditingModel(
        backends=backends, schedule=NoiseSchedule.linear(num_steps=100), hidden=16, seed=seed
    )


@click.group()
def main():
    """StyleBooth toolkit: data refinery, editor training, editing, eval, serving."""


# ---------------------------------------------------------------------------
# pipeline
# ---------------------------------------------------------------------------

@main.group()
def pipeline():
    """Iterative style-destyle dataset refinement."""


def _pipeline_from_config(config: PipelineConfig, trainer_kind: str, image_size: int):
    backends = get_backends()
    if trainer_kind == "diffusion":
        def factory():
            return EditingModel(
                backends=backends, schedule=NoiseSchedule.linear(num_steps=100), hidden=16
            )

        trainer = DiffusionTunerTrainer(factory, seed=config.seed)
    else:
        trainer = StubTunerTrainer()
    return Pipeline(
        config,
        t2i=StubT2IClient(size=image_size, seed=config.seed),
        editor=ToyEditor(seed=config.seed),
        trainer=trainer,
        scorer=ClipImageSimilarity(backends.image),
    )


def _save_pipeline_inputs(config: PipelineConfig, trainer: str, image_size: int) -> None:
    payload = config.echo()
    payload.update(
        {
            "prompts_list": config.prompts,
            "captions_list": config.captions,
            "trainer": trainer,
            "image_size": image_size,
        }
    )
    _write_echo(os.path.join(config.run_dir, "inputs.json"), payload)


def _load_pipeline_inputs(run_dir: str):
    path = os.path.join(run_dir, "inputs.json")
    if not os.path.exists(path):
        raise DataValidationError(f"{run_dir!r} has no inputs.json; was it started with `pipeline run`?")
    with open(path, encoding="utf-8") as fh:
        data = json.load(fh)
    from .refinery import StyleSpec

    config = PipelineConfig(
        run_dir=run_dir,
        styles=[StyleSpec(name=n, expansion_format=f) for n, f in data["styles"]],
        prompts=data["prompts_list"],
        captions=data["captions_list"],
        thresholds=FilterThresholds(**data["thresholds"]),
        tuner_schedule=TunerSchedule(**data["tuner_schedule"]),
        seed=data["seed"],
    )
    return config, data["trainer"], data["image_size"]


@pipeline.command("run")
@click.option("--run-dir", required=True, type=click.Path())
@click.option("--styles", "styles_path", type=click.Path(exists=True), default=None)
@click.option("--prompts", "prompts_path", type=click.Path(exists=True), default=None)
@click.option("--captions", "captions_path", type=click.Path(exists=True), default=None)
@click.option("--lower", type=float, default=0.2, show_default=True)
@click.option("--upper", type=float, default=0.84, show_default=True)
@click.option("--tuner-steps", type=int, default=10000, show_default=True)
@click.option("--tuner-lr", type=float, default=1e-4, show_default=True)
@click.option("--resolution", type=int, default=1024, show_default=True)
@click.option("--trainer", type=click.Choice(["stub", "diffusion"]), default="stub")
@click.option("--image-size", type=int, default=32, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@guarded
def pipeline_run(
    run_dir, styles_path, prompts_path, captions_path, lower, upper,
    tuner_steps, tuner_lr, resolution, trainer, image_size, seed,
):
    """Run the full refinement pipeline (resumable)."""
    config = PipelineConfig(
        run_dir=run_dir,
        styles=load_styles(styles_path or _fixture("styles.tsv")),
        prompts=load_lines(prompts_path or _fixture("prompts_style.txt")),
        captions=load_lines(captions_path or _fixture("captions_plain.txt")),
        thresholds=FilterThresholds(lower=lower, upper=upper),
        tuner_schedule=TunerSchedule(steps=tuner_steps, lr=tuner_lr, resolution=resolution),
        seed=seed,
    )
    pipe = _pipeline_from_config(config, trainer, image_size)
    _save_pipeline_inputs(config, trainer, image_size)
    dataset = pipe.run()
    click.echo(dataset)


@pipeline.command("resume")
@click.option("--run-dir", required=True, type=click.Path(exists=True))
@guarded
def pipeline_resume(run_dir):
    """Continue a partially completed run from its echoed inputs."""
    config, trainer, image_size = _load_pipeline_inputs(run_dir)
    dataset = _pipeline_from_config(config, trainer, image_size).run()
    click.echo(dataset)


@pipeline.command("report")
@click.option("--run-dir", required=True, type=click.Path(exists=True))
@guarded
def pipeline_report(run_dir):
    """Print the per-style usability table for the first and final rounds."""
    first = usability_rate(load_pairs(os.path.join(run_dir, "pairs", "pairsA1.jsonl")))
    final = usability_rate(load_pairs(os.path.join(run_dir, "pairs", "pairsA2.jsonl")))
    click.echo(usability_table(first, final, "BatchA1", "BatchA2"))


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

@main.group()
def train():
    """Fine-tune editors and per-style tuners."""


def _load_records(path: str) -> list[EditRecord]:
    """Dataset manifest to training records.

    Accepts either explicit records {source, target, instruction, styles?,
    exemplar?} or refinery dataset rows {image, pair_of, style} which become
    style-adding examples under the canonical template.
    """
    records = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            row = json.loads(line)
            if "source" in row and "target" in row:
                exemplars = (
                    (ExemplarRef(id=row["exemplar"], path=row["exemplar"]),)
                    if row.get("exemplar")
                    else ()
                )
                records.append(
                    EditRecord(
                        source=row["source"],
                        target=row["target"],
                        instruction=row["instruction"],
                        styles=tuple(row.get("styles", ())),
                        exemplars=exemplars,
                    )
                )
            elif "image" in row and "pair_of" in row:
                records.append(
                    EditRecord(
                        source=row["image"],
                        target=row["pair_of"],
                        instruction="Let this image be in the style of <style>",
                        styles=(row["style"],),
                    )
                )
            else:
                raise DataValidationError(f"unrecognized training record: {row}")
    if not records:
        raise DataValidationError(f"no training records in {path}")
    return records


def _train_editor(mode: TrainMode, data, out, steps, lr, batch_size, hidden, seed):
    records = _load_records(data)
    config = (
        TrainConfig(steps=steps, lr=lr, batch_size=batch_size)
        if steps
        else TrainConfig.default_for(mode)
    )
    model = EditingModel(
        backends=get_backends(),
        schedule=NoiseSchedule.linear(num_steps=1000),
        hidden=hidden,
        seed=seed,
    )
    report = model.finetune(mode, records, config, seed=seed, log_every=max(1, config.steps // 10))
    model.save(out, extra={"mode": mode.value, "steps": config.steps, "lr": config.lr})
    _write_echo(
        out + ".config.json",
        {
            "mode": mode.value, "data": data, "steps": config.steps, "lr": config.lr,
            "batch_size": config.batch_size, "hidden": hidden, "seed": seed,
            "initial_loss": report.initial_loss, "final_loss": report.final_loss,
        },
    )
    click.echo(out)


@train.command("text")
@click.option("--data", required=True, type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path())
@click.option("--steps", type=int, default=None, help="default: 5000")
@click.option("--lr", type=float, default=1e-4, show_default=True)
@click.option("--batch-size", type=int, default=4, show_default=True)
@click.option("--hidden", type=int, default=16, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@guarded
def train_text(data, out, steps, lr, batch_size, hidden, seed):
    """Text-based editor fine-tuning (full denoiser trainable)."""
    _train_editor(TrainMode.TEXT_BASED, data, out, steps, lr, batch_size, hidden, seed)


@train.command("exemplar")
@click.option("--data", required=True, type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path())
@click.option("--steps", type=int, default=None, help="default: 35000")
@click.option("--lr", type=float, default=1e-5, show_default=True)
@click.option("--batch-size", type=int, default=4, show_default=True)
@click.option("--hidden", type=int, default=16, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@guarded
def train_exemplar(data, out, steps, lr, batch_size, hidden, seed):
    """Exemplar-based fine-tuning (alignment layer + denoiser decoder only)."""
    _train_editor(TrainMode.EXEMPLAR_BASED, data, out, steps, lr, batch_size, hidden, seed)


@train.command("tuner")
@click.option("--style", required=True)
@click.option("--direction", type=click.Choice(["style", "destyle"]), required=True)
@click.option("--pairs", "pairs_path", required=True, type=click.Path(exists=True))
@click.option("--out-dir", required=True, type=click.Path())
@click.option("--steps", type=int, default=10000, show_default=True)
@click.option("--lr", type=float, default=1e-4, show_default=True)
@click.option("--resolution", type=int, default=1024, show_default=True)
@click.option("--trainer", "trainer_kind", type=click.Choice(["stub", "diffusion"]), default="diffusion")
@click.option("--seed", type=int, default=0, show_default=True)
@guarded
def train_tuner_cmd(style, direction, pairs_path, out_dir, steps, lr, resolution, trainer_kind, seed):
    """Train one per-style tuner on its filtered pairs."""
    pairs = [p for p in load_pairs(pairs_path) if p.style == style and p.usable == "pass"]
    schedule = TunerSchedule(steps=steps, lr=lr, resolution=resolution)
    if trainer_kind == "diffusion":
        backends = get_backends()

        def factory():
            return EditingModel(
                backends=backends, schedule=NoiseSchedule.linear(num_steps=100), hidden=16, seed=seed
            )

        trainer = DiffusionTunerTrainer(factory, seed=seed)
    else:
        trainer = StubTunerTrainer()
    ref = train_tuner(style, direction, pairs, trainer, schedule=schedule, out_dir=out_dir)
    click.echo(ref.path)


# ---------------------------------------------------------------------------
# editing
# ---------------------------------------------------------------------------

@main.command("edit")
@click.option("--image", "image_path", required=True, type=click.Path(exists=True))
@click.option("--instruction", required=True)
@click.option("--style", "styles", multiple=True)
@click.option("--exemplar", "exemplars", multiple=True, type=click.Path(exists=True))
@click.option("--alpha", "alphas", multiple=True, type=float)
@click.option("--s-image", type=float, default=1.5, show_default=True)
@click.option("--s-text", type=float, default=7.5, show_default=True)
@click.option("--rescale-phi", type=float, default=0.5, show_default=True)
@click.option("--steps", type=int, default=20, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--checkpoint", type=click.Path(exists=True), default=None)
@click.option("--out", "out_path", type=click.Path(), default=None)
@guarded
def edit(
    image_path, instruction, styles, exemplars, alphas,
    s_image, s_text, rescale_phi, steps, seed, checkpoint, out_path,
):
    """Edit one image following a (possibly multimodal) instruction."""
    template = parse_template(instruction)
    refs = [ExemplarRef(id=os.path.basename(p), path=p) for p in exemplars]
    weights = ScaleWeights(alphas=tuple(alphas)) if alphas else None
    bound = bind(template, styles=list(styles), exemplars=refs, weights=weights)
    model = _model(checkpoint, seed=seed)
    cfg = GuidanceConfig(s_image=s_image, s_text=s_text, rescale_phi=rescale_phi)
    edited = model.sample_edit(load_image(image_path), bound, cfg, steps=steps, seed=seed)
    out_path = out_path or os.path.splitext(image_path)[0] + ".edited.png"
    save_image(edited, out_path)
    _write_echo(
        out_path + ".config.json",
        {
            "image": image_path, "instruction": instruction, "styles": list(styles),
            "exemplars": list(exemplars), "alphas": list(alphas),
            "s_image": s_image, "s_text": s_text, "rescale_phi": rescale_phi,
            "steps": steps, "seed": seed, "checkpoint": checkpoint,
        },
    )
    click.echo(out_path)


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------

@main.command("eval")
@click.option("--records", "records_path", required=True, type=click.Path(exists=True))
@click.option("--checkpoint", type=click.Path(exists=True), default=None)
@click.option("--steps", type=int, default=8, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", "out_path", type=click.Path(), default=None)
@guarded
def eval_cmd(records_path, checkpoint, steps, seed, out_path):
    """Score a benchmark run: directional, image, and output similarities."""
    records, rejected = load_benchmark(records_path)
    for rec_id, reason in rejected:
        click.echo(f"skipped {rec_id}: {reason}", err=True)
    model = _model(checkpoint, seed=seed)
    backends = model.backends
    cfg = GuidanceConfig(s_image=1.0, s_text=1.0, rescale_phi=0.0)

    def edit_fn(rec):
        bound = bind(parse_template(rec.instruction))
        return model.sample_edit(rec.load_input(), bound, cfg, steps=steps, seed=seed)

    report = evaluate_run(records, edit_fn, backends.text, backends.image)
    click.echo(report.to_table())
    if out_path:
        with open(out_path, "w", encoding="utf-8") as fh:
            fh.write(report.to_json())
        click.echo(out_path)


# ---------------------------------------------------------------------------
# serving
# ---------------------------------------------------------------------------

@main.command("serve")
@click.option("--data-dir", required=True, type=click.Path())
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", type=int, default=8321, show_default=True)
@click.option("--checkpoint", type=click.Path(exists=True), default=None)
@click.option("--workers", type=int, default=1, show_default=True)
@click.option("--sample-steps", type=int, default=8, show_default=True)
@click.option("--studio-dir", type=click.Path(exists=True), default=None,
              help="serve a studio build at /studio")
@guarded
def serve_cmd(data_dir, host, port, checkpoint, workers, sample_steps, studio_dir):
    """Run the editing HTTP service."""
    from .service import ServiceConfig, create_app

    import uvicorn

    config = ServiceConfig(
        data_dir=data_dir, workers=workers, sample_steps=sample_steps, studio_dir=studio_dir
    )
    app = create_app(config, model=_model(checkpoint) if checkpoint else None)
    uvicorn.run(app, host=host, port=port)


if __name__ == "__main__":
    main()
