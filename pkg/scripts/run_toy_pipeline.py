"""Run the full style-destyle refinement pipeline with offline toy seams.

Writes all artifacts under --run-dir (default ./runs/toy-pipeline) and prints
the per-style usability table for the first and final de-style rounds.
"""

import argparse
import os

from stylebooth.backends import BackendProfile, StubT2IClient, ToyEditor, get_backends
from stylebooth.refinery import (
    ClipImageSimilarity,
    Pipeline,
    PipelineConfig,
    StubTunerTrainer,
    StyleSpec,
    TunerSchedule,
    load_pairs,
    usability_rate,
    usability_table,
)


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--run-dir", default="runs/toy-pipeline")
    parser.add_argument("--styles", type=int, default=4, help="number of toy styles")
    parser.add_argument("--prompts", type=int, default=12, help="prompts per style")
    parser.add_argument("--captions", type=int, default=10, help="plain captions")
    parser.add_argument("--image-size", type=int, default=32)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    backends = get_backends(BackendProfile(seed=args.seed), kind="toy")
    styles = [
        StyleSpec(name=f"toy-style-{i}", expansion_format=f"toy style {i} {{prompt}} rendering")
        for i in range(args.styles)
    ]
    config = PipelineConfig(
        run_dir=args.run_dir,
        styles=styles,
        prompts=[f"subject number {i}" for i in range(args.prompts)],
        captions=[f"plain scene caption {i}" for i in range(args.captions)],
        tuner_schedule=TunerSchedule(steps=1, resolution=args.image_size),
        seed=args.seed,
    )
    pipeline = Pipeline(
        config,
        t2i=StubT2IClient(size=args.image_size, seed=args.seed),
        editor=ToyEditor(seed=args.seed),
        trainer=StubTunerTrainer(),
        scorer=ClipImageSimilarity(backends.image),
    )
    dataset = pipeline.run()
    print(f"dataset: {dataset}")

    first = usability_rate(load_pairs(os.path.join(args.run_dir, "pairs", "pairsA1.jsonl")))
    final = usability_rate(load_pairs(os.path.join(args.run_dir, "pairs", "pairsA2.jsonl")))
    print(usability_table(first, final, "BatchA1", "BatchA2"))


if __name__ == "__main__":
    main()
