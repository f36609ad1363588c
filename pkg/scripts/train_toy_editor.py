"""Train the editing model on a synthetic two-style dataset and measure how
often edited outputs land closer to the requested style than to the source
style under the toy image encoder.
"""

import argparse

import numpy as np
from PIL import Image

from stylebooth.backends import BackendProfile, ToyStyleTransform, get_backends
from stylebooth.diffusion import (
    EditingModel,
    EditRecord,
    GuidanceConfig,
    NoiseSchedule,
    TrainConfig,
    TrainMode,
)
from stylebooth.instructions import bind, parse_template
from stylebooth.metrics import cosine

TEMPLATE = "Let this image be in the style of <style>"


def content_image(rng, size=8):
    coarse = rng.uniform(0.15, 0.85, size=(4, 4, 3))
    img = Image.fromarray((coarse * 255).astype(np.uint8)).resize((size, size), Image.BILINEAR)
    return np.asarray(img)


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--steps", type=int, default=2000)
    parser.add_argument("--lr", type=float, default=2e-3)
    parser.add_argument("--hidden", type=int, default=32)
    parser.add_argument("--train-images", type=int, default=24)
    parser.add_argument("--eval-images", type=int, default=20)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--out", default=None, help="checkpoint path")
    args = parser.parse_args()

    rng = np.random.default_rng(args.seed)
    alpha, beta = ToyStyleTransform("alpha"), ToyStyleTransform("beta")

    records = []
    for _ in range(args.train_images):
        c = content_image(rng)
        a, b = alpha.apply(c), beta.apply(c)
        records.append(EditRecord(source=a, target=b, instruction=TEMPLATE, styles=("beta",)))
        records.append(EditRecord(source=b, target=a, instruction=TEMPLATE, styles=("alpha",)))

    backends = get_backends(BackendProfile(), kind="toy")
    model = EditingModel(
        backends=backends,
        schedule=NoiseSchedule.linear(num_steps=200),
        hidden=args.hidden,
        seed=args.seed,
    )
    report = model.finetune(
        TrainMode.TEXT_BASED,
        records,
        TrainConfig(steps=args.steps, lr=args.lr, batch_size=8),
        seed=args.seed,
        log_every=max(1, args.steps // 10),
    )
    initial = float(np.mean(report.losses[:30]))
    final = float(np.mean(report.losses[-30:]))
    print(f"loss: {initial:.4f} -> {final:.4f} (ratio {final / initial:.3f})")

    eval_contents = [content_image(rng) for _ in range(args.eval_images)]
    proto_a = np.mean([backends.image.embed_image(alpha.apply(c)) for c in eval_contents], axis=0)
    proto_b = np.mean([backends.image.embed_image(beta.apply(c)) for c in eval_contents], axis=0)
    cfg = GuidanceConfig(s_image=1.0, s_text=3.0, rescale_phi=0.5)
    wins = 0
    half = len(eval_contents) // 2
    for i, c in enumerate(eval_contents):
        if i < half:
            src, tgt_proto, src_proto, style = alpha.apply(c), proto_b, proto_a, "beta"
        else:
            src, tgt_proto, src_proto, style = beta.apply(c), proto_a, proto_b, "alpha"
        bound = bind(parse_template(TEMPLATE), styles=[style])
        out = model.sample_edit(src, bound, cfg, steps=25, seed=1000 + i)
        emb = backends.image.embed_image(out)
        wins += cosine(emb, tgt_proto) > cosine(emb, src_proto)
    print(f"style wins: {wins}/{len(eval_contents)}")

    if args.out:
        model.save(args.out, extra={"script": "train_toy_editor", "wins": wins})
        print(f"checkpoint: {args.out}")


if __name__ == "__main__":
    main()
