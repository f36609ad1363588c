"""Style interpolation sweep: edit one image under a two-style instruction
while sliding the scale weights from (1.5, 0.5) to (0.5, 1.5), saving one
output per step.
"""

import argparse
import os

import numpy as np

from stylebooth.backends import get_backends, load_image, save_image
from stylebooth.diffusion import EditingModel, GuidanceConfig, NoiseSchedule
from stylebooth.instructions import ScaleWeights, bind, parse_template


def alpha_schedule(steps: int) -> list[tuple[float, float]]:
    """Linear pairs from (1.5, 0.5) to (0.5, 1.5); a single step is the midpoint."""
    if steps == 1:
        return [(1.0, 1.0)]
    ts = np.linspace(0.0, 1.0, steps)
    return [(1.5 - t, 0.5 + t) for t in ts]


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--image", required=True)
    parser.add_argument("--style-a", default="watercolor")
    parser.add_argument("--style-b", default="cubism")
    parser.add_argument("--steps", type=int, default=3)
    parser.add_argument("--sample-steps", type=int, default=20)
    parser.add_argument("--checkpoint", default=None)
    parser.add_argument("--out-dir", default="runs/sweep")
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    backends = get_backends()
    if args.checkpoint:
        model = EditingModel.load(args.checkpoint, backends=backends)
    else:
        model = EditingModel(
            backends=backends, schedule=NoiseSchedule.linear(num_steps=200), hidden=32,
            seed=args.seed,
        )
    template = parse_template("blend <style> with <style> aesthetics")
    original = load_image(args.image)
    cfg = GuidanceConfig(s_image=1.0, s_text=3.0, rescale_phi=0.5)
    os.makedirs(args.out_dir, exist_ok=True)
    for i, (a0, a1) in enumerate(alpha_schedule(args.steps)):
        bound = bind(
            template,
            styles=[args.style_a, args.style_b],
            weights=ScaleWeights(alphas=(a0, a1)),
        )
        edited = model.sample_edit(
            original, bound, cfg, steps=args.sample_steps, seed=args.seed
        )
        path = save_image(edited, os.path.join(args.out_dir, f"sweep_{i:02d}_{a0:.2f}_{a1:.2f}.png"))
        print(path)


if __name__ == "__main__":
    main()
