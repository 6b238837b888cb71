"""Finite-difference Lipschitz estimate of a trained denoiser and the step size it implies.

    python3 scripts/lipschitz.py runs/desk/checkpoint.ckpt --probes 3
"""
import argparse

from convframelet import desk, directional, km
from convframelet.wavresnet.checkpoint import load_checkpoint
from convframelet.wavresnet.infer import NetworkDenoiser, PatchConfig


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("checkpoint")
    parser.add_argument("--probes", type=int, default=3)
    parser.add_argument("--steps", type=int, default=10)
    parser.add_argument("--stride", type=int, default=8)
    args = parser.parse_args()
    ck = load_checkpoint(args.checkpoint)
    transform = directional.DirectionalTransform.from_config(ck.transform) if ck.transform else directional.standard_transform()
    Q = NetworkDenoiser(ck.params, transform, PatchConfig(stride=args.stride))
    pairs = desk.test_pairs(desk.DeskConfig())[:args.probes]
    L, idx = km.estimate_lipschitz(Q, [p.low for p in pairs], steps=args.steps)
    print(f"Lipschitz lower estimate {L:.4f} (probe {idx}, {args.steps} Krylov steps)")
    print(f"suggested mu {km.suggest_mu(L):.4f}")


if __name__ == "__main__":
    main()
