"""Desk-scale experiment: train, then report the gain, KM traces and module spectra.

    python3 scripts/run_desk.py --out runs/desk
"""
import argparse
import json
import time
from pathlib import Path

import numpy as np

from convframelet import config, desk, directional
from convframelet.fileio import atomic_write_text
from convframelet.wavresnet.checkpoint import Checkpoint, save_checkpoint
from convframelet.wavresnet.infer import PatchConfig


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--out", default="runs/desk")
    parser.add_argument("--config", help="JSON DeskConfig overrides")
    parser.add_argument("--km-images", type=int, default=10)
    args = parser.parse_args()
    cfg = config.load(desk.DeskConfig, args.config) if args.config else desk.DeskConfig()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    atomic_write_text(out / "config.json", config.dumps(cfg))
    transform = directional.standard_transform()
    patch = PatchConfig(stride=cfg.patch_stride)

    t0 = time.perf_counter()

    def progress(trainer, entry):
        if entry["step"] % 50 == 0:
            print(f"step {entry['step']:4d}/{trainer.total_steps} {entry['stage']} loss {entry['loss']:.4f}", flush=True)

    result = desk.train_network(cfg, desk.training_data(cfg), transform, callback=progress)
    save_checkpoint(out / "checkpoint.ckpt", Checkpoint(result.params, transform.to_config()))
    train_seconds = time.perf_counter() - t0
    lines = ["step\tstage\tepoch\tlr\tloss"]
    lines += [f"{e['step']}\t{e['stage']}\t{e['epoch']}\t{e['lr']:.6e}\t{e['loss']:.6e}" for e in result.losses]
    atomic_write_text(out / "losses.tsv", "\n".join(lines) + "\n")

    pairs = desk.test_pairs(cfg)
    gain = desk.evaluate_gain(result.params, pairs, transform, patch, cfg.peak)
    atomic_write_text(out / "gain.tsv", gain.to_table())
    print(f"mean gain {gain.mean_gain_db:+.2f} dB ({gain.mean_input_psnr:.2f} -> {gain.mean_output_psnr:.2f})")

    rows = desk.km_study(result.params, pairs[:args.km_images], transform, patch, cfg.km, cfg.peak)
    summary = ["index\tfeed_forward_psnr\tplateau\tfinal_psnr"]
    for r in rows:
        r.trace.write(out / f"km_trace_{r.index:04d}.tsv")
        summary.append(f"{r.index}\t{r.feed_forward_psnr:.4f}\t{r.plateau}\t{r.final_psnr:.4f}")
    atomic_write_text(out / "km_summary.tsv", "\n".join(summary) + "\n")

    spectra = desk.spectrum_study(result.params, pairs[:args.km_images], transform)
    for pr, s in zip(pairs, spectra):
        atomic_write_text(out / f"spectrum_{pr.index:04d}.tsv", s.to_table())
    report = {
        "train_seconds": train_seconds,
        "steps": len(result.losses),
        "consumed": result.consumed,
        "mean_gain_db": gain.mean_gain_db,
        "km_plateaus": [r.plateau for r in rows],
        "km_margin_db": [r.final_psnr - r.feed_forward_psnr for r in rows],
        "spectra_compressed": int(sum(s.compressed for s in spectra)),
        "total_seconds": time.perf_counter() - t0,
    }
    atomic_write_text(out / "report.json", json.dumps(report, indent=2) + "\n")
    print(json.dumps(report, indent=2))
    print(f"KM margin mean {np.mean(report['km_margin_db']):+.3f} dB")


if __name__ == "__main__":
    main()
