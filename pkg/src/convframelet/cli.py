"""Command-line entry point: ``convframelet <command> --config FILE --out DIR``.

Commands: gen-data, train, denoise, spectrum, verify, metrics.  Every
command reads a strict JSON config (omitted keys take their defaults),
writes its outputs into a temporary directory and renames it to ``--out``
only on success, and exits with status 1 on any error.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import shutil
import sys
import tempfile
import time
from contextlib import nullcontext
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import config as cfgio
from . import ct_sim, directional, metrics
from .errors import InvalidArgumentError, NumericFailureError
from .fileio import atomic_write_text, load_tensor, save_pgm, save_tensor
from .image_core import Image
from .km import KMConfig, km_denoise
from .spectrum import module_spectra
from .verification import run_checks
from .wavresnet.checkpoint import load_checkpoint, save_checkpoint
from .wavresnet.infer import NetworkDenoiser, PatchConfig
from .wavresnet.network import ArchConfig, init_params
from .wavresnet.train import TrainConfig, TrainingData, Trainer, calibrate_input_scale

MANIFEST = "manifest.json"


# command configs -----------------------------------------------------------

@dataclass(frozen=True)
class GenDataConfig:
    family: str = "random_ellipses"
    fractions: tuple[float, ...] = (0.13, 0.25, 0.5)
    count: int = 8
    seed: int = 0
    scan: ct_sim.ScanConfig = field(default_factory=ct_sim.ScanConfig)
    peak: float = ct_sim.DEFAULT_PEAK


@dataclass(frozen=True)
class TrainRunConfig:
    dataset: str = "data"
    arch: ArchConfig = field(default_factory=ArchConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    transform: directional.TransformConfig = field(default_factory=lambda: directional.TransformConfig())
    init_seed: int = 0
    init_std: float = 0.01
    fractions: tuple[float, ...] | None = None
    resume: str | None = None
    max_steps: int | None = None


@dataclass(frozen=True)
class DenoiseRunConfig:
    checkpoint: str = "run/checkpoint.ckpt"
    dataset: str = "data"
    fraction: float = 0.25
    indices: tuple[int, ...] | None = None
    mode: str = "both"
    km: KMConfig = field(default_factory=KMConfig)
    patch_stride: int = 8
    write_images: bool = True


@dataclass(frozen=True)
class SpectrumRunConfig:
    checkpoint: str = "run/checkpoint.ckpt"
    dataset: str = "data"
    fraction: float = 0.25
    indices: tuple[int, ...] | None = None
    probe: str = "low"
    kernel: tuple[int, int] = (3, 3)


@dataclass(frozen=True)
class VerifyConfig:
    transform: directional.TransformConfig = field(default_factory=lambda: directional.TransformConfig())
    gradient_seeds: tuple[int, ...] = (0, 1, 2)
    corrupt_dual: bool = False


@dataclass(frozen=True)
class MetricsConfig:
    estimate: str = "estimate.cft"
    reference: str = "reference.cft"
    peak: float = ct_sim.DEFAULT_PEAK
    ssim_window: int = 11
    ssim_sigma: float = 1.5


# helpers -----------------------------------------------------------------------

class _Output:
    """Staging directory renamed onto the destination when the command succeeds."""

    def __init__(self, out: Path):
        self.out = Path(out)
        self.out.parent.mkdir(parents=True, exist_ok=True)
        self.tmp = Path(tempfile.mkdtemp(prefix=f".{self.out.name}.", dir=self.out.parent))

    def path(self, name: str) -> Path:
        return self.tmp / name

    def commit(self):
        if self.out.exists():
            shutil.rmtree(self.out)
        self.tmp.rename(self.out)

    def discard(self):
        shutil.rmtree(self.tmp, ignore_errors=True)


def _sample_name(kind: str, index: int, fraction: float | None = None) -> str:
    if fraction is None:
        return f"{kind}_{index:04d}.cft"
    return f"{kind}_{index:04d}_f{fraction:g}.cft"


def _load_manifest(dataset: str) -> dict:
    path = Path(dataset) / MANIFEST
    if not path.is_file():
        raise InvalidArgumentError(f"dataset manifest not found: {path}")
    return json.loads(path.read_text())


def _dataset_pairs(dataset: str, fractions=None) -> tuple[list[ct_sim.CTPair], dict]:
    manifest = _load_manifest(dataset)
    root = Path(dataset)
    wanted = None if fractions is None else {float(f) for f in fractions}
    pairs = []
    for s in manifest["samples"]:
        phantom = load_tensor(root / s["phantom"])[0]
        reference = load_tensor(root / s["reference"])[0]
        routine = load_tensor(root / s["routine"])[0]
        for fr, name in sorted(s["low"].items(), key=lambda kv: float(kv[0])):
            if wanted is not None and float(fr) not in wanted:
                continue
            pairs.append(ct_sim.CTPair(s["index"], s["seed"], float(fr), phantom, reference, routine,
                                       load_tensor(root / name)[0]))
    if not pairs:
        raise InvalidArgumentError(f"no samples in {dataset} match fractions {fractions}")
    return pairs, manifest


def _transform_from(cfg_dict: dict | None) -> directional.DirectionalTransform:
    if cfg_dict is None:
        return directional.standard_transform()
    return directional.DirectionalTransform.from_config(cfg_dict)


# commands ------------------------------------------------------------------------

def cmd_gen_data(cfg: GenDataConfig, out: _Output) -> str:
    if cfg.count < 1:
        raise InvalidArgumentError(f"dataset count must be at least 1, got {cfg.count}")
    pairs = ct_sim.make_dataset(cfg.family, cfg.fractions, cfg.count, cfg.seed, cfg.scan)
    samples = {}
    for p in pairs:
        entry = samples.setdefault(p.index, {
            "index": p.index, "seed": p.seed,
            "phantom": _sample_name("phantom", p.index),
            "reference": _sample_name("reference", p.index),
            "routine": _sample_name("routine", p.index),
            "low": {},
        })
        if not entry["low"]:
            save_tensor(out.path(entry["phantom"]), p.phantom, {"index": p.index})
            save_tensor(out.path(entry["reference"]), p.reference, {"index": p.index})
            save_tensor(out.path(entry["routine"]), p.routine, {"index": p.index, "fraction": 1.0})
        name = _sample_name("low", p.index, p.fraction)
        entry["low"][f"{p.fraction:g}"] = name
        save_tensor(out.path(name), p.low, {"index": p.index, "fraction": p.fraction})
    manifest = {"format": "convframelet-dataset/1", "config": cfgio.to_dict(cfg),
                "fractions": list(cfg.fractions), "peak": cfg.peak,
                "samples": [samples[k] for k in sorted(samples)]}
    atomic_write_text(out.path(MANIFEST), json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return f"wrote {cfg.count} phantoms x {len(cfg.fractions)} dose fractions"


def cmd_train(cfg: TrainRunConfig, out: _Output) -> str:
    pairs, _ = _dataset_pairs(cfg.dataset, cfg.fractions)
    data = TrainingData.from_pairs(pairs)
    transform = cfg.transform.build()
    if cfg.resume:
        ck = load_checkpoint(cfg.resume)
        trainer = Trainer.resume(ck, data, transform, cfg.train)
    else:
        params = init_params(cfg.arch, seed=cfg.init_seed, std=cfg.init_std)
        params = calibrate_input_scale(params, data, transform)
        trainer = Trainer(params, data, transform, cfg.train)
    t0 = time.perf_counter()
    result = trainer.run(max_steps=cfg.max_steps)
    save_checkpoint(out.path("checkpoint.ckpt"), trainer.checkpoint())
    lines = ["step\tstage\tepoch\tlr\tloss"]
    lines += [f"{e['step']}\t{e['stage']}\t{e['epoch']}\t{e['lr']:.6e}\t{e['loss']:.6e}" for e in trainer.losses]
    atomic_write_text(out.path("losses.tsv"), "\n".join(lines) + "\n")
    manifest = {"config": cfgio.to_dict(cfg), "steps": trainer.step, "total_steps": trainer.total_steps,
                "consumed": result.consumed, "seconds": time.perf_counter() - t0,
                "samples": len(pairs), "params_sha256": trainer.params.digest()}
    atomic_write_text(out.path(MANIFEST), json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    last = trainer.losses[-1]["loss"] if trainer.losses else float("nan")
    return f"trained {trainer.step}/{trainer.total_steps} steps, final loss {last:.4g}"


def _checkpoint_denoiser(path: str, stride: int) -> NetworkDenoiser:
    ck = load_checkpoint(path)
    return NetworkDenoiser(ck.params, _transform_from(ck.transform), PatchConfig(stride=stride))


def cmd_denoise(cfg: DenoiseRunConfig, out: _Output) -> str:
    if cfg.mode not in ("feed-forward", "km", "both"):
        raise InvalidArgumentError(f"mode must be feed-forward, km or both; got {cfg.mode!r}")
    Q = _checkpoint_denoiser(cfg.checkpoint, cfg.patch_stride)
    pairs, manifest = _dataset_pairs(cfg.dataset, (cfg.fraction,))
    if cfg.indices is not None:
        pairs = [p for p in pairs if p.index in set(cfg.indices)]
    peak = float(manifest.get("peak", ct_sim.DEFAULT_PEAK))
    modes = ("feed-forward", "km") if cfg.mode == "both" else (cfg.mode,)
    summary = ["index\tmode\tpsnr_in\tpsnr_out\tssim_out\titerations"]
    for p in pairs:
        before = metrics.evaluate(p.low, p.reference, peak)
        for mode in modes:
            km_cfg = KMConfig.feed_forward() if mode == "feed-forward" else cfg.km
            result, trace = km_denoise(p.low, Q, km_cfg, reference=p.reference, peak=peak)
            report = metrics.evaluate(result, p.reference, peak)
            stem = f"{mode}_{p.index:04d}"
            save_tensor(out.path(f"{stem}.cft"), result.data, {"index": p.index, "mode": mode})
            if cfg.write_images:
                save_pgm(out.path(f"{stem}.pgm"), result.data, 0.0, peak)
            atomic_write_text(out.path(f"{stem}_metrics.json"), report.to_json() + "\n")
            atomic_write_text(out.path(f"{stem}_metrics.tsv"), report.to_table())
            trace.write(out.path(f"{stem}_trace.tsv"))
            summary.append(f"{p.index}\t{mode}\t{before.psnr:.4f}\t{report.psnr:.4f}\t{report.ssim:.5f}\t{len(trace)}")
    atomic_write_text(out.path("summary.tsv"), "\n".join(summary) + "\n")
    atomic_write_text(out.path(MANIFEST), json.dumps({"config": cfgio.to_dict(cfg)}, indent=2, sort_keys=True) + "\n")
    return "\n".join(summary)


def cmd_spectrum(cfg: SpectrumRunConfig, out: _Output) -> str:
    if cfg.probe not in ("low", "routine", "zero"):
        raise InvalidArgumentError(f"probe must be low, routine or zero; got {cfg.probe!r}")
    ck = load_checkpoint(cfg.checkpoint)
    transform = _transform_from(ck.transform)
    pairs, _ = _dataset_pairs(cfg.dataset, (cfg.fraction,))
    if cfg.indices is not None:
        pairs = [p for p in pairs if p.index in set(cfg.indices)]
    lines = ["index\tfirst_tail\tlast_tail\tcompressed"]
    for p in pairs:
        image = {"low": p.low, "routine": p.routine, "zero": np.zeros_like(p.low)}[cfg.probe]
        spectra = module_spectra(ck.params, image, transform, cfg.kernel)
        atomic_write_text(out.path(f"spectrum_{p.index:04d}.tsv"), spectra.to_table())
        lines.append(f"{p.index}\t{spectra.first_tail:.6e}\t{spectra.last_tail:.6e}\t{int(spectra.compressed)}")
    atomic_write_text(out.path("summary.tsv"), "\n".join(lines) + "\n")
    return "\n".join(lines)


class VerificationFailed(Exception):
    pass


def cmd_verify(cfg: VerifyConfig, out: _Output) -> str:
    results = run_checks(cfg.transform.build(), cfg.gradient_seeds, cfg.corrupt_dual)
    text = "\n".join(r.line() for r in results)
    atomic_write_text(out.path("verify.txt"), text + "\n")
    if not all(r.passed for r in results):
        print(text)
        raise VerificationFailed(f"{sum(not r.passed for r in results)} check(s) failed")
    return text


def cmd_metrics(cfg: MetricsConfig, out: _Output) -> str:
    est, _ = load_tensor(cfg.estimate)
    ref, _ = load_tensor(cfg.reference)
    report = metrics.evaluate(Image(est), Image(ref), cfg.peak, window=cfg.ssim_window, sigma=cfg.ssim_sigma)
    atomic_write_text(out.path("metrics.json"), report.to_json() + "\n")
    atomic_write_text(out.path("metrics.tsv"), report.to_table())
    return report.to_table()


COMMANDS = {
    "gen-data": (GenDataConfig, cmd_gen_data),
    "train": (TrainRunConfig, cmd_train),
    "denoise": (DenoiseRunConfig, cmd_denoise),
    "spectrum": (SpectrumRunConfig, cmd_spectrum),
    "verify": (VerifyConfig, cmd_verify),
    "metrics": (MetricsConfig, cmd_metrics),
}


def _with_seed(cfg, seed: int):
    """Route the root seed into every seed field the command config has."""
    changes = {}
    for f in dataclasses.fields(cfg):
        value = getattr(cfg, f.name)
        if f.name in ("seed", "init_seed"):
            changes[f.name] = seed
        elif dataclasses.is_dataclass(value) and any(g.name == "seed" for g in dataclasses.fields(value)):
            changes[f.name] = dataclasses.replace(value, seed=seed)
    return dataclasses.replace(cfg, **changes)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="convframelet", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON config file (defaults apply to omitted keys)")
        p.add_argument("--seed", type=int, help="root seed overriding the config's seeds")
        p.add_argument("--out", default=f"out-{name}", help="output directory")
        p.add_argument("--threads", type=int, help="limit BLAS threads")
        p.add_argument("--print-config", action="store_true", help="print the effective config and exit")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    cls, fn = COMMANDS[args.command]
    try:
        cfg = cfgio.load(cls, args.config) if args.config else cls()
        if args.seed is not None:
            cfg = _with_seed(cfg, args.seed)
        if args.print_config:
            print(cfgio.dumps(cfg), end="")
            return 0
        if args.threads is not None and args.threads < 1:
            raise InvalidArgumentError("--threads must be positive")
        if args.threads is not None:
            from threadpoolctl import threadpool_limits
            limiter = threadpool_limits(args.threads)
        else:
            limiter = nullcontext()
        with limiter:
            out = _Output(Path(args.out))
            try:
                message = fn(cfg, out)
                atomic_write_text(out.path("config.json"), cfgio.dumps(cfg))
                out.commit()
            except BaseException:
                out.discard()
                raise
        print(message)
        return 0
    except (InvalidArgumentError, NumericFailureError, FileNotFoundError, VerificationFailed) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
