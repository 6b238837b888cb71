"""Desk-scale experiment pipeline: simulate, train, evaluate, iterate, analyse.

The same functions back the scripts in ``scripts/`` and the acceptance
tests, so the numbers they report come from one code path.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import ct_sim, directional, metrics
from .km import KMConfig, IterationTrace, km_denoise
from .spectrum import ModuleSpectra, module_spectra
from .wavresnet.infer import NetworkDenoiser, PatchConfig, infer_image
from .wavresnet.network import ArchConfig, NetworkParams, init_params
from .wavresnet.train import TrainConfig, TrainingData, TrainResult, Trainer, calibrate_input_scale

PLATEAU_GAIN_DB = 0.1


def _default_train() -> TrainConfig:
    return TrainConfig(lr_initial=0.01, lr_final=0.001, clip=0.01, momentum=0.9, batch_size=8,
                       epochs_stage1=40, epochs_stage2=10, epochs_stage3=10, db_refresh_epochs=5)


@dataclass(frozen=True)
class DeskConfig:
    family: str = "random_ellipses"
    train_fractions: tuple[float, ...] = (0.13, 0.25, 0.5)
    train_count: int = 24
    train_seed: int = 1000
    test_fraction: float = 0.25
    test_count: int = 20
    test_seed: int = 5000
    scan: ct_sim.ScanConfig = field(default_factory=ct_sim.ScanConfig)
    arch: ArchConfig = field(default_factory=ArchConfig)
    train: TrainConfig = field(default_factory=_default_train)
    init_seed: int = 0
    init_std: float = 0.01
    patch_stride: int = 8
    km: KMConfig = field(default_factory=lambda: KMConfig(mu=0.1, relaxation=0.5, max_iters=12, stop_tol=1e-7))
    peak: float = ct_sim.DEFAULT_PEAK


def training_data(cfg: DeskConfig) -> TrainingData:
    pairs = ct_sim.make_dataset(cfg.family, cfg.train_fractions, cfg.train_count, cfg.train_seed, cfg.scan)
    return TrainingData.from_pairs(pairs)


def test_pairs(cfg: DeskConfig) -> list[ct_sim.CTPair]:
    return ct_sim.make_dataset(cfg.family, (cfg.test_fraction,), cfg.test_count, cfg.test_seed, cfg.scan)


def train_network(cfg: DeskConfig, data: TrainingData, transform: directional.DirectionalTransform,
                  callback=None) -> TrainResult:
    params = init_params(cfg.arch, seed=cfg.init_seed, std=cfg.init_std)
    params = calibrate_input_scale(params, data, transform)
    return Trainer(params, data, transform, cfg.train).run(callback=callback)


@dataclass(frozen=True)
class GainRow:
    index: int
    input: metrics.MetricReport
    output: metrics.MetricReport

    @property
    def gain_db(self) -> float:
        return self.output.psnr - self.input.psnr


@dataclass(frozen=True)
class GainReport:
    rows: tuple[GainRow, ...]

    @property
    def mean_input_psnr(self) -> float:
        return float(np.mean([r.input.psnr for r in self.rows]))

    @property
    def mean_output_psnr(self) -> float:
        return float(np.mean([r.output.psnr for r in self.rows]))

    @property
    def mean_gain_db(self) -> float:
        return self.mean_output_psnr - self.mean_input_psnr

    def to_table(self) -> str:
        lines = ["index\tpsnr_in\tpsnr_out\tssim_in\tssim_out"]
        lines += [f"{r.index}\t{r.input.psnr:.4f}\t{r.output.psnr:.4f}\t{r.input.ssim:.5f}\t{r.output.ssim:.5f}"
                  for r in self.rows]
        lines.append(f"mean\t{self.mean_input_psnr:.4f}\t{self.mean_output_psnr:.4f}\t"
                     f"{np.mean([r.input.ssim for r in self.rows]):.5f}\t"
                     f"{np.mean([r.output.ssim for r in self.rows]):.5f}")
        return "\n".join(lines) + "\n"


def evaluate_gain(params: NetworkParams, pairs, transform: directional.DirectionalTransform,
                  patch: PatchConfig, peak: float = ct_sim.DEFAULT_PEAK) -> GainReport:
    """Feed-forward network output versus the noisy input, both scored against the noise-free reconstruction."""
    rows = []
    for pr in pairs:
        out = infer_image(params, pr.low, transform, patch).data
        rows.append(GainRow(pr.index, metrics.evaluate(pr.low, pr.reference, peak),
                            metrics.evaluate(out, pr.reference, peak)))
    return GainReport(tuple(rows))


def plateau_iteration(psnrs, gain_db: float = PLATEAU_GAIN_DB) -> int:
    """First iteration ``n`` (1-based) after which one more iteration gains less than ``gain_db``.

    Returns ``len(psnrs) + 1`` when the trace never flattens.
    """
    for n in range(1, len(psnrs)):
        if psnrs[n] - psnrs[n - 1] < gain_db:
            return n
    return len(psnrs) + 1


@dataclass(frozen=True)
class KMStudyRow:
    index: int
    feed_forward_psnr: float
    trace: IterationTrace

    @property
    def plateau(self) -> int:
        return plateau_iteration(self.trace.psnr_iterate)

    @property
    def final_psnr(self) -> float:
        return self.trace.psnr_iterate[-1]

    @property
    def rises_to_plateau(self) -> bool:
        p = self.trace.psnr_iterate[:self.plateau]
        return all(b >= a for a, b in zip(p, p[1:]))


def km_study(params: NetworkParams, pairs, transform: directional.DirectionalTransform, patch: PatchConfig,
             km: KMConfig, peak: float = ct_sim.DEFAULT_PEAK) -> list[KMStudyRow]:
    Q = NetworkDenoiser(params, transform, patch)
    rows = []
    for pr in pairs:
        ff = metrics.psnr(Q(pr.low).data, pr.reference, peak)
        _, trace = km_denoise(pr.low, Q, km, reference=pr.reference, peak=peak)
        rows.append(KMStudyRow(pr.index, ff, trace))
    return rows


def spectrum_study(params: NetworkParams, pairs, transform: directional.DirectionalTransform) -> list[ModuleSpectra]:
    return [module_spectra(params, pr.low, transform) for pr in pairs]
