"""Staged SGD training of the subband residual network.

Stages, run in the configured order:

* ``stage1``: low-dose inputs against routine-dose targets (``DB0``).
* ``stage2``: adds ``DB_i``, the current network's own outputs on the
  low-dose images paired with the routine-dose targets; rebuilt every
  ``db_refresh_epochs`` epochs.
* ``stage3``: adds identity pairs (routine dose in, routine dose out) whose
  target residual is zero.

Every sample is drawn at the image level: random horizontal and vertical
flips are applied to input and target images together, both are
transformed to subbands and one patch is cut at the same random circular
location.  One epoch is ``ceil(len(DB0) / batch_size)`` steps.
"""
from __future__ import annotations

import hashlib
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .. import directional
from ..errors import InvalidArgumentError, TrainingDivergedError
from .checkpoint import Checkpoint, quantize_
from .infer import PatchConfig, infer_image
from .network import NetworkParams, loss_and_grad

STAGES = ("stage1", "stage2", "stage3")
STAGE_TAGS = ("DB0", "DBi", "identity")
DIVERGENCE_LOSS = 1e6


@dataclass(frozen=True)
class TrainConfig:
    lr_initial: float = 0.01
    lr_final: float = 0.001
    lr_decay: str = "log-linear"
    clip: float = 1e-3
    momentum: float = 0.9
    batch_size: int = 8
    stages: tuple[str, ...] = STAGES
    epochs_stage1: int = 10
    epochs_stage2: int = 5
    epochs_stage3: int = 5
    db_refresh_epochs: int = 50
    db_stride: int = 16
    flip: bool = True
    bn_momentum: float = 0.9
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "stages", tuple(self.stages))
        if not self.lr_initial >= self.lr_final > 0:
            raise InvalidArgumentError("learning rates must satisfy lr_initial >= lr_final > 0")
        if self.lr_decay not in ("log-linear", "constant"):
            raise InvalidArgumentError(f"unknown lr_decay {self.lr_decay!r}")
        if not self.clip > 0:
            raise InvalidArgumentError("clip range must be a positive half-width")
        if not 0 <= self.momentum < 1 or not 0 <= self.bn_momentum < 1:
            raise InvalidArgumentError("momentum values must lie in [0, 1)")
        if self.batch_size < 1 or self.db_refresh_epochs < 1 or self.db_stride < 1:
            raise InvalidArgumentError("batch_size, db_refresh_epochs and db_stride must be positive")
        if not self.stages:
            raise InvalidArgumentError("at least one stage is required")
        for s in self.stages:
            if s not in STAGES:
                raise InvalidArgumentError(f"unknown stage {s!r}")
        if list(self.stages) != sorted(set(self.stages), key=STAGES.index):
            raise InvalidArgumentError("stages must be distinct and in protocol order")
        for s in STAGES:
            if self.epochs(s) < 0:
                raise InvalidArgumentError("epoch counts must be non-negative")

    def epochs(self, stage: str) -> int:
        return getattr(self, f"epochs_{stage}")

    def to_config(self) -> dict:
        d = asdict(self)
        d["stages"] = list(self.stages)
        return d

    @classmethod
    def from_config(cls, cfg: dict) -> "TrainConfig":
        return cls(**cfg)


@dataclass(frozen=True)
class TrainingData:
    """Paired reconstructions: ``low[k]`` and ``routine[k]`` show the same object."""

    low: np.ndarray
    routine: np.ndarray

    def __post_init__(self):
        low = np.asarray(self.low, dtype=np.float64)
        routine = np.asarray(self.routine, dtype=np.float64)
        if low.ndim != 3 or low.shape != routine.shape or len(low) == 0:
            raise InvalidArgumentError("low and routine must be matching non-empty (N, H, W) stacks")
        object.__setattr__(self, "low", low)
        object.__setattr__(self, "routine", routine)

    @classmethod
    def from_pairs(cls, pairs) -> "TrainingData":
        return cls(np.array([p.low for p in pairs]), np.array([p.routine for p in pairs]))

    def unique_routine(self) -> np.ndarray:
        seen, out = set(), []
        for r in self.routine:
            key = r.tobytes()
            if key not in seen:
                seen.add(key)
                out.append(r)
        return np.array(out)

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.low, dtype="<f8").tobytes())
        h.update(np.ascontiguousarray(self.routine, dtype="<f8").tobytes())
        return h.hexdigest()


@dataclass(frozen=True)
class TrainingSample:
    """A batch of subband patches: inputs and the residual targets (input minus clean)."""

    inputs: np.ndarray
    targets: np.ndarray
    tags: tuple[str, ...]

    def __post_init__(self):
        if self.inputs.shape != self.targets.shape:
            raise InvalidArgumentError("input and target patches must have matching shapes")
        if len(self.tags) != len(self.inputs):
            raise InvalidArgumentError("one stage tag per sample is required")
        for t in self.tags:
            if t not in STAGE_TAGS:
                raise InvalidArgumentError(f"unknown stage tag {t!r}")


def calibrate_input_scale(params: NetworkParams, data: TrainingData,
                          transform: directional.DirectionalTransform) -> NetworkParams:
    """Copy of ``params`` whose input scale makes the ``DB0`` residual targets unit-variance."""
    residual = directional.forward_batch(data.low - data.routine, transform)
    std = float(np.std(residual))
    if not std > 0:
        raise InvalidArgumentError("training pairs are identical; cannot calibrate the input scale")
    out = params.copy()
    out.input_scale = 1.0 / std
    return out


def learning_rate(cfg: TrainConfig, step: int, total_steps: int) -> float:
    if cfg.lr_decay == "constant" or total_steps <= 1:
        return cfg.lr_initial
    t = min(step, total_steps - 1) / (total_steps - 1)
    return cfg.lr_initial * (cfg.lr_final / cfg.lr_initial) ** t


@dataclass
class TrainResult:
    params: NetworkParams
    losses: list[dict]
    consumed: dict[str, int]
    seconds: float


@dataclass
class _Pool:
    inputs: list[np.ndarray] = field(default_factory=list)
    clean: list[np.ndarray] = field(default_factory=list)
    tags: list[str] = field(default_factory=list)

    def add(self, inputs, clean, tag):
        self.inputs.extend(inputs)
        self.clean.extend(clean)
        self.tags.extend([tag] * len(inputs))


class Trainer:
    """Owns the parameters, optimiser state and sampling RNG of one training run."""

    def __init__(self, params: NetworkParams, data: TrainingData,
                 transform: directional.DirectionalTransform, cfg: TrainConfig):
        if transform.band_count != params.arch.in_bands:
            raise InvalidArgumentError("transform band count does not match the network input")
        if min(data.low.shape[1:]) < transform.min_size:
            raise InvalidArgumentError("training images are smaller than the transform minimum")
        self.params = params
        self.data = data
        self.transform = transform
        self.cfg = cfg
        self.velocity = {k: np.zeros_like(v) for k, v in params.weights.items()}
        self.rng = np.random.default_rng(cfg.seed)
        self.step = 0
        self.db_sets: list[np.ndarray] = []
        self.consumed = {t: 0 for t in STAGE_TAGS}
        self.losses: list[dict] = []
        self.steps_per_epoch = math.ceil(len(data.low) / cfg.batch_size)
        self.total_steps = self.steps_per_epoch * sum(cfg.epochs(s) for s in cfg.stages)
        self._identity = data.unique_routine()

    # schedule ------------------------------------------------------------

    def position(self, step: int | None = None) -> tuple[str, int, int] | None:
        """``(stage, epoch within stage, step within epoch)`` of a global step."""
        step = self.step if step is None else step
        for stage in self.cfg.stages:
            n = self.cfg.epochs(stage) * self.steps_per_epoch
            if step < n:
                return stage, step // self.steps_per_epoch, step % self.steps_per_epoch
            step -= n
        return None

    def done(self) -> bool:
        return self.step >= self.total_steps

    def _pool(self, stage: str) -> _Pool:
        pool = _Pool()
        pool.add(self.data.low, self.data.routine, "DB0")
        for db in self.db_sets:
            pool.add(db, self.data.routine, "DBi")
        if stage == "stage3":
            pool.add(self._identity, self._identity, "identity")
        return pool

    def _refresh_db(self):
        """Run the current network on every low-dose image to form a new ``DB_i``."""
        patch = PatchConfig(stride=self.cfg.db_stride)
        outs = np.array([infer_image(self.params, x, self.transform, patch).data for x in self.data.low])
        self.db_sets.append(outs.astype(np.float32).astype(np.float64))

    # sampling ------------------------------------------------------------

    def sample(self, pool: _Pool) -> TrainingSample:
        b = self.cfg.batch_size
        hp, wp = self.params.arch.patch
        idx = self.rng.integers(0, len(pool.inputs), b)
        flips = self.rng.integers(0, 2, (b, 2)) if self.cfg.flip else np.zeros((b, 2), dtype=int)
        h, w = pool.inputs[0].shape
        corners = np.stack([self.rng.integers(0, h, b), self.rng.integers(0, w, b)], axis=1)
        x = np.empty((b, h, w))
        c = np.empty((b, h, w))
        for k, i in enumerate(idx):
            xi, ci = pool.inputs[i], pool.clean[i]
            axes = tuple(a for a in (0, 1) if flips[k, a])
            if axes:
                xi, ci = np.flip(xi, axes), np.flip(ci, axes)
            x[k], c[k] = xi, ci
        bx = directional.forward_batch(x, self.transform)
        br = directional.forward_batch(x - c, self.transform)
        rows = (corners[:, 0, None] + np.arange(hp)) % h
        cols = (corners[:, 1, None] + np.arange(wp)) % w
        sel = (np.arange(b)[:, None, None], slice(None), rows[:, :, None], cols[:, None, :])
        # advanced indices separated by a slice come first in the result: (b, hp, wp, p)
        px = bx[sel].transpose(0, 3, 1, 2)
        pr = br[sel].transpose(0, 3, 1, 2)
        return TrainingSample(np.ascontiguousarray(px), np.ascontiguousarray(pr),
                              tuple(pool.tags[i] for i in idx))

    # optimisation --------------------------------------------------------

    def train_step(self, sample: TrainingSample) -> float:
        lr = learning_rate(self.cfg, self.step, self.total_steps)
        res = loss_and_grad(self.params, sample.inputs, sample.targets)
        if res.loss > DIVERGENCE_LOSS:
            stage = self.position()
            raise TrainingDivergedError(
                f"training diverged at step {self.step} ({stage}): loss {res.loss:.3e} > {DIVERGENCE_LOSS:.0e}, "
                f"lr {lr:.3e}, largest gradient {max(float(np.max(np.abs(g))) for g in res.grads.values()):.3e}")
        c, m = self.cfg.clip, self.cfg.momentum
        for name, g in res.grads.items():
            v = self.velocity[name]
            v *= m
            v -= lr * np.clip(g, -c, c)
            self.params.weights[name] += v
        bm = self.cfg.bn_momentum
        for name, (mean, var) in res.bn_stats.items():
            rm, rv = self.params.buffers[f"{name}.mean"], self.params.buffers[f"{name}.var"]
            rm *= bm
            rm += (1 - bm) * mean
            rv *= bm
            rv += (1 - bm) * var
        for t in sample.tags:
            self.consumed[t] += 1
        return res.loss

    def run(self, max_steps: int | None = None, callback=None) -> TrainResult:
        """Train until the schedule ends (or ``max_steps`` more steps have run)."""
        start = time.perf_counter()
        target = self.total_steps if max_steps is None else min(self.total_steps, self.step + max_steps)
        pool_key, pool = None, None
        while self.step < target:
            stage, epoch, within = self.position()
            if stage == "stage2" and within == 0 and epoch % self.cfg.db_refresh_epochs == 0:
                self._refresh_db()
                pool_key = None
            key = (stage, len(self.db_sets))
            if key != pool_key:
                pool, pool_key = self._pool(stage), key
            sample = self.sample(pool)
            lr = learning_rate(self.cfg, self.step, self.total_steps)
            loss = self.train_step(sample)
            entry = {"step": self.step, "stage": stage, "epoch": epoch, "lr": lr, "loss": loss}
            self.losses.append(entry)
            self.step += 1
            if callback is not None:
                callback(self, entry)
        return TrainResult(self.params, self.losses, dict(self.consumed), time.perf_counter() - start)

    # persistence ---------------------------------------------------------

    def checkpoint(self) -> Checkpoint:
        """Snapshot for resuming; float32 rounding is applied to the live state when encoded."""
        state = {
            "step": self.step,
            "rng": self.rng.bit_generator.state,
            "consumed": dict(self.consumed),
            "config": self.cfg.to_config(),
            "data_fingerprint": self.data.fingerprint(),
            "db_sets": len(self.db_sets),
        }
        arrays = {f"db{i}": db for i, db in enumerate(self.db_sets)}
        return Checkpoint(self.params, self.transform.to_config(), state, self.velocity,
                          {"losses": self.losses}, arrays)

    @classmethod
    def resume(cls, ck: Checkpoint, data: TrainingData, transform: directional.DirectionalTransform,
               cfg: TrainConfig | None = None) -> "Trainer":
        state = ck.train_state
        if state is None:
            raise InvalidArgumentError("checkpoint carries no training state")
        cfg = cfg or TrainConfig.from_config(state["config"])
        if state["data_fingerprint"] != data.fingerprint():
            raise InvalidArgumentError("training data differ from the data the checkpoint was trained on")
        t = cls(ck.params, data, transform, cfg)
        if ck.velocity is not None:
            t.velocity = ck.velocity
        quantize_(t.velocity)
        t.rng.bit_generator.state = state["rng"]
        t.step = int(state["step"])
        t.consumed = {k: int(v) for k, v in state["consumed"].items()}
        t.db_sets = [ck.arrays[f"db{i}"] for i in range(int(state["db_sets"]))]
        t.losses = list(ck.extra.get("losses", []))
        return t


def train(params: NetworkParams, data: TrainingData, transform: directional.DirectionalTransform,
          cfg: TrainConfig, callback=None) -> TrainResult:
    """Run the full staged schedule on a copy of ``params``."""
    return Trainer(params.copy(), data, transform, cfg).run(callback=callback)
