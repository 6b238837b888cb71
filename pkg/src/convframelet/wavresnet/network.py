"""Miniature WavResNet: forward pass, reverse-mode gradients and inference.

Wiring (all convolutions 3x3, circular)::

    h0 = relu(bn(conv_in(x)))
    for each module m:
        t = h_{m-1}
        repeat convs_per_module times: t = relu(bn(conv(t)))
        h_m = t + relu(conv_bypass(h_{m-1}) + b)
    z = relu(bn(conv_fuse(concat[h0, h1, ..., hM])))
    residual = conv_out(z) + b_out
    output = x - residual

The network sees ``x * input_scale`` and its residual is divided by the
same factor, so ``input_scale`` only sets the numeric range the weights
work in.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from ..errors import InvalidArgumentError, NumericFailureError
from ..image_core import SubbandStack
from . import layers


@dataclass(frozen=True)
class ArchConfig:
    in_bands: int = 15
    channels: int = 16
    module_count: int = 3
    convs_per_module: int = 3
    kernel: tuple[int, int] = (3, 3)
    patch: tuple[int, int] = (33, 33)

    def __post_init__(self):
        object.__setattr__(self, "kernel", tuple(int(k) for k in self.kernel))
        object.__setattr__(self, "patch", tuple(int(k) for k in self.patch))
        for name in ("in_bands", "channels", "module_count", "convs_per_module"):
            if getattr(self, name) < 1:
                raise InvalidArgumentError(f"{name} must be positive")
        if any(k < 1 or k % 2 == 0 for k in self.kernel):
            raise InvalidArgumentError(f"kernel dims must be odd and positive, got {self.kernel}")
        if any(p < 1 for p in self.patch):
            raise InvalidArgumentError("patch dims must be positive")

    @classmethod
    def full_size(cls) -> "ArchConfig":
        """The full-size network: 128 channels, six modules, 55x55 patches."""
        return cls(in_bands=15, channels=128, module_count=6, convs_per_module=3, patch=(55, 55))

    @property
    def concat_channels(self) -> int:
        return (self.module_count + 1) * self.channels

    def to_config(self) -> dict:
        return {
            "in_bands": self.in_bands,
            "channels": self.channels,
            "module_count": self.module_count,
            "convs_per_module": self.convs_per_module,
            "kernel": list(self.kernel),
            "patch": list(self.patch),
        }

    @classmethod
    def from_config(cls, cfg: dict) -> "ArchConfig":
        return cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in cfg.items()})


def _conv_layers(arch: ArchConfig):
    """``(name, c_in, c_out, batchnorm, bias)`` in evaluation order."""
    c = arch.channels
    out = [("in", arch.in_bands, c, True, False)]
    for m in range(arch.module_count):
        for k in range(arch.convs_per_module):
            out.append((f"m{m}.c{k}", c, c, True, False))
        out.append((f"m{m}.byp", c, c, False, True))
    out.append(("fuse", arch.concat_channels, c, True, False))
    out.append(("out", c, arch.in_bands, False, True))
    return out


def parameter_layout(arch: ArchConfig) -> list[tuple[str, tuple[int, ...]]]:
    """Learnable tensors in their canonical (serialisation) order."""
    kh, kw = arch.kernel
    layout = []
    for name, c_in, c_out, bn, bias in _conv_layers(arch):
        layout.append((f"{name}.w", (c_in, kh, kw, c_out)))
        if bias:
            layout.append((f"{name}.b", (c_out,)))
        if bn:
            layout.append((f"{name}.gamma", (c_out,)))
            layout.append((f"{name}.beta", (c_out,)))
    return layout


def buffer_layout(arch: ArchConfig) -> list[tuple[str, tuple[int, ...]]]:
    return [
        (f"{name}.{stat}", (c_out,))
        for name, _, c_out, bn, _ in _conv_layers(arch) if bn
        for stat in ("mean", "var")
    ]


@dataclass
class NetworkParams:
    arch: ArchConfig
    weights: dict[str, np.ndarray]
    buffers: dict[str, np.ndarray]
    input_scale: float = 1.0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        expected = dict(parameter_layout(self.arch))
        if set(expected) != set(self.weights):
            raise InvalidArgumentError("weights do not match the architecture layout")
        for name, shape in expected.items():
            if self.weights[name].shape != shape:
                raise InvalidArgumentError(f"{name} has shape {self.weights[name].shape}, expected {shape}")
        for name, shape in buffer_layout(self.arch):
            if self.buffers[name].shape != shape:
                raise InvalidArgumentError(f"buffer {name} has shape {self.buffers[name].shape}, expected {shape}")

    def copy(self) -> "NetworkParams":
        return NetworkParams(
            self.arch,
            {k: v.copy() for k, v in self.weights.items()},
            {k: v.copy() for k, v in self.buffers.items()},
            self.input_scale,
            dict(self.meta),
        )

    def ordered_tensors(self) -> list[tuple[str, np.ndarray]]:
        return ([(n, self.weights[n]) for n, _ in parameter_layout(self.arch)]
                + [(n, self.buffers[n]) for n, _ in buffer_layout(self.arch)])

    def digest(self) -> str:
        h = hashlib.sha256()
        for name, arr in self.ordered_tensors():
            h.update(name.encode())
            h.update(np.ascontiguousarray(arr, dtype="<f8").tobytes())
        h.update(repr(float(self.input_scale)).encode())
        return h.hexdigest()

    def with_zero_output(self) -> "NetworkParams":
        """Copy whose final layer is zero, making the network the identity map."""
        p = self.copy()
        p.weights["out.w"][:] = 0.0
        p.weights["out.b"][:] = 0.0
        return p


def init_params(arch: ArchConfig, seed: int = 0, std: float = 0.01, input_scale: float = 1.0) -> NetworkParams:
    """Zero-mean Gaussian weights, zero biases, unit BN scales."""
    rng = np.random.default_rng(seed)
    weights = {}
    for name, shape in parameter_layout(arch):
        if name.endswith(".w"):
            weights[name] = rng.normal(0.0, std, shape)
        elif name.endswith(".gamma"):
            weights[name] = np.ones(shape)
        else:
            weights[name] = np.zeros(shape)
    buffers = {name: (np.ones(shape) if name.endswith(".var") else np.zeros(shape))
               for name, shape in buffer_layout(arch)}
    return NetworkParams(arch, weights, buffers, float(input_scale))


def _check(name: str, arr: np.ndarray) -> np.ndarray:
    if not np.all(np.isfinite(arr)):
        raise NumericFailureError(f"non-finite activations in layer {name!r}")
    return arr


class _Graph:
    """One forward evaluation with everything needed for the backward pass."""

    def __init__(self, params: NetworkParams, x: np.ndarray, train: bool):
        self.params = params
        self.train = train
        self.cache: dict[str, tuple] = {}
        self.bn_stats: dict[str, tuple[np.ndarray, np.ndarray]] = {}
        self.features: list[np.ndarray] = []
        self.residual = self._forward(x)

    def _conv_bn_relu(self, name: str, x: np.ndarray) -> np.ndarray:
        w = self.params.weights
        y, conv_cache = layers.conv_forward(x, w[f"{name}.w"])
        if self.train:
            y, bn_cache, mean, var = layers.bn_forward_train(y, w[f"{name}.gamma"], w[f"{name}.beta"])
            self.bn_stats[name] = (mean, var)
        else:
            b = self.params.buffers
            y = layers.bn_forward_eval(y, w[f"{name}.gamma"], w[f"{name}.beta"], b[f"{name}.mean"], b[f"{name}.var"])
            bn_cache = None
        y, mask = layers.relu_forward(y)
        self.cache[name] = (conv_cache, bn_cache, mask)
        return _check(name, y)

    def _conv_relu(self, name: str, x: np.ndarray) -> np.ndarray:
        w = self.params.weights
        y, conv_cache = layers.conv_forward(x, w[f"{name}.w"], w[f"{name}.b"])
        y, mask = layers.relu_forward(y)
        self.cache[name] = (conv_cache, None, mask)
        return _check(name, y)

    def _forward(self, x: np.ndarray) -> np.ndarray:
        arch = self.params.arch
        h = self._conv_bn_relu("in", x)
        feats = [h]
        for m in range(arch.module_count):
            t = h
            for k in range(arch.convs_per_module):
                t = self._conv_bn_relu(f"m{m}.c{k}", t)
            h = t + self._conv_relu(f"m{m}.byp", h)
            feats.append(h)
        self.features = feats
        cat = np.concatenate(feats, axis=-1)
        z = self._conv_bn_relu("fuse", cat)
        w = self.params.weights
        out, conv_cache = layers.conv_forward(z, w["out.w"], w["out.b"])
        self.cache["out"] = (conv_cache, None, None)
        return _check("out", out)

    def _back_conv(self, name: str, dy: np.ndarray, grads: dict, bn: bool, bias: bool) -> np.ndarray:
        conv_cache, bn_cache, mask = self.cache[name]
        w = self.params.weights
        if mask is not None:
            dy = layers.relu_backward(dy, mask)
        if bn:
            dy, grads[f"{name}.gamma"], grads[f"{name}.beta"] = layers.bn_backward(dy, bn_cache)
        dx, grads[f"{name}.w"], db = layers.conv_backward(dy, conv_cache, w[f"{name}.w"], bias)
        if bias:
            grads[f"{name}.b"] = db
        return dx

    def backward(self, d_residual: np.ndarray) -> dict[str, np.ndarray]:
        if not self.train:
            raise InvalidArgumentError("gradients need a training-mode forward pass")
        arch = self.params.arch
        c = arch.channels
        grads: dict[str, np.ndarray] = {}
        dz = self._back_conv("out", d_residual, grads, bn=False, bias=True)
        dcat = self._back_conv("fuse", dz, grads, bn=True, bias=False)
        dfeats = [dcat[..., i * c:(i + 1) * c].copy() for i in range(arch.module_count + 1)]
        for m in reversed(range(arch.module_count)):
            dh = dfeats[m + 1]
            dprev = self._back_conv(f"m{m}.byp", dh, grads, bn=False, bias=True)
            dt = dh
            for k in reversed(range(arch.convs_per_module)):
                dt = self._back_conv(f"m{m}.c{k}", dt, grads, bn=True, bias=False)
            dfeats[m] += dprev + dt
        self._back_conv("in", dfeats[0], grads, bn=True, bias=False)
        return grads


def _to_nhwc(x) -> tuple[np.ndarray, bool]:
    """Accept ``(P, H, W)``, ``(N, P, H, W)`` or a SubbandStack."""
    if isinstance(x, SubbandStack):
        x = x.bands
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 3
    if single:
        x = x[None]
    if x.ndim != 4:
        raise InvalidArgumentError(f"expected (P, H, W) or (N, P, H, W) input, got shape {x.shape}")
    return np.ascontiguousarray(x.transpose(0, 2, 3, 1)), single


def _from_nhwc(y: np.ndarray, single: bool) -> np.ndarray:
    y = y.transpose(0, 3, 1, 2)
    return y[0] if single else y


def _check_bands(params: NetworkParams, x: np.ndarray):
    if x.shape[-1] != params.arch.in_bands:
        raise InvalidArgumentError(f"network expects {params.arch.in_bands} bands, input has {x.shape[-1]}")


def estimate_residual(params: NetworkParams, x, train: bool = False) -> np.ndarray:
    """Trunk output (the estimated noise in every subband), in input units."""
    xn, single = _to_nhwc(x)
    _check_bands(params, xn)
    g = _Graph(params, xn * params.input_scale, train)
    return _from_nhwc(g.residual / params.input_scale, single)


def forward(params: NetworkParams, x, train: bool = False) -> np.ndarray:
    """Denoised subbands ``x - residual(x)``; inference mode uses running BN statistics."""
    xn, single = _to_nhwc(x)
    _check_bands(params, xn)
    g = _Graph(params, xn * params.input_scale, train)
    return _from_nhwc(xn - g.residual / params.input_scale, single)


def module_features(params: NetworkParams, x) -> list[np.ndarray]:
    """Feature maps ``[h0, h1, ..., hM]`` (each ``(C, H, W)``) for one input stack."""
    xn, single = _to_nhwc(x)
    _check_bands(params, xn)
    g = _Graph(params, xn * params.input_scale, train=False)
    return [f[0].transpose(2, 0, 1) for f in g.features]


@dataclass
class LossResult:
    loss: float
    grads: dict[str, np.ndarray]
    bn_stats: dict[str, tuple[np.ndarray, np.ndarray]]


def loss_and_grad(params: NetworkParams, inputs, targets) -> LossResult:
    """Mean squared error between estimated and target residuals, with its gradient.

    ``inputs`` and ``targets`` are ``(N, P, H, W)`` subband patches; targets
    are residuals (low-dose minus routine-dose coefficients).  The loss is
    measured in the network's scaled units and batch normalisation uses
    batch statistics.
    """
    xn, _ = _to_nhwc(inputs)
    tn, _ = _to_nhwc(targets)
    if xn.shape[0] == 0:
        raise InvalidArgumentError("empty batch")
    if xn.shape != tn.shape:
        raise InvalidArgumentError(f"input {xn.shape} and target {tn.shape} shapes differ")
    _check_bands(params, xn)
    s = params.input_scale
    g = _Graph(params, xn * s, train=True)
    diff = g.residual - tn * s
    loss = float(np.mean(diff ** 2))
    if not np.isfinite(loss):
        raise NumericFailureError("loss is not finite")
    grads = g.backward(2.0 * diff / diff.size)
    return LossResult(loss, grads, g.bn_stats)


def relu_masks(params: NetworkParams, inputs) -> dict[str, np.ndarray]:
    """ReLU activation patterns of a training-mode forward pass (for kink detection)."""
    xn, _ = _to_nhwc(inputs)
    g = _Graph(params, xn * params.input_scale, train=True)
    return {k: v[2] for k, v in g.cache.items() if v[2] is not None}
