"""Convolutional backbone with a two-output distribution head.

All tensor math is float64 numpy with hand-written reverse-mode backward
passes; gradients are exact up to floating point, which the tests verify
against central finite differences. The head maps its two raw outputs to
(mu, log_scale): mu is expressed in units of 100 MUSHRA points and the log
scale is offset so a fresh model starts with a spread of ~20 points, then
clamped to the range the losses support.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConfigError, ShapeMismatchError
from .frontend import N_PLANES
from .prob import LOG_SCALE_MAX, LOG_SCALE_MIN

SCORE_UNIT = 100.0
LOG_SCALE_OFFSET = 3.0
HEAD_OUTPUTS = 2


@dataclass(frozen=True)
class ConvBlock:
    out_planes: int
    kernel: tuple[int, int] = (3, 3)
    stride: int = 1
    pool: tuple[int, int] = (2, 2)

    def __post_init__(self):
        if self.out_planes < 1:
            raise ConfigError("out_planes must be >= 1")
        if self.kernel[0] % 2 == 0 or self.kernel[1] % 2 == 0:
            raise ConfigError(f"kernel dims must be odd, got {self.kernel}")
        if self.stride < 1 or self.pool[0] < 1 or self.pool[1] < 1:
            raise ConfigError("stride and pool dims must be >= 1")


@dataclass(frozen=True)
class BackboneConfig:
    conv_blocks: tuple[ConvBlock, ...] = field(
        default_factory=lambda: (
            ConvBlock(16),
            ConvBlock(32),
            ConvBlock(64),
            ConvBlock(64),
        )
    )
    head_hidden: int = 64
    activation: str = "relu"
    seed: int = 0

    def __post_init__(self):
        if isinstance(self.conv_blocks, list):
            object.__setattr__(self, "conv_blocks", tuple(self.conv_blocks))
        if len(self.conv_blocks) < 1:
            raise ConfigError("need at least one conv block")
        if self.activation != "relu":
            raise ConfigError(f"unsupported activation {self.activation!r}")
        if self.head_hidden < 1:
            raise ConfigError("head_hidden must be >= 1")

    def to_dict(self) -> dict:
        return {
            "conv_blocks": [
                {
                    "out_planes": b.out_planes,
                    "kernel": list(b.kernel),
                    "stride": b.stride,
                    "pool": list(b.pool),
                }
                for b in self.conv_blocks
            ],
            "head_hidden": self.head_hidden,
            "activation": self.activation,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "BackboneConfig":
        kw = dict(d)
        if "conv_blocks" in kw:
            blocks = []
            for b in kw["conv_blocks"]:
                b = dict(b)
                for field_name in ("kernel", "pool"):
                    if field_name in b:
                        b[field_name] = tuple(b[field_name])
                blocks.append(ConvBlock(**b))
            kw["conv_blocks"] = tuple(blocks)
        return cls(**kw)


def param_layout(cfg: BackboneConfig) -> list[tuple[str, tuple[int, ...]]]:
    """Ordered (name, shape) pairs; the flat vector concatenates these."""
    layout = []
    cin = N_PLANES
    for i, blk in enumerate(cfg.conv_blocks):
        kh, kw = blk.kernel
        layout.append((f"conv{i}.W", (blk.out_planes, cin, kh, kw)))
        layout.append((f"conv{i}.b", (blk.out_planes,)))
        cin = blk.out_planes
    layout.append(("head0.W", (cfg.head_hidden, cin)))
    layout.append(("head0.b", (cfg.head_hidden,)))
    layout.append(("head1.W", (HEAD_OUTPUTS, cfg.head_hidden)))
    layout.append(("head1.b", (HEAD_OUTPUTS,)))
    return layout


def param_count(cfg: BackboneConfig) -> int:
    return sum(int(np.prod(shape)) for _, shape in param_layout(cfg))


class ModelParams:
    """Flat float64 parameter vector with named per-layer views."""

    def __init__(self, cfg: BackboneConfig, flat: np.ndarray | None = None):
        self.layout = param_layout(cfg)
        n = sum(int(np.prod(shape)) for _, shape in self.layout)
        if flat is None:
            flat = np.zeros(n, dtype=np.float64)
        flat = np.ascontiguousarray(flat, dtype=np.float64)
        if flat.shape != (n,):
            raise ShapeMismatchError(f"expected {n} parameters, got {flat.shape}")
        self.flat = flat
        self.views = {}
        off = 0
        for name, shape in self.layout:
            size = int(np.prod(shape))
            self.views[name] = self.flat[off : off + size].reshape(shape)
            off += size

    @property
    def count(self) -> int:
        return self.flat.size

    def copy(self) -> "ModelParams":
        p = ModelParams.__new__(ModelParams)
        p.layout = self.layout
        p.flat = self.flat.copy()
        p.views = {}
        off = 0
        for name, shape in self.layout:
            size = int(np.prod(shape))
            p.views[name] = p.flat[off : off + size].reshape(shape)
            off += size
        return p


def init_params(cfg: BackboneConfig, seed: int | None = None) -> ModelParams:
    """Fan-in scaled uniform init, bound = 1/sqrt(fan_in) per layer."""
    rng = np.random.Generator(
        np.random.PCG64(np.random.SeedSequence([cfg.seed if seed is None else seed]))
    )
    params = ModelParams(cfg)
    for name, shape in params.layout:
        view = params.views[name]
        if name.endswith(".W"):
            fan_in = int(np.prod(shape[1:]))
            last_fan = fan_in
        else:
            fan_in = last_fan
        bound = 1.0 / math.sqrt(fan_in)
        view[...] = rng.uniform(-bound, bound, size=shape)
    return params


# ---------------------------------------------------------------------------
# Layer forward/backward primitives
# ---------------------------------------------------------------------------


def _conv_forward(x, W, b, stride):
    B, C, H, Wd = x.shape
    O, _, kh, kw = W.shape
    ph, pw = kh // 2, kw // 2
    xp = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    Ho = (H + 2 * ph - kh) // stride + 1
    Wo = (Wd + 2 * pw - kw) // stride + 1
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    cols = np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(
        B * Ho * Wo, C * kh * kw
    )
    out = cols @ W.reshape(O, -1).T + b
    out = out.reshape(B, Ho, Wo, O).transpose(0, 3, 1, 2)
    return out, (cols, x.shape, stride, (Ho, Wo))


def _conv_backward(dout, W, cache):
    cols, x_shape, stride, (Ho, Wo) = cache
    B, C, H, Wd = x_shape
    O, _, kh, kw = W.shape
    ph, pw = kh // 2, kw // 2
    dmat = np.ascontiguousarray(dout.transpose(0, 2, 3, 1)).reshape(-1, O)
    dW = (dmat.T @ cols).reshape(W.shape)
    db = dmat.sum(axis=0)
    dwin = (dmat @ W.reshape(O, -1)).reshape(B, Ho, Wo, C, kh, kw)
    dwin = dwin.transpose(0, 3, 1, 2, 4, 5)  # B,C,Ho,Wo,kh,kw
    dxp = np.zeros((B, C, H + 2 * ph, Wd + 2 * pw))
    for i in range(kh):
        for j in range(kw):
            dxp[:, :, i : i + stride * Ho : stride, j : j + stride * Wo : stride] += dwin[
                :, :, :, :, i, j
            ]
    return dxp[:, :, ph : ph + H, pw : pw + Wd], dW, db


def _pool_forward(x, pool):
    ph, pw = pool
    B, C, H, W = x.shape
    Ho, Wo = H // ph, W // pw
    if Ho == 0 or Wo == 0:
        raise ShapeMismatchError(f"pool {pool} collapses a {H}x{W} map to zero")
    xc = x[:, :, : Ho * ph, : Wo * pw]
    win = xc.reshape(B, C, Ho, ph, Wo, pw).transpose(0, 1, 2, 4, 3, 5)
    win = np.ascontiguousarray(win).reshape(B, C, Ho, Wo, ph * pw)
    idx = win.argmax(axis=-1)
    out = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]
    return out, (idx, x.shape, pool, (Ho, Wo))


def _pool_backward(dout, cache):
    idx, x_shape, (ph, pw), (Ho, Wo) = cache
    B, C, H, W = x_shape
    dwin = np.zeros((B, C, Ho, Wo, ph * pw))
    np.put_along_axis(dwin, idx[..., None], dout[..., None], axis=-1)
    dxc = dwin.reshape(B, C, Ho, Wo, ph, pw).transpose(0, 1, 2, 4, 3, 5)
    dxc = dxc.reshape(B, C, Ho * ph, Wo * pw)
    dx = np.zeros(x_shape)
    dx[:, :, : Ho * ph, : Wo * pw] = dxc
    return dx


def _linear_forward(x, W, b):
    return x @ W.T + b, x


def _linear_backward(dout, W, x):
    return dout @ W, dout.T @ x, dout.sum(axis=0)


# ---------------------------------------------------------------------------
# Full model forward/backward
# ---------------------------------------------------------------------------


def forward(cfg: BackboneConfig, params: ModelParams, x: np.ndarray, want_cache: bool = False):
    """Normalized input (B, 8, H, W) -> (mu, log_scale) arrays of length B."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 4 or x.shape[1] != N_PLANES:
        raise ShapeMismatchError(f"expected (B, {N_PLANES}, H, W), got {x.shape}")
    caches = []
    h = x
    for i, blk in enumerate(cfg.conv_blocks):
        h, c_conv = _conv_forward(h, params.views[f"conv{i}.W"], params.views[f"conv{i}.b"], blk.stride)
        relu_mask = h > 0
        h = np.where(relu_mask, h, 0.0)
        h, c_pool = _pool_forward(h, blk.pool)
        caches.append((c_conv, relu_mask, c_pool))
    gap_shape = h.shape
    feat = h.mean(axis=(2, 3))
    z, c_lin0 = _linear_forward(feat, params.views["head0.W"], params.views["head0.b"])
    z_mask = z > 0
    z = np.where(z_mask, z, 0.0)
    out, c_lin1 = _linear_forward(z, params.views["head1.W"], params.views["head1.b"])
    mu = SCORE_UNIT * out[:, 0]
    raw_ls = out[:, 1] + LOG_SCALE_OFFSET
    log_scale = np.clip(raw_ls, LOG_SCALE_MIN, LOG_SCALE_MAX)
    clamp_mask = (raw_ls >= LOG_SCALE_MIN) & (raw_ls <= LOG_SCALE_MAX)
    if not want_cache:
        return mu, log_scale, None
    cache = (caches, gap_shape, c_lin0, z_mask, c_lin1, clamp_mask)
    return mu, log_scale, cache


def backward(cfg: BackboneConfig, params: ModelParams, cache, dmu, dlog_scale) -> np.ndarray:
    """Gradient of sum(dmu*mu + dlog_scale*log_scale) w.r.t. every parameter."""
    caches, gap_shape, c_lin0, z_mask, c_lin1, clamp_mask = cache
    B = dmu.shape[0]
    dout = np.empty((B, HEAD_OUTPUTS))
    dout[:, 0] = SCORE_UNIT * dmu
    dout[:, 1] = dlog_scale * clamp_mask
    grads = ModelParams(cfg)
    dz, gW1, gb1 = _linear_backward(dout, params.views["head1.W"], c_lin1)
    grads.views["head1.W"][...] = gW1
    grads.views["head1.b"][...] = gb1
    dz = dz * z_mask
    dfeat, gW0, gb0 = _linear_backward(dz, params.views["head0.W"], c_lin0)
    grads.views["head0.W"][...] = gW0
    grads.views["head0.b"][...] = gb0
    _, _, gh, gw = gap_shape
    dh = np.broadcast_to((dfeat / (gh * gw))[:, :, None, None], gap_shape)
    for i in reversed(range(len(cfg.conv_blocks))):
        c_conv, relu_mask, c_pool = caches[i]
        dh = _pool_backward(dh, c_pool)
        dh = dh * relu_mask
        dh, gW, gb = _conv_backward(dh, params.views[f"conv{i}.W"], c_conv)
        grads.views[f"conv{i}.W"][...] = gW
        grads.views[f"conv{i}.b"][...] = gb
    return grads.flat


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros(cls, n: int) -> "AdamState":
        return cls(m=np.zeros(n), v=np.zeros(n), t=0)


def adam_step(
    params: np.ndarray,
    grads: np.ndarray,
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> AdamState:
    """Standard Adam update, in place on the flat parameter vector."""
    if params.shape != grads.shape or state.m.shape != params.shape:
        raise ShapeMismatchError("parameter/gradient/state dimensions differ")
    state.t += 1
    state.m = beta1 * state.m + (1.0 - beta1) * grads
    state.v = beta2 * state.v + (1.0 - beta2) * grads * grads
    m_hat = state.m / (1.0 - beta1**state.t)
    v_hat = state.v / (1.0 - beta2**state.t)
    params -= lr * m_hat / (np.sqrt(v_hat) + eps)
    return state
