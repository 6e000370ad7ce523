"""A small multi-scale 3D feature extractor with a pluggable fusion layer.

Structure: a grey-scale (1, D, H, W) volume runs through conv stages
(each block = fusion operator + bias + ReLU, kernel extent 3), with 2x2
mean pooling between stages.  Every stage's output is upsampled back to
full resolution (nearest neighbor), channel-unified by a 1x1x1
convolution, and the unified maps are summed.  A final Dx1x1 valid
convolution collapses the depth axis, leaving a rank-3 (Cfeat, H, W)
feature map.

Forward and backward are exact hand-written adjoint compositions; 2D
kernels are drawn He-style (uniform with half width sqrt(6/fan_in)) from
per-layer forked substreams of the config seed, so the same seed yields
the same 2D kernels no matter which fusion operator is plugged in.
Biases start at zero.  Unification and collapse kernels carry no bias.
"""

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import ctf
from .costmodel import LayerDims
from .operators import (
    OperatorGrads,
    OperatorKind,
    OperatorState,
    backward as op_backward,
    forward as op_forward,
    inflate,
    load_operator,
    parameter_count,
    save_operator,
    sgd_step,
)
from .rng import SeededRng
from .tensor import ShapeError, as_volume

KERNEL_SIZE = 3


@dataclass(frozen=True)
class BackboneConfig:
    """Architecture and initialization description.

    stages lists (channels, blocks) pairs; channel widths must be
    nondecreasing.  height/width must be divisible by 2**(stages-1) so
    the between-stage pooling stays exact.  a3d_perturb is the half
    width of the a3d mixing perturbation at init (0 disables it, giving
    a backbone that computes exactly what the no-fusion one does).
    """

    depth: int = 7
    stages: tuple[tuple[int, int], ...] = ((64, 1), (256, 1), (512, 1))
    fusion: OperatorKind = OperatorKind.NOFUSION
    seed: int = 0
    height: int = 32
    width: int = 32
    a3d_perturb: float = 0.1
    tsm_div: int = 8

    def __post_init__(self):
        if not isinstance(self.fusion, OperatorKind):
            raise TypeError(f"fusion must be an OperatorKind, got {self.fusion!r}")
        stages = tuple((int(c), int(b)) for c, b in self.stages)
        object.__setattr__(self, "stages", stages)
        if len(stages) < 1:
            raise ValueError("at least one stage is required")
        for c, b in stages:
            if c < 1 or b < 1:
                raise ValueError(f"stage channels and blocks must be >= 1, got {(c, b)}")
        widths = [c for c, _ in stages]
        if any(a > b for a, b in zip(widths, widths[1:])):
            raise ValueError(f"stage channels must be nondecreasing, got {widths}")
        if self.depth < 1:
            raise ValueError(f"depth must be >= 1, got {self.depth}")
        f = self.pool_factor
        if self.height < 1 or self.width < 1 or self.height % f or self.width % f:
            raise ValueError(f"height/width must be positive multiples of {f}, "
                             f"got {self.height}x{self.width}")
        if self.a3d_perturb < 0:
            raise ValueError(f"a3d_perturb must be >= 0, got {self.a3d_perturb}")
        if self.tsm_div < 1:
            raise ValueError(f"tsm_div must be >= 1, got {self.tsm_div}")

    @property
    def pool_factor(self) -> int:
        return 2 ** (len(self.stages) - 1)

    @property
    def feature_channels(self) -> int:
        return self.stages[-1][0]


@dataclass
class Backbone:
    """Weights: per-block (operator state, bias), per-stage unification
    kernel, and the depth-collapse kernel.  Treated as immutable during
    forward/backward; apply_sgd builds an updated copy."""

    config: BackboneConfig
    fusion_layers: list[tuple[OperatorState, np.ndarray]]
    unify_kernels: list[np.ndarray]
    collapse: np.ndarray


@dataclass
class BackboneGrads:
    """Gradient arrays in the same layout as Backbone's weights."""

    fusion_layers: list[tuple[OperatorGrads, np.ndarray]]
    unify_kernels: list[np.ndarray]
    collapse: np.ndarray


def layer_dims(config: BackboneConfig) -> list[LayerDims]:
    """Dimensions of every fusion layer, for the cost model."""
    dims = []
    c_prev = 1
    h, w = config.height, config.width
    for s, (channels, blocks) in enumerate(config.stages):
        hs, ws = h // 2 ** s, w // 2 ** s
        for _ in range(blocks):
            dims.append(LayerDims(c_in=c_prev, c_out=channels, k=KERNEL_SIZE,
                                  d=config.depth, h=hs, w=ws))
            c_prev = channels
    return dims


def _he_uniform(rng: SeededRng, shape, fan_in: int) -> np.ndarray:
    bound = float(np.sqrt(6.0 / fan_in))
    return rng.uniform(-bound, bound, shape)


def build(config: BackboneConfig) -> Backbone:
    """Deterministically initialize all weights from the config seed."""
    root = SeededRng(config.seed)
    k = KERNEL_SIZE
    fusion_layers = []
    c_prev = 1
    for s, (channels, blocks) in enumerate(config.stages):
        for b in range(blocks):
            w2d = _he_uniform(root.fork(1, s, b), (channels, c_prev, k, k),
                              fan_in=c_prev * k * k)
            state = inflate(config.fusion, w2d, config.depth, rng=root.fork(2, s, b),
                            perturb_scale=config.a3d_perturb, tsm_div=config.tsm_div)
            fusion_layers.append((state, np.zeros(channels)))
            c_prev = channels
    cf = config.feature_channels
    unify = [_he_uniform(root.fork(3, s), (cf, c, 1, 1, 1), fan_in=c)
             for s, (c, _) in enumerate(config.stages)]
    collapse = _he_uniform(root.fork(4), (cf, cf, config.depth, 1, 1),
                           fan_in=cf * config.depth)
    return Backbone(config, fusion_layers, unify, collapse)


def _pool2(x: np.ndarray) -> np.ndarray:
    c, d, h, w = x.shape
    return x.reshape(c, d, h // 2, 2, w // 2, 2).mean(axis=(3, 5))


def _pool2_adjoint(g: np.ndarray) -> np.ndarray:
    return np.repeat(np.repeat(g, 2, axis=2), 2, axis=3) / 4.0


def _upsample(x: np.ndarray, f: int) -> np.ndarray:
    if f == 1:
        return x
    return np.repeat(np.repeat(x, f, axis=2), f, axis=3)


def _upsample_adjoint(g: np.ndarray, f: int) -> np.ndarray:
    if f == 1:
        return g
    c, d, h, w = g.shape
    return g.reshape(c, d, h // f, f, w // f, f).sum(axis=(3, 5))


# Columns per unification pass; sized so the input tile stays cache-resident
# instead of being re-streamed from memory once per output channel.
_UNIFY_TILE = 1024


def _unify(x: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    km = kernel[:, :, 0, 0, 0]
    xf = x.reshape(x.shape[0], -1)
    out = np.empty((km.shape[0], xf.shape[1]))
    for t in range(0, xf.shape[1], _UNIFY_TILE):
        np.einsum("ap,fa->fp", xf[:, t:t + _UNIFY_TILE], km,
                  out=out[:, t:t + _UNIFY_TILE])
    return out.reshape((km.shape[0],) + x.shape[1:])


def _unify_adjoint(x, kernel, g):
    grad_x = np.einsum("fdhw,fc->cdhw", g, kernel[:, :, 0, 0, 0])
    grad_k = np.einsum("fdhw,cdhw->fc", g, x)[:, :, None, None, None]
    return grad_x, np.ascontiguousarray(grad_k)


def _collapse(x: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    f, c, d = kernel.shape[:3]
    km = kernel[:, :, :, 0, 0].reshape(f, c * d)
    out = np.einsum("ap,fa->fp", x.reshape(c * d, -1), km)
    return out.reshape(f, x.shape[2], x.shape[3])


def _collapse_adjoint(x, kernel, g):
    grad_x = np.einsum("fhw,fcd->cdhw", g, kernel[:, :, :, 0, 0])
    grad_k = np.einsum("fhw,cdhw->fcd", g, x)[:, :, :, None, None]
    return np.ascontiguousarray(grad_x), np.ascontiguousarray(grad_k)


def _check_input(config: BackboneConfig, x: np.ndarray) -> None:
    want = (1, config.depth, config.height, config.width)
    if x.shape != want:
        raise ShapeError(f"backbone expects input shape {want}, got {x.shape}")


def _forward_trace(bb: Backbone, x: np.ndarray):
    """Run the network, keeping every intermediate the adjoints need."""
    config = bb.config
    block_inputs = []
    block_pre = []
    stage_outputs = []
    cur = x
    li = 0
    for s, (_, blocks) in enumerate(config.stages):
        if s > 0:
            cur = _pool2(cur)
        for _ in range(blocks):
            state, bias = bb.fusion_layers[li]
            z = op_forward(state, cur) + bias[:, None, None, None]
            block_inputs.append(cur)
            block_pre.append(z)
            cur = np.maximum(z, 0.0)
            li += 1
        stage_outputs.append(cur)
    summed = None
    upsampled = []
    for s, out in enumerate(stage_outputs):
        up = _upsample(out, 2 ** s)
        upsampled.append(up)
        term = _unify(up, bb.unify_kernels[s])
        summed = term if summed is None else summed + term
    feat = _collapse(summed, bb.collapse)
    return feat, (block_inputs, block_pre, stage_outputs, upsampled, summed)


def forward_features(bb: Backbone, x) -> np.ndarray:
    """Map a (1, D, H, W) volume to the rank-3 (Cfeat, H, W) feature map."""
    x = as_volume(x)
    _check_input(bb.config, x)
    feat, _ = _forward_trace(bb, x)
    return feat


def backward_features(bb: Backbone, x, grad_map) -> BackboneGrads:
    """Exact adjoints for every weight given the feature-map gradient."""
    x = as_volume(x)
    _check_input(bb.config, x)
    grad_map = np.ascontiguousarray(grad_map, dtype=np.float64)
    config = bb.config
    cf = config.feature_channels
    if grad_map.shape != (cf, config.height, config.width):
        raise ShapeError(f"grad_map must be {(cf, config.height, config.width)}, "
                         f"got {grad_map.shape}")
    feat, (block_inputs, block_pre, stage_outputs, upsampled, summed) = _forward_trace(bb, x)

    grad_summed, grad_collapse = _collapse_adjoint(summed, bb.collapse, grad_map)
    grad_unify = []
    grad_stage = []
    for s, out in enumerate(stage_outputs):
        gu, gk = _unify_adjoint(upsampled[s], bb.unify_kernels[s], grad_summed)
        grad_unify.append(gk)
        grad_stage.append(_upsample_adjoint(gu, 2 ** s))

    blocks_per_stage = [b for _, b in config.stages]
    grad_fusion: list[tuple[OperatorGrads, np.ndarray]] = [None] * len(bb.fusion_layers)
    li = len(bb.fusion_layers)
    carry = None
    for s in range(len(config.stages) - 1, -1, -1):
        carry = grad_stage[s] if carry is None else carry + grad_stage[s]
        for _ in range(blocks_per_stage[s]):
            li -= 1
            state, _ = bb.fusion_layers[li]
            grad_z = carry * (block_pre[li] > 0)
            grad_in, opg = op_backward(state, block_inputs[li], grad_z)
            grad_fusion[li] = (opg, grad_z.sum(axis=(1, 2, 3)))
            carry = grad_in
        if s > 0:
            carry = _pool2_adjoint(carry)
    return BackboneGrads(grad_fusion, grad_unify, grad_collapse)


def apply_sgd(bb: Backbone, grads: BackboneGrads, lr: float) -> Backbone:
    """New backbone with every weight stepped by -lr * grad."""
    fusion = [(sgd_step(state, g, lr), bias - lr * gb)
              for (state, bias), (g, gb) in zip(bb.fusion_layers, grads.fusion_layers)]
    unify = [k - lr * g for k, g in zip(bb.unify_kernels, grads.unify_kernels)]
    return Backbone(bb.config, fusion, unify, bb.collapse - lr * grads.collapse)


def total_parameters(bb: Backbone) -> int:
    total = sum(parameter_count(st) + bias.size for st, bias in bb.fusion_layers)
    total += sum(k.size for k in bb.unify_kernels)
    return int(total + bb.collapse.size)


_MANIFEST_NAME = "backbone.txt"


def _stages_str(stages) -> str:
    return ",".join(f"{c}x{b}" for c, b in stages)


def parse_stages(text: str) -> tuple[tuple[int, int], ...]:
    """Parse '64x1,256x1' into ((64, 1), (256, 1))."""
    out = []
    for piece in text.split(","):
        c, _, b = piece.strip().partition("x")
        out.append((int(c), int(b) if b else 1))
    return tuple(out)


def save_checkpoint(bb: Backbone, dirpath) -> None:
    """Write the config manifest and every weight tensor under a directory."""
    path = Path(dirpath)
    path.mkdir(parents=True, exist_ok=True)
    c = bb.config
    ctf.write_manifest(path / _MANIFEST_NAME, {
        "depth": c.depth,
        "stages": _stages_str(c.stages),
        "fusion": c.fusion.value,
        "seed": c.seed,
        "height": c.height,
        "width": c.width,
        "a3d_perturb": repr(c.a3d_perturb),
        "tsm_div": c.tsm_div,
    })
    for i, (state, bias) in enumerate(bb.fusion_layers):
        save_operator(state, path / f"layer{i}")
        ctf.write_tensor(path / f"layer{i}_bias.ctf", bias)
    for s, k in enumerate(bb.unify_kernels):
        ctf.write_tensor(path / f"unify{s}.ctf", k)
    ctf.write_tensor(path / "collapse.ctf", bb.collapse)


def load_checkpoint(dirpath) -> Backbone:
    path = Path(dirpath)
    m = ctf.read_manifest(path / _MANIFEST_NAME)
    config = BackboneConfig(
        depth=int(m["depth"]),
        stages=parse_stages(m["stages"]),
        fusion=OperatorKind.from_name(m["fusion"]),
        seed=int(m["seed"]),
        height=int(m["height"]),
        width=int(m["width"]),
        a3d_perturb=float(m["a3d_perturb"]),
        tsm_div=int(m["tsm_div"]),
    )
    n_layers = sum(b for _, b in config.stages)
    fusion_layers = []
    for i in range(n_layers):
        state = load_operator(path / f"layer{i}")
        bias = ctf.read_tensor(path / f"layer{i}_bias.ctf")
        fusion_layers.append((state, bias))
    unify = [ctf.read_tensor(path / f"unify{s}.ctf") for s in range(len(config.stages))]
    collapse = ctf.read_tensor(path / "collapse.ctf")
    return Backbone(config, fusion_layers, unify, collapse)
