"""U-Net, U-Net++, the cGAN generator and the PatchGAN discriminator.

Encoder-decoder networks reflect-pad their input up to a multiple of
``2**depth`` and crop the output back, so odd frame sizes such as 127x127
round-trip without resizing.
"""
from __future__ import annotations

import dataclasses
import json
import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..autograd import ops
from ..autograd.tensor import Tensor
from ..errors import SpecError
from .layers import BatchNorm2d, Conv2d, ConvBlock, Dropout, Module, OutputHead, UpConv

FAMILIES = ("unet", "unetpp", "patchgan")


@dataclass(frozen=True)
class ModelSpec:
    family: str = "unet"
    depth: int = 6
    base_channels: int = 64
    deep_supervision: bool = False
    dropout_p: float = 0.0
    in_channels: int = 3
    out_channels: int = 3
    max_channels: int = 512
    seed: int = 0
    generator: bool = False
    init: Optional[str] = None

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise SpecError(f"unknown model family {self.family!r}")
        if self.depth < 1:
            raise SpecError(f"depth must be >= 1, got {self.depth}")
        if self.base_channels < 1 or self.max_channels < self.base_channels:
            raise SpecError("base_channels must be >= 1 and <= max_channels")
        if self.deep_supervision and self.family != "unetpp":
            raise SpecError("deep_supervision is only defined for family 'unetpp'")
        if not 0.0 <= self.dropout_p < 1.0:
            raise SpecError(f"dropout_p must lie in [0, 1), got {self.dropout_p}")
        if self.init not in (None, "kaiming", "gaussian"):
            raise SpecError(f"unknown init {self.init!r}")

    @property
    def weight_init(self) -> str:
        if self.init:
            return self.init
        return "gaussian" if self.generator or self.family == "patchgan" else "kaiming"

    def channels(self, level: int) -> int:
        return min(self.base_channels * 2 ** level, self.max_channels)

    def to_json(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_json(cls, doc) -> "ModelSpec":
        if isinstance(doc, (str, bytes)):
            doc = json.loads(doc)
        fields = {f.name for f in dataclasses.fields(cls)}
        unknown = set(doc) - fields
        if unknown:
            raise SpecError(f"unknown ModelSpec keys {sorted(unknown)}")
        return cls(**doc)

    def replace(self, **changes) -> "ModelSpec":
        return dataclasses.replace(self, **changes)


def default_spec(recipe: str) -> ModelSpec:
    """Full-scale defaults: 6 levels for plain U-Net, 5 for the others."""
    if recipe == "unet":
        return ModelSpec("unet", depth=6)
    if recipe == "unetpp":
        return ModelSpec("unetpp", depth=5)
    if recipe in ("cgan", "generator"):
        return ModelSpec("unet", depth=5, dropout_p=0.5, generator=True)
    if recipe == "patchgan":
        return ModelSpec("patchgan", depth=3, out_channels=1)
    raise SpecError(f"no default spec for {recipe!r}")


def check_input_size(spec: ModelSpec, height: int, width: int) -> None:
    if spec.family == "patchgan":
        patch_map_size(height, width, spec.depth)
        return
    factor = 2 ** spec.depth
    if height < factor or width < factor:
        raise SpecError(
            f"input {height}x{width} cannot survive {spec.depth} halvings "
            f"({min(height, width)}/2^{spec.depth} < 1)")


def _pad_amounts(n: int, multiple: int) -> tuple:
    total = (-n) % multiple
    return total // 2, total - total // 2


class _EncoderDecoder(Module):
    def __init__(self, spec: ModelSpec, dtype):
        super().__init__()
        self.spec = spec
        self.dtype = np.dtype(dtype)

    def _pad(self, x: Tensor):
        if x.ndim != 4 or x.shape[1] != self.spec.in_channels:
            raise SpecError(f"expected input (N, {self.spec.in_channels}, H, W), got {x.shape}")
        h, w = x.shape[2:]
        check_input_size(self.spec, h, w)
        m = 2 ** self.spec.depth
        (t, b), (l, r) = _pad_amounts(h, m), _pad_amounts(w, m)
        if not (t or b or l or r):
            return x, None
        return ops.reflect_pad(x, t, b, l, r), (t, l, h, w)

    @staticmethod
    def _crop(y: Tensor, window) -> Tensor:
        return y if window is None else ops.crop(y, *window)

    def _prepare(self, x) -> Tensor:
        if not isinstance(x, Tensor):
            x = Tensor(np.asarray(x, dtype=self.dtype))
        return x


class UNet(_EncoderDecoder):
    """Encoder of ``depth`` conv+pool blocks, mirrored decoder with skip concatenation."""

    def __init__(self, spec: ModelSpec, dtype=np.float32):
        super().__init__(spec, dtype)
        rng = np.random.default_rng(spec.seed)
        kw = dict(rng=rng, init=spec.weight_init, dtype=dtype)
        d = spec.depth
        ch = [spec.channels(i) for i in range(d + 1)]
        self.enc = []
        for i in range(d + 1):
            block = ConvBlock(spec.in_channels if i == 0 else ch[i - 1], ch[i], first_norm=i > 0, **kw)
            self.enc.append(self.add_module(f"enc{i}", block))
        self.up, self.dec, self.drop = {}, {}, {}
        for i in reversed(range(d)):
            self.up[i] = self.add_module(f"up{i}", UpConv(ch[i + 1], ch[i], **kw))
            self.dec[i] = self.add_module(f"dec{i}", ConvBlock(2 * ch[i], ch[i], **kw))
            if spec.dropout_p > 0:
                self.drop[i] = self.add_module(
                    f"drop{i}", Dropout(spec.dropout_p, np.random.default_rng([spec.seed, 1, i]), spec.generator))
        self.head = OutputHead(ch[0], spec.out_channels, **kw)

    def forward(self, x, rng: Optional[np.random.Generator] = None) -> Tensor:
        x, window = self._pad(self._prepare(x))
        skips = []
        h = x
        for i, block in enumerate(self.enc):
            h = block(h)
            if i < self.spec.depth:
                skips.append(h)
                h = ops.max_pool2d(h, 2)
        for i in reversed(range(self.spec.depth)):
            h = self.dec[i](ops.concat_channels(skips[i], self.up[i](h)))
            if i in self.drop:
                h = self.drop[i](h, rng)
        return self._crop(self.head(h), window)


class UNetPlusPlus(_EncoderDecoder):
    """Nested dense skip pathways.

    Node (i, j) with j >= 1 consumes the upsampled node (i+1, j-1) concatenated
    with every node (i, 0..j-1) on its own level. Output heads sit on the top
    row: all of (0, 1..depth) with deep supervision, only (0, depth) without.
    """

    def __init__(self, spec: ModelSpec, dtype=np.float32):
        super().__init__(spec, dtype)
        rng = np.random.default_rng(spec.seed)
        kw = dict(rng=rng, init=spec.weight_init, dtype=dtype)
        d = spec.depth
        ch = [spec.channels(i) for i in range(d + 1)]
        self.node, self.up = {}, {}
        for i in range(d + 1):
            cin = spec.in_channels if i == 0 else ch[i - 1]
            self.node[i, 0] = self.add_module(f"x{i}_0", ConvBlock(cin, ch[i], first_norm=i > 0, **kw))
        for j in range(1, d + 1):
            for i in range(d + 1 - j):
                self.up[i, j] = self.add_module(f"up{i}_{j}", UpConv(ch[i + 1], ch[i], **kw))
                self.node[i, j] = self.add_module(f"x{i}_{j}", ConvBlock((j + 1) * ch[i], ch[i], **kw))
        head_cols = range(1, d + 1) if spec.deep_supervision else [d]
        self.heads = {j: self.add_module(f"head{j}", OutputHead(ch[0], spec.out_channels, **kw))
                      for j in head_cols}

    @property
    def num_heads(self) -> int:
        return len(self.heads)

    def forward_heads(self, x) -> list:
        x, window = self._pad(self._prepare(x))
        d = self.spec.depth
        out = {}
        h = x
        for i in range(d + 1):
            h = self.node[i, 0](h if i == 0 else ops.max_pool2d(out[i - 1, 0], 2))
            out[i, 0] = h
        for j in range(1, d + 1):
            for i in range(d + 1 - j):
                inputs = [out[i, k] for k in range(j)] + [self.up[i, j](out[i + 1, j - 1])]
                out[i, j] = self.node[i, j](ops.concat_channels(*inputs))
        return [self._crop(self.heads[j](out[0, j]), window) for j in sorted(self.heads)]

    def forward(self, x, rng=None) -> Tensor:
        return self.forward_heads(x)[-1]


def patch_map_size(height: int, width: int, depth: int = 3) -> tuple:
    """Output (h, w) of the PatchGAN stack: 4x4 convs, padding 1, strides 2 x depth then 1, 1."""
    h, w = height, width
    for stride in [2] * depth + [1, 1]:
        h = (h + 2 - 4) // stride + 1
        w = (w + 2 - 4) // stride + 1
        if h < 1 or w < 1:
            raise SpecError(f"input {height}x{width} too small for the PatchGAN stack of depth {depth}")
    return h, w


class PatchGAN(Module):
    """Conditional patch discriminator on concat(condition, candidate)."""

    def __init__(self, spec: ModelSpec, dtype=np.float32):
        super().__init__()
        self.spec = spec
        self.dtype = np.dtype(dtype)
        rng = np.random.default_rng(spec.seed)
        kw = dict(rng=rng, init=spec.weight_init, dtype=dtype)
        cin = 2 * spec.in_channels
        self.layers = []
        strides = [2] * spec.depth + [1]
        for n, stride in enumerate(strides):
            cout = spec.channels(n)
            conv = self.add_module(f"conv{n}", Conv2d(cin, cout, 4, stride, 1, **kw))
            norm = self.add_module(f"norm{n}", BatchNorm2d(cout, dtype)) if n > 0 else None
            self.layers.append((conv, norm))
            cin = cout
        self.out = Conv2d(cin, spec.out_channels, 4, 1, 1, **kw)

    def forward(self, xy: Tensor) -> Tensor:
        if xy.ndim != 4 or xy.shape[1] != 2 * self.spec.in_channels:
            raise SpecError(f"PatchGAN expects (N, {2 * self.spec.in_channels}, H, W), got {xy.shape}")
        patch_map_size(xy.shape[2], xy.shape[3], self.spec.depth)
        h = xy
        for conv, norm in self.layers:
            h = conv(h)
            if norm is not None:
                h = norm(h)
            h = ops.leaky_relu(h, 0.2)
        return ops.sigmoid(self.out(h))


def build_unet(spec: ModelSpec, dtype=np.float32) -> UNet:
    if spec.family != "unet":
        raise SpecError(f"build_unet needs family 'unet', got {spec.family!r}")
    return UNet(spec, dtype)


def build_unetpp(spec: ModelSpec, dtype=np.float32) -> UNetPlusPlus:
    if spec.family != "unetpp":
        raise SpecError(f"build_unetpp needs family 'unetpp', got {spec.family!r}")
    return UNetPlusPlus(spec, dtype)


def build_generator(spec: ModelSpec, dtype=np.float32) -> UNet:
    """cGAN generator: a U-Net whose decoder dropout stays stochastic at inference."""
    if spec.family != "unet":
        raise SpecError(f"the generator is a U-Net; got family {spec.family!r}")
    if spec.dropout_p == 0:
        warnings.warn("generator built with dropout_p=0: G(z|x) has no stochasticity", stacklevel=2)
    return UNet(spec.replace(generator=True), dtype)


def build_patchgan(spec: ModelSpec, dtype=np.float32) -> PatchGAN:
    if spec.family != "patchgan":
        raise SpecError(f"build_patchgan needs family 'patchgan', got {spec.family!r}")
    return PatchGAN(spec, dtype)


def build_model(spec: ModelSpec, dtype=np.float32) -> Module:
    if spec.family == "patchgan":
        return build_patchgan(spec, dtype)
    if spec.family == "unetpp":
        return build_unetpp(spec, dtype)
    return build_generator(spec, dtype) if spec.generator else build_unet(spec, dtype)


def discriminate(D: PatchGAN, x_ir, y_vis) -> Tensor:
    """Per-patch real/fake scores for candidate ``y_vis`` under condition ``x_ir``."""
    x = x_ir if isinstance(x_ir, Tensor) else Tensor(np.asarray(x_ir, dtype=D.dtype))
    y = y_vis if isinstance(y_vis, Tensor) else Tensor(np.asarray(y_vis, dtype=D.dtype))
    return D(ops.concat_channels(x, y))


def predict(model: Module, ir, rng: Optional[np.random.Generator] = None, batch_size: int = 8) -> np.ndarray:
    """Inference on a (N, 3, H, W) array without recording a graph."""
    from ..autograd.tensor import no_grad

    ir = np.asarray(ir)
    was_training = model.training
    model.eval()
    outs = []
    try:
        with no_grad():
            for s in range(0, len(ir), batch_size):
                chunk = Tensor(ir[s:s + batch_size].astype(model.dtype))
                outs.append(model(chunk, rng=rng).data)
    finally:
        model.train(was_training)
    return np.concatenate(outs, axis=0)
