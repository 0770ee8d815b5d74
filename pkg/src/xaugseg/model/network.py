"""Residual U-Net with explicit forward/backward passes.

Layout for depth D and base filter count F0::

    down_i  (i = 0..D-1)  residual block -> F0 * 2**i channels, then 2x2 max pool
    center                residual block -> F0 * 2**D channels
    up_i    (i = D-1..0)  nearest 2x upsample, concat skip from down_i,
                          residual block -> F0 * 2**i channels
    head                  1x1 conv -> 1 channel, sigmoid

Each residual block is ``relu(conv3x3(relu(conv3x3(x))) + proj(x))`` where
``proj`` is the identity when channel counts match and a 1x1 conv otherwise.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from ..errors import BadSpatialSize
from . import layers as L


@dataclass(frozen=True)
class NetworkConfig:
    depth: int = 3
    base_filters: int = 8
    patch_size: int = 32
    seed: int = 0

    def __post_init__(self):
        if self.depth < 1 or self.base_filters < 1:
            raise ValueError("depth and base_filters must be >= 1")
        if self.patch_size % (2**self.depth):
            raise BadSpatialSize(f"patch size {self.patch_size} is not divisible by 2**{self.depth}")

    def stage_channels(self) -> list[int]:
        """Channel count of down stages 0..D-1 followed by the center stage."""
        return [self.base_filters * 2**i for i in range(self.depth + 1)]

    def to_dict(self) -> dict:
        return asdict(self)


class ResidualBlock:
    def __init__(self, name: str, cin: int, cout: int):
        self.name, self.cin, self.cout = name, cin, cout
        self.project = cin != cout

    def shapes(self) -> dict[str, tuple]:
        n = self.name
        shapes = {
            f"{n}.conv1.w": (self.cout, self.cin, 3, 3),
            f"{n}.conv1.b": (self.cout,),
            f"{n}.conv2.w": (self.cout, self.cout, 3, 3),
            f"{n}.conv2.b": (self.cout,),
        }
        if self.project:
            shapes[f"{n}.proj.w"] = (self.cout, self.cin, 1, 1)
            shapes[f"{n}.proj.b"] = (self.cout,)
        return shapes

    def forward(self, params, x):
        n = self.name
        h1, c1 = L.conv3x3_forward(x, params[f"{n}.conv1.w"], params[f"{n}.conv1.b"])
        a1, r1 = L.relu_forward(h1)
        h2, c2 = L.conv3x3_forward(a1, params[f"{n}.conv2.w"], params[f"{n}.conv2.b"])
        if self.project:
            skip, cp = L.conv1x1_forward(x, params[f"{n}.proj.w"], params[f"{n}.proj.b"])
        else:
            skip, cp = x, None
        y, r2 = L.relu_forward(h2 + skip)
        return y, (c1, r1, c2, cp, r2)

    def backward(self, dy, cache, grads):
        n = self.name
        c1, r1, c2, cp, r2 = cache
        ds = L.relu_backward(dy, r2)
        da1, grads[f"{n}.conv2.w"], grads[f"{n}.conv2.b"] = L.conv3x3_backward(ds, c2)
        dh1 = L.relu_backward(da1, r1)
        dx, grads[f"{n}.conv1.w"], grads[f"{n}.conv1.b"] = L.conv3x3_backward(dh1, c1)
        if self.project:
            dskip, grads[f"{n}.proj.w"], grads[f"{n}.proj.b"] = L.conv1x1_backward(ds, cp)
            dx += dskip
        else:
            dx += ds
        return dx


class ResidualUNet:
    def __init__(self, config: NetworkConfig, params: dict | None = None, dtype=np.float32):
        self.config = config
        f = config.stage_channels()
        d = config.depth
        self.down = [ResidualBlock(f"down{i}", 1 if i == 0 else f[i - 1], f[i]) for i in range(d)]
        self.center = ResidualBlock("center", f[d - 1], f[d])
        self.up = [ResidualBlock(f"up{i}", f[i + 1] + f[i], f[i]) for i in range(d)]
        if params is None:
            params = self.init_params(config.seed, dtype)
        missing = set(self.param_shapes()) ^ set(params)
        if missing:
            raise ValueError(f"parameter set does not match architecture: {sorted(missing)}")
        self.params = params

    def param_shapes(self) -> dict[str, tuple]:
        shapes = {}
        for block in [*self.down, self.center, *reversed(self.up)]:
            shapes.update(block.shapes())
        shapes["head.w"] = (1, self.config.base_filters, 1, 1)
        shapes["head.b"] = (1,)
        return shapes

    def init_params(self, seed: int, dtype=np.float32) -> dict[str, np.ndarray]:
        """He-normal weights (fan-in scaled), zero biases."""
        rng = np.random.default_rng(seed)
        params = {}
        for name, shape in self.param_shapes().items():
            if name.endswith(".b"):
                params[name] = np.zeros(shape, dtype=dtype)
            else:
                fan_in = int(np.prod(shape[1:]))
                params[name] = (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(dtype)
        return params

    def astype(self, dtype) -> "ResidualUNet":
        return ResidualUNet(self.config, {k: v.astype(dtype) for k, v in self.params.items()})

    def n_params(self) -> int:
        return sum(v.size for v in self.params.values())

    def _check_input(self, x):
        if x.ndim != 4 or x.shape[1] != 1:
            raise BadSpatialSize(f"expected (N, 1, H, W) input, got {x.shape}")
        k = 2**self.config.depth
        if x.shape[2] % k or x.shape[3] % k or x.shape[2] < k or x.shape[3] < k:
            raise BadSpatialSize(f"spatial size {x.shape[2:]} not divisible by {k}")

    def forward(self, x):
        """Probability map (N, 1, H, W) for input (N, 1, H, W), plus the backward cache."""
        self._check_input(x)
        p = self.params
        x = x.astype(next(iter(p.values())).dtype, copy=False)
        caches = {}
        skips = []
        h = x
        for i, block in enumerate(self.down):
            h, caches[block.name] = block.forward(p, h)
            skips.append(h)
            h, caches[f"pool{i}"] = L.maxpool2x2_forward(h)
        h, caches["center"] = self.center.forward(p, h)
        for i in reversed(range(self.config.depth)):
            h, caches[f"upsample{i}"] = L.upsample2x_forward(h)
            caches[f"concat{i}"] = h.shape[1]
            h = np.concatenate([h, skips[i]], axis=1)
            h, caches[self.up[i].name] = self.up[i].forward(p, h)
        logits, caches["head"] = L.conv1x1_forward(h, p["head.w"], p["head.b"])
        prob, caches["sigmoid"] = L.sigmoid_forward(logits)
        return prob, caches

    def backward(self, dprob, caches) -> dict[str, np.ndarray]:
        grads = {}
        dlogits = L.sigmoid_backward(dprob, caches["sigmoid"])
        dh, grads["head.w"], grads["head.b"] = L.conv1x1_backward(dlogits, caches["head"])
        dskips = [None] * self.config.depth
        for i in range(self.config.depth):
            dh = self.up[i].backward(dh, caches[self.up[i].name], grads)
            split = caches[f"concat{i}"]
            dskips[i] = dh[:, split:]
            dh = L.upsample2x_backward(np.ascontiguousarray(dh[:, :split]), caches[f"upsample{i}"])
        dh = self.center.backward(dh, caches["center"], grads)
        for i in reversed(range(self.config.depth)):
            dh = L.maxpool2x2_backward(dh, caches[f"pool{i}"]) + dskips[i]
            dh = self.down[i].backward(dh, caches[self.down[i].name], grads)
        return grads

    def predict(self, x, batch_size: int = 32) -> np.ndarray:
        out = [self.forward(x[i : i + batch_size])[0] for i in range(0, len(x), batch_size)]
        return np.concatenate(out, axis=0)


def unet_forward(net: ResidualUNet, patch: np.ndarray) -> np.ndarray:
    """Probability map (P, P) for a single (P, P) or (1, P, P) patch."""
    patch = np.asarray(patch)
    x = patch.reshape(1, 1, *patch.shape[-2:])
    return net.forward(x)[0][0, 0]
