"""Small residual CNN over single-channel images, with optional attention.

Architecture: a strided 3x3 stem (BN, ReLU, optional 2x2 max pool), four
residual stages with channel widths ``block_channels`` where stages 2..4
downsample by 2, then global average pooling and a linear head producing one
logit per image. ``depth_tier`` picks 1, 2 or 3 basic blocks per stage. An
attention module can sit after any stage.

Checkpoints store every parameter and batch-norm running buffer as float32
little-endian payloads keyed by name, after a JSON block holding the config,
so a saved model reloads bit-exactly.
"""

from __future__ import annotations

import dataclasses
import json
import os
import struct

import numpy as np

from ..errors import ConfigError, FormatError, ShapeError
from .attention import AttentionConfig, AttentionModule
from .ops import BatchNorm2d, Conv2d, GlobalAvgPool, Linear, MaxPool2x2, ReLU

_TIER_BLOCKS = {"tiny": 1, "small": 2, "medium": 3}

CHECKPOINT_MAGIC = b"SVRTW"
CHECKPOINT_VERSION = 1


@dataclasses.dataclass(frozen=True)
class ModelConfig:
    depth_tier: str = "tiny"
    block_channels: tuple = (16, 32, 64, 128)
    attention: str = "none"
    attention_block_index: int = None
    attention_d: int = None
    attention_heads: int = None
    attention_scale: str = "sqrt_d"
    in_channels: int = 1
    stem_pool: bool = True

    def __post_init__(self):
        if self.depth_tier not in _TIER_BLOCKS:
            raise ConfigError(f"depth_tier must be one of {sorted(_TIER_BLOCKS)}, got {self.depth_tier!r}")
        channels = tuple(int(c) for c in self.block_channels)
        if len(channels) != 4 or any(c < 1 for c in channels):
            raise ConfigError(f"block_channels must be 4 positive widths, got {self.block_channels!r}")
        object.__setattr__(self, "block_channels", channels)
        if self.in_channels < 1:
            raise ConfigError(f"in_channels must be positive, got {self.in_channels}")
        if self.attention == "none":
            for field in ("attention_block_index", "attention_d", "attention_heads"):
                if getattr(self, field) is not None:
                    raise ConfigError(f"{field} set but attention is 'none'")
            return
        resolved = AttentionConfig(
            kind=self.attention,
            d=self.attention_d,
            n_heads=self.attention_heads,
            insert_after_block=self.attention_block_index,
            scale=self.attention_scale,
        )
        object.__setattr__(self, "attention_block_index", resolved.insert_after_block)
        object.__setattr__(self, "attention_d", resolved.d)
        object.__setattr__(self, "attention_heads", resolved.n_heads)

    def blocks_per_stage(self):
        return _TIER_BLOCKS[self.depth_tier]


def insert_attention(config, attention_config):
    """Return a copy of ``config`` with the attention module added."""
    if not isinstance(attention_config, AttentionConfig):
        raise ConfigError(f"expected AttentionConfig, got {type(attention_config).__name__}")
    if config.attention != "none":
        raise ConfigError(f"model already has {config.attention!r} attention")
    return dataclasses.replace(
        config,
        attention=attention_config.kind,
        attention_block_index=attention_config.insert_after_block,
        attention_d=attention_config.d,
        attention_heads=attention_config.n_heads,
        attention_scale=attention_config.scale,
    )


def stage_sizes(config, image_size):
    """Spatial size after the stem and after each of the four stages."""
    size = (image_size - 1) // 2 + 1
    if config.stem_pool:
        if size % 2:
            raise ConfigError(f"stem output {size}x{size} is odd, cannot 2x2 pool")
        size //= 2
    sizes = []
    for stage in range(4):
        if stage > 0:
            size = (size - 1) // 2 + 1
        if size < 1:
            raise ConfigError(f"image_size {image_size} vanishes at stage {stage + 1}")
        sizes.append(size)
    return sizes


class BasicBlock:
    """conv-bn-relu-conv-bn plus a (projected) shortcut, then ReLU."""

    def __init__(self, c_in, c_out, stride, rng, dtype=np.float32, name="block"):
        self.name = name
        self.conv1 = Conv2d(c_in, c_out, 3, stride, 1, rng, dtype, f"{name}.conv1")
        self.bn1 = BatchNorm2d(c_out, dtype=dtype, name=f"{name}.bn1")
        self.relu1 = ReLU(f"{name}.relu1")
        self.conv2 = Conv2d(c_out, c_out, 3, 1, 1, rng, dtype, f"{name}.conv2")
        self.bn2 = BatchNorm2d(c_out, dtype=dtype, name=f"{name}.bn2")
        if stride != 1 or c_in != c_out:
            self.proj = Conv2d(c_in, c_out, 1, stride, 0, rng, dtype, f"{name}.proj")
            self.bnp = BatchNorm2d(c_out, dtype=dtype, name=f"{name}.bnp")
        else:
            self.proj = None
        self.relu_out = ReLU(f"{name}.relu_out")

    def forward(self, x, train=True):
        y = self.bn2.forward(self.conv2.forward(
            self.relu1.forward(self.bn1.forward(self.conv1.forward(x, train), train)),
            train), train)
        shortcut = x if self.proj is None else self.bnp.forward(self.proj.forward(x, train), train)
        return self.relu_out.forward(y + shortcut, train)

    def backward(self, dy):
        dsum = self.relu_out.backward(dy)
        dmain = self.conv1.backward(self.bn1.backward(
            self.relu1.backward(self.conv2.backward(self.bn2.backward(dsum)))))
        if self.proj is None:
            return dmain + dsum
        return dmain + self.proj.backward(self.bnp.backward(dsum))

    def _sublayers(self):
        layers = [self.conv1, self.bn1, self.conv2, self.bn2]
        if self.proj is not None:
            layers += [self.proj, self.bnp]
        return layers

    def parameters(self):
        out = []
        for layer in self._sublayers():
            out.extend(layer.parameters())
        return out

    def state_arrays(self):
        out = {}
        for layer in self._sublayers():
            out.update(layer.state_arrays())
        return out


class MiniResNet:
    def __init__(self, config, image_size, rng=None, dtype=np.float32):
        if rng is None:
            rng = np.random.default_rng(0)
        self.config = config
        self.image_size = int(image_size)
        self.dtype = dtype
        channels = config.block_channels
        sizes = stage_sizes(config, self.image_size)

        self.stem = [
            Conv2d(config.in_channels, channels[0], 3, 2, 1, rng, dtype, "stem.conv"),
            BatchNorm2d(channels[0], dtype=dtype, name="stem.bn"),
            ReLU("stem.relu"),
        ]
        if config.stem_pool:
            self.stem.append(MaxPool2x2("stem.pool"))

        per_stage = config.blocks_per_stage()
        self.attention = None
        self._chain = list(self.stem)
        c_in = channels[0]
        for stage in range(4):
            c_out = channels[stage]
            for b in range(per_stage):
                stride = 2 if (stage > 0 and b == 0) else 1
                block = BasicBlock(c_in, c_out, stride, rng, dtype, f"s{stage + 1}.b{b + 1}")
                self._chain.append(block)
                c_in = c_out
            if config.attention != "none" and config.attention_block_index == stage + 1:
                self.attention = AttentionModule(
                    kind=config.attention,
                    d_c=c_out,
                    d_n=sizes[stage] * sizes[stage],
                    d=config.attention_d,
                    n_heads=config.attention_heads,
                    rng=rng,
                    dtype=dtype,
                    scale=config.attention_scale,
                    name="attn",
                )
                self._chain.append(self.attention)

        self.gap = GlobalAvgPool("gap")
        self.head = Linear(channels[-1], 1, rng, dtype, "head")
        self._chain += [self.gap, self.head]

    def forward(self, x, train=True):
        x = np.asarray(x, dtype=self.dtype)
        if x.ndim != 4 or x.shape[2] != self.image_size or x.shape[3] != self.image_size:
            raise ShapeError(
                f"model built for (N,{self.config.in_channels},{self.image_size},{self.image_size}), got {x.shape}"
            )
        for layer in self._chain:
            x = layer.forward(x, train)
        return x.reshape(-1)

    def backward(self, dlogits):
        dy = np.asarray(dlogits, dtype=self.dtype).reshape(-1, 1)
        for layer in reversed(self._chain):
            dy = layer.backward(dy)
        return dy

    def features(self, x, train=False):
        """Pooled features right before the head, for frozen-backbone training."""
        x = np.asarray(x, dtype=self.dtype)
        for layer in self._chain[:-1]:
            x = layer.forward(x, train)
        return x

    def parameters(self):
        out = []
        for layer in self._chain:
            out.extend(layer.parameters())
        return out

    def state_arrays(self):
        out = {}
        for layer in self._chain:
            out.update(layer.state_arrays())
        return out

    def param_count(self):
        return sum(p.size for _, p, _ in self.parameters())


def save_checkpoint(path, model):
    meta = json.dumps(
        {"config": dataclasses.asdict(model.config), "image_size": model.image_size},
        sort_keys=True,
    ).encode("utf-8")
    parts = [CHECKPOINT_MAGIC, struct.pack("<B", CHECKPOINT_VERSION), struct.pack("<I", len(meta)), meta]
    arrays = model.state_arrays()
    parts.append(struct.pack("<I", len(arrays)))
    for name, arr in arrays.items():
        encoded = name.encode("utf-8")
        payload = np.ascontiguousarray(arr, dtype="<f4")
        parts.append(struct.pack("<H", len(encoded)))
        parts.append(encoded)
        parts.append(struct.pack("<B", payload.ndim))
        parts.append(struct.pack(f"<{payload.ndim}I", *payload.shape))
        parts.append(payload.tobytes())
    blob = b"".join(parts)
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(blob)
    os.replace(tmp, path)


class _Reader:
    def __init__(self, data):
        self.data = data
        self.off = 0

    def take(self, n, what):
        if self.off + n > len(self.data):
            raise FormatError(f"checkpoint truncated reading {what} at byte {self.off}")
        out = self.data[self.off : self.off + n]
        self.off += n
        return out

    def unpack(self, fmt, what):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def load_checkpoint(path):
    with open(path, "rb") as fh:
        data = fh.read()
    r = _Reader(data)
    magic = r.take(5, "magic")
    if magic != CHECKPOINT_MAGIC:
        raise FormatError(f"bad checkpoint magic {magic!r} at byte 0")
    (version,) = r.unpack("<B", "version")
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"unsupported checkpoint version {version} at byte 5")
    (meta_len,) = r.unpack("<I", "config length")
    meta_off = r.off
    try:
        meta = json.loads(r.take(meta_len, "config").decode("utf-8"))
        config = ModelConfig(**meta["config"])
        image_size = int(meta["image_size"])
    except (ValueError, KeyError, TypeError) as exc:
        raise FormatError(f"bad checkpoint config at byte {meta_off}: {exc}") from exc
    (n_arrays,) = r.unpack("<I", "array count")
    loaded = {}
    for _ in range(n_arrays):
        (name_len,) = r.unpack("<H", "array name length")
        name = r.take(name_len, "array name").decode("utf-8")
        (ndim,) = r.unpack("<B", "array rank")
        shape = r.unpack(f"<{ndim}I", "array shape")
        count = int(np.prod(shape, dtype=np.int64)) if ndim else 1
        payload = r.take(4 * count, f"array {name!r} payload")
        loaded[name] = np.frombuffer(payload, dtype="<f4").reshape(shape)
    if r.off != len(data):
        raise FormatError(f"{len(data) - r.off} trailing bytes at byte {r.off}")

    model = MiniResNet(config, image_size)
    arrays = model.state_arrays()
    if set(arrays) != set(loaded):
        missing = sorted(set(arrays) - set(loaded))
        extra = sorted(set(loaded) - set(arrays))
        raise FormatError(f"checkpoint arrays do not match model (missing {missing}, extra {extra})")
    for name, target in arrays.items():
        if target.shape != loaded[name].shape:
            raise FormatError(f"array {name!r}: model has {target.shape}, checkpoint has {loaded[name].shape}")
        target[...] = loaded[name]
    return model
