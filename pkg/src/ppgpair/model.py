"""Mini 1-D residual encoder with SimSiam projector/predictor heads.

Layout::

    stem   conv(k=7, stride 2) -> norm -> relu
    block  conv(k, stride 2) -> norm -> relu -> conv(k) -> norm  (+ 1x1 strided shortcut) -> relu
    pool   global average over length -> affine to embedding_dim          (h)
    proj   affine -> norm -> relu -> affine to z_dim [-> batch norm]       (z)
    pred   affine to z_dim/4 -> relu -> affine to z_dim                   (p)
    head   affine to 1 (regression) or 2 logits (binary classification)

Channels double every second block. Normalization inside the encoder is per
example, so h = E(x) never depends on the rest of the batch. The projector
uses batch statistics by default (``projector_norm="batch"``), which is what
keeps the siamese objective from collapsing; ``"sample"`` swaps in the
per-example norm and drops the output normalization.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import DataError

PROJECTOR_NORMS = ("batch", "sample")
HEAD_KINDS = ("regression", "binary_classification")
HEAD_OUTPUTS = {"regression": 1, "binary_classification": 2}

SQCK_MAGIC = b"SQCK"
SQCK_VERSION = 1


class CheckpointError(DataError):
    pass


@dataclass(frozen=True)
class EncoderConfig:
    n_blocks: int = 2
    base_channels: int = 8
    embedding_dim: int = 64
    input_length: int = 1200
    z_dim: int = 128
    stem_kernel: int = 7
    block_kernel: int = 3
    projector_norm: str = "batch"

    def __post_init__(self):
        if not 2 <= self.n_blocks <= 8:
            raise ValueError("n_blocks must lie in 2..8")
        if self.embedding_dim < 8:
            raise ValueError("embedding_dim must be >= 8")
        if self.base_channels < 1 or self.input_length < 1:
            raise ValueError("base_channels and input_length must be positive")
        if self.z_dim < 4 or self.z_dim % 4:
            raise ValueError("z_dim must be a positive multiple of 4")
        if self.stem_kernel % 2 == 0 or self.block_kernel % 2 == 0:
            raise ValueError("kernel sizes must be odd")
        if self.projector_norm not in PROJECTOR_NORMS:
            raise ValueError(f"projector_norm must be one of {PROJECTOR_NORMS}")

    def block_channels(self, i: int) -> int:
        return self.base_channels * 2 ** (i // 2)

    def to_dict(self) -> dict[str, int | str]:
        return {f.name: getattr(self, f.name) for f in fields(self)}


def param_shapes(cfg: EncoderConfig, head_kind: str | None = None) -> dict[str, tuple[int, ...]]:
    """Name -> shape for every parameter, in canonical order."""
    shapes: dict[str, tuple[int, ...]] = {}

    def norm(prefix, c):
        shapes[f"{prefix}.gamma"] = (c,)
        shapes[f"{prefix}.beta"] = (c,)

    c = cfg.base_channels
    shapes["encoder.stem.weight"] = (c, 1, cfg.stem_kernel)
    norm("encoder.stem.norm", c)
    for i in range(cfg.n_blocks):
        out = cfg.block_channels(i)
        k = cfg.block_kernel
        p = f"encoder.block{i}"
        shapes[f"{p}.conv1.weight"] = (out, c, k)
        norm(f"{p}.norm1", out)
        shapes[f"{p}.conv2.weight"] = (out, out, k)
        norm(f"{p}.norm2", out)
        shapes[f"{p}.shortcut.weight"] = (out, c, 1)
        norm(f"{p}.shortcut_norm", out)
        c = out
    shapes["encoder.fc.weight"] = (cfg.embedding_dim, c)
    shapes["encoder.fc.bias"] = (cfg.embedding_dim,)
    z, hidden = cfg.z_dim, cfg.z_dim // 4
    shapes["projector.fc1.weight"] = (z, cfg.embedding_dim)
    shapes["projector.fc1.bias"] = (z,)
    norm("projector.norm", z)
    shapes["projector.fc2.weight"] = (z, z)
    shapes["projector.fc2.bias"] = (z,)
    shapes["predictor.fc1.weight"] = (hidden, z)
    shapes["predictor.fc1.bias"] = (hidden,)
    shapes["predictor.fc2.weight"] = (z, hidden)
    shapes["predictor.fc2.bias"] = (z,)
    if head_kind is not None:
        shapes["head.weight"] = (HEAD_OUTPUTS[head_kind], cfg.embedding_dim)
        shapes["head.bias"] = (HEAD_OUTPUTS[head_kind],)
    return shapes


def _init_param(name: str, shape, rng: np.random.Generator, dtype, fan_in: int = 0) -> np.ndarray:
    if name.endswith(".gamma"):
        return np.ones(shape, dtype=dtype)
    if name.startswith("predictor.") and name.endswith(".bias"):
        # nonzero so a row whose hidden units are all inactive still predicts
        # a usable (non-zero) direction
        bound = 1.0 / np.sqrt(fan_in)
        return rng.uniform(-bound, bound, shape).astype(dtype)
    if name.endswith(".beta") or name.endswith(".bias"):
        return np.zeros(shape, dtype=dtype)
    fan_in = int(np.prod(shape[1:]))
    return (rng.normal(0.0, np.sqrt(2.0 / fan_in), shape)).astype(dtype)


class ModelBundle:
    """Parameters plus the forward maps h = E(x), z = P(h), p = D(z), head(h)."""

    def __init__(self, config: EncoderConfig, params: dict[str, Tensor], head_kind: str | None = None,
                 target_shift: float = 0.0, target_scale: float = 1.0):
        expected = param_shapes(config, head_kind)
        if list(params) != list(expected):
            raise ValueError("parameter names do not match the configuration")
        for name, shape in expected.items():
            if params[name].shape != shape:
                raise ValueError(f"{name}: shape {params[name].shape} != {shape}")
        self.config = config
        self.params = params
        self.head_kind = head_kind
        self.target_shift = float(target_shift)
        self.target_scale = float(target_scale)

    @classmethod
    def initialize(cls, config: EncoderConfig, seed: int = 0, dtype=np.float32) -> "ModelBundle":
        rng = np.random.default_rng(seed)
        shapes = param_shapes(config)
        params = {}
        for name, shape in shapes.items():
            weight = shapes.get(name[: -len("bias")] + "weight", (0, 1))
            data = _init_param(name, shape, rng, dtype, fan_in=weight[1])
            params[name] = Tensor(data, requires_grad=True, name=name)
        return cls(config, params)

    # -------------------------------------------------------------- bookkeeping

    @property
    def dtype(self):
        return self.params["encoder.stem.weight"].dtype

    def named(self, prefix: str) -> list[Tensor]:
        return [t for n, t in self.params.items() if n.startswith(prefix)]

    def num_parameters(self, prefix: str = "") -> int:
        return sum(t.data.size for t in self.named(prefix))

    def copy(self, dtype=None) -> "ModelBundle":
        params = {
            n: Tensor(t.data.astype(dtype or t.dtype, copy=True), requires_grad=True, name=n)
            for n, t in self.params.items()
        }
        return ModelBundle(self.config, params, self.head_kind, self.target_shift, self.target_scale)

    def with_head(self, kind: str, seed: int = 0, target_shift: float = 0.0, target_scale: float = 1.0) -> "ModelBundle":
        """Copy of this bundle with a freshly initialized task head."""
        if kind not in HEAD_KINDS:
            raise ValueError(f"head kind must be one of {HEAD_KINDS}")
        rng = np.random.default_rng(seed)
        params = {n: t for n, t in self.copy().params.items() if not n.startswith("head.")}
        for name, shape in param_shapes(self.config, kind).items():
            if name.startswith("head."):
                params[name] = Tensor(_init_param(name, shape, rng, self.dtype), requires_grad=True, name=name)
        return ModelBundle(self.config, params, kind, target_shift, target_scale)

    # -------------------------------------------------------------- forward maps

    def encode(self, x) -> Tensor:
        cfg = self.config
        x = ad.as_tensor(x)
        if x.ndim != 3 or x.shape[1] != 1 or x.shape[2] != cfg.input_length:
            raise ValueError(f"expected input [batch, 1, {cfg.input_length}], got {x.shape}")
        if x.dtype != self.dtype:
            x = Tensor(x.data.astype(self.dtype))
        P = self.params
        h = ad.conv1d(x, P["encoder.stem.weight"], stride=2, padding=cfg.stem_kernel // 2)
        h = ad.relu(ad.channel_norm(h, P["encoder.stem.norm.gamma"], P["encoder.stem.norm.beta"]))
        pad = cfg.block_kernel // 2
        for i in range(cfg.n_blocks):
            p = f"encoder.block{i}"
            y = ad.conv1d(h, P[f"{p}.conv1.weight"], stride=2, padding=pad)
            y = ad.relu(ad.channel_norm(y, P[f"{p}.norm1.gamma"], P[f"{p}.norm1.beta"]))
            y = ad.conv1d(y, P[f"{p}.conv2.weight"], stride=1, padding=pad)
            y = ad.channel_norm(y, P[f"{p}.norm2.gamma"], P[f"{p}.norm2.beta"])
            s = ad.conv1d(h, P[f"{p}.shortcut.weight"], stride=2)
            s = ad.channel_norm(s, P[f"{p}.shortcut_norm.gamma"], P[f"{p}.shortcut_norm.beta"])
            h = ad.relu(ad.add(y, s))
        h = ad.global_avg_pool(h)
        return ad.linear(h, P["encoder.fc.weight"], P["encoder.fc.bias"])

    def project(self, h: Tensor) -> Tensor:
        if h.ndim != 2 or h.shape[1] != self.config.embedding_dim:
            raise ValueError(f"expected h [batch, {self.config.embedding_dim}], got {h.shape}")
        P = self.params
        z = ad.linear(h, P["projector.fc1.weight"], P["projector.fc1.bias"])
        if self.config.projector_norm == "sample":
            z = ad.relu(ad.channel_norm(z, P["projector.norm.gamma"], P["projector.norm.beta"]))
            return ad.linear(z, P["projector.fc2.weight"], P["projector.fc2.bias"])
        # batch statistics, as in the usual SimSiam projector; the output
        # normalization has no affine parameters
        z = ad.relu(ad.batch_norm(z, P["projector.norm.gamma"], P["projector.norm.beta"]))
        return ad.batch_norm(ad.linear(z, P["projector.fc2.weight"], P["projector.fc2.bias"]))

    def predict(self, z: Tensor) -> Tensor:
        if z.ndim != 2 or z.shape[1] != self.config.z_dim:
            raise ValueError(f"expected z [batch, {self.config.z_dim}], got {z.shape}")
        P = self.params
        q = ad.relu(ad.linear(z, P["predictor.fc1.weight"], P["predictor.fc1.bias"]))
        return ad.linear(q, P["predictor.fc2.weight"], P["predictor.fc2.bias"])

    def head_forward(self, h: Tensor, kind: str) -> Tensor:
        """Regression: [B] in standardized target units. Classification: [B, 2] logits."""
        if self.head_kind is None:
            raise ValueError("bundle has no task head")
        if kind != self.head_kind:
            raise ValueError(f"head is {self.head_kind}, not {kind}")
        out = ad.linear(h, self.params["head.weight"], self.params["head.bias"])
        if kind == "regression":
            return ad.reshape(out, (out.shape[0],))
        return out

    def predict_targets(self, x: np.ndarray, batch_size: int = 256) -> np.ndarray:
        """Task predictions in label units (regression) or class indices."""
        outs = []
        for i in range(0, x.shape[0], batch_size):
            out = self.head_forward(self.encode(x[i : i + batch_size]), self.head_kind).data
            if self.head_kind == "regression":
                outs.append(out.astype(np.float64) * self.target_scale + self.target_shift)
            else:
                outs.append(out.argmax(axis=1))
        return np.concatenate(outs)

    def embed(self, x: np.ndarray, batch_size: int = 256) -> np.ndarray:
        return np.concatenate([self.encode(x[i : i + batch_size]).data for i in range(0, x.shape[0], batch_size)])


# ---------------------------------------------------------------- checkpoints

def _config_blob(bundle: ModelBundle) -> bytes:
    items = dict(bundle.config.to_dict())
    items["head_kind"] = bundle.head_kind or "none"
    items["target_shift"] = repr(bundle.target_shift)
    items["target_scale"] = repr(bundle.target_scale)
    return "".join(f"{k}={v}\n" for k, v in items.items()).encode("utf-8")


def save_checkpoint(bundle: ModelBundle, path) -> None:
    """Write SQCK v1. Parameters are stored as little-endian binary32."""
    blob = _config_blob(bundle)
    parts = [SQCK_MAGIC, struct.pack("<H", SQCK_VERSION), struct.pack("<I", len(blob)), blob,
             struct.pack("<I", len(bundle.params))]
    for name, t in bundle.params.items():
        raw = name.encode("utf-8")
        parts.append(struct.pack("<H", len(raw)) + raw)
        parts.append(struct.pack("<B", t.ndim) + struct.pack(f"<{t.ndim}I", *t.shape))
        parts.append(np.ascontiguousarray(t.data, dtype="<f4").tobytes())
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(b"".join(parts))
    tmp.replace(path)


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise CheckpointError("incompatible checkpoint: truncated file")
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        size = struct.calcsize(fmt)
        return struct.unpack(fmt, self.take(size))


def load_checkpoint(path, expected: EncoderConfig | None = None) -> ModelBundle:
    """Read SQCK v1; any defect raises :class:`CheckpointError` and returns nothing."""
    r = _Reader(Path(path).read_bytes())
    if r.take(4) != SQCK_MAGIC:
        raise CheckpointError("incompatible checkpoint: bad magic")
    (version,) = r.unpack("<H")
    if version != SQCK_VERSION:
        raise CheckpointError(f"incompatible checkpoint: version {version}")
    (blob_len,) = r.unpack("<I")
    try:
        text = r.take(blob_len).decode("utf-8")
        items = dict(line.split("=", 1) for line in text.splitlines() if line)
        values = {f.name: items[f.name] if f.type == "str" else int(items[f.name]) for f in fields(EncoderConfig)}
        config = EncoderConfig(**values)
        head_kind = None if items["head_kind"] == "none" else items["head_kind"]
        shift, scale = float(items["target_shift"]), float(items["target_scale"])
    except (KeyError, ValueError, UnicodeDecodeError) as exc:
        raise CheckpointError(f"incompatible checkpoint: bad config blob ({exc})") from None
    if head_kind is not None and head_kind not in HEAD_KINDS:
        raise CheckpointError(f"incompatible checkpoint: unknown head kind {head_kind}")
    if expected is not None and expected != config:
        raise CheckpointError(f"incompatible checkpoint: stored config {config} != expected {expected}")

    shapes = param_shapes(config, head_kind)
    (count,) = r.unpack("<I")
    if count != len(shapes):
        raise CheckpointError(f"incompatible checkpoint: {count} tensors, expected {len(shapes)}")
    params = {}
    for want_name, want_shape in shapes.items():
        (name_len,) = r.unpack("<H")
        name = r.take(name_len).decode("utf-8", errors="replace")
        (ndim,) = r.unpack("<B")
        dims = r.unpack(f"<{ndim}I") if ndim else ()
        if name != want_name or tuple(dims) != want_shape:
            raise CheckpointError(f"incompatible checkpoint: tensor {name}{list(dims)} where {want_name}{list(want_shape)} expected")
        n = int(np.prod(dims))
        data = np.frombuffer(r.take(4 * n), dtype="<f4").astype(np.float32).reshape(dims)
        params[name] = Tensor(data, requires_grad=True, name=name)
    if r.pos != len(r.buf):
        raise CheckpointError("incompatible checkpoint: trailing bytes")
    return ModelBundle(config, params, head_kind, shift, scale)


def encoder_bytes(bundle: ModelBundle, prefixes=("encoder.", "projector.", "predictor.")) -> bytes:
    """Concatenated raw bytes of the selected parameters, for freeze checks."""
    return b"".join(t.data.tobytes() for n, t in bundle.params.items() if n.startswith(prefixes))
