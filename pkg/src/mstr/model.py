"""Sequence classifiers built from encoder blocks, plus checkpoint I/O.

Both variants share one parameter layout so weights can be moved between
them: ``mstr`` uses the multi-scale windowed block, ``vanilla`` uses full
global attention.
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .block import (
    DropoutSpec,
    MstrBlockParams,
    mstr_block_forward,
    post_norm_block,
    scale_mix,
)
from .config import from_kv, parse_kv_lines, to_kv
from .errors import ConfigurationError, ContractError, DimensionError, FormatError
from .tensor import (
    DTYPES,
    Tape,
    Tensor,
    add,
    concat_cols,
    concat_rows,
    gelu,
    matmul,
    scale,
    segment_mean_rows,
    slice_cols,
    slice_rows,
    softmax_rows,
    tape_scope,
    transpose,
)

VARIANTS = ("mstr", "vanilla")


@dataclass
class MstrConfig:
    input_dim: int = 16
    model_dim: int = 64
    p: int = 3
    L: int = 4
    heads: int = 16
    blocks: int = 4
    num_classes: int = 4
    d_ff: Optional[int] = None
    fc1_dim: Optional[int] = None
    fc2_dim: Optional[int] = None
    use_positional: bool = True
    dropout_rate: float = 0.0
    variant: str = "mstr"
    precision: str = "single"

    def __post_init__(self):
        F = self.model_dim
        if self.d_ff is None:
            self.d_ff = 4 * F
        if self.fc1_dim is None:
            self.fc1_dim = max(1, F // 2)
        if self.fc2_dim is None:
            self.fc2_dim = max(1, F // 4)
        self.validate()

    def validate(self) -> None:
        for name in ("input_dim", "model_dim", "heads", "blocks", "num_classes", "d_ff",
                     "fc1_dim", "fc2_dim", "L"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.p < 2:
            raise ConfigurationError(f"p must be >= 2, got {self.p}")
        if self.model_dim % self.heads:
            raise ConfigurationError(f"model_dim={self.model_dim} is not divisible by heads={self.heads}")
        if self.variant not in VARIANTS:
            raise ConfigurationError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.precision not in DTYPES:
            raise ConfigurationError(f"precision must be single or double, got {self.precision!r}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigurationError(f"dropout_rate must lie in [0, 1), got {self.dropout_rate}")

    @property
    def multiple(self) -> int:
        """Every sequence length fed to the model must be a multiple of this."""
        return self.p ** self.L if self.variant == "mstr" else 1

    @property
    def dtype(self):
        return DTYPES[self.precision]


def param_shapes(config: MstrConfig) -> dict[str, tuple[int, int]]:
    """Parameter names and shapes in checkpoint order."""
    F, dff = config.model_dim, config.d_ff
    shapes = {"input_proj": (config.input_dim, F)}
    block = {
        "w_q": (F, F), "w_k": (F, F), "w_v": (F, F), "w_o": (F, F),
        "ffn_w1": (F, dff), "ffn_b1": (1, dff), "ffn_w2": (dff, F), "ffn_b2": (1, F),
        "ln1_gamma": (1, F), "ln1_beta": (1, F), "ln2_gamma": (1, F), "ln2_beta": (1, F),
    }
    for b in range(config.blocks):
        for n in MstrBlockParams.names():
            shapes[f"block{b}.{n}"] = block[n]
    shapes.update({
        "fc1_w": (F, config.fc1_dim), "fc1_b": (1, config.fc1_dim),
        "fc2_w": (config.fc1_dim, config.fc2_dim), "fc2_b": (1, config.fc2_dim),
        "fc3_w": (config.fc2_dim, config.num_classes), "fc3_b": (1, config.num_classes),
    })
    return shapes


def parameter_count(config: MstrConfig) -> int:
    return sum(r * c for r, c in param_shapes(config).values())


@dataclass
class ModelParams:
    config: MstrConfig
    arrays: dict[str, np.ndarray]

    def count(self) -> int:
        return sum(a.size for a in self.arrays.values())

    def copy(self) -> "ModelParams":
        return ModelParams(self.config, {k: v.copy() for k, v in self.arrays.items()})


def glorot_limit(fan_in: int, fan_out: int) -> float:
    return math.sqrt(6.0 / (fan_in + fan_out))


def init_params(config: MstrConfig, seed: int) -> ModelParams:
    """Glorot-uniform matrices, zero biases, unit/zero norm scales."""
    config.validate()
    rng = np.random.default_rng(seed)
    arrays = {}
    for name, (r, c) in param_shapes(config).items():
        leaf = name.rsplit(".", 1)[-1]
        if leaf.endswith("gamma"):
            a = np.ones((r, c))
        elif leaf.endswith("beta") or leaf in ("fc1_b", "fc2_b", "fc3_b", "ffn_b1", "ffn_b2"):
            a = np.zeros((r, c))
        else:
            lim = glorot_limit(r, c)
            a = rng.uniform(-lim, lim, size=(r, c))
        arrays[name] = a.astype(config.dtype)
    return ModelParams(config, arrays)


def sinusoidal_positions(T: int, F: int) -> np.ndarray:
    pos = np.arange(T)[:, None]
    i = np.arange(F)[None, :]
    angle = pos / np.power(10000.0, (2 * (i // 2)) / F)
    return np.where(i % 2 == 0, np.sin(angle), np.cos(angle))


def global_attention(q: Tensor, k: Tensor, v: Tensor, heads: int,
                     probs: Optional[list] = None) -> Tensor:
    """Full multi-head scaled dot-product attention over all rows."""
    F = q.cols
    if heads < 1 or F % heads:
        raise ConfigurationError(f"F={F} is not divisible by heads={heads}")
    d = F // heads
    outs = []
    for h in range(heads):
        if heads == 1:
            qh, kh, vh = q, k, v
        else:
            qh, kh, vh = (slice_cols(m, h * d, (h + 1) * d) for m in (q, k, v))
        with tape_scope(qh, kh, name="attention-scores"):
            a = softmax_rows(scale(matmul(qh, transpose(kh)), 1.0 / math.sqrt(d)))
        with tape_scope(a, vh, name="attention-values"):
            outs.append(matmul(a, vh))
        if probs is not None:
            probs.append(a.data)
    return concat_cols(outs)


def vanilla_block_forward(x: Tensor, params: MstrBlockParams, heads: int,
                          segments: Optional[Sequence[tuple[int, int]]] = None,
                          trace: Optional[dict] = None,
                          drop: Optional[DropoutSpec] = None) -> Tensor:
    """Baseline encoder block: the MSTR block with global attention in place
    of the fractal path, i.e. a single-level mixer ``gelu(Y) W_o``.

    ``segments`` lists ``(start, length)`` row ranges of independent
    sequences stacked in ``x``; attention never crosses a segment.
    """
    if x.cols != params.w_q.rows:
        raise DimensionError(f"vanilla block: input has {x.cols} columns, expected {params.w_q.rows}")
    with tape_scope(x, params.w_q, name="projections"):
        q, k, v = matmul(x, params.w_q), matmul(x, params.w_k), matmul(x, params.w_v)
    probs = [] if trace is not None else None
    if segments is None or len(segments) == 1:
        attn = global_attention(q, k, v, heads, probs)
    else:
        parts = []
        for s, n in segments:
            parts.append(global_attention(*(slice_rows(m, s, s + n) for m in (q, k, v)), heads, probs))
        attn = concat_rows(parts)
    if trace is not None:
        trace.setdefault("probs", []).append(probs)
    mixed = scale_mix([attn], [1], params.w_o, x.rows)
    return post_norm_block(x, mixed, params, drop)


def _as_array(features, dtype) -> np.ndarray:
    arr = features.data if isinstance(features, Tensor) else np.asarray(features)
    if arr.ndim != 2:
        raise DimensionError(f"features must be T x input_dim, got shape {arr.shape}")
    return arr.astype(dtype, copy=False)


def model_forward_batch(features: Sequence, valid_lens: Sequence[int], params: ModelParams,
                        tape: Optional[Tape] = None, trace: Optional[dict] = None,
                        rng: Optional[np.random.Generator] = None) -> Tensor:
    """Logits (B x C) for a batch of padded sequences.

    Sequences are stacked along time and processed together.  With a tape,
    every parameter becomes a named leaf so :func:`backward` returns its
    gradient; without one, evaluation runs eagerly on constants.  Dropout is
    applied only when ``rng`` is given and the configured rate is nonzero.
    """
    cfg = params.config
    if len(features) != len(valid_lens) or not features:
        raise DimensionError("features and valid_lens must be non-empty and of equal length")
    arrays = [_as_array(f, cfg.dtype) for f in features]
    segments = []
    start = 0
    for arr, n in zip(arrays, valid_lens):
        T = arr.shape[0]
        if arr.shape[1] != cfg.input_dim:
            raise DimensionError(f"features have {arr.shape[1]} columns, model expects {cfg.input_dim}")
        if n < 1:
            raise ContractError("valid_len must be >= 1 (empty input)")
        if n > T:
            raise DimensionError(f"valid_len {n} exceeds sequence length {T}")
        if T % cfg.multiple:
            raise ConfigurationError(
                f"sequence length {T} is not a multiple of p^L={cfg.multiple}; pad it first")
        segments.append((start, T))
        start += T

    def P(name):
        a = params.arrays[name]
        return tape.leaf(a, name=name) if tape is not None else Tensor(a)

    x = Tensor(np.concatenate(arrays, axis=0))
    w_in = P("input_proj")
    with tape_scope(x, w_in, name="projections"):
        h = matmul(x, w_in)
    if cfg.use_positional:
        pe = np.concatenate([sinusoidal_positions(T, cfg.model_dim) for _, T in segments])
        h = add(h, Tensor(pe.astype(cfg.dtype)))
    drop = DropoutSpec(cfg.dropout_rate, rng) if (rng is not None and cfg.dropout_rate > 0) else None
    for b in range(cfg.blocks):
        bp = MstrBlockParams(**{n: P(f"block{b}.{n}") for n in MstrBlockParams.names()})
        btrace = {} if trace is not None else None
        if cfg.variant == "mstr":
            h = mstr_block_forward(h, bp, cfg.p, cfg.L, cfg.heads, btrace, drop)
        else:
            h = vanilla_block_forward(h, bp, cfg.heads, segments, btrace, drop)
        if trace is not None:
            trace.setdefault("blocks", []).append(btrace)
    pooled = segment_mean_rows(h, [(s, n) for (s, _), n in zip(segments, valid_lens)])
    with tape_scope(pooled, name="classifier"):
        z = gelu(add(matmul(pooled, P("fc1_w")), P("fc1_b")))
        z = gelu(add(matmul(z, P("fc2_w")), P("fc2_b")))
        return add(matmul(z, P("fc3_w")), P("fc3_b"))


def model_forward(features, valid_len: int, params: ModelParams, tape: Optional[Tape] = None,
                  trace: Optional[dict] = None) -> Tensor:
    """Logits (1 x C) for one padded sequence."""
    return model_forward_batch([features], [valid_len], params, tape, trace)


def predict(params: ModelParams, features: Sequence, valid_lens: Sequence[int],
            batch_size: int = 64) -> np.ndarray:
    out = []
    for i in range(0, len(features), batch_size):
        logits = model_forward_batch(features[i:i + batch_size], valid_lens[i:i + batch_size], params)
        out.append(logits.data.argmax(axis=1))
    return np.concatenate(out) if out else np.zeros(0, dtype=np.int64)


# ---------------------------------------------------------------- checkpoints
#
# Layout (little-endian):
#   8s   magic b"MSTRCKPT"
#   u16  format version
#   u32  byte length N of the config text, then N bytes of UTF-8 key=value lines
#   u32  tensor count
#   per tensor, in param_shapes() order:
#        u32 rows, u32 cols, rows*cols float32 values row-major

CKPT_MAGIC = b"MSTRCKPT"
CKPT_VERSION = 1


def checkpoint_bytes(params: ModelParams) -> bytes:
    cfg_text = to_kv(params.config).encode("utf-8")
    shapes = param_shapes(params.config)
    out = [CKPT_MAGIC, struct.pack("<H", CKPT_VERSION), struct.pack("<I", len(cfg_text)), cfg_text,
           struct.pack("<I", len(shapes))]
    for name, shape in shapes.items():
        a = params.arrays[name]
        if a.shape != shape:
            raise DimensionError(f"{name}: shape {a.shape} does not match config {shape}")
        out.append(struct.pack("<II", *shape))
        out.append(np.ascontiguousarray(a, dtype="<f4").tobytes())
    return b"".join(out)


def write_checkpoint(path, params: ModelParams) -> None:
    with open(path, "wb") as fh:
        fh.write(checkpoint_bytes(params))


def parse_checkpoint(buf: bytes) -> ModelParams:
    off = 0

    def take(n, what):
        nonlocal off
        if off + n > len(buf):
            raise FormatError(f"truncated checkpoint while reading {what}", off)
        chunk = buf[off:off + n]
        off += n
        return chunk

    if take(8, "magic") != CKPT_MAGIC:
        raise FormatError("bad checkpoint magic", 0)
    (version,) = struct.unpack("<H", take(2, "version"))
    if version != CKPT_VERSION:
        raise FormatError(f"unsupported checkpoint version {version}", 8)
    (n_cfg,) = struct.unpack("<I", take(4, "config length"))
    cfg_off = off
    try:
        config = from_kv(MstrConfig, parse_kv_lines(take(n_cfg, "config").decode("utf-8").splitlines()))
    except (UnicodeDecodeError, ConfigurationError) as e:
        raise FormatError(f"invalid config block: {e}", cfg_off) from None
    shapes = param_shapes(config)
    (count,) = struct.unpack("<I", take(4, "tensor count"))
    if count != len(shapes):
        raise FormatError(f"expected {len(shapes)} tensors, header says {count}", off - 4)
    arrays = {}
    for name, shape in shapes.items():
        hdr = off
        r, c = struct.unpack("<II", take(8, f"{name} header"))
        if (r, c) != shape:
            raise FormatError(f"{name}: stored shape {(r, c)} does not match config {shape}", hdr)
        data = np.frombuffer(take(4 * r * c, f"{name} payload"), dtype="<f4").reshape(r, c)
        arrays[name] = data.astype(config.dtype)
    if off != len(buf):
        raise FormatError("trailing bytes after last tensor", off)
    return ModelParams(config, arrays)


def read_checkpoint(path) -> ModelParams:
    with open(path, "rb") as fh:
        return parse_checkpoint(fh.read())
