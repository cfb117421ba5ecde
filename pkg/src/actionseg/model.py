"""Assembly of the encoder-decoder segmentation network and its variants.

Every variant shares the same temporal-convolutional encoder: depth ``k``
layers of conv -> normalized ReLU -> spatial dropout -> width-2 max pooling,
with 32 + 32*i filters at layer i. The variants differ in where recurrence
sits on the decoding side:

* ``full``      - every decoder layer is upsample -> Bi-LSTM.
* ``high``      - one Bi-LSTM at the most-compressed point between encoder
                  and decoder; the decoder layers are convolutional.
* ``low``       - convolutional decoder except the last layer, which is a
                  Bi-LSTM.
* ``conv_only`` - purely convolutional baseline (``high`` minus its middle
                  Bi-LSTM); used to measure what recurrence adds.

All variants end with a per-frame softmax read-out. Inputs whose length is
not a multiple of 2**k are padded by repeating the final frame and outputs
are trimmed back, so the output always has one row per input frame.
"""

from __future__ import annotations

import dataclasses
import json
import struct
from contextlib import contextmanager
from dataclasses import dataclass

import numpy as np

from . import layers as ly
from .autodiff import Variable, slice_axis
from .errors import ConfigError, ContractError, LoadError, ShapeError
from .layers import Conv1DParams, DenseParams, LSTMParams
from .tensor import Tensor

__all__ = [
    "VARIANTS",
    "ModelConfig",
    "Model",
    "build",
    "describe",
    "format_describe",
    "save_checkpoint",
    "load_checkpoint",
]

VARIANTS = ("full", "high", "low", "conv_only")

_CHECKPOINT_MAGIC = b"ASEGCKP1"
_CHECKPOINT_VERSION = 1


@dataclass
class ModelConfig:
    """Hyperparameters fixing a model's wiring, sizes and initialization seed."""

    input_dim: int
    num_classes: int
    variant: str = "full"
    k: int = 2
    conv_len: int = 30
    hidden: int = 64
    dropout_conv: float = 0.3
    dropout_lstm: float = 0.3
    seed: int = 0

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}, expected one of {VARIANTS}")
        if not 1 <= self.k <= 4:
            raise ConfigError(f"k must be in [1, 4], got {self.k}")
        if self.input_dim < 1:
            raise ConfigError(f"input_dim must be >= 1, got {self.input_dim}")
        if self.num_classes < 2:
            raise ConfigError(f"num_classes must be >= 2, got {self.num_classes}")
        if self.conv_len < 1:
            raise ConfigError(f"conv_len must be >= 1, got {self.conv_len}")
        if self.hidden < 1:
            raise ConfigError(f"hidden must be >= 1, got {self.hidden}")
        for field in ("dropout_conv", "dropout_lstm"):
            rate = getattr(self, field)
            if not 0.0 <= rate < 1.0:
                raise ConfigError(f"{field} must be in [0, 1), got {rate}")

    def filters(self, i: int) -> int:
        """Filter count of encoder layer i (1-based)."""
        return 32 + 32 * i


class Model:
    """Wired parameter set for one configuration.

    ``params`` maps stable names to the trainable variables in construction
    order; the same variables are reachable through the typed blocks used by
    :meth:`forward`. Parameters are mutated only by the optimizer between
    passes, so inference over shared read-only parameters is safe from
    concurrent callers.
    """

    def __init__(self, config: ModelConfig):
        self.config = config
        self.params: dict[str, Variable] = {}
        self._slots: dict[str, tuple[object, str]] = {}
        self.encoder: list[Conv1DParams] = []
        self.mid: tuple[LSTMParams, LSTMParams] | None = None
        self.decoder: list[tuple[str, object]] = []
        self.out: DenseParams | None = None

    def _register(self, name: str, var: Variable, holder: object, attr: str) -> None:
        var.name = name
        var.trainable = True
        self.params[name] = var
        self._slots[name] = (holder, attr)

    @contextmanager
    def substitute(self, name: str, var: Variable):
        """Temporarily stand ``var`` in for a named parameter (gradient checking)."""
        holder, attr = self._slots[name]
        old = self.params[name]
        self.params[name] = var
        setattr(holder, attr, var)
        try:
            yield
        finally:
            self.params[name] = old
            setattr(holder, attr, old)

    def parameter_count(self) -> int:
        return sum(v.value.size for v in self.params.values())

    def prepare_input(self, x) -> tuple[np.ndarray, int]:
        """Validate the feature matrix and pad its length to a multiple of 2**k."""
        cfg = self.config
        arr = x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[1] != cfg.input_dim:
            raise ShapeError(
                f"input shape {arr.shape} does not match expected (frames, {cfg.input_dim})"
            )
        t_len = arr.shape[0]
        pad = (-t_len) % (2 ** cfg.k)
        if pad:
            arr = np.concatenate([arr, np.repeat(arr[-1:], pad, axis=0)], axis=0)
        return arr, t_len

    def stages(self, training: bool = False, rng=None) -> list:
        """The forward pass as a chain of stage functions, one per wiring layer.

        Stage boundaries line up with parameter-name prefixes (enc{i}, mid,
        dec{i}, out), which lets the gradient checker restart the computation
        at the stage owning a perturbed block.
        """
        cfg = self.config
        if training and rng is None and (cfg.dropout_conv > 0 or cfg.dropout_lstm > 0):
            raise ContractError("training forward with dropout needs an rng")
        chain = []

        for conv in self.encoder:
            def enc_fn(v, conv=conv):
                v = ly.conv1d_same(v, conv)
                v = ly.norm_relu(v)
                v = ly.spatial_dropout(v, cfg.dropout_conv, rng, training)
                return ly.max_pool_time(v)
            chain.append(enc_fn)

        if self.mid is not None:
            chain.append(lambda v: ly.bilstm(v, *self.mid))

        last = len(self.decoder)
        for i, (kind, block) in enumerate(self.decoder, start=1):
            if kind == "lstm":
                # recurrent dropout sits between recurrent layers, not ahead
                # of the read-out; the last layer of the conv-free decoder
                # therefore skips it
                dropped = not (cfg.variant == "full" and i == last)
                def dec_fn(v, block=block, dropped=dropped):
                    v = ly.bilstm(ly.upsample_repeat(v), *block)
                    if dropped:
                        v = ly.dropout(v, cfg.dropout_lstm, rng, training)
                    return v
            else:
                def dec_fn(v, block=block):
                    v = ly.conv1d_same(ly.upsample_repeat(v), block)
                    v = ly.norm_relu(v)
                    return ly.spatial_dropout(v, cfg.dropout_conv, rng, training)
            chain.append(dec_fn)

        chain.append(lambda v: ly.time_softmax_dense(v, self.out))
        return chain

    def stage_index(self, param_name: str) -> int:
        """Index of the stage that owns a parameter, by name prefix."""
        head = param_name.split(".", 1)[0]
        k = self.config.k
        if head.startswith("enc"):
            return int(head[3:]) - 1
        mid = 1 if self.mid is not None else 0
        if head == "mid":
            return k
        if head.startswith("dec"):
            return k + mid + int(head[3:]) - 1
        if head == "out":
            return k + mid + len(self.decoder)
        raise KeyError(param_name)

    def forward(self, x, training: bool = False, rng=None) -> Variable:
        """Per-frame class probabilities, shape (frames, num_classes).

        The time axis is padded to the next multiple of 2**k by repeating the
        last frame and trimmed back after the softmax. ``rng`` is required
        when training with a nonzero dropout rate.
        """
        arr, t_len = self.prepare_input(x)
        v = Variable(Tensor._wrap(arr))
        for fn in self.stages(training, rng):
            v = fn(v)
        if v.value.shape[0] != t_len:
            v = slice_axis(v, 0, 0, t_len)
        return v


def _glorot(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int, fan_out: int) -> Variable:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return Variable(Tensor._wrap(rng.uniform(-limit, limit, size=shape)))


def _init_conv(model: Model, rng, name: str, filters: int, in_channels: int, width: int) -> Conv1DParams:
    kernels = _glorot(rng, (filters, in_channels, width), in_channels * width, filters * width)
    bias = Variable(Tensor.zeros(filters))
    p = Conv1DParams(kernels, bias)
    model._register(f"{name}.kernels", kernels, p, "kernels")
    model._register(f"{name}.bias", bias, p, "bias")
    return p


def _init_lstm(model: Model, rng, name: str, hidden: int, in_dim: int) -> LSTMParams:
    fields = {}
    for gate in ("i", "f", "o", "c"):
        fields[f"W_x{gate}"] = _glorot(rng, (hidden, in_dim), in_dim, hidden)
    for gate in ("i", "f", "o", "c"):
        fields[f"W_h{gate}"] = _glorot(rng, (hidden, hidden), hidden, hidden)
    for gate in ("i", "f", "o", "c"):
        # forget gate starts open to stabilize early recurrent training
        init = Tensor.ones(hidden) if gate == "f" else Tensor.zeros(hidden)
        fields[f"b_{gate}"] = Variable(init)
    p = LSTMParams(**fields)
    for attr, var in p.blocks():
        model._register(f"{name}.{attr}", var, p, attr)
    return p


def _init_bilstm(model: Model, rng, name: str, hidden: int, in_dim: int):
    fwd = _init_lstm(model, rng, f"{name}.fwd", hidden, in_dim)
    bwd = _init_lstm(model, rng, f"{name}.bwd", hidden, in_dim)
    return fwd, bwd


def build(config: ModelConfig) -> Model:
    """Initialize all parameters for ``config`` and wire the variant.

    Weights are uniform in +/-sqrt(6 / (fan_in + fan_out)); biases start at
    zero except the recurrent forget gates, which start at one. The encoder
    is constructed first and identically for every variant, so two variants
    built from the same seed share encoder parameters exactly.
    """
    model = Model(config)
    rng = np.random.default_rng(config.seed)
    k, hidden = config.k, config.hidden

    channels = config.input_dim
    for i in range(1, k + 1):
        model.encoder.append(_init_conv(model, rng, f"enc{i}.conv", config.filters(i), channels, config.conv_len))
        channels = config.filters(i)

    if config.variant == "high":
        model.mid = _init_bilstm(model, rng, "mid.lstm", hidden, channels)
        channels = 2 * hidden

    for i in range(1, k + 1):
        if config.variant == "full" or (config.variant == "low" and i == k):
            pair = _init_bilstm(model, rng, f"dec{i}.lstm", hidden, channels)
            model.decoder.append(("lstm", pair))
            channels = 2 * hidden
        else:
            filters = config.filters(k + 1 - i)
            conv = _init_conv(model, rng, f"dec{i}.conv", filters, channels, config.conv_len)
            model.decoder.append(("conv", conv))
            channels = filters

    w = _glorot(rng, (config.num_classes, channels), channels, config.num_classes)
    b = Variable(Tensor.zeros(config.num_classes))
    model.out = DenseParams(w, b)
    model._register("out.W", w, model.out, "W")
    model._register("out.b", b, model.out, "b")
    return model


def describe(model: Model, ref_t: int | None = None) -> list[tuple[str, str, tuple[int, int], int]]:
    """Layer table: (name, kind, output shape at the reference length, param count)."""
    cfg = model.config
    t = ref_t if ref_t is not None else 4 * 2 ** cfg.k
    if t % 2 ** cfg.k != 0:
        raise ContractError(f"reference length {t} must be a multiple of {2 ** cfg.k}")
    rows = [("input", "input", (t, cfg.input_dim), 0)]

    def count(*variables):
        return sum(v.value.size for v in variables)

    for i, conv in enumerate(model.encoder, start=1):
        rows.append((f"enc{i}.conv", "conv1d_same", (t, conv.filters), count(conv.kernels, conv.bias)))
        rows.append((f"enc{i}.act", "norm_relu+spatial_dropout", (t, conv.filters), 0))
        t //= 2
        rows.append((f"enc{i}.pool", "max_pool_time", (t, conv.filters), 0))
    width = model.encoder[-1].filters

    if model.mid is not None:
        width = 2 * cfg.hidden
        rows.append(("mid.lstm", "bilstm", (t, width),
                     count(*(v for p in model.mid for _, v in p.blocks()))))

    for i, (kind, block) in enumerate(model.decoder, start=1):
        t *= 2
        rows.append((f"dec{i}.up", "upsample_repeat", (t, width), 0))
        if kind == "lstm":
            width = 2 * cfg.hidden
            rows.append((f"dec{i}.lstm", "bilstm", (t, width),
                         count(*(v for p in block for _, v in p.blocks()))))
        else:
            width = block.filters
            rows.append((f"dec{i}.conv", "conv1d_same", (t, width), count(block.kernels, block.bias)))
            rows.append((f"dec{i}.act", "norm_relu+spatial_dropout", (t, width), 0))

    rows.append(("out", "time_softmax_dense", (t, cfg.num_classes), count(model.out.W, model.out.b)))
    return rows


def format_describe(model: Model, ref_t: int | None = None) -> str:
    rows = describe(model, ref_t)
    lines = [f"{'layer':<14} {'kind':<28} {'output':<12} {'params':>10}"]
    for name, kind, shape, n in rows:
        lines.append(f"{name:<14} {kind:<28} {str(shape):<12} {n:>10}")
    lines.append(f"{'total':<14} {'':<28} {'':<12} {model.parameter_count():>10}")
    return "\n".join(lines)


def save_checkpoint(model: Model, path) -> None:
    """Write parameters plus config: versioned header, named shapes, float64 LE data."""
    config_blob = json.dumps(dataclasses.asdict(model.config), sort_keys=True).encode("utf-8")
    chunks = [_CHECKPOINT_MAGIC, struct.pack("<II", _CHECKPOINT_VERSION, len(config_blob)), config_blob,
              struct.pack("<I", len(model.params))]
    for name, var in model.params.items():
        raw = name.encode("utf-8")
        arr = var.value.data
        chunks.append(struct.pack("<H", len(raw)))
        chunks.append(raw)
        chunks.append(struct.pack("<B", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(arr.astype("<f8").tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(chunks))


def load_checkpoint(path) -> Model:
    """Rebuild a model from a checkpoint, validating every tensor shape."""
    with open(path, "rb") as fh:
        blob = fh.read()

    def take(n, offset):
        if offset + n > len(blob):
            raise LoadError(f"{path}: truncated checkpoint")
        return blob[offset:offset + n], offset + n

    raw, off = take(len(_CHECKPOINT_MAGIC), 0)
    if raw != _CHECKPOINT_MAGIC:
        raise LoadError(f"{path}: not a checkpoint file (bad magic {raw!r})")
    raw, off = take(8, off)
    version, config_len = struct.unpack("<II", raw)
    if version != _CHECKPOINT_VERSION:
        raise LoadError(f"{path}: unsupported checkpoint version {version}")
    raw, off = take(config_len, off)
    try:
        config = ModelConfig(**json.loads(raw.decode("utf-8")))
    except (TypeError, ValueError, ConfigError) as exc:
        raise LoadError(f"{path}: bad config block: {exc}") from exc

    model = build(config)
    raw, off = take(4, off)
    (n_tensors,) = struct.unpack("<I", raw)
    seen = set()
    for _ in range(n_tensors):
        raw, off = take(2, off)
        (name_len,) = struct.unpack("<H", raw)
        raw, off = take(name_len, off)
        name = raw.decode("utf-8")
        raw, off = take(1, off)
        (ndim,) = struct.unpack("<B", raw)
        raw, off = take(4 * ndim, off)
        shape = struct.unpack(f"<{ndim}I", raw)
        raw, off = take(8 * int(np.prod(shape)), off)
        if name not in model.params:
            raise LoadError(f"{path}: unknown parameter {name!r} for this config")
        expected = model.params[name].value.shape
        if tuple(shape) != expected:
            raise LoadError(f"{path}: parameter {name!r} has shape {tuple(shape)}, config expects {expected}")
        arr = np.frombuffer(raw, dtype="<f8").reshape(shape)
        model.params[name].value = Tensor._wrap(arr.astype(np.float64))
        seen.add(name)
    missing = set(model.params) - seen
    if missing:
        raise LoadError(f"{path}: missing parameters: {sorted(missing)}")
    if off != len(blob):
        raise LoadError(f"{path}: trailing bytes after checkpoint payload")
    return model
