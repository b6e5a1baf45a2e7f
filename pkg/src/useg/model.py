"""Small encoder-decoder segmentation network and its checkpoint format.

The network: `depth` encoder blocks (two 3x3 conv + batch-norm + ReLU, then
2x2 max-pool), a bottleneck block, `depth` decoder blocks (2x2 transposed
conv, channel concat with the skip connection, two 3x3 conv + BN + ReLU) and
a final 1x1 conv producing per-class logits.  All 3x3 convs use same (zero)
padding, so logits keep the input's spatial dims.  Feature widths are
base_features * 2^level.

Master parameters are float64.  Eval-mode forward first narrows parameters
and running stats through float32 (the checkpoint precision), so a model
produces bitwise-identical logits before and after a save/load round trip.
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from . import tensor as T

CHECKPOINT_MAGIC = b"USEG"
CHECKPOINT_VERSION = 1


class CheckpointError(Exception):
    """Base class for checkpoint file problems."""


class BadMagicError(CheckpointError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


class TruncatedCheckpointError(CheckpointError):
    pass


class RecordMismatchError(CheckpointError):
    """Record count, dims, or names inconsistent with the declared config."""


@dataclass(frozen=True)
class UNetConfig:
    in_channels: int = 3
    num_classes: int = 6
    base_features: int = 8
    depth: int = 4
    bn_momentum: float = 0.1
    bn_eps: float = 1e-5

    def validate(self):
        if self.in_channels < 1:
            raise ValueError(f"in_channels must be >= 1, got {self.in_channels}")
        if self.num_classes < 2:
            raise ValueError(f"num_classes must be >= 2, got {self.num_classes}")
        if self.base_features < 1:
            raise ValueError(f"base_features must be >= 1, got {self.base_features}")
        if self.depth < 1:
            raise ValueError(f"depth must be >= 1, got {self.depth}")
        if not 0.0 < self.bn_momentum <= 1.0:
            raise ValueError(f"bn_momentum must be in (0, 1], got {self.bn_momentum}")
        if self.bn_eps <= 0.0:
            raise ValueError(f"bn_eps must be positive, got {self.bn_eps}")
        return self

    def width(self, level):
        return self.base_features * (1 << level)


@dataclass
class Checkpoint:
    """Everything needed to reconstruct a model (and resume its optimizer)."""

    config: UNetConfig
    params: dict
    stats: dict
    optimizer_state: dict = field(default_factory=dict)
    epoch: int = 0
    eval_dsc: Optional[float] = None

    def to_model(self):
        return UNet.from_state(self.config, self.params, self.stats)


def _canonical32(a):
    # checkpoint precision: float64 -> float32 -> float64 is idempotent
    return a.astype(np.float32).astype(np.float64)


class UNet:
    def __init__(self, config, params, stats):
        self.config = config
        self.params = params
        self.stats = stats
        self._caches = None

    # -- construction ------------------------------------------------------

    @staticmethod
    def param_shapes(config):
        """Ordered name -> shape map for every parameter slot."""
        c = config
        shapes = {}

        def conv(name, cin, cout, k):
            shapes[f"{name}.kernel"] = (cout, cin, k, k)
            shapes[f"{name}.bias"] = (cout,)

        def bn(name, ch):
            shapes[f"{name}.gamma"] = (ch,)
            shapes[f"{name}.beta"] = (ch,)

        def double_conv(prefix, cin, cout):
            conv(f"{prefix}.conv1", cin, cout, 3)
            bn(f"{prefix}.bn1", cout)
            conv(f"{prefix}.conv2", cout, cout, 3)
            bn(f"{prefix}.bn2", cout)

        ch = c.in_channels
        for lvl in range(c.depth):
            double_conv(f"enc{lvl}", ch, c.width(lvl))
            ch = c.width(lvl)
        double_conv("bottleneck", ch, c.width(c.depth))
        for lvl in reversed(range(c.depth)):
            up_in = c.width(lvl + 1)
            up_out = c.width(lvl)
            shapes[f"dec{lvl}.up.kernel"] = (up_in, up_out, 2, 2)
            shapes[f"dec{lvl}.up.bias"] = (up_out,)
            double_conv(f"dec{lvl}", 2 * up_out, up_out)
        conv("head", c.base_features, c.num_classes, 1)
        return shapes

    @staticmethod
    def bn_names(config):
        names = []
        for lvl in range(config.depth):
            names += [f"enc{lvl}.bn1", f"enc{lvl}.bn2"]
        names += ["bottleneck.bn1", "bottleneck.bn2"]
        for lvl in reversed(range(config.depth)):
            names += [f"dec{lvl}.bn1", f"dec{lvl}.bn2"]
        return names

    @classmethod
    def build(cls, config, seed):
        """He fan-in init for conv kernels, zeros for biases and beta, ones
        for gamma; fully determined by the seed."""
        config.validate()
        rng = np.random.default_rng(np.random.SeedSequence(seed))
        params = {}
        for name, shape in cls.param_shapes(config).items():
            if name.endswith(".kernel"):
                if ".up." in name:
                    fan_in = shape[0] * shape[2] * shape[3]
                else:
                    fan_in = shape[1] * shape[2] * shape[3]
                params[name] = rng.normal(0.0, np.sqrt(2.0 / fan_in), shape)
            elif name.endswith(".bias") or name.endswith(".beta"):
                params[name] = np.zeros(shape)
            elif name.endswith(".gamma"):
                params[name] = np.ones(shape)
        stats = {}
        shapes = cls.param_shapes(config)
        for bn in cls.bn_names(config):
            ch = shapes[f"{bn}.gamma"][0]
            stats[f"{bn}.running_mean"] = np.zeros(ch)
            stats[f"{bn}.running_var"] = np.ones(ch)
            stats[f"{bn}.batches_seen"] = np.zeros(1)
        return cls(config, params, stats)

    @staticmethod
    def stat_names(config):
        names = []
        for bn in UNet.bn_names(config):
            names += [f"{bn}.running_mean", f"{bn}.running_var", f"{bn}.batches_seen"]
        return names

    @classmethod
    def from_state(cls, config, params, stats):
        config.validate()
        expected = cls.param_shapes(config)
        if set(params) != set(expected):
            missing = sorted(set(expected) - set(params))
            extra = sorted(set(params) - set(expected))
            raise RecordMismatchError(f"parameter slots do not match architecture "
                                      f"(missing={missing[:3]}, extra={extra[:3]})")
        for name, shape in expected.items():
            if tuple(params[name].shape) != shape:
                raise RecordMismatchError(f"parameter {name} has dims "
                                          f"{params[name].shape}, expected {shape}")
        if set(stats) != set(cls.stat_names(config)):
            raise RecordMismatchError("running-stat slots do not match architecture")
        return cls(config, dict(params), dict(stats))

    def parameter_count(self):
        return sum(int(p.size) for p in self.params.values())

    def copy_state(self):
        return ({k: v.copy() for k, v in self.params.items()},
                {k: v.copy() for k, v in self.stats.items()})

    # -- forward / backward ------------------------------------------------

    def _bn_state(self, name, stats):
        return T.BatchNormState(stats[f"{name}.running_mean"],
                                stats[f"{name}.running_var"],
                                int(stats[f"{name}.batches_seen"][0]))

    def _commit_bn_state(self, name, st):
        self.stats[f"{name}.running_mean"] = st.running_mean
        self.stats[f"{name}.running_var"] = st.running_var
        self.stats[f"{name}.batches_seen"] = np.array([float(st.batches_seen)])

    def _double_conv_fwd(self, x, prefix, mode, update_stats, params, stats, caches):
        c = self.config
        for i in (1, 2):
            conv, bnn = f"{prefix}.conv{i}", f"{prefix}.bn{i}"
            if caches is not None:
                caches[conv] = x
            x = T.conv2d(x, params[f"{conv}.kernel"], params[f"{conv}.bias"], 1, 1)
            st = self._bn_state(bnn, stats)
            x, bn_cache, new_st = T.batchnorm2d(x, params[f"{bnn}.gamma"],
                                                params[f"{bnn}.beta"], st, mode,
                                                c.bn_momentum, c.bn_eps)
            if update_stats:
                self._commit_bn_state(bnn, new_st)
            if caches is not None:
                caches[bnn] = bn_cache
                caches[f"{bnn}.pre_relu"] = x
            x = T.relu(x)
        return x

    def _double_conv_bwd(self, g, prefix, params, caches, grads):
        for i in (2, 1):
            conv, bnn = f"{prefix}.conv{i}", f"{prefix}.bn{i}"
            g = T.relu_backward(caches[f"{bnn}.pre_relu"], g)
            bng = T.batchnorm2d_backward(g, caches[bnn])
            grads[f"{bnn}.gamma"] = bng.grad_params["gamma"]
            grads[f"{bnn}.beta"] = bng.grad_params["beta"]
            cg = T.conv2d_backward(caches[conv], params[f"{conv}.kernel"],
                                   bng.grad_input, 1, 1)
            grads[f"{conv}.kernel"] = cg.grad_params["kernel"]
            grads[f"{conv}.bias"] = cg.grad_params["bias"]
            g = cg.grad_input
        return g

    def forward(self, batch, mode="train", update_stats=None):
        """Runs the network; returns logits (num_classes channels, input's
        spatial dims).  Train mode uses batch statistics (and by default
        commits updated running stats); eval mode uses running stats and is a
        pure function of (parameters, input)."""
        c = self.config
        T._check_nchw("model input", batch)
        if batch.shape[1] != c.in_channels:
            raise T.ShapeError(f"model expects {c.in_channels} input channels, "
                               f"got {batch.shape[1]}")
        div = 1 << c.depth
        if batch.shape[2] % div or batch.shape[3] % div:
            raise T.ShapeError(f"input spatial dims {batch.shape[2]}x{batch.shape[3]} "
                               f"must be divisible by {div}")
        if mode not in ("train", "eval"):
            raise ValueError(f"unknown mode {mode!r}")
        if update_stats is None:
            update_stats = mode == "train"

        if mode == "eval":
            params = {k: _canonical32(v) for k, v in self.params.items()}
            stats = {k: _canonical32(v) for k, v in self.stats.items()}
            caches = None
            update_stats = False
        else:
            params, stats = self.params, self.stats
            caches = {}

        skips = []
        h = batch
        for lvl in range(c.depth):
            h = self._double_conv_fwd(h, f"enc{lvl}", mode, update_stats,
                                      params, stats, caches)
            skips.append(h)
            pre_shape = h.shape
            h, idx = T.maxpool2d(h, 2)
            if caches is not None:
                caches[f"enc{lvl}.pool"] = (idx, pre_shape)
        h = self._double_conv_fwd(h, "bottleneck", mode, update_stats,
                                  params, stats, caches)
        for lvl in reversed(range(c.depth)):
            if caches is not None:
                caches[f"dec{lvl}.up"] = h
            h = T.upconv2d(h, params[f"dec{lvl}.up.kernel"],
                           params[f"dec{lvl}.up.bias"], 2)
            h = T.concat_channels(skips[lvl], h)
            h = self._double_conv_fwd(h, f"dec{lvl}", mode, update_stats,
                                      params, stats, caches)
        if caches is not None:
            caches["head"] = h
        logits = T.conv2d(h, params["head.kernel"], params["head.bias"], 1, 0)
        self._caches = caches
        return logits

    def backward(self, grad_logits):
        """Backpropagates grad_logits through the caches of the last
        train-mode forward; returns the gradient for every parameter."""
        if self._caches is None:
            raise RuntimeError("backward requires a preceding train-mode forward")
        c = self.config
        caches, params = self._caches, self.params
        grads = {}

        hg = T.conv2d_backward(caches["head"], params["head.kernel"], grad_logits, 1, 0)
        grads["head.kernel"] = hg.grad_params["kernel"]
        grads["head.bias"] = hg.grad_params["bias"]
        g = hg.grad_input

        skip_grads = {}
        for lvl in range(c.depth):  # decoder ran depth-1 .. 0; reverse is 0 .. depth-1
            g = self._double_conv_bwd(g, f"dec{lvl}", params, caches, grads)
            ca = c.width(lvl)
            g_skip, g_up = T.split_channels(g, ca)
            skip_grads[lvl] = g_skip
            ug = T.upconv2d_backward(caches[f"dec{lvl}.up"],
                                     params[f"dec{lvl}.up.kernel"], g_up, 2)
            grads[f"dec{lvl}.up.kernel"] = ug.grad_params["kernel"]
            grads[f"dec{lvl}.up.bias"] = ug.grad_params["bias"]
            g = ug.grad_input
        g = self._double_conv_bwd(g, "bottleneck", params, caches, grads)
        for lvl in reversed(range(c.depth)):
            idx, pre_shape = caches[f"enc{lvl}.pool"]
            g = T.maxpool2d_backward(g, idx, pre_shape, 2) + skip_grads[lvl]
            g = self._double_conv_bwd(g, f"enc{lvl}", params, caches, grads)
        return grads


# -- checkpoint I/O ----------------------------------------------------------


def _write_record(buf, name, arr):
    nb = name.encode("utf-8")
    buf.write(struct.pack("<H", len(nb)))
    buf.write(nb)
    buf.write(struct.pack("<B", arr.ndim))
    for d in arr.shape:
        buf.write(struct.pack("<I", d))
    buf.write(arr.astype("<f4").tobytes())


def save_checkpoint(model, path, optimizer_state=None, epoch=0, eval_dsc=None):
    """Writes magic, version, a JSON header, then one record per tensor
    (params, running stats, optimizer state).  Tensor payloads are 32-bit
    little-endian floats."""
    optimizer_state = optimizer_state or {}
    header = {
        "config": asdict(model.config),
        "epoch": int(epoch),
        "eval_dsc": None if eval_dsc is None else float(eval_dsc),
        "n_params": len(model.params),
        "n_stats": len(model.stats),
        "n_optim": len(optimizer_state),
    }
    hb = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    buf = io.BytesIO()
    buf.write(CHECKPOINT_MAGIC)
    buf.write(struct.pack("<I", CHECKPOINT_VERSION))
    buf.write(struct.pack("<I", len(hb)))
    buf.write(hb)
    for section in (model.params, model.stats, optimizer_state):
        for name in section:
            _write_record(buf, name, section[name])
    with open(path, "wb") as f:
        f.write(buf.getvalue())


class _Reader:
    def __init__(self, data):
        self.data = data
        self.pos = 0

    def take(self, n, what):
        if self.pos + n > len(self.data):
            raise TruncatedCheckpointError(f"checkpoint ends inside {what}")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self, what):
        return struct.unpack("<I", self.take(4, what))[0]


def _read_record(r):
    (nlen,) = struct.unpack("<H", r.take(2, "record name length"))
    try:
        name = r.take(nlen, "record name").decode("utf-8")
    except UnicodeDecodeError as e:
        raise RecordMismatchError(f"record name is not valid UTF-8: {e}") from e
    (rank,) = struct.unpack("<B", r.take(1, "record rank"))
    dims = [r.u32(f"dims of {name}") for _ in range(rank)]
    count = 1
    for d in dims:
        if d == 0 or d > 1 << 24:
            raise RecordMismatchError(f"record {name} has invalid dim {d}")
        count *= d
    payload = r.take(4 * count, f"payload of {name}")
    arr = np.frombuffer(payload, dtype="<f4").astype(np.float64).reshape(dims)
    return name, arr


def load_checkpoint(path):
    """Reads and validates a checkpoint; raises a distinct error for bad
    magic, unknown version, truncation, and record/dim inconsistencies.
    Nothing is returned unless the whole file parses."""
    with open(path, "rb") as f:
        data = f.read()
    r = _Reader(data)
    if r.take(4, "magic") != CHECKPOINT_MAGIC:
        raise BadMagicError("bad magic: not a model checkpoint")
    version = r.u32("version")
    if version != CHECKPOINT_VERSION:
        raise CheckpointVersionError(f"unsupported checkpoint version {version}")
    hlen = r.u32("header length")
    try:
        header = json.loads(r.take(hlen, "header").decode("utf-8"))
        config = UNetConfig(**header["config"]).validate()
        counts = (int(header["n_params"]), int(header["n_stats"]), int(header["n_optim"]))
        epoch = int(header["epoch"])
        eval_dsc = header["eval_dsc"]
    except TruncatedCheckpointError:
        raise
    except Exception as e:
        raise RecordMismatchError(f"malformed checkpoint header: {e}") from e

    sections = []
    for n in counts:
        sec = {}
        for _ in range(n):
            name, arr = _read_record(r)
            if name in sec:
                raise RecordMismatchError(f"duplicate record {name}")
            sec[name] = arr
        sections.append(sec)
    if r.pos != len(data):
        raise RecordMismatchError(f"{len(data) - r.pos} trailing bytes after "
                                  "the declared records")
    params, stats, optim = sections

    expected = UNet.param_shapes(config)
    if set(params) != set(expected):
        raise RecordMismatchError("checkpoint params do not cover the "
                                  "architecture's parameter slots")
    for name, shape in expected.items():
        if tuple(params[name].shape) != shape:
            raise RecordMismatchError(f"record {name} has dims {params[name].shape}, "
                                      f"architecture expects {shape}")
    if set(stats) != set(UNet.stat_names(config)):
        raise RecordMismatchError("checkpoint running stats do not cover the "
                                  "architecture's batch-norm slots")
    return Checkpoint(config, params, stats, optim, epoch,
                      None if eval_dsc is None else float(eval_dsc))
