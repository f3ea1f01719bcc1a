"""Builders for the learned SR architectures.

Two families, both mapping a one-channel volume to a same-size
one-channel volume with stride-1 same-padding convolutions:

* DCSRN: an initial 3^3 conv producing 2k channels feeds a
  densely-connected block of 4 units (BN -> ELU -> 3^3 conv with k
  filters, each unit consuming the concatenation of the initial features
  and every earlier unit's output), then a 1^3 reconstruction conv.
* FSRCNN: feature extraction (5) -> shrink (1) -> m mapping convs (3)
  -> expand (1) -> reconstruction (3), ELU after every layer except the
  last. dims=2 builds the same stack with unit-depth kernels, so the
  network treats each depth slice independently.

Checkpoints use the raw-f32 payload + text header container style.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from .autodiff import (
    AdamState,
    RunningStats,
    Tensor,
    batch_norm,
    concat_channels,
    conv3d,
    elu,
    he_normal,
    no_grad,
)

INPUT_CHANNELS = 1


@dataclass(frozen=True)
class DcsrnConfig:
    growth_rate: int = 24
    dense_units: int = 4
    input_kernel: int = 3
    unit_kernel: int = 3
    reconstruction_kernel: int = 1

    def __post_init__(self):
        if self.growth_rate < 1:
            raise ValueError("growth_rate must be >= 1")
        if self.dense_units < 1:
            raise ValueError("dense_units must be >= 1")
        for k in (self.input_kernel, self.unit_kernel, self.reconstruction_kernel):
            if k < 1 or k % 2 == 0:
                raise ValueError(f"kernel extents must be odd and >= 1, got {k}")

    @property
    def first_filters(self):
        return 2 * self.growth_rate

    def unit_in_channels(self, i: int) -> int:
        """Channels entering dense unit i (1-based)."""
        return self.first_filters + (i - 1) * self.growth_rate


@dataclass(frozen=True)
class FsrcnnConfig:
    d: int = 56
    s: int = 12
    m: int = 4
    dims: int = 3
    feature_kernel: int = 5
    mapping_kernel: int = 3
    reconstruction_kernel: int = 3

    def __post_init__(self):
        if not self.d > self.s >= 1:
            raise ValueError(f"need d > s >= 1, got d={self.d}, s={self.s}")
        if self.m < 1:
            raise ValueError("m must be >= 1")
        if self.dims not in (2, 3):
            raise ValueError(f"dims must be 2 or 3, got {self.dims}")


def _config_to_str(cfg) -> str:
    return ";".join(f"{f.name}={getattr(cfg, f.name)}" for f in fields(cfg))


def _config_from_str(cls, text: str):
    kwargs = {}
    for item in text.split(";"):
        key, _, value = item.partition("=")
        kwargs[key] = int(value)
    return cls(**kwargs)


class ModelGraph:
    """Ordered named parameters plus an architecture-specific forward."""

    def __init__(self, arch: str, config, params: dict, running: dict):
        self.arch = arch
        self.config = config
        self.params = params        # name -> Tensor, insertion-ordered
        self.running = running      # name -> RunningStats

    @property
    def name(self):
        if isinstance(self.config, FsrcnnConfig) and self.config.dims == 2:
            return "fsrcnn2d"
        return self.arch

    def parameters(self):
        return list(self.params.values())

    def named_parameters(self):
        return list(self.params.items())

    def config_hash(self) -> str:
        text = f"{self.arch}:{_config_to_str(self.config)}"
        return hashlib.md5(text.encode()).hexdigest()[:10]

    def min_input_extent(self) -> int:
        if isinstance(self.config, DcsrnConfig):
            return max(self.config.input_kernel, self.config.unit_kernel,
                       self.config.reconstruction_kernel)
        return max(self.config.feature_kernel, self.config.mapping_kernel,
                   self.config.reconstruction_kernel)

    def forward(self, x: Tensor, mode: str = "train") -> Tensor:
        if self.arch == "dcsrn":
            return _forward_dcsrn(self, x, mode)
        if self.arch == "fsrcnn":
            return _forward_fsrcnn(self, x, mode)
        raise ValueError(f"unknown architecture {self.arch!r}")


def _kernel3(k: int, dims: int = 3):
    return (k, k, k) if dims == 3 else (1, k, k)


def _conv_params(rng, name, params, in_c, out_c, kernel, dtype):
    kd, kh, kw = kernel
    fan_in = in_c * kd * kh * kw
    params[f"{name}.w"] = Tensor(
        he_normal(rng, (out_c, in_c, kd, kh, kw), fan_in, dtype), requires_grad=True
    )
    params[f"{name}.b"] = Tensor(np.zeros(out_c, dtype=dtype), requires_grad=True)


def build_dcsrn(cfg: DcsrnConfig, seed: int, dtype=np.float32) -> ModelGraph:
    """Densely-connected SR network with deterministic seeded init."""
    rng = np.random.default_rng(seed)
    params, running = {}, {}
    k3 = _kernel3
    _conv_params(rng, "input_conv", params, INPUT_CHANNELS, cfg.first_filters,
                 k3(cfg.input_kernel), dtype)
    for i in range(1, cfg.dense_units + 1):
        c_in = cfg.unit_in_channels(i)
        assert c_in == cfg.first_filters + (i - 1) * cfg.growth_rate
        params[f"unit{i}.bn.gamma"] = Tensor(np.ones(c_in, dtype=dtype), requires_grad=True)
        params[f"unit{i}.bn.beta"] = Tensor(np.zeros(c_in, dtype=dtype), requires_grad=True)
        running[f"unit{i}.bn"] = RunningStats.create(c_in, dtype=dtype)
        _conv_params(rng, f"unit{i}.conv", params, c_in, cfg.growth_rate,
                     k3(cfg.unit_kernel), dtype)
    final_in = cfg.first_filters + cfg.dense_units * cfg.growth_rate
    _conv_params(rng, "output_conv", params, final_in, 1,
                 k3(cfg.reconstruction_kernel), dtype)
    return ModelGraph("dcsrn", cfg, params, running)


def build_fsrcnn(cfg: FsrcnnConfig, seed: int, dtype=np.float32) -> ModelGraph:
    """FSRCNN-style stack; dims=2 uses unit-depth kernels throughout."""
    rng = np.random.default_rng(seed)
    params = {}
    k = lambda extent: _kernel3(extent, cfg.dims)
    _conv_params(rng, "feature", params, INPUT_CHANNELS, cfg.d, k(cfg.feature_kernel), dtype)
    _conv_params(rng, "shrink", params, cfg.d, cfg.s, k(1), dtype)
    for i in range(1, cfg.m + 1):
        _conv_params(rng, f"map{i}", params, cfg.s, cfg.s, k(cfg.mapping_kernel), dtype)
    _conv_params(rng, "expand", params, cfg.s, cfg.d, k(1), dtype)
    _conv_params(rng, "reconstruction", params, cfg.d, 1, k(cfg.reconstruction_kernel), dtype)
    return ModelGraph("fsrcnn", cfg, params, {})


def _forward_dcsrn(model: ModelGraph, x: Tensor, mode: str) -> Tensor:
    p = model.params
    feats = [conv3d(x, p["input_conv.w"], p["input_conv.b"])]
    for i in range(1, model.config.dense_units + 1):
        h = feats[0] if len(feats) == 1 else concat_channels(feats)
        h = batch_norm(h, p[f"unit{i}.bn.gamma"], p[f"unit{i}.bn.beta"],
                       model.running[f"unit{i}.bn"], mode=mode)
        h = elu(h)
        h = conv3d(h, p[f"unit{i}.conv.w"], p[f"unit{i}.conv.b"])
        feats.append(h)
    return conv3d(concat_channels(feats), p["output_conv.w"], p["output_conv.b"])


def _forward_fsrcnn(model: ModelGraph, x: Tensor, mode: str) -> Tensor:
    p = model.params
    h = elu(conv3d(x, p["feature.w"], p["feature.b"]))
    h = elu(conv3d(h, p["shrink.w"], p["shrink.b"]))
    for i in range(1, model.config.m + 1):
        h = elu(conv3d(h, p[f"map{i}.w"], p[f"map{i}.b"]))
    h = elu(conv3d(h, p["expand.w"], p["expand.b"]))
    return conv3d(h, p["reconstruction.w"], p["reconstruction.b"])


def forward_model(model: ModelGraph, input: Tensor, mode: str = "train") -> Tensor:
    """Run the network; infer mode uses running stats and records nothing."""
    if mode not in ("train", "infer"):
        raise ValueError(f"mode must be 'train' or 'infer', got {mode!r}")
    shape = input.data.shape
    if len(shape) != 5 or shape[1] != INPUT_CHANNELS:
        raise ValueError(f"expected (batch, 1, depth, height, width) input, got {shape}")
    need = model.min_input_extent()
    spatial = shape[2:] if _model_dims(model) == 3 else shape[3:]
    if min(spatial) < need:
        raise ValueError(f"spatial extents {shape[2:]} below the largest kernel extent {need}")
    if mode == "infer":
        with no_grad():
            return model.forward(input, mode)
    return model.forward(input, mode)


def _model_dims(model: ModelGraph) -> int:
    return getattr(model.config, "dims", 3)


def count_params(model: ModelGraph) -> int:
    """Total element count over all parameter tensors (running stats excluded)."""
    return sum(p.data.size for p in model.params.values())


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

_ARCH_CONFIGS = {"dcsrn": DcsrnConfig, "fsrcnn": FsrcnnConfig}


def checkpoint_filename(model: ModelGraph) -> str:
    return f"{model.arch}-{model.config_hash()}.ckpt"


def _ckpt_paths(path):
    p = Path(path)
    if p.suffix == ".ckpth":
        p = p.with_suffix(".ckpt")
    elif p.suffix != ".ckpt":
        p = p.with_suffix(p.suffix + ".ckpt") if p.suffix else p.with_suffix(".ckpt")
    return p, p.with_suffix(".ckpth")


def save_checkpoint(model: ModelGraph, path, adam: AdamState = None, step: int = 0):
    """Write `<path>.ckpt` (f32 payload) + `<path>.ckpth` (text header)."""
    payload_path, header_path = _ckpt_paths(path)
    entries = []  # (kind, name, array)
    for name, p in model.params.items():
        entries.append(("param", name, p.data))
    for name, rs in model.running.items():
        entries.append(("running_mean", name, rs.mean))
        entries.append(("running_var", name, rs.var))
    if adam is not None:
        names = list(model.params)
        if len(adam.m) != len(names):
            raise ValueError("adam state does not match the model's parameter list")
        for name, m in zip(names, adam.m):
            entries.append(("adam_m", name, m))
        for name, v in zip(names, adam.v):
            entries.append(("adam_v", name, v))

    lines = [
        "format=voxelsr-ckpt-v1",
        f"arch={model.arch}",
        f"config={_config_to_str(model.config)}",
        f"step={int(step)}",
    ]
    if adam is not None:
        lines.append(
            f"adam=lr={adam.lr!r};beta1={adam.beta1!r};beta2={adam.beta2!r};"
            f"eps={adam.eps!r};t={adam.t}"
        )
    for kind, name, arr in entries:
        shape = ",".join(str(s) for s in arr.shape)
        lines.append(f"tensor={kind}:{name}:{shape}")
    header_path.write_text("\n".join(lines) + "\n", encoding="utf-8")

    blobs = [np.ascontiguousarray(arr, dtype="<f4").tobytes() for _, _, arr in entries]
    payload_path.write_bytes(b"".join(blobs))


def load_checkpoint(path):
    """Rebuild (model, adam_state, step) from a checkpoint pair.

    The tensor table is validated against a freshly built model of the
    declared architecture; any name/shape mismatch is an error.
    """
    payload_path, header_path = _ckpt_paths(path)
    if not header_path.exists() or not payload_path.exists():
        raise FileNotFoundError(f"missing checkpoint file(s) for {payload_path}")
    meta, tensor_table, adam_fields = {}, [], None
    for line in header_path.read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if not line:
            continue
        key, _, value = line.partition("=")
        if key == "tensor":
            kind, name, shape_text = value.split(":")
            shape = tuple(int(s) for s in shape_text.split(",")) if shape_text else ()
            tensor_table.append((kind, name, shape))
        elif key == "adam":
            adam_fields = dict(item.split("=", 1) for item in value.split(";"))
        else:
            meta[key] = value
    if meta.get("format") != "voxelsr-ckpt-v1":
        raise ValueError(f"{header_path}: unknown checkpoint format {meta.get('format')!r}")
    arch = meta.get("arch")
    if arch not in _ARCH_CONFIGS:
        raise ValueError(f"{header_path}: unknown architecture {arch!r}")
    config = _config_from_str(_ARCH_CONFIGS[arch], meta["config"])
    builder = build_dcsrn if arch == "dcsrn" else build_fsrcnn
    model = builder(config, seed=0)

    raw = np.frombuffer(payload_path.read_bytes(), dtype="<f4")
    total = sum(int(np.prod(shape)) for _, _, shape in tensor_table)
    if raw.size != total:
        raise ValueError(
            f"{payload_path}: payload holds {raw.size} values, header declares {total}"
        )
    arrays = {}
    offset = 0
    for kind, name, shape in tensor_table:
        size = int(np.prod(shape))
        arrays[(kind, name)] = raw[offset : offset + size].reshape(shape).copy()
        offset += size

    for name, p in model.params.items():
        key = ("param", name)
        if key not in arrays:
            raise ValueError(f"{header_path}: checkpoint is missing parameter {name!r}")
        if arrays[key].shape != p.data.shape:
            raise ValueError(
                f"{header_path}: parameter {name!r} has shape {arrays[key].shape}, "
                f"model expects {p.data.shape}"
            )
        p.data = arrays[key]
    for name, rs in model.running.items():
        rs.mean = arrays[("running_mean", name)]
        rs.var = arrays[("running_var", name)]

    adam = None
    if adam_fields is not None:
        adam = AdamState(
            lr=float(adam_fields["lr"]),
            beta1=float(adam_fields["beta1"]),
            beta2=float(adam_fields["beta2"]),
            eps=float(adam_fields["eps"]),
            t=int(adam_fields["t"]),
            m=[arrays[("adam_m", name)] for name in model.params],
            v=[arrays[("adam_v", name)] for name in model.params],
        )
    return model, adam, int(meta.get("step", 0))
