"""Dataset splitting, patch-based training with best-validation
checkpointing, whole-volume tiled inference, and model evaluation.

Volumes are min-max normalized on load; the low-resolution counterpart
of every volume comes from the k-space truncation operator. Training
draws each cube from a random training volume (translation
augmentation), minimizes the MSE between the network output and the
matching HR cube with Adam, and keeps the checkpoint with the best
validation loss. Evaluation produces per-volume SSIM/PSNR/NRMSE rows
and summary statistics; the interpolation baselines consume the
reduced-matrix decimate output, while networks and the lr-identity
reference consume the same-size degraded volume.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .autodiff import Tape, Tensor, backward, init_adam, adam_step, mse_loss, zero_grads
from .kspace import DegradeSpec, degrade, decimate
from .metrics import MetricsReport, METRIC_NAMES, SUMMARY_LABELS, nrmse, psnr, ssim3d, summarize
from .models import (
    DcsrnConfig,
    FsrcnnConfig,
    ModelGraph,
    build_dcsrn,
    build_fsrcnn,
    checkpoint_filename,
    forward_model,
    load_checkpoint,
    save_checkpoint,
)
from .patches import PatchSpec, cube_to_slices, extract_patches, merge_patches, sample_patch_pair, slices_to_cube, tile_positions
from .volume import Volume3D, load_volume, normalize_intensity, upsample_nearest, upsample_tricubic

SPLITS = ("train", "validation", "evaluation", "test")
BASELINE_METHODS = ("nearest", "tricubic", "lr-identity", "hr-identity")


@dataclass
class ManifestEntry:
    id: str
    path: str
    split: str = ""


@dataclass
class DatasetManifest:
    """Volume ids/paths with disjoint split assignments."""

    entries: list
    root: Path = None  # directory that relative paths resolve against

    def __post_init__(self):
        seen = set()
        for e in self.entries:
            if e.id in seen:
                raise ValueError(f"duplicate volume id {e.id!r}")
            seen.add(e.id)
            if e.split and e.split not in SPLITS:
                raise ValueError(f"unknown split {e.split!r} for id {e.id!r}")

    def ids(self, split=None):
        return [e.id for e in self.entries if split is None or e.split == split]

    def select(self, split):
        return [e for e in self.entries if e.split == split]

    def volume_path(self, entry: ManifestEntry) -> Path:
        p = Path(entry.path)
        if not p.is_absolute() and self.root is not None:
            p = self.root / p
        return p


def save_manifest(manifest: DatasetManifest, path):
    lines = ["id,path,split"]
    for e in manifest.entries:
        lines.append(f"{e.id},{e.path},{e.split}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_manifest(path) -> DatasetManifest:
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"missing manifest {p}")
    rows = p.read_text(encoding="utf-8").splitlines()
    if not rows or rows[0].strip() != "id,path,split":
        raise ValueError(f"{p}: manifest must start with header 'id,path,split'")
    entries = []
    for lineno, line in enumerate(rows[1:], 2):
        line = line.strip()
        if not line:
            continue
        parts = line.split(",")
        if len(parts) != 3:
            raise ValueError(f"{p}:{lineno}: expected 'id,path,split', got {line!r}")
        entries.append(ManifestEntry(id=parts[0], path=parts[1], split=parts[2]))
    return DatasetManifest(entries=entries, root=p.parent)


def split_dataset(ids, ratios=(7, 1, 1, 1), seed=0, paths=None) -> DatasetManifest:
    """Deterministic shuffled split into train/validation/evaluation/test.

    Split sizes are floor(n * r / sum(r)); the remainder goes to the
    training split, so 1113 ids with 7:1:1:1 give 780/111/111/111.
    """
    ids = list(ids)
    if not ids:
        raise ValueError("cannot split an empty id list")
    if paths is None:
        paths = {i: str(i) for i in ids}
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != 4 or any(r < 0 for r in ratios) or sum(ratios) <= 0:
        raise ValueError(f"ratios must be 4 non-negative numbers, got {ratios}")
    n = len(ids)
    total = sum(ratios)
    sizes = [int(n * r / total) for r in ratios]
    sizes[0] += n - sum(sizes)  # remainder to train
    order = list(np.random.default_rng(seed).permutation(n))
    entries = []
    cursor = 0
    for split, size in zip(SPLITS, sizes):
        for k in order[cursor : cursor + size]:
            entries.append(ManifestEntry(id=ids[k], path=paths[ids[k]], split=split))
        cursor += size
    entries.sort(key=lambda e: e.id)
    return DatasetManifest(entries=entries)


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TrainConfig:
    arch: str = "dcsrn"             # dcsrn | fsrcnn3d | fsrcnn2d
    growth_rate: int = 24
    dense_units: int = 4
    fsrcnn_d: int = 32
    fsrcnn_s: int = 5
    fsrcnn_m: int = 1
    lr: float = 1e-5
    batch_cubes: int = 2
    max_steps: int = 2000
    validate_every: int = 100
    seed: int = 0
    manifest: str = ""
    out_dir: str = "runs"
    cube_size: int = 64
    stride: int = None
    factors: tuple = (2, 2, 1)
    axes: tuple = None
    val_cubes_per_volume: int = 16

    def __post_init__(self):
        if self.arch not in ("dcsrn", "fsrcnn3d", "fsrcnn2d"):
            raise ValueError(f"unknown arch {self.arch!r}")
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.max_steps < 1 or self.validate_every < 1:
            raise ValueError("max_steps and validate_every must be >= 1")

    def patch_spec(self) -> PatchSpec:
        return PatchSpec(cube_size=self.cube_size, stride=self.stride,
                         batch_cubes=self.batch_cubes)

    def degrade_spec(self) -> DegradeSpec:
        return DegradeSpec(factors=self.factors, axes=self.axes)


def desk_config(**overrides) -> TrainConfig:
    """Small configuration that trains in minutes on one CPU core."""
    base = dict(arch="dcsrn", growth_rate=8, lr=1e-3, max_steps=2000,
                validate_every=100, cube_size=64)
    base.update(overrides)
    return TrainConfig(**base)


def paper_config(**overrides) -> TrainConfig:
    """Full-scale configuration (growth rate 24, lr 1e-5, 64-cubes)."""
    base = dict(arch="dcsrn", growth_rate=24, lr=1e-5, max_steps=1_000_000,
                validate_every=1000, cube_size=64)
    base.update(overrides)
    return TrainConfig(**base)


def build_model(cfg: TrainConfig) -> ModelGraph:
    if cfg.arch == "dcsrn":
        return build_dcsrn(DcsrnConfig(growth_rate=cfg.growth_rate,
                                       dense_units=cfg.dense_units), seed=cfg.seed)
    dims = 3 if cfg.arch == "fsrcnn3d" else 2
    return build_fsrcnn(FsrcnnConfig(d=cfg.fsrcnn_d, s=cfg.fsrcnn_s, m=cfg.fsrcnn_m,
                                     dims=dims), seed=cfg.seed)


def _model_is_2d(model: ModelGraph) -> bool:
    return getattr(model.config, "dims", 3) == 2


def _cubes_to_batch(cubes, two_d: bool) -> np.ndarray:
    if two_d:
        return np.concatenate([cube_to_slices(c) for c in cubes], axis=0)
    return np.stack(cubes)[:, None]


def load_split_volumes(manifest: DatasetManifest, split: str, spec: DegradeSpec):
    """Sorted (id, hr, lr) triples for one split; HR is normalized on load."""
    out = []
    for entry in sorted(manifest.select(split), key=lambda e: e.id):
        hr = normalize_intensity(load_volume(manifest.volume_path(entry)))
        out.append((entry.id, hr, degrade(hr, spec)))
    return out


@dataclass
class TrainResult:
    checkpoint_path: Path
    log_path: Path
    log: list                   # (step, train_loss, val_loss or None, saved)
    best_val_loss: float
    initial_train_loss: float
    final_train_loss: float


def _format_log(log) -> str:
    lines = ["step,train_loss,val_loss,checkpoint_saved"]
    for step, train_loss, val_loss, saved in log:
        val_text = "" if val_loss is None else repr(val_loss)
        lines.append(f"{step},{repr(train_loss)},{val_text},{saved}")
    return "\n".join(lines) + "\n"


def _validation_loss(model, val_volumes, val_corners, cube_size, two_d) -> float:
    total, count = 0.0, 0
    for (vid, hr, lr), corners in zip(val_volumes, val_corners):
        for corner in corners:
            sl = tuple(slice(c, c + cube_size) for c in corner)
            x = _cubes_to_batch([lr.values[sl]], two_d)
            y = _cubes_to_batch([hr.values[sl]], two_d)
            pred = forward_model(model, Tensor(x), mode="infer")
            diff = pred.data - y
            total += float(np.mean(diff * diff))
            count += 1
    return total / count


def train(cfg: TrainConfig) -> TrainResult:
    """Run the training loop; returns checkpoint and log locations.

    Deterministic for a fixed seed in single-threaded mode: the sampling
    rng, validation cube set, parameter init, and Adam updates are all
    seeded from cfg.seed.
    """
    manifest = load_manifest(cfg.manifest)
    spec = cfg.degrade_spec()
    patch = cfg.patch_spec()
    train_volumes = load_split_volumes(manifest, "train", spec)
    val_volumes = load_split_volumes(manifest, "validation", spec)
    if not train_volumes or not val_volumes:
        raise ValueError("manifest needs non-empty train and validation splits")
    for vid, hr, _ in train_volumes + val_volumes:
        if any(d < patch.cube_size for d in hr.dims):
            raise ValueError(f"volume {vid!r} dims {hr.dims} below cube size {patch.cube_size}")

    model = build_model(cfg)
    two_d = _model_is_2d(model)
    params = model.parameters()
    adam = init_adam(params, lr=cfg.lr)
    rng = np.random.default_rng(cfg.seed)
    val_rng = np.random.default_rng([cfg.seed, 1])
    val_corners = [
        [tuple(int(val_rng.integers(0, d - patch.cube_size + 1)) for d in hr.dims)
         for _ in range(cfg.val_cubes_per_volume)]
        for _, hr, _ in val_volumes
    ]

    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ckpt_path = out_dir / checkpoint_filename(model)
    log_path = out_dir / f"{model.name}-{model.config_hash()}-train.csv"

    log = []
    best_val = math.inf
    initial_loss = None
    n_train = len(train_volumes)
    for step in range(1, cfg.max_steps + 1):
        lr_cubes, hr_cubes = [], []
        for _ in range(patch.batch_cubes):
            _, hr, lrv = train_volumes[int(rng.integers(0, n_train))]
            lc, hc = sample_patch_pair(lrv, hr, patch, rng)
            lr_cubes.append(lc)
            hr_cubes.append(hc)
        x = Tensor(_cubes_to_batch(lr_cubes, two_d))
        y = Tensor(_cubes_to_batch(hr_cubes, two_d))
        tape = Tape()
        with tape:
            pred = forward_model(model, x, mode="train")
            loss = mse_loss(pred, y)
        train_loss = float(loss.data)
        if not math.isfinite(train_loss):
            raise RuntimeError(f"non-finite training loss at step {step}")
        if initial_loss is None:
            initial_loss = train_loss
        zero_grads(params)
        backward(loss, tape)
        adam_step(params, [p.grad for p in params], adam)

        val_loss, saved = None, 0
        if step % cfg.validate_every == 0 or step == cfg.max_steps:
            val_loss = _validation_loss(model, val_volumes, val_corners,
                                        patch.cube_size, two_d)
            if not math.isfinite(val_loss):
                raise RuntimeError(f"non-finite validation loss at step {step}")
            if val_loss < best_val:
                best_val = val_loss
                save_checkpoint(model, ckpt_path, adam=adam, step=step)
                saved = 1
        log.append((step, train_loss, val_loss, saved))

    log_path.write_text(_format_log(log), encoding="utf-8")
    return TrainResult(
        checkpoint_path=ckpt_path,
        log_path=log_path,
        log=log,
        best_val_loss=best_val,
        initial_train_loss=initial_loss,
        final_train_loss=log[-1][1],
    )


# ---------------------------------------------------------------------------
# inference and evaluation
# ---------------------------------------------------------------------------

_INFER_GROUP = 4  # cubes per forward pass during tiled inference


def infer_volume(checkpoint, lr_vol: Volume3D, patch: PatchSpec = PatchSpec()) -> Volume3D:
    """Tile, run the model per cube in infer mode, and merge by averaging."""
    model = checkpoint if isinstance(checkpoint, ModelGraph) else load_checkpoint(checkpoint)[0]
    plan = tile_positions(lr_vol.dims, patch)
    cubes = extract_patches(lr_vol.values, plan)
    two_d = _model_is_2d(model)
    outputs = []
    for start in range(0, len(cubes), _INFER_GROUP):
        group = cubes[start : start + _INFER_GROUP]
        x = _cubes_to_batch(list(group), two_d)
        pred = forward_model(model, Tensor(x), mode="infer").data
        if two_d:
            cs = patch.cube_size
            pred = slices_to_cube(pred).reshape(len(group), cs, cs, cs)
        else:
            pred = pred[:, 0]
        outputs.extend(pred)
    return merge_patches(np.asarray(outputs), plan, spacing=lr_vol.spacing)


def _super_resolve(method, hr: Volume3D, lr: Volume3D, spec: DegradeSpec,
                   patch: PatchSpec, model_cache: dict) -> Volume3D:
    if method == "hr-identity":
        return hr
    if method == "lr-identity":
        return lr
    if method in ("nearest", "tricubic"):
        small = decimate(hr, spec)
        up = upsample_nearest if method == "nearest" else upsample_tricubic
        return up(small, spec.factors)
    if method not in model_cache:
        model_cache[method] = load_checkpoint(method)[0]
    return infer_volume(model_cache[method], lr, patch)


def evaluate_model(method, manifest, split: str, spec: DegradeSpec,
                   patch: PatchSpec = PatchSpec()) -> MetricsReport:
    """SSIM/PSNR/NRMSE of one SR method against HR over a manifest split.

    method is one of "nearest", "tricubic", "lr-identity", "hr-identity"
    or a checkpoint path. Interpolation baselines upsample the
    reduced-matrix decimate output; networks and lr-identity use the
    same-size degraded volume, so per-volume improvement deltas compare
    like with like.
    """
    if isinstance(manifest, (str, Path)):
        manifest = load_manifest(manifest)
    if isinstance(method, Path):
        method = str(method)
    volumes = load_split_volumes(manifest, split, spec)
    if not volumes:
        raise ValueError(f"split {split!r} is empty")
    model_cache = {}
    rows = []
    for vid, hr, lr in volumes:
        sr = _super_resolve(method, hr, lr, spec, patch, model_cache)
        rows.append((vid, ssim3d(hr, sr), psnr(hr, sr), nrmse(hr, sr)))
    return summarize(rows)


def compare_methods(methods, manifest, split: str, spec: DegradeSpec,
                    patch: PatchSpec = PatchSpec()) -> dict:
    """Evaluate several methods on the same split; returns method -> report."""
    return {m: evaluate_model(m, manifest, split, spec, patch) for m in methods}


def format_comparison(reports: dict) -> str:
    """Summary-statistics table across methods, one row per statistic."""
    methods = list(reports)
    header = ["stat"] + [f"{m}:{metric}" for m in methods for metric in METRIC_NAMES]
    lines = [",".join(header)]
    for label in SUMMARY_LABELS:
        cells = [label]
        for m in methods:
            cells += [f"{reports[m].summary[metric][label]:.6g}" for metric in METRIC_NAMES]
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"
