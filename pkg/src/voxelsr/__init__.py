"""Volumetric single-image super-resolution toolkit."""

from .volume import (
    Volume3D,
    PhantomSpec,
    load_volume,
    save_volume,
    make_phantom,
    normalize_intensity,
    upsample_nearest,
    upsample_tricubic,
)
from .kspace import (
    ComplexVolume,
    DegradeSpec,
    forward_fft3,
    inverse_fft3,
    truncation_mask,
    degrade,
    decimate,
)
from .metrics import (
    SsimParams,
    MetricsReport,
    ssim3d,
    psnr,
    nrmse,
    summarize,
    format_report,
    write_report,
)
from .autodiff import (
    Tensor,
    Tape,
    AdamState,
    RunningStats,
    backward,
    conv3d,
    batch_norm,
    elu,
    concat_channels,
    mse_loss,
    add,
    sum_all,
    init_adam,
    adam_step,
    zero_grads,
    no_grad,
    set_debug_checks,
)
from .models import (
    DcsrnConfig,
    FsrcnnConfig,
    ModelGraph,
    build_dcsrn,
    build_fsrcnn,
    forward_model,
    count_params,
    save_checkpoint,
    load_checkpoint,
)
from .patches import (
    PatchSpec,
    TilePlan,
    sample_patch_pair,
    tile_positions,
    extract_patches,
    merge_patches,
    cube_to_slices,
    slices_to_cube,
)
from .training import (
    DatasetManifest,
    ManifestEntry,
    TrainConfig,
    TrainResult,
    split_dataset,
    save_manifest,
    load_manifest,
    train,
    infer_volume,
    evaluate_model,
    compare_methods,
    desk_config,
    paper_config,
)

__version__ = "0.1.0"
