"""High-order MRF label smoothing: one-pass convolutional mean field with an
explicit iterative oracle."""

from .tensor_core import (
    IGNORE_LABEL,
    IntensityLUT,
    LabelSpace,
    TemporalLinks,
    VolumeShape,
    build_intensity_lut,
    build_temporal_links,
    pixel_distance,
)
from .energy import (
    PairwiseConfig,
    context_bank,
    energy,
    free_energy,
    pairwise_term,
    unary_from_prob,
)
from .mf_oracle import MFTrace, mf_step, run_mf
from .dpn import (
    block_min_pool,
    combine_softmax,
    complexity_report,
    dilate_kernel,
    dpn_forward,
    global_conv_3d,
    local_conv_3d,
)
from .train import ParamGradients, TrainConfig, backward, loss_pixelwise_ce, train_incremental
from .metrics import MetricsReport, boundary_accuracy, localization_biou, miou, tagging_accuracy
from .synth import synth_scene

__version__ = "0.1.0"
