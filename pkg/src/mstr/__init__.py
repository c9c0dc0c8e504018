"""Multi-scale windowed-attention transformer for sequence classification."""
from .block import (
    MstrBlockParams,
    ScalePyramid,
    build_scale_pyramid,
    fractal_attention_scale,
    mstr_block_forward,
    project_qkv,
    scale_mix,
)
from .complexity import (
    FlopsReport,
    analytic_flops_mstr,
    analytic_flops_vtr,
    count_empirical_macs,
    scaling_report,
)
from .data import (
    Dataset,
    Sample,
    SyntheticSpec,
    batch_iter,
    generate_synthetic_dataset,
    pad_to_multiple,
    read_feature_file,
    write_feature_file,
)
from .errors import ConfigurationError, ContractError, DimensionError, FormatError
from .model import (
    ModelParams,
    MstrConfig,
    init_params,
    model_forward,
    read_checkpoint,
    vanilla_block_forward,
    write_checkpoint,
)
from .tensor import Tape, Tensor, backward
from .trainer import EvalMetrics, TrainConfig, adam_step, cross_entropy_loss, evaluate, train

__version__ = "0.1.0"
