"""xmf: cross-modal attention fusion for three-modality classification.

A from-scratch float64 autodiff core (tensor), attention primitives
(attention), modality backbones (backbones), the fused classifier (fusion),
a planted-signal synthetic data generator (datagen), variant filtering and
forest feature selection (snp), the experiment protocol (training), metrics
(metrics), and a reproducible CLI (cli).
"""

__version__ = "0.1.0"

from .attention import AttentionBlock, AttentionConfig, cross_modal_pair, multi_head, scaled_dot_product, self_attention
from .backbones import ConvBackbone, DenseBackbone
from .datagen import GenSpec, MultimodalDataset, export_dataset, generate, import_dataset
from .errors import (
    ConfigError,
    DataError,
    DegenerateInputError,
    ParameterError,
    ParseError,
    ShapeError,
    TrainingDivergedError,
    UsageError,
    XmfError,
)
from .fusion import AttentionMode, FusionModel, ModelConfig, MultimodalBatch, build, config_hash, load_checkpoint, save_checkpoint
from .metrics import ConfusionMatrix, class_metrics, macro_f1, summarize, tally, two_sample_z
from .seeding import child_seed, rng_for
from .snp import (
    FilterThresholds,
    RegionSet,
    VariantSite,
    VariantTable,
    filter_variants,
    forest_feature_select,
    genotype_matrix,
    hwe_pvalue,
    parse_variant_table,
    read_bed,
    region_filter,
    write_variant_table,
)
from .tensor import Tensor, backward, check_gradients, conv2d, cross_entropy, dropout, matmul, no_grad, relu, softmax_rows
from .training import (
    Adam,
    GuardedDataset,
    SplitPlan,
    TrialResult,
    ablation_matrix,
    evaluate,
    grid_search,
    robustness_sweep,
    select_initialization,
    stratified_split,
    train_one,
)
