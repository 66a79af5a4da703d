"""Continual domain-shift learning lab.

Two models trained in an interleaved loop over a sequence of label-free
target domains: one adapts to the current domain and exports pseudo-labels,
the other accumulates cross-domain generalization from those labels with
distillation and a replay buffer. Includes the evaluation protocol
(adaptation / generalization / forgetting accuracies and their composite),
naive single-model baselines, and ablation variants.
"""

__version__ = "0.1.0"

from .adapt import AdaptConfig, adapt_domain, centroid_pseudo_labels, generate_pseudo_labels, im_loss
from .augment import AugmentConfig, randmix
from .data import (
    Dataset,
    DomainSequence,
    DomainSpec,
    HiddenLabelsError,
    Sample,
    SequenceConfig,
    default_sequence,
    load_csv_domain,
    make_rotated_clusters,
    split_source,
)
from .evaluate import (
    AccuracyMatrix,
    CurveLog,
    MetricsReport,
    accuracy,
    composite_all,
    fa,
    metrics_from_grids,
    tda,
    tdg,
)
from .generalize import (
    DGConfig,
    PseudoLabeledDataset,
    ce_loss,
    distill_loss,
    nl_loss,
    select_confident,
    train_dg_source,
    train_dg_target,
    with_label_noise,
)
from .nnmodel import (
    CheckpointError,
    ClassifierParams,
    ModelConfig,
    Sgd,
    features,
    forward,
    gradient,
    init_params,
    load_checkpoint,
    save_checkpoint,
    softmax,
)
from .orchestrate import (
    VARIANTS,
    ExperimentConfig,
    RunState,
    StageOrderError,
    config_digest,
    run_experiment,
    run_seed,
    run_stage,
)
from .replay import ReplayBuffer, herding_select, update_buffer
from .rng import RngStreams, substream
