"""Task-conditioned ensembles of per-task experts gated by outlier scores.

A continual-learning toolkit: each task gets an immutable expert classifier
and an in-domain model (feature extractor + distance measure) that scores
how strongly a probe belongs to that task. At inference the per-task
outlier scores are inverted and softmax-normalized into membership weights
that fuse the experts' predictions.
"""

from .ensemble import EnsembleState, fuse, predict, predict_batch
from .experts import (
    ExpertConfig,
    ExpertModel,
    expert_predict,
    expert_predict_batch,
    fine_tune,
    full_retrain,
    train_expert,
)
from .gaussian import GaussianModel, mahalanobis_fit, mahalanobis_score, mahalanobis_score_batch
from .indomain import (
    InDomainModel,
    fit_in_domain,
    membership,
    membership_batch,
    train_feature_extractor,
    write_embeddings,
)
from .lof import LofIndex, lof_fit, lof_score, lof_score_batch
from .losses import (
    LossConfig,
    PairBatch,
    center_loss,
    compute_center,
    mean_shift,
    msic_loss,
    total_loss,
    update_center_epoch,
)
from .merge import DistillConfig, MergedInDomain, distill_merge, merge_in_domain
from .metrics import (
    average_accuracy,
    backward_transfer,
    classification_accuracy,
    membership_report,
    tdr_at_fdr,
)
from .mnist import (
    TaskDataset,
    SampleSet,
    build_split_mnist,
    load_mnist,
    make_sampleset,
    parse_idx_images,
    parse_idx_labels,
    sample_pairs,
    write_idx_images,
    write_idx_labels,
)
from .nn import DenseNet, OptimizerState, finite_diff_grad, make_optimizer, optimizer_step
from .protocol import METHODS, ProtocolConfig, RunReport, emit_report, run_protocol
from .serialize import load_model, save_model

__version__ = "0.1.0"
