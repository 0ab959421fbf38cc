"""Classification-head debiasing via representation neutralization.

Train a teacher and a bias-amplified model, derive proxy group
annotations from prediction confidence, retrain the frozen-encoder
model's head on neutralized representation midpoints with softened
targets, and evaluate group fairness against adversarial and
equalized-odds-regularization baselines.
"""

from .analysis import (LinearProbe, TheoremInstance, fit_linear_probe,
                       head_attention_similarity, kpca_project,
                       verify_theorem_bound)
from .data import (Dataset, DatasetSchema, Sample, SplitSpec, SyntheticSpec,
                   batches, generate_synthetic, ingest_csv, load_schema,
                   sample_pair, split)
from .losses import (GceConfig, RnfLossConfig, SoftTarget, ce_loss,
                     combined_rnf_loss, gce_loss, multi_group_smooth,
                     rnf_mse_loss, smooth_loss, softmax_temperature)
from .metrics import (ConfidenceGaps, MetricsRecord, accuracy, confidence_gap,
                      demographic_parity, equalized_odds)
from .nn import (AdamState, ForwardTrace, Gradients, Model, adam_step,
                 backward, encode, forward, head_forward, init_adam,
                 init_model)
from .pipeline import (BaselineConfig, ProxyConfig, RnfStageConfig,
                       StageOneConfig, SweepTemplates, combine_debiased_encoder,
                       evaluate, generate_proxy_annotations, sweep,
                       train_adversarial, train_eor, train_rnf_head,
                       train_stage_one)

__version__ = "0.1.0"
