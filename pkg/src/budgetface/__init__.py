"""Flops-constrained face recognition toolkit: angular-margin losses,
quality-aware set aggregation, training-dynamics utilities, MAdd-budgeted
architecture search, and verification metrics, validated at desk scale on
synthetic identity data."""

from .core import AnchorSet, SeededRng, cosine_matrix, normalize
from .losses import (LossOutput, MarginConfig, arcface_forward,
                     arcneg_modulator, arcnegface_forward, loss_backward)
from .quality import (FrameSet, QualityStats, aggregate, quality_normalize,
                      quality_raw, quality_regression_target, quality_rescale)
from .dynamics import (BnStats, DepthMask, Schedule, adabn_recalibrate,
                       anchor_finetune, lr_at, sample_depth_mask)
from .archflops import (ArchSpec, BudgetQuery, LayerSpec, StageSpec,
                        arch_flops, expand_under_budget, layer_flops, r100_spec)
from .metrics import RocPoint, ScoreSet, roc_curve, tpr_at_fpr, verification_pairs
from .synth import SyntheticSpec, gen_framesets, gen_identities

__version__ = "0.1.0"
