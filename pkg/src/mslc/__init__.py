"""Meta soft label correction for training classifiers under label noise.

The package couples a small feedforward classifier with two learned
coefficient networks that blend each sample's observed label, current
prediction and previously corrected label into a soft training target,
optimized through a one-step bi-level update guided by a clean meta set.
"""

__version__ = "0.1.0"

from .baselines import (BaselineSpec, beta_sweep, train_bootstrap, train_ce,  # noqa: F401
                        train_finetune, train_fixed_beta, train_jointopt)
from .corrector import (CorrectionOutput, PseudoLabelStore, blend_labels,  # noqa: F401
                        correct_label, corrector_inputs, hard_label)
from .data import BatchSampler, LabeledDataset, one_hot, split, synth_gaussian  # noqa: F401
from .metaopt import (MetaGradient, TrainConfig, TrainResult, meta_gradient,  # noqa: F401
                      run_training, train)
from .models import ClassifierMLP, CoefficientNet, classifier_predict  # noqa: F401
from .noise import NoiseSpec, build_transition, empirical_transition, inject  # noqa: F401
from .report import RunReport, confusion, corrected_label_accuracy, emit  # noqa: F401
