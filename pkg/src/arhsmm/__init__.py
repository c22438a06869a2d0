"""Explicit-duration hidden semi-Markov segmentation of autoregressive
time series with heavy-tailed (Student-t) observation noise.

Exact forward-backward inference, Viterbi decoding, EM and complete-data
learning, a generative simulator, signal preprocessing and detection
metrics, wired together by the ``arhsmm`` command-line tool.
"""

from ._kernels import backend_name
from .evaluate import (EventMetrics, MetricsReport, event_metrics, f1, mcc,
                       predictive_nll)
from .inference import labels_from_path, viterbi
from .learning import (FitResult, FitWarning, InitConfig, SuffStats,
                       default_unsupervised_init, e_step, em_fit, m_step,
                       solve_nu, supervised_fit, update_sigma,
                       weighted_least_squares)
from .messages import ForwardResult, backward, forward, loglikelihood
from .model import (HiddenPath, ModelParams, RegimeParams, Sequence,
                    ValidationResult, deserialize_model, load_model,
                    normalized, save_model, serialize_model, validate_model,
                    validate_path)
from .observation import (ar_predict, digamma, gen_t_logpdf, tau_mean,
                          tau_mean_log)
from .preprocess import (EventAnnotation, LabelTrack, events_to_labels,
                         merge_expert_labels, resample, zscore)
from .simulate import rng_from_seed, sample_sequence

__all__ = [
    "backend_name",
    "EventMetrics", "MetricsReport", "event_metrics", "f1", "mcc", "predictive_nll",
    "labels_from_path", "viterbi",
    "FitResult", "FitWarning", "InitConfig", "SuffStats",
    "default_unsupervised_init", "e_step", "em_fit", "m_step", "solve_nu",
    "supervised_fit", "update_sigma", "weighted_least_squares",
    "ForwardResult", "backward", "forward", "loglikelihood",
    "HiddenPath", "ModelParams", "RegimeParams", "Sequence", "ValidationResult",
    "deserialize_model", "load_model", "normalized", "save_model",
    "serialize_model", "validate_model", "validate_path",
    "ar_predict", "digamma", "gen_t_logpdf", "tau_mean", "tau_mean_log",
    "EventAnnotation", "LabelTrack", "events_to_labels", "merge_expert_labels",
    "resample", "zscore",
    "rng_from_seed", "sample_sequence",
]
