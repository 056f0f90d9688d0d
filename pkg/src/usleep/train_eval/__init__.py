"""Loss, training loop, evaluation, metrics and significance tests."""
from .evaluation import (
    EvalReport,
    RecordingResult,
    evaluate,
    evaluate_recording,
    majority_vote,
    pooled_macro_f1,
    predict_recording,
)
from .loss import masked_cross_entropy, masked_cross_entropy_logit_grad
from .metrics import Metrics, confusion_matrix, metrics, score
from .stats import TTestResult, betainc, paired_ttest, t_sf
from .training import REGIMES, IterationRecord, TrainConfig, TrainResult, train, train_step

__all__ = [
    "EvalReport", "IterationRecord", "Metrics", "REGIMES", "RecordingResult", "TTestResult", "TrainConfig",
    "TrainResult", "betainc", "confusion_matrix", "evaluate", "evaluate_recording", "majority_vote",
    "masked_cross_entropy", "masked_cross_entropy_logit_grad", "metrics", "paired_ttest", "pooled_macro_f1",
    "predict_recording", "score", "t_sf", "train", "train_step",
]
