"""scikit-learn style facade over the network, sampler and training loop.

``X`` is always a sequence of :class:`~usleep.preprocess.PreprocessedRecording`;
per-epoch labels come from the recordings themselves, so ``y`` is optional.
"""
import math

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from .cohort import age_group
from .exceptions import ContractError
from .model import ArchitectureConfig, build, convert_to_sabn, load_checkpoint
from .preprocess import PreprocessedRecording
from .sampler import Sampler, SamplerConfig
from .stages import N_CLASSES
from .train_eval import TrainConfig, majority_vote, predict_recording, score, train


def check_recordings(X, name="X"):
    """Validate a sequence of preprocessed recordings and return it as a list."""
    if isinstance(X, PreprocessedRecording):
        raise ContractError(f"{name} must be a sequence of recordings, not a single recording")
    X = list(X)
    if not X:
        raise ContractError(f"{name} is empty")
    for r in X:
        if not isinstance(r, PreprocessedRecording):
            raise ContractError(f"{name} must contain PreprocessedRecording objects, got {type(r).__name__}")
        if not r.pairs:
            raise ContractError(f"recording {r.record_id} has no usable EEG/EOG pair")
    return X


class USleepClassifier(ClassifierMixin, BaseEstimator):
    """Per-epoch sleep stager.

    ``regime`` is ``"scratch"`` (fresh weights), ``"finetune"`` (start from
    ``init_checkpoint``) or ``"finetune_sabn"`` (convert the vanilla
    checkpoint to sandwich BN over ``n_groups`` age groups first).
    """

    def __init__(self, depth=12, base_filters=5.0, filter_growth=math.sqrt(2), kernel_size=9,
                 bn_variant="vanilla", n_groups=1, lr=1e-5, patience=100, max_iterations=1000,
                 batches_per_iteration=100, batch_size=12, sequence_length=35, alpha=0.5, augment=True,
                 target_f1=None, dtype="float32", regime="scratch", init_checkpoint=None, random_state=0):
        self.depth = depth
        self.base_filters = base_filters
        self.filter_growth = filter_growth
        self.kernel_size = kernel_size
        self.bn_variant = bn_variant
        self.n_groups = n_groups
        self.lr = lr
        self.patience = patience
        self.max_iterations = max_iterations
        self.batches_per_iteration = batches_per_iteration
        self.batch_size = batch_size
        self.sequence_length = sequence_length
        self.alpha = alpha
        self.augment = augment
        self.target_f1 = target_f1
        self.dtype = dtype
        self.regime = regime
        self.init_checkpoint = init_checkpoint
        self.random_state = random_state

    def _initial_net(self, rate, epoch_s):
        if self.regime == "scratch":
            cfg = ArchitectureConfig(depth=self.depth, base_filters=self.base_filters,
                                     filter_growth=self.filter_growth, kernel_size=self.kernel_size,
                                     rate=rate, epoch_s=epoch_s, bn_variant=self.bn_variant,
                                     n_groups=self.n_groups)
            return build(cfg, seed=self.random_state, dtype=np.dtype(self.dtype))
        if self.init_checkpoint is None:
            raise ContractError(f"regime {self.regime!r} needs init_checkpoint")
        net = self.init_checkpoint if not isinstance(self.init_checkpoint, (str, bytes)) and \
            hasattr(self.init_checkpoint, "params") else load_checkpoint(self.init_checkpoint, dtype=self.dtype)
        if self.regime == "finetune_sabn":
            if net.config.bn_variant == "vanilla":
                net = convert_to_sabn(net, self.n_groups)
            elif net.config.bn_variant != "sabn" or net.config.n_groups != self.n_groups:
                raise ContractError("finetune_sabn needs a vanilla checkpoint or a sabn one with matching groups")
        return net

    def fit(self, X, y=None, X_val=None):
        X = check_recordings(X)
        X_val = check_recordings(X_val, "X_val") if X_val is not None else X
        rate, epoch_s = X[0].rate, X[0].epoch_s
        net = self._initial_net(rate, epoch_s)
        groups = net.config.n_groups if net.config.bn_variant != "vanilla" else 1
        sampler = Sampler(X, SamplerConfig(alpha=self.alpha, L=self.sequence_length, rate=rate, epoch_s=epoch_s,
                                           seed=self.random_state, n_groups=groups),
                          augment=self.augment, dtype=np.dtype(self.dtype))
        tcfg = TrainConfig(lr=self.lr, patience=self.patience, max_iterations=self.max_iterations,
                           batches_per_iteration=self.batches_per_iteration, batch_size=self.batch_size,
                           seed=self.random_state, target_f1=self.target_f1)
        result = train(net, sampler, X_val, tcfg, self.regime)
        self.net_ = result.net
        self.history_ = result.history
        self.n_iter_ = result.iterations
        self.best_iteration_ = result.best_iteration
        self.best_score_ = result.best_f1
        self.target_iteration_ = result.target_iteration
        self.stop_reason_ = result.stop_reason
        self.classes_ = np.arange(N_CLASSES)
        return self

    def _group(self, rec):
        cfg = self.net_.config
        return age_group(rec.subject.age_years, cfg.n_groups) if cfg.bn_variant != "vanilla" else 0

    def predict_proba(self, X):
        """Per recording, the ``[n_epochs, 5]`` mean probability over derivation pairs."""
        check_is_fitted(self, "net_")
        X = check_recordings(X)
        return [np.mean([p for _, p in predict_recording(self.net_, r, self._group(r))], axis=0) for r in X]

    def predict(self, X):
        """Per recording, majority-vote stage indices."""
        check_is_fitted(self, "net_")
        X = check_recordings(X)
        return [majority_vote([p for _, p in predict_recording(self.net_, r, self._group(r))]) for r in X]

    def score(self, X, y=None, sample_weight=None):
        """Mean per-recording macro F1 (labels from the recordings unless ``y`` is given)."""
        X = check_recordings(X)
        truths = y if y is not None else [r.epoch_labels for r in X]
        return float(np.mean([score(t, p).macro_f1 for t, p in zip(truths, self.predict(X))]))
