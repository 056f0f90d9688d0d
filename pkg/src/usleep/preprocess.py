"""Signal pre-processing: trim to the scored hypnogram, resample, robust-scale and clip.

No spectral filtering is applied anywhere. The pipeline order is fixed:
trim -> derive -> resample -> scale/clip.
"""
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
from scipy.signal import resample_poly
from sklearn.base import BaseEstimator, TransformerMixin, OneToOneFeatureMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .edf_io.derivations import build_derivations
from .edf_io.hypnogram import EPOCH_S, Hypnogram, hypnogram_from_stages
from .edf_io.recording import Channel, Recording, SubjectMeta
from .exceptions import IneligibleRecordingError
from .stages import CLASSES, MASK, MASK_TOKEN, N_CLASSES

TARGET_RATE = 128
CLIP_IQR = 20.0

_HARMONIZE = {"N4": "N3", "MOVEMENT": MASK_TOKEN, "UNKNOWN": MASK_TOKEN, "R": "REM"}


class FlatChannelError(IneligibleRecordingError):
    """The channel has zero inter-quartile range and cannot be scaled."""


def resample(signal, from_hz, to_hz=TARGET_RATE):
    """Polyphase resampling to ``to_hz``; output length is ``round(len * to / from)``."""
    if from_hz <= 0 or to_hz <= 0:
        raise ValueError(f"sample rates must be positive, got {from_hz} -> {to_hz}")
    x = np.asarray(signal, dtype=np.float64)
    ratio = Fraction(to_hz).limit_denominator(10**6) / Fraction(from_hz).limit_denominator(10**6)
    n_out = int(round(len(x) * ratio))
    if ratio == 1:
        return x.copy()
    # polyphase branches differ slightly in DC gain; resample around the mean
    mean = float(x.mean()) if len(x) else 0.0
    y = resample_poly(x - mean, ratio.numerator, ratio.denominator, padtype="line") + mean
    if len(y) >= n_out:
        return y[:n_out]
    return np.concatenate([y, np.full(n_out - len(y), y[-1] if len(y) else 0.0)])


def robust_stats(signal):
    """Median and IQR, quartiles by linear interpolation between order statistics."""
    x = np.asarray(signal, dtype=np.float64)
    q1, med, q3 = np.percentile(x, [25, 50, 75], method="linear")
    return float(med), float(q3 - q1)


def robust_scale_clip(signal, clip=CLIP_IQR):
    """``(x - median) / IQR`` clipped to ``[-clip, clip]``.

    Returns ``(scaled, median, iqr)``. Raises :class:`FlatChannelError` when
    the IQR is zero.
    """
    x = np.asarray(signal, dtype=np.float64)
    med, iqr = robust_stats(x)
    if not iqr > 0:
        raise FlatChannelError("zero inter-quartile range (flat channel)")
    return np.clip((x - med) / iqr, -clip, clip), med, iqr


class Resampler(TransformerMixin, BaseEstimator):
    """Stateless transformer resampling the rows (time axis) of ``X[n_times, n_channels]``."""

    def __init__(self, from_hz=100.0, to_hz=TARGET_RATE):
        self.from_hz = from_hz
        self.to_hz = to_hz

    def fit(self, X, y=None):
        check_array(X)
        return self

    def transform(self, X):
        X = check_array(X, dtype=np.float64)
        return np.stack([resample(col, self.from_hz, self.to_hz) for col in X.T], axis=1)


class RobustScaleClipper(OneToOneFeatureMixin, TransformerMixin, BaseEstimator):
    """Per-column median/IQR scaling with clipping at ``clip`` IQRs.

    Unlike :class:`sklearn.preprocessing.RobustScaler`, flat columns are not
    silently passed through: they are flagged in ``usable_`` and zeroed.

    Attributes
    ----------
    median_, iqr_ : ndarray of shape (n_features,)
    usable_ : ndarray of bool, False where the IQR is zero
    """

    def __init__(self, clip=CLIP_IQR):
        self.clip = clip

    def fit(self, X, y=None):
        X = check_array(X, dtype=np.float64)
        q1, med, q3 = np.percentile(X, [25, 50, 75], axis=0, method="linear")
        self.median_ = med
        self.iqr_ = q3 - q1
        self.usable_ = self.iqr_ > 0
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "median_")
        X = check_array(X, dtype=np.float64)
        scale = np.where(self.usable_, self.iqr_, 1.0)
        out = np.clip((X - self.median_) / scale, -self.clip, self.clip)
        out[:, ~self.usable_] = 0.0
        return out


def harmonize_labels(stages):
    """Map raw stages onto the five classes: N4 -> N3, MOVEMENT/UNKNOWN -> MASK.

    Accepts a :class:`Hypnogram`, a sequence of stage tokens (raw or already
    harmonized) or an integer label array, and returns an ``int64`` array of
    class indices with ``MASK`` (-1) for masked epochs. Idempotent.
    """
    if isinstance(stages, Hypnogram):
        stages = stages.epoch_stages()
    arr = np.asarray(stages)
    if arr.dtype.kind in "iu":
        bad = (arr != MASK) & ((arr < 0) | (arr >= N_CLASSES))
        if bad.any():
            raise ValueError(f"label indices out of range: {np.unique(arr[bad]).tolist()}")
        return arr.astype(np.int64)
    out = np.empty(len(arr), dtype=np.int64)
    for i, token in enumerate(arr):
        t = _HARMONIZE.get(str(token).upper(), str(token).upper())
        out[i] = MASK if t == MASK_TOKEN else CLASSES.index(t)
    return out


def trim_to_hypnogram(recording: Recording, epoch_s=EPOCH_S) -> Recording:
    """Crop every channel to the scored span, keeping whole epochs only.

    The span runs from the first onset to the last scored second, truncated to
    the signal length and to a whole number of epochs.
    """
    hyp = recording.hypnogram
    if hyp is None or len(hyp) == 0:
        raise IneligibleRecordingError(f"recording {recording.record_id or '?'}: empty hypnogram")
    signal_s = min(c.duration for c in recording.channels)
    start = hyp.start
    stop = min(hyp.end, signal_s)
    n_epochs = int(np.floor((stop - start) / epoch_s + 1e-9))
    if n_epochs <= 0:
        raise IneligibleRecordingError(f"recording {recording.record_id or '?'}: hypnogram outside signal")
    stop = start + n_epochs * epoch_s
    channels = []
    for c in recording.channels:
        i0 = int(round(start * c.sample_rate))
        i1 = int(round(stop * c.sample_rate))
        channels.append(Channel(c.label, c.sample_rate, np.asarray(c.samples)[i0:i1].copy(),
                                unit=c.unit, transducer=c.transducer, prefilter=c.prefilter))
    stages = hyp.epoch_stages(epoch_s)[:n_epochs]
    return Recording(
        channels=channels,
        hypnogram=hypnogram_from_stages(stages, onset=0.0, epoch_s=epoch_s),
        subject=recording.subject,
        dataset_id=recording.dataset_id,
        record_id=recording.record_id,
    )


@dataclass
class PreprocessedChannel:
    label: str
    modality: str
    samples: np.ndarray
    recommended: bool = True
    original_rate: float = TARGET_RATE
    median: float = 0.0
    iqr: float = 1.0
    usable: bool = True


@dataclass
class PreprocessedRecording:
    record_id: str
    channels: list
    epoch_labels: np.ndarray
    subject: SubjectMeta = field(default_factory=lambda: SubjectMeta("unknown"))
    dataset_id: str = ""
    rate: int = TARGET_RATE
    epoch_s: float = EPOCH_S
    excluded: dict = field(default_factory=dict)

    @property
    def n_epochs(self):
        return len(self.epoch_labels)

    @property
    def samples_per_epoch(self):
        return int(round(self.rate * self.epoch_s))

    def usable(self, modality):
        return [c for c in self.channels if c.usable and c.modality == modality]

    @property
    def pairs(self):
        """All usable (EEG, EOG) channel combinations."""
        return [(e, o) for e in self.usable("EEG") for o in self.usable("EOG")]

    def present_classes(self):
        return sorted(set(int(v) for v in np.unique(self.epoch_labels)) - {MASK})

    def stack(self, eeg, eog):
        """``[2, n_epochs * samples_per_epoch]`` input for one channel pair."""
        return np.stack([eeg.samples, eog.samples])


def preprocess_recording(
    recording: Recording,
    mode="aasm",
    rng=None,
    recommended=None,
    rate=TARGET_RATE,
    epoch_s=EPOCH_S,
    n_atypical=2,
    dtype=np.float32,
) -> PreprocessedRecording:
    """Run the full pipeline on one recording with a hypnogram attached.

    Flat derivations are kept in ``channels`` with ``usable=False`` and their
    reason recorded in ``excluded``. Raises :class:`IneligibleRecordingError`
    if no usable EEG or EOG derivation remains.
    """
    trimmed = trim_to_hypnogram(recording, epoch_s)
    labels = harmonize_labels(trimmed.hypnogram)
    n_samples = int(round(len(labels) * epoch_s * rate))
    derived = build_derivations(trimmed, mode, rng=rng, recommended=recommended, n_atypical=n_atypical)
    channels, excluded = [], {}
    for d in derived:
        x = resample(d.samples, d.sample_rate, rate)[:n_samples]
        if len(x) < n_samples:
            x = np.pad(x, (0, n_samples - len(x)), mode="edge")
        try:
            scaled, med, iqr = robust_scale_clip(x)
            usable = True
        except FlatChannelError as err:
            scaled, med, iqr, usable = np.zeros_like(x), float(np.median(x)), 0.0, False
            excluded[d.label] = str(err)
        channels.append(PreprocessedChannel(
            label=d.label,
            modality=d.derivation.modality,
            samples=scaled.astype(dtype),
            recommended=d.derivation.recommended,
            original_rate=d.sample_rate,
            median=med,
            iqr=iqr,
            usable=usable,
        ))
    out = PreprocessedRecording(
        record_id=recording.record_id,
        channels=channels,
        epoch_labels=labels,
        subject=recording.subject,
        dataset_id=recording.dataset_id,
        rate=rate,
        epoch_s=epoch_s,
        excluded=excluded,
    )
    for modality in ("EEG", "EOG"):
        if not out.usable(modality):
            raise IneligibleRecordingError(
                f"recording {recording.record_id or '?'}: no usable {modality} channel ({excluded})"
            )
    return out
