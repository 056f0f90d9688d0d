"""Training-sequence sampling and Gaussian-noise augmentation.

A draw walks four levels: dataset (size-tempered probability), recording
(uniform), EEG/EOG pair (uniform), then an anchor epoch (class uniform among
the classes present, epoch uniform within the class) placed at a uniform
offset inside an ``L``-epoch window. :func:`draw` only picks indices;
:func:`materialize` cuts the arrays, so statistics can be gathered cheaply.
"""
import math
import queue
import threading
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .cohort import age_group
from .exceptions import ContractError, SamplingError
from .stages import MASK, class_token

DRAW_LOG_COLUMNS = ("dataset", "subject", "record", "eeg", "eog", "anchor_class", "anchor_epoch",
                    "offset", "onset", "segment_noise", "channel_noise")


@dataclass
class SamplerConfig:
    alpha: float = 0.5
    L: int = 35
    epoch_s: float = 30.0
    rate: int = 128
    aug_segment_p: float = 0.1
    aug_channel_p: float = 0.1
    aug_var: float = 0.01
    frac_min: float = 0.001
    frac_max: float = 0.33
    seed: Optional[int] = 0
    n_groups: int = 1
    max_retries: int = 100

    def __post_init__(self):
        if not 0 <= self.alpha <= 1:
            raise ContractError(f"alpha must lie in [0, 1], got {self.alpha}")
        for name in ("aug_segment_p", "aug_channel_p"):
            p = getattr(self, name)
            if not 0 <= p <= 1:
                raise ContractError(f"{name} must lie in [0, 1], got {p}")
        if not 0 < self.frac_min < self.frac_max <= 1:
            raise ContractError(f"need 0 < frac_min < frac_max <= 1, got {self.frac_min}, {self.frac_max}")
        if self.L < 1:
            raise ContractError(f"L must be >= 1, got {self.L}")
        if self.aug_var < 0:
            raise ContractError(f"aug_var must be >= 0, got {self.aug_var}")

    @property
    def samples_per_epoch(self):
        return int(round(self.rate * self.epoch_s))


@dataclass
class Draw:
    """Indices chosen for one batch element."""

    dataset: str
    recording: object
    eeg: object
    eog: object
    anchor_class: int
    anchor_epoch: int
    offset: int
    onset: int
    group: int = 0


@dataclass
class SampleElement:
    inputs: np.ndarray  # [2, L * i]
    targets: np.ndarray  # [L]
    group: int
    draw: Draw
    segment_noise: Optional[tuple] = None  # (start, length) when fired
    channel_noise: Optional[int] = None  # replaced channel when fired

    def log_row(self):
        d = self.draw
        seg = "-" if self.segment_noise is None else f"{self.segment_noise[0]}+{self.segment_noise[1]}"
        ch = "-" if self.channel_noise is None else str(self.channel_noise)
        return (d.dataset, d.recording.subject.subject_id, d.recording.record_id, d.eeg.label, d.eog.label,
                class_token(d.anchor_class), str(d.anchor_epoch), str(d.offset), str(d.onset), seg, ch)


@dataclass
class SampleBatch:
    inputs: np.ndarray  # [B, 2, L * i]
    targets: np.ndarray  # [B, L]
    group_index: np.ndarray  # [B]
    provenance: list = field(default_factory=list)  # one dict per element

    @property
    def batch_size(self):
        return len(self.targets)


def dataset_probability(sizes, alpha=0.5):
    """``P(D) = alpha / N_D + (1 - alpha) * size_D / sum(size)``."""
    sizes = np.asarray(sizes, dtype=np.float64)
    if sizes.size == 0:
        raise ContractError("dataset list is empty")
    if np.any(sizes <= 0):
        raise ContractError(f"dataset sizes must be positive, got {sizes.tolist()}")
    if not 0 <= alpha <= 1:
        raise ContractError(f"alpha must lie in [0, 1], got {alpha}")
    return alpha / sizes.size + (1 - alpha) * sizes / sizes.sum()


def _as_datasets(datasets):
    if isinstance(datasets, dict):
        items = list(datasets.items())
    else:  # a flat list of recordings grouped by their dataset_id
        items = {}
        for rec in datasets:
            items.setdefault(rec.dataset_id, []).append(rec)
        items = list(items.items())
    items = [(k, list(v)) for k, v in items if len(v)]
    if not items:
        raise ContractError("no recordings to sample from")
    return items


def _scorable(rec):
    return bool(rec.pairs) and bool(rec.present_classes())


def draw(datasets, config: SamplerConfig, rng, probs=None) -> Draw:
    """Pick dataset, recording, channel pair, anchor epoch and window onset.

    Recordings without a usable pair or without any scorable epoch are
    skipped by redrawing, up to ``config.max_retries`` times.
    """
    items = _as_datasets(datasets)
    if probs is None:
        probs = dataset_probability([len(v) for _, v in items], config.alpha)
    for _ in range(config.max_retries):
        d = rng.choice(len(items), p=probs)
        name, recs = items[d]
        rec = recs[rng.integers(len(recs))]
        if not _scorable(rec):
            continue
        pairs = rec.pairs
        eeg, eog = pairs[rng.integers(len(pairs))]
        classes = rec.present_classes()
        cls = classes[rng.integers(len(classes))]
        candidates = np.flatnonzero(rec.epoch_labels == cls)
        anchor = int(candidates[rng.integers(len(candidates))])
        offset = int(rng.integers(config.L))
        onset = min(max(anchor - offset, 0), max(rec.n_epochs - config.L, 0))
        group = age_group(rec.subject.age_years, config.n_groups)
        return Draw(name, rec, eeg, eog, int(cls), anchor, offset, onset, group)
    raise SamplingError(f"no scorable recording found in {config.max_retries} attempts")


def materialize(d: Draw, config: SamplerConfig, dtype=np.float32) -> SampleElement:
    """Cut the ``L``-epoch window of a draw; short recordings are zero-padded and masked."""
    spe = config.samples_per_epoch
    rec = d.recording
    if rec.samples_per_epoch != spe:
        raise ContractError(f"recording {rec.record_id} has {rec.samples_per_epoch} samples/epoch, sampler expects {spe}")
    stop = min(d.onset + config.L, rec.n_epochs)
    inputs = np.zeros((2, config.L * spe), dtype=dtype)
    span = (stop - d.onset) * spe
    inputs[0, :span] = d.eeg.samples[d.onset * spe:stop * spe]
    inputs[1, :span] = d.eog.samples[d.onset * spe:stop * spe]
    targets = np.full(config.L, MASK, dtype=np.int64)
    targets[:stop - d.onset] = rec.epoch_labels[d.onset:stop]
    return SampleElement(inputs, targets, d.group, d)


def noise_span(x, start, length, mean, var, rng):
    """Replace ``x[:, start:start+length]`` (all channels) by ``N(mean, var)`` in place."""
    x[:, start:start + length] = rng.normal(mean, math.sqrt(var), size=(x.shape[0], length))
    return x


def augment(element: SampleElement, config: SamplerConfig, rng) -> SampleElement:
    """Gaussian-noise corruption of the inputs; targets are never touched.

    With probability ``aug_segment_p`` a contiguous span covering a
    log-uniform fraction of the sequence is replaced in every channel; then,
    independently with probability ``aug_channel_p``, one uniformly chosen
    channel is replaced entirely. The noise mean is the sample's mean over
    all channels before corruption.
    """
    x = element.inputs.copy()
    n_ch, n_t = x.shape
    mean = float(x.mean())
    seg = chan = None
    if rng.random() < config.aug_segment_p:
        frac = math.exp(rng.uniform(math.log(config.frac_min), math.log(config.frac_max)))
        length = min(n_t, max(1, int(round(frac * n_t))))
        start = int(rng.integers(n_t - length + 1))
        noise_span(x, start, length, mean, config.aug_var, rng)
        seg = (start, length)
    if rng.random() < config.aug_channel_p:
        chan = int(rng.integers(n_ch))
        x[chan] = rng.normal(mean, math.sqrt(config.aug_var), size=n_t)
    return SampleElement(x, element.targets, element.group, element.draw, seg, chan)


def sample_sequence(datasets, config: SamplerConfig, rng, probs=None, augment_=True, dtype=np.float32):
    el = materialize(draw(datasets, config, rng, probs), config, dtype)
    return augment(el, config, rng) if augment_ else el


def collate(elements) -> SampleBatch:
    return SampleBatch(
        inputs=np.stack([e.inputs for e in elements]),
        targets=np.stack([e.targets for e in elements]),
        group_index=np.array([e.group for e in elements], dtype=np.int64),
        provenance=[dict(zip(DRAW_LOG_COLUMNS, e.log_row())) for e in elements],
    )


class Sampler:
    """Seeded stream of training batches over a set of datasets.

    ``datasets`` maps a dataset id to its training recordings (or is a flat
    list of recordings grouped by ``dataset_id``).
    """

    def __init__(self, datasets, config: SamplerConfig = None, augment=True, dtype=np.float32, rng=None):
        self.config = config or SamplerConfig()
        self.items = _as_datasets(datasets)
        self.datasets = dict(self.items)
        self.probs = dataset_probability([len(v) for _, v in self.items], self.config.alpha)
        self.augment = augment
        self.dtype = dtype
        self.rng = rng if rng is not None else np.random.default_rng(self.config.seed)

    def element(self):
        return sample_sequence(self.datasets, self.config, self.rng, self.probs, self.augment, self.dtype)

    def batch(self, batch_size):
        return collate([self.element() for _ in range(batch_size)])

    def batches(self, batch_size):
        while True:
            yield self.batch(batch_size)


class BatchQueue:
    """Multi-worker producer with a deterministic consumption order.

    Worker ``w`` owns a generator spawned from the sampler seed and fills its
    own bounded queue (blocking when full). The consumer reads the queues
    round-robin, so the batch stream depends only on the seed and worker
    count, never on thread timing.
    """

    def __init__(self, datasets, config: SamplerConfig, batch_size, n_workers=2, capacity=4,
                 augment=True, dtype=np.float32):
        if n_workers < 1 or capacity < 1:
            raise ContractError("n_workers and capacity must be >= 1")
        seeds = np.random.SeedSequence(config.seed).spawn(n_workers)
        self._samplers = [Sampler(datasets, config, augment, dtype, np.random.default_rng(s)) for s in seeds]
        self._queues = [queue.Queue(maxsize=capacity) for _ in range(n_workers)]
        self._stop = threading.Event()
        self._batch_size = batch_size
        self._next = 0
        self._threads = [threading.Thread(target=self._work, args=(i,), daemon=True) for i in range(n_workers)]
        for t in self._threads:
            t.start()

    def _work(self, i):
        sampler, q = self._samplers[i], self._queues[i]
        while not self._stop.is_set():
            try:
                item = sampler.batch(self._batch_size)
            except Exception as err:  # surfaced to the consumer
                item = err
            while not self._stop.is_set():
                try:
                    q.put(item, timeout=0.1)
                    break
                except queue.Full:
                    continue
            if isinstance(item, Exception):
                return

    def get(self) -> SampleBatch:
        q = self._queues[self._next]
        self._next = (self._next + 1) % len(self._queues)
        item = q.get()
        if isinstance(item, Exception):
            raise item
        return item

    def __iter__(self):
        while True:
            yield self.get()

    def close(self):
        self._stop.set()
        for q in self._queues:
            while not q.empty():
                q.get_nowait()
        for t in self._threads:
            t.join(timeout=2)

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def format_draw_log(elements):
    lines = ["\t".join(DRAW_LOG_COLUMNS)]
    lines += ["\t".join(e.log_row()) for e in elements]
    return "\n".join(lines) + "\n"
