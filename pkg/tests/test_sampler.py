import math
from collections import Counter
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from usleep.edf_io import SubjectMeta
from usleep.exceptions import ContractError, SamplingError
from usleep.preprocess import PreprocessedChannel, PreprocessedRecording
from usleep.sampler import (
    BatchQueue,
    SampleElement,
    Sampler,
    SamplerConfig,
    augment,
    dataset_probability,
    draw,
    format_draw_log,
    materialize,
    sample_sequence,
)
from usleep.stages import MASK

RATE, EPOCH_S = 4, 2.0  # 8 samples per epoch keeps arrays tiny
SPE = 8


def cfg(**kw):
    base = dict(rate=RATE, epoch_s=EPOCH_S, L=5, seed=0)
    base.update(kw)
    return SamplerConfig(**base)


def rec(record_id, labels, n_eeg=1, n_eog=1, dataset="d0", age=30.0, fill=None):
    labels = np.asarray(labels, dtype=np.int64)
    n = len(labels) * SPE
    chans = []
    for i in range(n_eeg):
        samples = np.full(n, fill, np.float32) if fill is not None else np.arange(n, dtype=np.float32) + 1000 * i
        chans.append(PreprocessedChannel(f"EEG{i}", "EEG", samples))
    for j in range(n_eog):
        samples = np.full(n, fill, np.float32) if fill is not None else -np.arange(n, dtype=np.float32) - 1000 * j
        chans.append(PreprocessedChannel(f"EOG{j}", "EOG", samples))
    return PreprocessedRecording(record_id, chans, labels, SubjectMeta(f"subj_{record_id}", age_years=age),
                                 dataset_id=dataset, rate=RATE, epoch_s=EPOCH_S)


class TestDatasetProbability:
    def test_example(self):
        np.testing.assert_allclose(dataset_probability([300, 100], 0.5), [0.625, 0.375], rtol=0, atol=1e-15)

    def test_alpha_one_uniform(self):
        np.testing.assert_allclose(dataset_probability([1, 50, 1000], 1.0), [1 / 3] * 3)

    def test_single(self):
        assert dataset_probability([17], 0.3).tolist() == [1.0]

    def test_errors(self):
        with pytest.raises(ContractError):
            dataset_probability([])
        with pytest.raises(ContractError):
            dataset_probability([3, 0])

    @settings(max_examples=200, deadline=None)
    @given(st.lists(st.integers(1, 10_000), min_size=1, max_size=8), st.fractions(0, 1))
    def test_matches_exact_arithmetic(self, sizes, alpha):
        total = sum(sizes)
        exact = [alpha / len(sizes) + (1 - alpha) * Fraction(s, total) for s in sizes]
        assert sum(exact) == 1
        got = dataset_probability(sizes, float(alpha))
        np.testing.assert_allclose(got, [float(e) for e in exact], atol=1e-12)

    def test_empirical_frequencies_chi_square(self):
        sizes = {"a": 6, "b": 3, "c": 1}
        datasets = {k: [rec(f"{k}{i}", [0, 1, 2]) for i in range(n)] for k, n in sizes.items()}
        config = cfg()
        rng = np.random.default_rng(2024)
        counts = Counter(draw(datasets, config, rng).dataset for _ in range(100_000))
        observed = [counts[k] for k in sizes]
        expected = dataset_probability(list(sizes.values()), 0.5) * 100_000
        assert stats.chisquare(observed, expected).pvalue > 0.01


class TestDraw:
    def test_anchor_class_uniform_over_present(self):
        # heavily unbalanced: N2 dominates epoch counts but classes are drawn uniformly
        labels = [0] * 3 + [1] * 2 + [2] * 40 + [3] * 5 + [4] * 10
        r = rec("r", labels)
        rng = np.random.default_rng(1)
        counts = Counter(draw([r], cfg(), rng).anchor_class for _ in range(50_000))
        for c in range(5):
            assert abs(counts[c] / 50_000 - 0.2) < 0.02

    def test_only_present_classes(self):
        r = rec("r", [2] * 10 + [MASK] * 3)
        rng = np.random.default_rng(0)
        assert {draw([r], cfg(), rng).anchor_class for _ in range(200)} == {2}

    def test_pairs_uniform(self):
        r = rec("r", [0, 1, 2, 3, 4] * 2, n_eeg=2, n_eog=2)
        rng = np.random.default_rng(5)
        counts = Counter()
        for _ in range(10_000):
            d = draw([r], cfg(), rng)
            counts[(d.eeg.label, d.eog.label)] += 1
        assert len(counts) == 4
        for v in counts.values():
            assert abs(v / 10_000 - 0.25) < 0.02

    def test_anchor_epoch_uniform_within_class(self):
        labels = [2, 0, 2, 2, 0, 2]
        r = rec("r", labels)
        rng = np.random.default_rng(3)
        n2 = Counter()
        for _ in range(20_000):
            d = draw([r], cfg(L=1), rng)
            if d.anchor_class == 2:
                n2[d.anchor_epoch] += 1
        observed = [n2[i] for i in (0, 2, 3, 5)]
        assert stats.chisquare(observed).pvalue > 0.01

    def test_clamped_at_start_and_end(self):
        r = rec("r", [0] + [MASK] * 18 + [4])
        rng = np.random.default_rng(0)
        seen = set()
        for _ in range(300):
            d = draw([r], cfg(L=5), rng)
            if d.anchor_epoch == 0:
                assert d.onset == 0
            else:
                assert d.onset == 15
            seen.add(d.anchor_epoch)
        assert seen == {0, 19}

    @settings(max_examples=100, deadline=None)
    @given(st.integers(0, 2**31), st.integers(1, 12), st.lists(st.integers(-1, 4), min_size=1, max_size=40))
    def test_window_contains_anchor(self, seed, L, labels):
        if all(v == MASK for v in labels):
            labels[0] = 2
        r = rec("r", labels)
        d = draw([r], cfg(L=L), np.random.default_rng(seed))
        assert d.onset >= 0
        assert d.onset <= d.anchor_epoch < d.onset + L
        assert d.onset + min(L, len(labels)) <= len(labels)
        assert r.epoch_labels[d.anchor_epoch] == d.anchor_class
        assert 0 <= d.offset < L
        if L <= len(labels) and L - 1 <= d.anchor_epoch <= len(labels) - L:
            assert d.anchor_epoch - d.onset == d.offset

    def test_unscorable_recordings_skipped(self):
        good = rec("good", [1, 2])
        masked = rec("masked", [MASK] * 4)
        no_eog = rec("noeog", [0, 1], n_eog=0)
        rng = np.random.default_rng(0)
        ids = {draw([good, masked, no_eog], cfg(), rng).recording.record_id for _ in range(100)}
        assert ids == {"good"}

    def test_all_unscorable(self):
        with pytest.raises(SamplingError):
            draw([rec("m", [MASK] * 3)], cfg(max_retries=5), np.random.default_rng(0))

    def test_group_index_from_age(self):
        r = rec("r", [0, 1], age=15.0)
        assert draw([r], cfg(n_groups=7), np.random.default_rng(0)).group == 2
        assert draw([r], cfg(n_groups=2), np.random.default_rng(0)).group == 1
        assert draw([r], cfg(), np.random.default_rng(0)).group == 0


class TestMaterialize:
    def test_window_contents(self):
        r = rec("r", [0, 1, 2, 3, 4, 0, 1, 2])
        d = draw([r], cfg(L=3), np.random.default_rng(0))
        el = materialize(d, cfg(L=3))
        assert el.inputs.shape == (2, 3 * SPE)
        np.testing.assert_array_equal(el.inputs[0], d.eeg.samples[d.onset * SPE:(d.onset + 3) * SPE])
        np.testing.assert_array_equal(el.inputs[1], d.eog.samples[d.onset * SPE:(d.onset + 3) * SPE])
        np.testing.assert_array_equal(el.targets, r.epoch_labels[d.onset:d.onset + 3])

    def test_short_recording_padded_and_masked(self):
        r = rec("r", [3, 4])
        el = materialize(draw([r], cfg(L=5), np.random.default_rng(0)), cfg(L=5))
        assert el.targets.tolist() == [3, 4, MASK, MASK, MASK]
        assert np.all(el.inputs[:, 2 * SPE:] == 0)

    def test_rate_mismatch(self):
        r = rec("r", [0, 1])
        with pytest.raises(ContractError):
            materialize(draw([r], cfg(), np.random.default_rng(0)), cfg(rate=8))


def _element(n_t=1000, fill=0.0):
    return SampleElement(np.full((2, n_t), fill, np.float32), np.array([0, 1]), 0, None)


class TestAugment:
    def test_identity_when_disabled(self):
        el = _element(fill=1.5)
        el.inputs[0, :10] = np.arange(10)
        out = augment(el, cfg(aug_segment_p=0.0, aug_channel_p=0.0), np.random.default_rng(0))
        np.testing.assert_array_equal(out.inputs, el.inputs)
        assert out.segment_noise is None and out.channel_noise is None

    def test_segment_noise_statistics(self):
        el = _element(n_t=20_000)
        config = cfg(aug_segment_p=1.0, aug_channel_p=0.0, frac_min=0.3299, frac_max=0.33)
        out = augment(el, config, np.random.default_rng(7))
        start, length = out.segment_noise
        assert abs(length / 20_000 - 0.33) < 1e-3
        span = out.inputs[:, start:start + length].astype(np.float64).ravel()
        n = span.size
        assert abs(span.mean()) < 3 * 0.1 / math.sqrt(n)
        # sample variance of n Gaussians: sd = var * sqrt(2/(n-1)); allow 5 sd
        assert abs(span.var(ddof=1) - 0.01) < 5 * 0.01 * math.sqrt(2 / (n - 1))
        outside = np.delete(out.inputs, np.s_[start:start + length], axis=1)
        assert np.all(outside == 0)
        np.testing.assert_array_equal(out.targets, el.targets)

    def test_noise_mean_follows_signal(self):
        el = _element(n_t=5000, fill=4.0)
        out = augment(el, cfg(aug_segment_p=0.0, aug_channel_p=1.0), np.random.default_rng(0))
        ch = out.channel_noise
        assert abs(out.inputs[ch].mean() - 4.0) < 5 * 0.1 / math.sqrt(5000)
        assert np.all(out.inputs[1 - ch] == 4.0)

    def test_fire_rates(self):
        config = cfg()
        rng = np.random.default_rng(99)
        el = _element(n_t=16)
        seg = chan = 0
        for _ in range(100_000):
            out = augment(el, config, rng)
            seg += out.segment_noise is not None
            chan += out.channel_noise is not None
        assert abs(seg / 1e5 - 0.1) < 0.005
        assert abs(chan / 1e5 - 0.1) < 0.005

    def test_fraction_log_uniform(self):
        config = cfg(aug_segment_p=1.0, aug_channel_p=0.0)
        rng = np.random.default_rng(3)
        n_t = 1_000_000
        el = SampleElement(np.zeros((1, n_t)), np.array([0]), 0, None)
        fracs = [augment(el, config, rng).segment_noise[1] / n_t for _ in range(300)]
        lo, hi = math.log(0.001), math.log(0.33)
        assert stats.kstest(np.log(fracs), stats.uniform(lo, hi - lo).cdf).pvalue > 0.01

    def test_channel_choice_uniform(self):
        config = cfg(aug_segment_p=0.0, aug_channel_p=1.0)
        rng = np.random.default_rng(8)
        counts = Counter(augment(_element(n_t=4), config, rng).channel_noise for _ in range(4000))
        assert abs(counts[0] / 4000 - 0.5) < 0.03


class TestStreams:
    def _datasets(self):
        return {
            "a": [rec(f"a{i}", [0, 1, 2, 3, 4, 2, 2], dataset="a", age=10.0 * i) for i in range(4)],
            "b": [rec("b0", [2, 2, 3], dataset="b", n_eeg=2)],
        }

    def test_sampler_deterministic(self):
        a = Sampler(self._datasets(), cfg(seed=4)).batch(6)
        b = Sampler(self._datasets(), cfg(seed=4)).batch(6)
        np.testing.assert_array_equal(a.inputs, b.inputs)
        np.testing.assert_array_equal(a.targets, b.targets)
        assert a.provenance == b.provenance
        c = Sampler(self._datasets(), cfg(seed=5)).batch(6)
        assert a.provenance != c.provenance

    def test_batch_shapes(self):
        b = Sampler(self._datasets(), cfg(n_groups=7)).batch(4)
        assert b.inputs.shape == (4, 2, 5 * SPE)
        assert b.targets.shape == (4, 5)
        assert b.group_index.shape == (4,)
        assert set(np.unique(b.targets)) <= {MASK, 0, 1, 2, 3, 4}

    @pytest.mark.parametrize("capacity", [1, 3])
    def test_queue_order_independent_of_timing(self, capacity):
        def stream(cap):
            with BatchQueue(self._datasets(), cfg(seed=11), batch_size=3, n_workers=3, capacity=cap) as q:
                return [q.get() for _ in range(7)]
        ref = stream(2)
        got = stream(capacity)
        for x, y in zip(ref, got):
            np.testing.assert_array_equal(x.inputs, y.inputs)
            assert x.provenance == y.provenance

    def test_queue_surfaces_errors(self):
        with BatchQueue([rec("m", [MASK])], cfg(max_retries=2), batch_size=1, n_workers=1) as q:
            with pytest.raises(SamplingError):
                q.get()

    def test_draw_log(self):
        rng = np.random.default_rng(0)
        els = [sample_sequence(self._datasets(), cfg(), rng) for _ in range(5)]
        text = format_draw_log(els)
        lines = text.strip().split("\n")
        assert lines[0].split("\t")[:5] == ["dataset", "subject", "record", "eeg", "eog"]
        assert len(lines) == 6
        assert all(len(l.split("\t")) == 11 for l in lines)


class TestConfig:
    @pytest.mark.parametrize("kw", [dict(alpha=1.5), dict(aug_segment_p=-0.1), dict(frac_min=0.5, frac_max=0.4),
                                    dict(L=0), dict(aug_var=-1)])
    def test_invalid(self, kw):
        with pytest.raises(ContractError):
            cfg(**kw)

    def test_defaults(self):
        c = SamplerConfig()
        assert (c.alpha, c.L, c.samples_per_epoch, c.aug_var) == (0.5, 35, 3840, 0.01)
