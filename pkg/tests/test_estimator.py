import copy

import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from usleep.edf_io import parse_edf, read_hypnogram, write_edf
from usleep.estimator import USleepClassifier, check_recordings
from usleep.exceptions import ContractError
from usleep.model import ArchitectureConfig, build, save_checkpoint
from usleep.preprocess import preprocess_recording
from usleep.synthetic import (
    EEG_SIGNATURES,
    STAGES,
    read_metadata,
    synthetic_cohort,
    synthetic_recording,
    synthetic_stages,
    write_cohort,
)

FAST = dict(depth=2, base_filters=4.0, lr=1e-3, sequence_length=2, batch_size=2, batches_per_iteration=1,
            max_iterations=2, patience=5)


@pytest.fixture(scope="module")
def recs():
    return [preprocess_recording(r) for r in synthetic_cohort(3, n_epochs=8, seed=4, eeg=("C4",))]


class TestSynthetic:
    def test_every_stage_present(self):
        rng = np.random.default_rng(0)
        for n in (5, 6, 40):
            assert set(synthetic_stages(n, rng)) == set(STAGES)
        with pytest.raises(ValueError):
            synthetic_stages(4, rng)

    def test_deterministic(self):
        a = synthetic_recording("x", 6, seed=3)
        b = synthetic_recording("x", 6, seed=3)
        for ca, cb in zip(a.channels, b.channels):
            np.testing.assert_array_equal(ca.samples, cb.samples)

    def test_spectral_signature(self):
        # the dominant EEG frequency of an N3 epoch is the N3 slow wave
        rec = synthetic_recording("x", 30, rate=128.0, seed=1)
        stages = rec.hypnogram.epoch_stages()
        e = stages.index("N3")
        x = rec.channel("C4").samples - rec.channel("M1").samples
        seg = x[e * 3840:(e + 1) * 3840]
        freqs = np.fft.rfftfreq(len(seg), 1 / 128)
        peak = freqs[np.argmax(np.abs(np.fft.rfft(seg))[1:]) + 1]
        assert abs(peak - EEG_SIGNATURES["N3"][0][0]) < 0.1

    def test_write_cohort(self, tmp_path):
        recs = synthetic_cohort(2, n_epochs=5, seed=0, ages=[3.0, 70.5])
        write_cohort(recs, tmp_path)
        meta = read_metadata(tmp_path / "metadata.csv")
        assert [m.age_years for m in meta.values()] == [3.0, 70.5]
        for r in recs:
            data = (tmp_path / "edf" / f"{r.record_id}.edf").read_bytes()
            assert write_edf(parse_edf(data)) == data
            hyp = read_hypnogram(tmp_path / "hypnograms" / f"{r.record_id}.txt")
            assert hyp.epoch_stages() == r.hypnogram.epoch_stages()


class TestValidation:
    def test_rejects_bad_inputs(self, recs):
        with pytest.raises(ContractError):
            check_recordings([])
        with pytest.raises(ContractError):
            check_recordings(recs[0])
        with pytest.raises(ContractError):
            check_recordings([np.zeros(3)])

    def test_predict_before_fit(self, recs):
        with pytest.raises(NotFittedError):
            USleepClassifier().predict(recs)

    def test_finetune_needs_checkpoint(self, recs):
        with pytest.raises(ContractError):
            USleepClassifier(regime="finetune", **FAST).fit(recs)


class TestEstimator:
    def test_get_params_and_clone(self):
        clf = USleepClassifier(depth=3, lr=0.01)
        params = clf.get_params()
        assert params["depth"] == 3 and params["lr"] == 0.01 and params["regime"] == "scratch"
        cloned = clone(clf)
        assert cloned.get_params() == params and cloned is not clf
        clf.set_params(depth=4)
        assert clf.depth == 4

    def test_fit_predict(self, recs):
        clf = USleepClassifier(**FAST).fit(recs)
        assert clf.n_iter_ == 2 and len(clf.history_) == 2
        assert clf.classes_.tolist() == [0, 1, 2, 3, 4]
        probs = clf.predict_proba(recs)
        preds = clf.predict(recs)
        for r, p, y in zip(recs, probs, preds):
            assert p.shape == (r.n_epochs, 5)
            np.testing.assert_allclose(p.sum(1), 1, atol=1e-5)
            assert y.shape == (r.n_epochs,) and set(y.tolist()) <= set(range(5))
        assert 0 <= clf.score(recs) <= 1

    def test_seed_determinism(self, recs):
        a = USleepClassifier(**FAST, random_state=3).fit(recs)
        b = USleepClassifier(**FAST, random_state=3).fit(recs)
        for k in a.net_.params:
            np.testing.assert_array_equal(a.net_.params[k], b.net_.params[k])

    def test_finetune_sabn_from_checkpoint(self, recs, tmp_path):
        net = build(ArchitectureConfig(depth=2, base_filters=4.0), seed=0, dtype=np.float32)
        save_checkpoint(net, tmp_path / "ck")
        recs = copy.deepcopy(recs)
        for r, age in zip(recs, (2.0, 30.0, 80.0)):
            r.subject.age_years = age
        clf = USleepClassifier(regime="finetune_sabn", n_groups=2, init_checkpoint=str(tmp_path / "ck"),
                               **FAST).fit(recs)
        assert clf.net_.config.bn_variant == "sabn" and clf.net_.config.n_groups == 2
        assert len(clf.predict(recs)) == 3
