"""Synthetic PSG cohort with class-specific spectral signatures.

Each sleep stage gets its own mixture of sinusoids (frequency and amplitude)
in the EEG and EOG derivations, on top of white noise. Hypnograms are
sticky Markov chains that visit every stage. Electrodes are emitted raw
(``C4``, ``F4``, ``O2``, ``M1``, ``E1``, ``E2``, ``M2``) so the derivation,
resampling and scaling path is exercised end to end.
"""
import csv
from pathlib import Path

import numpy as np

from .edf_io.edf import write_edf
from .edf_io.hypnogram import EPOCH_S, format_hypnogram, hypnogram_from_stages
from .edf_io.recording import Channel, Recording, SubjectMeta

STAGES = ("W", "N1", "N2", "N3", "REM")

# (frequency Hz, amplitude) components per stage
EEG_SIGNATURES = {
    "W": ((10.0, 1.0), (22.0, 0.6)),
    "N1": ((5.0, 1.2),),
    "N2": ((13.0, 1.5), (3.0, 0.6)),
    "N3": ((1.2, 4.0),),
    "REM": ((7.0, 0.8), (30.0, 0.8)),
}
EOG_SIGNATURES = {
    "W": ((0.6, 2.5),),
    "N1": ((0.3, 0.8),),
    "N2": ((0.2, 0.3),),
    "N3": ((1.2, 1.5),),
    "REM": ((3.0, 2.5),),
}
NOISE_SD = 0.3
STAY = 0.8  # Markov self-transition probability


def synthetic_stages(n_epochs, rng, stay=STAY):
    """Sticky Markov stage sequence that contains every stage at least once."""
    if n_epochs < len(STAGES):
        raise ValueError(f"need at least {len(STAGES)} epochs, got {n_epochs}")
    while True:
        seq = [int(rng.integers(len(STAGES)))]
        for _ in range(n_epochs - 1):
            seq.append(seq[-1] if rng.random() < stay else int(rng.integers(len(STAGES))))
        if len(set(seq)) == len(STAGES):
            return [STAGES[i] for i in seq]


def _render(stages, signatures, rate, rng, gain):
    spe = int(round(rate * EPOCH_S))
    t = np.arange(spe) / rate
    out = np.empty(len(stages) * spe)
    for e, stage in enumerate(stages):
        x = rng.normal(0.0, NOISE_SD, spe)
        for f, a in signatures[stage]:
            x += a * np.sin(2 * np.pi * f * t + rng.uniform(0, 2 * np.pi))
        out[e * spe:(e + 1) * spe] = gain * x
    return out


def synthetic_recording(record_id, n_epochs=60, rate=128.0, seed=0, age_years=None, dataset_id="synth",
                        subject_id=None, family_id=None, eeg=("C4", "F4", "O2"), eog=("E1", "E2")) -> Recording:
    """One raw-electrode recording with its hypnogram attached.

    EEG electrodes (referenced to ``M1``) carry the EEG signature and EOG
    electrodes (referenced to ``M2``) the EOG signature, alternating in
    polarity; each has independent noise and a per-recording gain.
    """
    rng = np.random.default_rng(seed)
    stages = synthetic_stages(n_epochs, rng)
    n = int(round(n_epochs * EPOCH_S * rate))
    m1 = rng.normal(0, 0.05, n)
    m2 = rng.normal(0, 0.05, n)
    chans = []
    for name in eeg:
        chans.append(Channel(name, rate, m1 + _render(stages, EEG_SIGNATURES, rate, rng, rng.uniform(0.8, 1.25))))
    chans.append(Channel("M1", rate, m1))
    for i, name in enumerate(eog):
        sign = -1.0 if i % 2 else 1.0
        chans.append(Channel(name, rate, m2 + sign * _render(stages, EOG_SIGNATURES, rate, rng,
                                                             rng.uniform(0.8, 1.25))))
    chans.append(Channel("M2", rate, m2))
    if age_years is None:
        age_years = float(rng.integers(1, 90))
    subject = SubjectMeta(subject_id or f"subj_{record_id}", family_id=family_id, age_years=age_years,
                          sex=("F", "M")[int(rng.integers(2))])
    return Recording(chans, hypnogram=hypnogram_from_stages(stages), subject=subject,
                     dataset_id=dataset_id, record_id=record_id)


def synthetic_cohort(n_recordings, n_epochs=60, rate=128.0, seed=0, dataset_id="synth", ages=None, **kwargs):
    """``n_recordings`` independent recordings; extra keywords go to :func:`synthetic_recording`."""
    seeds = np.random.SeedSequence(seed).generate_state(n_recordings)
    return [
        synthetic_recording(f"{dataset_id}_{i:03d}", n_epochs, rate, int(seeds[i]),
                            None if ages is None else ages[i], dataset_id, **kwargs)
        for i in range(n_recordings)
    ]


METADATA_COLUMNS = ("record_id", "subject_id", "family_id", "age_years", "sex")


def write_cohort(recordings, out_dir):
    """Write ``edf/<id>.edf``, ``hypnograms/<id>.txt`` and ``metadata.csv`` under ``out_dir``."""
    out = Path(out_dir)
    (out / "edf").mkdir(parents=True, exist_ok=True)
    (out / "hypnograms").mkdir(parents=True, exist_ok=True)
    rows = []
    for rec in recordings:
        (out / "edf" / f"{rec.record_id}.edf").write_bytes(write_edf(rec))
        (out / "hypnograms" / f"{rec.record_id}.txt").write_text(format_hypnogram(rec.hypnogram))
        s = rec.subject
        rows.append((rec.record_id, s.subject_id, s.family_id or "", "" if s.age_years is None else s.age_years,
                     s.sex or ""))
    with open(out / "metadata.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(METADATA_COLUMNS)
        w.writerows(rows)
    return out


def read_metadata(path):
    """``{record_id: SubjectMeta}`` from a metadata CSV (columns as written by :func:`write_cohort`)."""
    out = {}
    with open(path, newline="") as f:
        for row in csv.DictReader(f):
            age = row.get("age_years", "")
            out[row["record_id"]] = SubjectMeta(
                subject_id=row.get("subject_id") or row["record_id"],
                family_id=row.get("family_id") or None,
                age_years=float(age) if age not in ("", None) else None,
                sex=row.get("sex") or None,
            )
    return out
