"""On-disk store of preprocessed recordings.

Layout, one directory per recording::

    <root>/recordings/<record_id>/
        manifest.json     labels, rates, scale provenance, subject metadata
        00_C4-M1.f32      raw little-endian float32 samples, one file per channel
        labels.txt        one class token per 30 s epoch
"""
import json
import os
from pathlib import Path

import numpy as np

from .edf_io.recording import SubjectMeta
from .preprocess import PreprocessedChannel, PreprocessedRecording
from .stages import class_index, class_token

STORE_ENV = "USLEEP_STORE"


def store_root(path=None):
    if path is not None:
        return Path(path)
    return Path(os.environ.get(STORE_ENV, "usleep_store"))


def recording_dir(root, record_id):
    return Path(root) / "recordings" / record_id


def _channel_file(i, label):
    safe = "".join(ch if ch.isalnum() or ch in "-_" else "_" for ch in label)
    return f"{i:02d}_{safe}.f32"


def save_recording(rec: PreprocessedRecording, root) -> Path:
    out = recording_dir(root, rec.record_id)
    out.mkdir(parents=True, exist_ok=True)
    channels = []
    for i, ch in enumerate(rec.channels):
        fname = _channel_file(i, ch.label)
        np.asarray(ch.samples, dtype="<f4").tofile(out / fname)
        channels.append({
            "label": ch.label,
            "modality": ch.modality,
            "recommended": ch.recommended,
            "file": fname,
            "original_rate": ch.original_rate,
            "median": ch.median,
            "iqr": ch.iqr,
            "usable": ch.usable,
        })
    manifest = {
        "record_id": rec.record_id,
        "dataset_id": rec.dataset_id,
        "rate": rec.rate,
        "epoch_s": rec.epoch_s,
        "n_epochs": rec.n_epochs,
        "subject": vars(rec.subject),
        "channels": channels,
        "excluded": rec.excluded,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2))
    (out / "labels.txt").write_text("\n".join(class_token(int(v)) for v in rec.epoch_labels) + "\n")
    return out


def load_recording(path) -> PreprocessedRecording:
    path = Path(path)
    manifest = json.loads((path / "manifest.json").read_text())
    tokens = (path / "labels.txt").read_text().split()
    labels = np.array([class_index(t) for t in tokens], dtype=np.int64)
    channels = [
        PreprocessedChannel(
            label=c["label"],
            modality=c["modality"],
            samples=np.fromfile(path / c["file"], dtype="<f4").astype(np.float32),
            recommended=c["recommended"],
            original_rate=c["original_rate"],
            median=c["median"],
            iqr=c["iqr"],
            usable=c["usable"],
        )
        for c in manifest["channels"]
    ]
    return PreprocessedRecording(
        record_id=manifest["record_id"],
        channels=channels,
        epoch_labels=labels,
        subject=SubjectMeta(**manifest["subject"]),
        dataset_id=manifest["dataset_id"],
        rate=manifest["rate"],
        epoch_s=manifest["epoch_s"],
        excluded=manifest.get("excluded", {}),
    )


def list_recordings(root):
    base = Path(root) / "recordings"
    if not base.is_dir():
        return []
    return sorted(p.name for p in base.iterdir() if (p / "manifest.json").is_file())
