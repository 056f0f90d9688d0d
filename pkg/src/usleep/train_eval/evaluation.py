"""Whole-night scoring, majority vote over derivation pairs and evaluation reports."""
import csv
import io
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from ..cohort import age_group, group_name
from ..exceptions import ContractError
from ..stages import CLASSES, N_CLASSES
from .metrics import Metrics, confusion_matrix, metrics


def predict_recording(net, recording, g=0):
    """One ``[n_epochs, K]`` probability stream per usable EEG x EOG pair.

    Returns a list of ``((eeg_label, eog_label), probs)``. Eval mode only, so
    repeated calls are bit-identical.
    """
    pairs = recording.pairs
    if not pairs:
        raise ContractError(f"recording {recording.record_id} has no usable EEG/EOG pair")
    if recording.samples_per_epoch != net.config.samples_per_epoch:
        raise ContractError(
            f"recording {recording.record_id} has {recording.samples_per_epoch} samples/epoch, "
            f"model expects {net.config.samples_per_epoch}"
        )
    streams = []
    for eeg, eog in pairs:
        x = recording.stack(eeg, eog)[None]
        probs = net.forward(x, g, training=False)[0]
        streams.append(((eeg.label, eog.label), probs))
    return streams


def majority_vote(streams):
    """Per-epoch plurality of the streams' argmax labels.

    Ties go to the tied class with the highest mean probability across
    streams, then to the lowest class index.
    """
    if len(streams) == 0:
        raise ContractError("majority vote needs at least one stream")
    shapes = [np.shape(s) for s in streams]
    if len(set(shapes)) != 1 or len(shapes[0]) != 2:
        raise ContractError(f"streams must share one [n_epochs, K] shape, got {shapes}")
    arr = np.stack([np.asarray(s, dtype=np.float64) for s in streams])
    _, n_epochs, k = arr.shape
    votes = arr.argmax(axis=2)  # [S, E]
    counts = np.zeros((n_epochs, k), dtype=np.int64)
    np.add.at(counts, (np.broadcast_to(np.arange(n_epochs), votes.shape), votes), 1)
    tied = counts == counts.max(axis=1, keepdims=True)
    mean_p = arr.mean(axis=0)
    return np.where(tied, mean_p, -np.inf).argmax(axis=1)


@dataclass
class RecordingResult:
    record_id: str
    dataset_id: str
    subject_id: str
    age_years: object
    age_group: int
    confusion: np.ndarray
    metrics: Metrics
    prediction: np.ndarray
    n_streams: int


def evaluate_recording(net, recording, n_groups=1, report_groups=7):
    """Score one recording; ``n_groups`` drives the model's group index, ``report_groups`` the table rows."""
    g = age_group(recording.subject.age_years, n_groups)
    streams = predict_recording(net, recording, g)
    pred = majority_vote([p for _, p in streams])
    cm = confusion_matrix(recording.epoch_labels, pred)
    try:
        rg = age_group(recording.subject.age_years, report_groups)
    except ContractError:
        rg = -1
    return RecordingResult(
        record_id=recording.record_id,
        dataset_id=recording.dataset_id,
        subject_id=recording.subject.subject_id,
        age_years=recording.subject.age_years,
        age_group=rg,
        confusion=cm,
        metrics=metrics(cm),
        prediction=pred,
        n_streams=len(streams),
    )


CSV_COLUMNS = ["record_id", "dataset_id", "age_group"] + [f"f1_{c}" for c in CLASSES] + [
    "macro_f1", "weighted_f1", "kappa", "n_epochs"]


def _fmt(x):
    return repr(float(x))


@dataclass
class EvalReport:
    results: list = field(default_factory=list)
    report_groups: int = 7

    @property
    def record_ids(self):
        return [r.record_id for r in self.results]

    def pooled(self) -> Metrics:
        return metrics(sum(r.confusion for r in self.results))

    def column(self, name):
        return np.array([getattr(r.metrics, name) for r in self.results])

    def group_summary(self, name="macro_f1"):
        """``{group_name: (mean, sd, n)}`` across recordings; sd uses ddof=1 (nan for n < 2)."""
        out = {}
        for gi in range(self.report_groups):
            vals = np.array([getattr(r.metrics, name) for r in self.results if r.age_group == gi])
            if vals.size:
                sd = float(vals.std(ddof=1)) if vals.size > 1 else math.nan
                out[group_name(gi, self.report_groups)] = (float(vals.mean()), sd, int(vals.size))
        vals = self.column(name)
        if vals.size:
            out["ALL"] = (float(vals.mean()), float(vals.std(ddof=1)) if vals.size > 1 else math.nan, int(vals.size))
        return out

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r in self.results:
            grp = group_name(r.age_group, self.report_groups) if r.age_group >= 0 else "NA"
            m = r.metrics
            w.writerow([r.record_id, r.dataset_id, grp] + [_fmt(v) for v in m.f1] +
                       [_fmt(m.macro_f1), _fmt(m.weighted_f1), _fmt(m.kappa), m.n_epochs])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text, report_groups=7):
        """Rebuild the per-recording metrics (confusions are not stored in the CSV)."""
        names = {n: i for i, n in enumerate(group_name(i, report_groups) for i in range(report_groups))}
        results = []
        for row in csv.DictReader(io.StringIO(text)):
            f1 = np.array([float(row[f"f1_{c}"]) for c in CLASSES])
            m = Metrics(f1, float(row["macro_f1"]), float(row["weighted_f1"]), float(row["kappa"]),
                        int(row["n_epochs"]))
            results.append(RecordingResult(row["record_id"], row["dataset_id"], "", None,
                                           names.get(row["age_group"], -1), None, m, None, 0))
        return cls(results, report_groups)

    def to_text(self):
        lines = [f"{'record':<20} {'group':<6} " + " ".join(f"{c:>6}" for c in CLASSES)
                 + f" {'macroF1':>8} {'wF1':>8} {'kappa':>8}"]
        for r in self.results:
            grp = group_name(r.age_group, self.report_groups) if r.age_group >= 0 else "NA"
            m = r.metrics
            lines.append(f"{r.record_id:<20} {grp:<6} " + " ".join(f"{v:6.3f}" for v in m.f1)
                         + f" {m.macro_f1:8.3f} {m.weighted_f1:8.3f} {m.kappa:8.3f}")
        lines.append("")
        lines.append("macro F1 by age group (mean +- sd across recordings)")
        for gname, (mu, sd, n) in self.group_summary().items():
            sd_txt = "n/a" if math.isnan(sd) else f"{100 * sd:.1f}"
            lines.append(f"  {gname:<14} {100 * mu:5.1f} +- {sd_txt:>5}  (n={n})")
        return "\n".join(lines) + "\n"


def evaluate(net, recordings, n_groups=1, report_groups=7, workers=1) -> EvalReport:
    """Evaluate every recording; ``workers > 1`` scores recordings in parallel threads."""
    recordings = list(recordings)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(lambda r: evaluate_recording(net, r, n_groups, report_groups), recordings))
    else:
        results = [evaluate_recording(net, r, n_groups, report_groups) for r in recordings]
    return EvalReport(results, report_groups)


def pooled_macro_f1(net, recordings, n_groups=1):
    """Macro F1 on the confusion matrix pooled over recordings (validation criterion)."""
    total = np.zeros((N_CLASSES, N_CLASSES), dtype=np.int64)
    for rec in recordings:
        g = age_group(rec.subject.age_years, n_groups)
        pred = majority_vote([p for _, p in predict_recording(net, rec, g)])
        total += confusion_matrix(rec.epoch_labels, pred)
    return metrics(total).macro_f1
