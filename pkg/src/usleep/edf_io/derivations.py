"""EEG/EOG derivations: recommended (AASM) montages or randomly drawn atypical pairs."""
from dataclasses import dataclass
from itertools import permutations

import numpy as np

from .._validation import check_random_state
from ..exceptions import IneligibleRecordingError, ParseError

REF = "REF"

DEFAULT_RECOMMENDED = """\
# modality positive negative
EEG F4 M1
EEG C4 M1
EEG O2 M1
EEG F3 M2
EEG C3 M2
EEG O1 M2
EOG E1 M2
EOG E2 M2
"""

ALIASES = {"A1": "M1", "A2": "M2", "LOC": "E1", "ROC": "E2", "EOGL": "E1", "EOGR": "E2"}
EOG_ELECTRODES = {"E1", "E2"}
MASTOID_ELECTRODES = {"M1", "M2"}
EEG_ELECTRODES = {
    "FP1", "FP2", "FPZ", "AF3", "AF4", "AF7", "AF8", "AFZ",
    "F1", "F2", "F3", "F4", "F5", "F6", "F7", "F8", "FZ",
    "FC1", "FC2", "FC3", "FC4", "FC5", "FC6", "FCZ",
    "C1", "C2", "C3", "C4", "C5", "C6", "CZ",
    "CP1", "CP2", "CP3", "CP4", "CP5", "CP6", "CPZ",
    "T3", "T4", "T5", "T6", "T7", "T8", "TP7", "TP8",
    "P1", "P2", "P3", "P4", "P5", "P6", "P7", "P8", "PZ",
    "PO3", "PO4", "PO7", "PO8", "POZ", "O1", "O2", "OZ",
}
_PREFIXES = ("EEG ", "EOG ", "EEG:", "EOG:")


@dataclass(frozen=True)
class Derivation:
    positive: str
    negative: str
    modality: str
    recommended: bool

    @property
    def name(self):
        return f"{self.positive}-{self.negative}"


@dataclass
class DerivedChannel:
    derivation: Derivation
    sample_rate: float
    samples: np.ndarray

    @property
    def label(self):
        return self.derivation.name


def normalize_electrode(label):
    """Canonical upper-case electrode name, e.g. ``"EEG C4"`` -> ``"C4"``, ``"A1"`` -> ``"M1"``."""
    name = label.strip().upper()
    for prefix in _PREFIXES:
        if name.startswith(prefix):
            name = name[len(prefix):].strip()
    return ALIASES.get(name, name)


def electrode_role(name):
    if name in EOG_ELECTRODES:
        return "EOG"
    if name in MASTOID_ELECTRODES:
        return "MASTOID"
    if name in EEG_ELECTRODES:
        return "EEG"
    return None


def parse_derivation_config(text):
    """Parse ``MODALITY POS NEG`` lines into a list of recommended :class:`Derivation`."""
    out = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 3 or parts[0].upper() not in ("EEG", "EOG"):
            raise ParseError(f"expected 'MODALITY POS NEG', got {line!r}", line=lineno)
        pos, neg = normalize_electrode(parts[1]), normalize_electrode(parts[2])
        if pos == neg:
            raise ParseError(f"self-pair {pos}-{neg}", line=lineno)
        out.append(Derivation(pos, neg, parts[0].upper(), True))
    return out


DEFAULT_DERIVATIONS = parse_derivation_config(DEFAULT_RECOMMENDED)


def _sources(recording):
    """Map canonical electrode names and bipolar pairs to (rate, samples)."""
    electrodes, bipolar = {}, {}
    for ch in recording.channels:
        label = ch.label.strip()
        if "-" in label:
            pos, _, neg = label.partition("-")
            bipolar[(normalize_electrode(pos), normalize_electrode(neg))] = ch
        else:
            name = normalize_electrode(label)
            if electrode_role(name) is not None:
                electrodes[name] = ch
    return electrodes, bipolar


def _difference(electrodes, bipolar, pos, neg):
    if (pos, neg) in bipolar:
        ch = bipolar[(pos, neg)]
        return ch.sample_rate, np.asarray(ch.samples, dtype=np.float64)
    if (neg, pos) in bipolar:
        ch = bipolar[(neg, pos)]
        return ch.sample_rate, -np.asarray(ch.samples, dtype=np.float64)
    a = electrodes.get(pos)
    if a is None:
        return None
    if neg == REF:
        return a.sample_rate, np.asarray(a.samples, dtype=np.float64)
    b = electrodes.get(neg)
    if b is None or b.sample_rate != a.sample_rate or len(a.samples) != len(b.samples):
        return None
    return a.sample_rate, np.asarray(a.samples, dtype=np.float64) - np.asarray(b.samples, dtype=np.float64)


def derive(recording, positive, negative):
    """Samplewise ``positive - negative`` for two electrodes of ``recording``."""
    electrodes, bipolar = _sources(recording)
    got = _difference(electrodes, bipolar, normalize_electrode(positive), normalize_electrode(negative))
    if got is None:
        raise KeyError(f"{positive}-{negative} not available")
    return got[1]


def _atypical_candidates(electrodes, modality):
    names = sorted(electrodes)
    roles = {n: electrode_role(n) for n in names}
    pairs = []
    for pos, neg in permutations(names, 2):
        if modality == "EEG":
            ok = roles[pos] == "EEG" and roles[neg] in ("EEG", "MASTOID")
        else:
            ok = roles[pos] == "EOG"
        if ok:
            pairs.append((pos, neg))
    return pairs


def build_derivations(recording, mode="aasm", rng=None, recommended=None, n_atypical=2):
    """Construct EEG and EOG derivation channels for ``recording``.

    Parameters
    ----------
    mode : {"aasm", "atypical"}
        ``aasm`` emits every recommended pair present in the recording;
        ``atypical`` draws ``n_atypical`` ordered electrode pairs per modality
        uniformly without replacement (EEG-EEG or EEG-mastoid for EEG, any
        partner for an EOG electrode).
    rng : seed or Generator, used only by ``atypical``.
    recommended : list of Derivation, defaults to the AASM referential montages.

    Raises
    ------
    IneligibleRecordingError
        If no EEG or no EOG derivation can be formed.
    """
    if mode not in ("aasm", "atypical"):
        raise ValueError(f"mode must be 'aasm' or 'atypical', got {mode!r}")
    recommended = DEFAULT_DERIVATIONS if recommended is None else recommended
    recommended_keys = {(d.positive, d.negative) for d in recommended}
    electrodes, bipolar = _sources(recording)
    out = []
    if mode == "aasm":
        for d in recommended:
            got = _difference(electrodes, bipolar, d.positive, d.negative)
            if got is not None:
                out.append(DerivedChannel(d, got[0], got[1]))
    else:
        rng = check_random_state(rng)
        for modality in ("EEG", "EOG"):
            candidates = [
                p for p in _atypical_candidates(electrodes, modality)
                if _difference(electrodes, bipolar, *p) is not None
            ]
            if not candidates:
                continue
            k = min(n_atypical, len(candidates))
            for idx in rng.choice(len(candidates), size=k, replace=False):
                pos, neg = candidates[idx]
                rate, samples = _difference(electrodes, bipolar, pos, neg)
                d = Derivation(pos, neg, modality, (pos, neg) in recommended_keys)
                out.append(DerivedChannel(d, rate, samples))
    for modality in ("EEG", "EOG"):
        if not any(c.derivation.modality == modality for c in out):
            raise IneligibleRecordingError(
                f"recording {recording.record_id or '?'}: no {modality} derivation available in {mode} mode"
            )
    return out
