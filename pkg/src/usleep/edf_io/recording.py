from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..exceptions import ContractError


@dataclass
class SubjectMeta:
    subject_id: str
    family_id: Optional[str] = None
    age_years: Optional[float] = None
    sex: Optional[str] = None


@dataclass
class Channel:
    """One signal: physical samples plus, when read from EDF, the digital source."""

    label: str
    sample_rate: float
    samples: np.ndarray
    digital: Optional[np.ndarray] = None
    physical_min: Optional[float] = None
    physical_max: Optional[float] = None
    digital_min: int = -32768
    digital_max: int = 32767
    unit: str = "uV"
    transducer: str = ""
    prefilter: str = ""

    @property
    def duration(self):
        return len(self.samples) / self.sample_rate


@dataclass
class Recording:
    channels: list
    hypnogram: Optional["Hypnogram"] = None  # noqa: F821
    subject: SubjectMeta = field(default_factory=lambda: SubjectMeta("unknown"))
    dataset_id: str = ""
    record_id: str = ""
    header: Optional["EdfHeader"] = None  # noqa: F821

    def __post_init__(self):
        labels = [c.label for c in self.channels]
        if len(set(labels)) != len(labels):
            raise ContractError(f"channel labels must be unique, got {labels}")

    @property
    def labels(self):
        return [c.label for c in self.channels]

    def channel(self, label):
        for c in self.channels:
            if c.label == label:
                return c
        raise KeyError(label)
