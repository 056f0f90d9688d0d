"""Dataset manifests, subject/family-level splits and age groups."""
import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .exceptions import ContractError

SPLITS = ("train", "val", "test")
VAL_PERCENT, VAL_CAP = 10, 50
TEST_PERCENT, TEST_CAP = 15, 100

# inclusive integer upper bounds (years) of the first six groups; the last is open-ended
AGE_GROUP_NAMES = ("B", "C", "A", "YA", "MA", "E", "OE")
_AGE_UPPER = (3, 12, 18, 39, 59, 69)
# G=2 coarsening: {B, C} -> 0, everything older -> 1
_COARSE = (0, 0, 1, 1, 1, 1, 1)
GROUP_NAMES = {1: ("ALL",), 2: ("B+C", "A+YA+MA+E+OE"), 7: AGE_GROUP_NAMES}


@dataclass
class ManifestEntry:
    record_id: str
    subject_id: str
    path: str = ""
    family_id: Optional[str] = None
    age_years: Optional[float] = None
    sex: Optional[str] = None
    split: Optional[str] = None

    @property
    def split_unit(self):
        """Recordings sharing this key always land in the same split."""
        return f"family:{self.family_id}" if self.family_id else f"subject:{self.subject_id}"


@dataclass
class DatasetManifest:
    dataset_id: str
    entries: list = field(default_factory=list)
    split_seed: Optional[int] = None

    def subset(self, split):
        return [e for e in self.entries if e.split == split]

    def to_json(self):
        return json.dumps(
            {"dataset_id": self.dataset_id, "split_seed": self.split_seed,
             "entries": [asdict(e) for e in self.entries]},
            indent=2,
        )

    @classmethod
    def from_json(cls, text):
        raw = json.loads(text)
        return cls(
            dataset_id=raw["dataset_id"],
            entries=[ManifestEntry(**e) for e in raw["entries"]],
            split_seed=raw.get("split_seed"),
        )

    def save(self, path):
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(self.to_json())

    @classmethod
    def load(cls, path):
        return cls.from_json(Path(path).read_text())


def split_sizes(n_units):
    """``(train, val, test)`` unit counts: val = min(10%, 50), test = min(15%, 100), floored.

    With at least three units, val and test each get at least one.
    """
    if n_units < 3:
        raise ContractError(f"need at least 3 subjects to split, got {n_units}")
    n_val = max(1, min(n_units * VAL_PERCENT // 100, VAL_CAP))
    n_test = max(1, min(n_units * TEST_PERCENT // 100, TEST_CAP))
    return n_units - n_val - n_test, n_val, n_test


def split(manifest: DatasetManifest, seed=0) -> DatasetManifest:
    """Random subject-level (family-level where family ids exist) split.

    Returns a new manifest with ``split`` set on every entry and the seed recorded.
    """
    units = sorted({e.split_unit for e in manifest.entries})
    _, n_val, n_test = split_sizes(len(units))
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(units))
    assignment = {}
    for rank, idx in enumerate(order):
        if rank < n_val:
            assignment[units[idx]] = "val"
        elif rank < n_val + n_test:
            assignment[units[idx]] = "test"
        else:
            assignment[units[idx]] = "train"
    entries = [replace(e, split=assignment[e.split_unit]) for e in manifest.entries]
    return DatasetManifest(manifest.dataset_id, entries, split_seed=seed)


def age_group(age_years, n_groups=7):
    """Group index of an age for the 1-, 2- or 7-group scheme.

    Ages are compared in whole years (floored). ``None`` is accepted only for
    ``n_groups == 1``.
    """
    if n_groups not in (1, 2, 7):
        raise ContractError(f"unsupported number of age groups {n_groups}; use 1, 2 or 7")
    if age_years is None or (isinstance(age_years, float) and math.isnan(age_years)):
        if n_groups == 1:
            return 0
        raise ContractError("age is required for age-conditioned grouping")
    if age_years < 0:
        raise ContractError(f"negative age {age_years}")
    if n_groups == 1:
        return 0
    years = math.floor(age_years)
    fine = next((i for i, upper in enumerate(_AGE_UPPER) if years <= upper), len(_AGE_UPPER))
    return fine if n_groups == 7 else _COARSE[fine]


def group_name(index, n_groups=7):
    return GROUP_NAMES[n_groups][index]
