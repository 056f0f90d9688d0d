"""Plain-text hypnograms: one ``onset_s  duration_s  stage`` entry per line."""
from dataclasses import dataclass

from ..exceptions import ParseError
from ..stages import RAW_ALIASES, RAW_STAGES

EPOCH_S = 30.0
_TOL = 1e-6


@dataclass(frozen=True)
class HypnogramEntry:
    onset: float
    duration: float
    stage: str

    @property
    def end(self):
        return self.onset + self.duration


@dataclass
class Hypnogram:
    entries: list

    @property
    def start(self):
        return self.entries[0].onset if self.entries else 0.0

    @property
    def end(self):
        return self.entries[-1].end if self.entries else 0.0

    def epoch_stages(self, epoch_s=EPOCH_S):
        """Stage token for every epoch from ``start`` to ``end``; gaps read as ``UNKNOWN``."""
        n = int(round((self.end - self.start) / epoch_s))
        stages = ["UNKNOWN"] * n
        for e in self.entries:
            first = int(round((e.onset - self.start) / epoch_s))
            count = int(round(e.duration / epoch_s))
            stages[first:first + count] = [e.stage] * count
        return stages

    def __len__(self):
        return len(self.entries)


def _normalize_stage(token):
    t = token.strip().upper()
    t = RAW_ALIASES.get(t, t)
    return t if t in RAW_STAGES else None


def parse_hypnogram(text, epoch_s=EPOCH_S) -> Hypnogram:
    """Parse and validate hypnogram text.

    Columns may be separated by tabs or spaces; blank lines and lines starting
    with ``#`` are skipped. Raises :class:`ParseError` with the 1-based line
    number on malformed lines, unknown stages, durations that are not whole
    epochs, and overlapping or out-of-order entries.
    """
    entries = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        parts = stripped.split()
        if len(parts) != 3:
            raise ParseError(f"expected 3 columns, got {len(parts)}", line=lineno)
        try:
            onset, duration = float(parts[0]), float(parts[1])
        except ValueError:
            raise ParseError(f"non-numeric onset/duration in {stripped!r}", line=lineno) from None
        stage = _normalize_stage(parts[2])
        if stage is None:
            raise ParseError(f"unknown stage token {parts[2]!r}", line=lineno)
        if onset < 0:
            raise ParseError(f"negative onset {onset}", line=lineno)
        n_epochs = duration / epoch_s
        if duration <= 0 or abs(n_epochs - round(n_epochs)) > _TOL:
            raise ParseError(f"duration {duration} is not a positive multiple of {epoch_s:g} s", line=lineno)
        if entries and onset < entries[-1].end - _TOL:
            raise ParseError(
                f"entry at {onset:g} s overlaps previous entry ending at {entries[-1].end:g} s", line=lineno
            )
        entries.append(HypnogramEntry(onset, duration, stage))
    return Hypnogram(entries)


def read_hypnogram(path):
    with open(path, encoding="ascii") as f:
        return parse_hypnogram(f.read())


def format_hypnogram(hypnogram: Hypnogram) -> str:
    lines = [f"{e.onset:g}\t{e.duration:g}\t{e.stage}" for e in hypnogram.entries]
    return "\n".join(lines) + "\n"


def hypnogram_from_stages(stages, onset=0.0, epoch_s=EPOCH_S) -> Hypnogram:
    """Build a run-length-encoded hypnogram from a per-epoch stage sequence."""
    entries = []
    i = 0
    while i < len(stages):
        j = i
        while j + 1 < len(stages) and stages[j + 1] == stages[i]:
            j += 1
        entries.append(HypnogramEntry(onset + i * epoch_s, (j - i + 1) * epoch_s, stages[i]))
        i = j + 1
    return Hypnogram(entries)
