"""Reader/writer for the European Data Format (plain EDF, 16-bit samples).

Layout: a 256-byte main header, then 256 bytes per signal stored field-major
(all labels, then all transducers, ...), then ``n_records`` data records, each
holding ``samples_per_record[s]`` little-endian int16 values per signal in
signal order.
"""
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from ..exceptions import ParseError
from .recording import Channel, Recording, SubjectMeta

MAIN_FIELDS = (
    ("version", 8),
    ("patient", 80),
    ("recording", 80),
    ("startdate", 8),
    ("starttime", 8),
    ("header_bytes", 8),
    ("reserved", 44),
    ("n_records", 8),
    ("record_duration", 8),
    ("n_signals", 4),
)
SIGNAL_FIELDS = (
    ("label", 16),
    ("transducer", 80),
    ("unit", 8),
    ("physical_min", 8),
    ("physical_max", 8),
    ("digital_min", 8),
    ("digital_max", 8),
    ("prefilter", 80),
    ("samples_per_record", 8),
    ("reserved", 32),
)


@dataclass
class EdfSignalHeader:
    label: str
    transducer: str
    unit: str
    physical_min: float
    physical_max: float
    digital_min: int
    digital_max: int
    prefilter: str
    samples_per_record: int
    reserved: str = ""


@dataclass
class EdfHeader:
    version: str = "0"
    patient: str = ""
    recording: str = ""
    startdate: str = "01.01.00"
    starttime: str = "00.00.00"
    reserved: str = ""
    n_records: int = 0
    record_duration: float = 1.0
    signals: list = field(default_factory=list)

    @property
    def n_signals(self):
        return len(self.signals)

    @property
    def header_bytes(self):
        return 256 * (1 + self.n_signals)


class _Reader:
    def __init__(self, data):
        self.data = data
        self.pos = 0

    def text(self, width):
        start = self.pos
        chunk = self.data[start:start + width]
        if len(chunk) < width:
            raise ParseError("truncated header", offset=start)
        for i, byte in enumerate(chunk):
            if byte < 32 or byte > 126:
                raise ParseError(f"non-ASCII header byte 0x{byte:02x}", offset=start + i)
        self.pos += width
        return chunk.decode("ascii")

    def number(self, width, kind):
        start = self.pos
        raw = self.text(width).strip()
        try:
            return kind(raw) if kind is not int else int(float(raw)) if "." in raw else int(raw)
        except ValueError:
            raise ParseError(f"expected a number, got {raw!r}", offset=start) from None


def _physical(digital, sig):
    scale = (sig.physical_max - sig.physical_min) / (sig.digital_max - sig.digital_min)
    return (digital.astype(np.float64) - sig.digital_min) * scale + sig.physical_min


def parse_edf_header(data):
    """Parse the header block of ``data`` (bytes). Returns ``(EdfHeader, offsets)``.

    ``offsets`` maps ``(field, signal_index)`` to the byte offset of that field,
    used for error reporting.
    """
    r = _Reader(data)
    main = {}
    for name, width in MAIN_FIELDS:
        if name in ("header_bytes", "n_records", "n_signals"):
            main[name] = r.number(width, int)
        elif name == "record_duration":
            main[name] = r.number(width, float)
        else:
            main[name] = r.text(width).rstrip(" ")
    ns = main["n_signals"]
    if ns < 0:
        raise ParseError(f"negative signal count {ns}", offset=252)
    if main["header_bytes"] != 256 * (1 + ns):
        raise ParseError(
            f"header size {main['header_bytes']} does not match {ns} signals", offset=184
        )
    columns = {}
    offsets = {}
    for name, width in SIGNAL_FIELDS:
        values = []
        for i in range(ns):
            offsets[(name, i)] = r.pos
            if name in ("physical_min", "physical_max"):
                values.append(r.number(width, float))
            elif name in ("digital_min", "digital_max", "samples_per_record"):
                values.append(r.number(width, int))
            else:
                values.append(r.text(width).rstrip(" "))
        columns[name] = values
    signals = [EdfSignalHeader(**{name: columns[name][i] for name, _ in SIGNAL_FIELDS}) for i in range(ns)]
    for i, sig in enumerate(signals):
        if sig.digital_max <= sig.digital_min:
            raise ParseError(
                f"signal {sig.label!r}: digital max {sig.digital_max} <= digital min {sig.digital_min}",
                offset=offsets[("digital_max", i)],
            )
        if sig.samples_per_record <= 0:
            raise ParseError(
                f"signal {sig.label!r}: non-positive samples per record",
                offset=offsets[("samples_per_record", i)],
            )
    header = EdfHeader(
        version=main["version"],
        patient=main["patient"],
        recording=main["recording"],
        startdate=main["startdate"],
        starttime=main["starttime"],
        reserved=main["reserved"],
        n_records=main["n_records"],
        record_duration=main["record_duration"],
        signals=signals,
    )
    return header, offsets


def parse_edf(data, record_id="", dataset_id="") -> Recording:
    """Parse EDF bytes into a :class:`Recording` (no hypnogram attached).

    Channels keep their digital samples and scaling fields so that
    :func:`write_edf` can reproduce them exactly.
    """
    data = bytes(data)
    header, _ = parse_edf_header(data)
    spr = np.array([s.samples_per_record for s in header.signals], dtype=np.int64)
    record_size = int(spr.sum()) * 2
    start = header.header_bytes
    available = len(data) - start
    n_records = header.n_records
    if n_records < 0:
        # -1 marks an unfinished recording; infer from the file size
        n_records = available // record_size if record_size else 0
    needed = n_records * record_size
    if available < needed:
        complete = available // record_size if record_size else 0
        raise ParseError(
            f"truncated data: {n_records} records declared, {complete} complete",
            offset=start + complete * record_size,
        )
    raw = np.frombuffer(data, dtype="<i2", count=needed // 2, offset=start)
    raw = raw.reshape(n_records, -1) if n_records else raw.reshape(0, int(spr.sum()))
    bounds = np.concatenate([[0], np.cumsum(spr)])
    channels = []
    for i, sig in enumerate(header.signals):
        digital = raw[:, bounds[i]:bounds[i + 1]].reshape(-1).astype(np.int16)
        channels.append(
            Channel(
                label=sig.label.strip(),
                sample_rate=sig.samples_per_record / header.record_duration,
                samples=_physical(digital, sig),
                digital=digital,
                physical_min=sig.physical_min,
                physical_max=sig.physical_max,
                digital_min=sig.digital_min,
                digital_max=sig.digital_max,
                unit=sig.unit,
                transducer=sig.transducer,
                prefilter=sig.prefilter,
            )
        )
    header.n_records = n_records
    subject_id = header.patient.split(" ")[0] if header.patient.strip() else (record_id or "unknown")
    return Recording(
        channels=channels,
        subject=SubjectMeta(subject_id=subject_id),
        dataset_id=dataset_id,
        record_id=record_id,
        header=header,
    )


def read_edf(path, **kwargs):
    with open(path, "rb") as f:
        return parse_edf(f.read(), **kwargs)


def _fmt_number(value, width=8):
    if float(value).is_integer() and abs(value) < 10 ** (width - 1):
        text = str(int(value))
    else:
        text = repr(float(value))
        if len(text) > width:
            for digits in range(width, 0, -1):
                text = f"{value:.{digits}g}"
                if len(text) <= width:
                    break
    if len(text) > width:
        raise ValueError(f"cannot fit {value!r} into {width} characters")
    return text


def _field(text, width):
    text = str(text)
    if len(text) > width:
        raise ValueError(f"header field {text!r} exceeds {width} characters")
    return text.ljust(width).encode("ascii")


def _quantize(channel):
    """Digital samples and scaling for a channel without a digital source."""
    x = np.asarray(channel.samples, dtype=np.float64)
    pmin = channel.physical_min
    pmax = channel.physical_max
    if pmin is None or pmax is None:
        lo, hi = (float(x.min()), float(x.max())) if x.size else (-1.0, 1.0)
        if hi <= lo:
            lo, hi = lo - 1.0, hi + 1.0
        # round outward to 8-character decimals so the header stores them exactly
        pmin = float(_fmt_number(np.floor(lo * 1000) / 1000))
        pmax = float(_fmt_number(np.ceil(hi * 1000) / 1000))
    dmin, dmax = channel.digital_min, channel.digital_max
    digital = np.round((x - pmin) * (dmax - dmin) / (pmax - pmin) + dmin)
    return np.clip(digital, dmin, dmax).astype(np.int16), pmin, pmax


def _record_duration(channels):
    for duration in (1, 2, 5, 10, 30):
        if all(Fraction(c.sample_rate).limit_denominator(10_000) * duration == int(c.sample_rate * duration)
               for c in channels):
            return float(duration)
    raise ValueError("sample rates do not share a record duration of at most 30 s")


def write_edf(recording: Recording) -> bytes:
    """Serialize a recording; inverse of :func:`parse_edf` on digital samples and header numbers."""
    header = recording.header
    channels = recording.channels
    if header is not None and len(header.signals) == len(channels):
        duration = header.record_duration
    else:
        duration = _record_duration(channels)
        header = EdfHeader(
            patient=recording.subject.subject_id,
            recording=recording.record_id,
            record_duration=duration,
        )

    digitals, sig_headers = [], []
    for i, ch in enumerate(channels):
        spr = int(round(ch.sample_rate * duration))
        if ch.digital is not None:
            digital = np.asarray(ch.digital, dtype=np.int16)
            pmin, pmax = ch.physical_min, ch.physical_max
        else:
            digital, pmin, pmax = _quantize(ch)
        base = header.signals[i] if i < len(header.signals) else None
        sig_headers.append(
            EdfSignalHeader(
                label=ch.label,
                transducer=ch.transducer,
                unit=ch.unit,
                physical_min=pmin,
                physical_max=pmax,
                digital_min=ch.digital_min,
                digital_max=ch.digital_max,
                prefilter=ch.prefilter,
                samples_per_record=spr,
                reserved=base.reserved if base is not None else "",
            )
        )
        digitals.append(digital)

    n_records = {len(d) // s.samples_per_record for d, s in zip(digitals, sig_headers)}
    if len(n_records) != 1 or any(len(d) % s.samples_per_record for d, s in zip(digitals, sig_headers)):
        raise ValueError("channel lengths are not a whole number of shared data records")
    n_records = n_records.pop()

    out = bytearray()
    ns = len(channels)
    main_values = {
        "version": header.version,
        "patient": header.patient,
        "recording": header.recording,
        "startdate": header.startdate,
        "starttime": header.starttime,
        "header_bytes": 256 * (1 + ns),
        "reserved": header.reserved,
        "n_records": n_records,
        "record_duration": _fmt_number(duration),
        "n_signals": ns,
    }
    for name, width in MAIN_FIELDS:
        out += _field(main_values[name], width)
    for name, width in SIGNAL_FIELDS:
        for sig in sig_headers:
            value = getattr(sig, name)
            if name in ("physical_min", "physical_max"):
                value = _fmt_number(value, width)
            out += _field(value, width)
    blocks = [d.reshape(n_records, s.samples_per_record) for d, s in zip(digitals, sig_headers)]
    if n_records:
        out += np.concatenate(blocks, axis=1).astype("<i2").tobytes()
    return bytes(out)
