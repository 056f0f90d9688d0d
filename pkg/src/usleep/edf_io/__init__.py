"""Recording ingestion: EDF files, text hypnograms and channel derivations."""
from .derivations import (
    DEFAULT_DERIVATIONS,
    REF,
    Derivation,
    DerivedChannel,
    build_derivations,
    derive,
    normalize_electrode,
    parse_derivation_config,
)
from .edf import EdfHeader, EdfSignalHeader, parse_edf, parse_edf_header, read_edf, write_edf
from .hypnogram import (
    Hypnogram,
    HypnogramEntry,
    format_hypnogram,
    hypnogram_from_stages,
    parse_hypnogram,
    read_hypnogram,
)
from .recording import Channel, Recording, SubjectMeta
