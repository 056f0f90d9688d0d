"""U-Sleep network assembly and checkpoint serialization."""
from .checkpoint import cast, load_checkpoint, read_manifest, save_checkpoint
from .network import (
    BN_VARIANTS,
    ArchitectureConfig,
    USleepNet,
    build,
    collapse_to_vanilla,
    convert_to_sabn,
    forward,
)

__all__ = [
    "ArchitectureConfig", "BN_VARIANTS", "USleepNet", "build", "cast", "collapse_to_vanilla",
    "convert_to_sabn", "forward", "load_checkpoint", "read_manifest", "save_checkpoint",
]
