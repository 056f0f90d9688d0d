"""Checkpoints: a text manifest plus one contiguous little-endian tensor blob.

``manifest.txt``::

    usleep-checkpoint 1
    dtype float64
    [config]
    depth=12
    ...
    [tensors]
    <kind> <name> <dtype> <shape,comma,separated> <offset> <nbytes>

``kind`` is ``param`` or ``buffer``. ``tensors.bin`` holds the raw bytes.
"""
from pathlib import Path

import numpy as np

from ..exceptions import CheckpointError
from .network import ArchitectureConfig, USleepNet, build

MAGIC = "usleep-checkpoint 1"
MANIFEST = "manifest.txt"
BLOB = "tensors.bin"


def save_checkpoint(net: USleepNet, path) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    lines = [MAGIC, f"dtype {net.dtype.name}", "[config]"]
    lines += net.config.to_text().splitlines()
    lines.append("[tensors]")
    offset = 0
    chunks = []
    for kind, table in (("param", net.params), ("buffer", net.buffers)):
        for name in sorted(table):
            arr = np.ascontiguousarray(table[name])
            data = arr.astype(arr.dtype.newbyteorder("<"), copy=False).tobytes()
            shape = ",".join(str(s) for s in arr.shape) or "-"
            lines.append(f"{kind} {name} {arr.dtype.name} {shape} {offset} {len(data)}")
            chunks.append(data)
            offset += len(data)
    (path / BLOB).write_bytes(b"".join(chunks))
    (path / MANIFEST).write_text("\n".join(lines) + "\n")
    return path


def read_manifest(path):
    """``(dtype, config, entries)`` from a checkpoint directory."""
    path = Path(path)
    try:
        text = (path / MANIFEST).read_text()
    except OSError as err:
        raise CheckpointError(f"cannot read checkpoint manifest in {path}: {err}") from err
    lines = text.splitlines()
    if not lines or lines[0].strip() != MAGIC:
        raise CheckpointError(f"{path / MANIFEST} is not a checkpoint manifest")
    dtype = lines[1].split()[1]
    try:
        start = lines.index("[config]") + 1
        stop = lines.index("[tensors]")
    except ValueError as err:
        raise CheckpointError("checkpoint manifest lacks [config] or [tensors] section") from err
    config = ArchitectureConfig.from_text("\n".join(lines[start:stop]))
    entries = []
    for line in lines[stop + 1:]:
        if not line.strip():
            continue
        try:
            kind, name, dt, shape, off, nbytes = line.split()
            shape = () if shape == "-" else tuple(int(s) for s in shape.split(","))
            entries.append((kind, name, dt, shape, int(off), int(nbytes)))
        except ValueError as err:
            raise CheckpointError(f"malformed tensor line in manifest: {line!r}") from err
    return dtype, config, entries


def load_checkpoint(path, dtype=None, config: ArchitectureConfig = None) -> USleepNet:
    """Load a checkpoint, optionally down-casting to ``dtype``.

    If ``config`` is given its BN variant and group count must match the
    stored ones; a vanilla checkpoint must go through ``convert_to_sabn``
    rather than being loaded into a sandwich configuration.
    """
    path = Path(path)
    stored_dtype, stored, entries = read_manifest(path)
    if config is not None:
        if config.bn_variant != stored.bn_variant:
            raise CheckpointError(
                f"checkpoint has bn_variant={stored.bn_variant!r} but {config.bn_variant!r} was requested; "
                "convert the model instead of loading it into a different BN variant"
            )
        if config != stored:
            raise CheckpointError(f"checkpoint config {stored} does not match requested {config}")
    blob = (path / BLOB).read_bytes() if (path / BLOB).exists() else b""
    template = build(stored, seed=0, dtype=np.dtype(stored_dtype))
    expected = {("param", k): v.shape for k, v in template.params.items()}
    expected.update({("buffer", k): v.shape for k, v in template.buffers.items()})
    params, buffers = {}, {}
    for kind, name, dt, shape, off, nbytes in entries:
        if (kind, name) not in expected:
            raise CheckpointError(f"unexpected tensor {name!r} in checkpoint")
        if expected[(kind, name)] != shape:
            raise CheckpointError(f"tensor {name!r}: shape {shape} does not match config shape {expected[(kind, name)]}")
        le = np.dtype(dt).newbyteorder("<")
        if nbytes != int(np.prod(shape, dtype=np.int64)) * le.itemsize:
            raise CheckpointError(f"tensor {name!r}: byte count {nbytes} disagrees with shape {shape}")
        if off + nbytes > len(blob):
            raise CheckpointError(f"tensor {name!r}: blob truncated (needs bytes {off}..{off + nbytes}, have {len(blob)})")
        arr = np.frombuffer(blob, dtype=le, count=nbytes // le.itemsize, offset=off).reshape(shape)
        arr = arr.astype(np.dtype(dt).newbyteorder("="))
        (params if kind == "param" else buffers)[name] = arr
    missing = [k for (_, k) in expected if k not in params and k not in buffers]
    if missing:
        raise CheckpointError(f"tensor {missing[0]!r} missing from checkpoint")
    net = USleepNet(stored, params, buffers, np.dtype(stored_dtype))
    if dtype is not None and np.dtype(dtype) != net.dtype:
        net = cast(net, dtype)
    return net


def cast(net: USleepNet, dtype) -> USleepNet:
    return USleepNet(
        net.config,
        {k: v.astype(dtype) for k, v in net.params.items()},
        {k: v.astype(dtype) for k, v in net.buffers.items()},
        dtype,
    )
