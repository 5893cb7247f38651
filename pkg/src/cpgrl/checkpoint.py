"""Schema-versioned text checkpoints with bit-exact double arrays.

Arrays are stored as C-style hex floats (`float.hex()`), which round-trip
every finite double exactly and avoid endianness concerns.  Loading a file
with a newer schema version fails loudly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import CheckpointSchemaError

SCHEMA_VERSION = 1
_MAGIC = "cpgrl-checkpoint"
_VALUES_PER_LINE = 8


@dataclass
class Checkpoint:
    actor_kind: str
    step: int
    arrays: dict[str, np.ndarray]
    config_text: str = ""
    schema_version: int = SCHEMA_VERSION


def save_checkpoint(path: str, ck: Checkpoint) -> None:
    lines = [f"{_MAGIC} {ck.schema_version}",
             f"actor {ck.actor_kind}",
             f"step {ck.step}"]
    cfg_lines = ck.config_text.splitlines()
    lines.append(f"config {len(cfg_lines)}")
    lines.extend(cfg_lines)
    for name, arr in ck.arrays.items():
        arr = np.asarray(arr, dtype=np.float64)
        dims = " ".join(str(d) for d in arr.shape)
        lines.append(f"array {name} {arr.ndim} {dims}".rstrip())
        flat = arr.ravel()
        for start in range(0, flat.size, _VALUES_PER_LINE):
            lines.append(" ".join(v.hex() for v in flat[start:start + _VALUES_PER_LINE]))
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")


def load_checkpoint(path: str) -> Checkpoint:
    with open(path) as f:
        lines = f.read().splitlines()
    if not lines or not lines[0].startswith(_MAGIC):
        raise CheckpointSchemaError(f"{path}: not a checkpoint file")
    version = int(lines[0].split()[1])
    if version > SCHEMA_VERSION:
        raise CheckpointSchemaError(
            f"{path}: schema version {version} is newer than supported {SCHEMA_VERSION}")
    if len(lines) < 4 or not lines[1].startswith("actor ") or not lines[2].startswith("step "):
        raise CheckpointSchemaError(f"{path}: malformed header")
    actor_kind = lines[1].split(" ", 1)[1]
    step = int(lines[2].split(" ", 1)[1])
    n_cfg = int(lines[3].split(" ", 1)[1])
    config_text = "\n".join(lines[4:4 + n_cfg])
    if config_text:
        config_text += "\n"
    arrays: dict[str, np.ndarray] = {}
    i = 4 + n_cfg
    while i < len(lines):
        line = lines[i].strip()
        i += 1
        if not line:
            continue
        parts = line.split()
        if parts[0] != "array":
            raise CheckpointSchemaError(f"{path}: expected 'array' record, got '{line}'")
        name = parts[1]
        ndim = int(parts[2])
        shape = tuple(int(d) for d in parts[3:3 + ndim])
        if len(shape) != ndim:
            raise CheckpointSchemaError(f"{path}: malformed array header '{line}'")
        count = int(np.prod(shape)) if shape else 1
        values: list[float] = []
        while len(values) < count:
            values.extend(float.fromhex(tok) for tok in lines[i].split())
            i += 1
        arrays[name] = np.array(values, dtype=np.float64).reshape(shape)
    return Checkpoint(actor_kind, step, arrays, config_text, version)


def split_arrays(ck: Checkpoint):
    """Separate parameter arrays from the normalizer's `norm.*` entries."""
    params = {k: v for k, v in ck.arrays.items() if not k.startswith("norm.")}
    norm = {k.split(".", 1)[1]: v for k, v in ck.arrays.items() if k.startswith("norm.")}
    return params, norm
