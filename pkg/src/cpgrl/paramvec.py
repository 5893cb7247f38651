"""Named float64 parameter arrays with a canonical flat ordering.

A `ParamBlock` is the single source of truth for every trainable array in a
run (oscillator parameters, network layers, log-std).  Flattening order is the
insertion order of the names, which also fixes gradient-vector alignment,
Adam state alignment and checkpoint layout.
"""

from __future__ import annotations

import numpy as np

from .errors import ContractViolationError


class ParamBlock:
    def __init__(self, arrays: dict[str, np.ndarray]):
        self._arrays = {k: np.asarray(v, dtype=np.float64) for k, v in arrays.items()}

    def __getitem__(self, name: str) -> np.ndarray:
        return self._arrays[name]

    def __setitem__(self, name: str, value) -> None:
        value = np.asarray(value, dtype=np.float64)
        if name in self._arrays and value.shape != self._arrays[name].shape:
            raise ContractViolationError(
                f"shape mismatch for '{name}': {value.shape} != {self._arrays[name].shape}"
            )
        self._arrays[name] = value

    def __contains__(self, name: str) -> bool:
        return name in self._arrays

    def names(self) -> list[str]:
        return list(self._arrays)

    def items(self):
        return self._arrays.items()

    @property
    def size(self) -> int:
        return sum(a.size for a in self._arrays.values())

    def flat(self) -> np.ndarray:
        if not self._arrays:
            return np.zeros(0)
        return np.concatenate([a.ravel() for a in self._arrays.values()])

    def with_flat(self, flat: np.ndarray) -> "ParamBlock":
        """New block with the same layout and values taken from `flat`."""
        flat = np.asarray(flat, dtype=np.float64)
        if flat.shape != (self.size,):
            raise ContractViolationError(
                f"flat vector has {flat.shape}, layout needs ({self.size},)"
            )
        out = {}
        pos = 0
        for name, a in self._arrays.items():
            out[name] = flat[pos:pos + a.size].reshape(a.shape).copy()
            pos += a.size
        return ParamBlock(out)

    def flat_slice(self, name: str) -> slice:
        """Position of one named array inside the flat vector."""
        pos = 0
        for n, a in self._arrays.items():
            if n == name:
                return slice(pos, pos + a.size)
            pos += a.size
        raise KeyError(name)

    def copy(self) -> "ParamBlock":
        return ParamBlock({k: v.copy() for k, v in self._arrays.items()})

    def __eq__(self, other):
        if not isinstance(other, ParamBlock):
            return NotImplemented
        return self.names() == other.names() and all(
            np.array_equal(a, other[k]) for k, a in self._arrays.items()
        )

    def __repr__(self):
        inner = ", ".join(f"{k}:{v.shape}" for k, v in self._arrays.items())
        return f"ParamBlock({inner})"
