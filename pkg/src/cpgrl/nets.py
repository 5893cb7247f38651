"""Small dense-network helpers shared by the feedback net, critic and actors.

Weight matrices are stored (n_out, n_in); forward passes work on either numpy
arrays or autodiff `Var` handles, single observations (D,) or batches (B, D).
"""

from __future__ import annotations

import math

import numpy as np

from . import autodiff as ad


def orthogonal(rng: np.random.Generator, shape: tuple[int, int], gain: float = 1.0) -> np.ndarray:
    """Orthogonal init: for (out, in) with out >= in the columns are exactly
    orthonormal (scaled by `gain`)."""
    rows, cols = shape
    a = rng.normal(size=(rows, cols) if rows >= cols else (cols, rows))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))
    if rows < cols:
        q = q.T
    return gain * q[:rows, :cols]


def mlp_init(rng, sizes, hidden_gain=math.sqrt(2.0), out_gain=1.0, out_zero=False):
    """Weights/biases for sizes[0] -> ... -> sizes[-1]; tanh hidden, linear out.

    Returns a name->array dict: W0, b0, W1, b1, ...  Hidden layers are
    orthogonal with `hidden_gain`; the output layer is orthogonal scaled by
    `out_gain`, or exactly zero when `out_zero` is set.  Biases start at zero.
    """
    entries = {}
    n_layers = len(sizes) - 1
    for i in range(n_layers):
        shape = (sizes[i + 1], sizes[i])
        last = i == n_layers - 1
        if last and out_zero:
            w = np.zeros(shape)
        else:
            w = orthogonal(rng, shape, gain=out_gain if last else hidden_gain)
        entries[f"W{i}"] = w
        entries[f"b{i}"] = np.zeros(sizes[i + 1])
    return entries


def mlp_apply(x, get, n_layers: int):
    """Forward pass; `get` maps a weight name to an array or Var."""
    h = x
    for i in range(n_layers):
        h = ad.matvec(h, ad.transpose(get(f"W{i}"))) + get(f"b{i}")
        if i < n_layers - 1:
            h = ad.tanh(h)
    return h
