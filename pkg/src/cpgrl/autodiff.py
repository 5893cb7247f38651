"""Reverse-mode automatic differentiation over a fixed set of array primitives.

The engine records a `Tape` of primitive operations applied to `Var` handles
(numpy float64 arrays under the hood) and differentiates any scalar node with
respect to every leaf in a single backward sweep.  The primitive set is closed
and enumerated in `_OPS`; each adjoint is individually testable and anything
outside the set raises `UnsupportedPrimitiveError`.

Every function here dispatches on its argument type: called with plain numpy
arrays it evaluates directly (no recording), called with `Var` it appends to
the tape.  Forward results are bitwise identical between the two modes because
both run the same numpy calls in the same order.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class UnsupportedPrimitiveError(TypeError):
    """A computation requested a primitive outside the fixed, enumerated set."""

    def __init__(self, name: str):
        super().__init__(
            f"primitive '{name}' is not in the supported set: {sorted(_OPS)}"
        )
        self.name = name


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _unbroadcast(grad, shape):
    """Sum `grad` down to `shape`, undoing numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (g, s) in enumerate(zip(grad.shape, shape)) if s == 1 and g != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return np.reshape(grad, shape)


def _bcast(g, a, b, wrt_a):
    return _unbroadcast(g, a.shape if wrt_a else b.shape)


def _promote(x):
    return (x.reshape(1, -1), True) if x.ndim == 1 else (x, False)


def _matvec_fwd(a, b):
    if a.ndim > 2 or b.ndim > 2:
        raise ContractShapeError("matvec supports 1-D and 2-D operands only")
    return np.matmul(a, b)


def _matvec_adj_a(g, a, b):
    ap, asq = _promote(a)
    bp = b.reshape(-1, 1) if b.ndim == 1 else b
    gp = g.reshape(ap.shape[0], bp.shape[1])
    ga = gp @ bp.T
    return ga.reshape(a.shape) if asq else ga


def _matvec_adj_b(g, a, b):
    ap, _ = _promote(a)
    bp, bsq = (b.reshape(-1, 1), True) if b.ndim == 1 else (b, False)
    gp = g.reshape(ap.shape[0], bp.shape[1])
    gb = ap.T @ gp
    return gb.reshape(b.shape) if bsq else gb


def _sum_adj(g, x, axis):
    if axis is None:
        return np.broadcast_to(g, x.shape)
    return np.broadcast_to(np.expand_dims(g, axis), x.shape)


def _axis_count(x, axis):
    return x.size if axis is None else x.shape[axis]


class ContractShapeError(ValueError):
    """Operand shapes violate a primitive's contract."""


# op -> (forward, (adjoint per differentiable operand,))
# Adjoints receive (upstream grad, output value, *operand values, ctx).
_OPS = {
    "add": (
        lambda a, b: a + b,
        (lambda g, o, a, b, c: _bcast(g, a, b, True),
         lambda g, o, a, b, c: _bcast(g, a, b, False)),
    ),
    "sub": (
        lambda a, b: a - b,
        (lambda g, o, a, b, c: _bcast(g, a, b, True),
         lambda g, o, a, b, c: _bcast(-g, a, b, False)),
    ),
    "mul": (
        lambda a, b: a * b,
        (lambda g, o, a, b, c: _bcast(g * b, a, b, True),
         lambda g, o, a, b, c: _bcast(g * a, a, b, False)),
    ),
    "div": (
        lambda a, b: a / b,
        (lambda g, o, a, b, c: _bcast(g / b, a, b, True),
         lambda g, o, a, b, c: _bcast(-g * a / (b * b), a, b, False)),
    ),
    "sin": (np.sin, (lambda g, o, a, c: g * np.cos(a),)),
    "cos": (np.cos, (lambda g, o, a, c: -g * np.sin(a),)),
    "exp": (np.exp, (lambda g, o, a, c: g * o,)),
    "log": (np.log, (lambda g, o, a, c: g / a,)),
    "tanh": (np.tanh, (lambda g, o, a, c: g * (1.0 - o * o),)),
    "softplus": (
        lambda a: np.logaddexp(0.0, a),
        (lambda g, o, a, c: g * _sigmoid(a),),
    ),
    # ties send the gradient to the first operand
    "max": (
        np.maximum,
        (lambda g, o, a, b, c: _bcast(g * (a >= b), a, b, True),
         lambda g, o, a, b, c: _bcast(g * (a < b), a, b, False)),
    ),
    "matvec": (
        _matvec_fwd,
        (lambda g, o, a, b, c: _matvec_adj_a(g, a, b),
         lambda g, o, a, b, c: _matvec_adj_b(g, a, b)),
    ),
    "sum": (
        lambda a, *, ctx: np.sum(a, axis=ctx),
        (lambda g, o, a, c: _sum_adj(g, a, c),),
    ),
    "mean": (
        lambda a, *, ctx: np.mean(a, axis=ctx),
        (lambda g, o, a, c: _sum_adj(g, a, c) / _axis_count(a, c),),
    ),
    # pass-through strictly inside (lo, hi); zero outside and on the boundary
    "clip": (
        lambda a, *, ctx: np.clip(a, ctx[0], ctx[1]),
        (lambda g, o, a, c: g * ((a > c[0]) & (a < c[1])),),
    ),
    "gather": (
        lambda a, *, ctx: a[ctx],
        (lambda g, o, a, c: _gather_adj(g, a, c),),
    ),
    "reshape": (
        lambda a, *, ctx: np.reshape(a, ctx),
        (lambda g, o, a, c: np.reshape(g, a.shape),),
    ),
    "transpose": (
        lambda a: a.T,
        (lambda g, o, a, c: g.T,),
    ),
}


def _gather_adj(g, a, idx):
    out = np.zeros_like(a)
    np.add.at(out, idx, g)
    return out


@dataclass
class _Node:
    op: str
    args: tuple  # parent node indices
    value: np.ndarray
    ctx: object = None


class Var:
    """Handle to one tape node; supports arithmetic operators like an array."""

    __slots__ = ("tape", "idx")
    __array_ufunc__ = None  # force numpy to defer to our operators / fail loudly

    def __init__(self, tape: "Tape", idx: int):
        self.tape = tape
        self.idx = idx

    @property
    def value(self) -> np.ndarray:
        return self.tape.nodes[self.idx].value

    @property
    def shape(self):
        return self.value.shape

    def __add__(self, other):
        return apply("add", self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return apply("sub", self, other)

    def __rsub__(self, other):
        return apply("sub", other, self)

    def __mul__(self, other):
        return apply("mul", self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return apply("div", self, other)

    def __rtruediv__(self, other):
        return apply("div", other, self)

    def __neg__(self):
        return apply("sub", 0.0, self)

    def __repr__(self):
        return f"Var(idx={self.idx}, shape={self.value.shape})"


class Tape:
    """Append-only record of primitive operations; topological by construction."""

    def __init__(self):
        self.nodes: list[_Node] = []
        self.leaf_ids: list[int] = []
        self.output: Var | None = None

    def _push(self, op, args, value, ctx=None) -> Var:
        self.nodes.append(_Node(op, args, np.asarray(value, dtype=np.float64), ctx))
        return Var(self, len(self.nodes) - 1)

    def leaf(self, value) -> Var:
        """Register a differentiable input."""
        v = self._push("leaf", (), value)
        self.leaf_ids.append(v.idx)
        return v

    def const(self, value) -> Var:
        """Register a non-differentiable input."""
        return self._push("const", (), value)

    def __len__(self):
        return len(self.nodes)


def _lift(tape: Tape, x) -> Var:
    if isinstance(x, Var):
        if x.tape is not tape:
            raise ContractShapeError("operands belong to different tapes")
        return x
    return tape.const(x)


def apply(op: str, *args, ctx=None):
    """Apply a named primitive; dispatches between direct numpy and taped mode."""
    if op not in _OPS:
        raise UnsupportedPrimitiveError(op)
    fwd = _OPS[op][0]
    tapes = [a.tape for a in args if isinstance(a, Var)]
    if not tapes:
        vals = [np.asarray(a, dtype=np.float64) for a in args]
        return fwd(*vals, ctx=ctx) if ctx is not None or op in _CTX_OPS else fwd(*vals)
    tape = tapes[0]
    vars_ = [_lift(tape, a) for a in args]
    vals = [v.value for v in vars_]
    out = fwd(*vals, ctx=ctx) if ctx is not None or op in _CTX_OPS else fwd(*vals)
    return tape._push(op, tuple(v.idx for v in vars_), out, ctx)


_CTX_OPS = {"sum", "mean", "clip", "gather", "reshape"}


# -- dispatching math functions (Var or ndarray) ------------------------------

def _is_var(*xs):
    return any(isinstance(x, Var) for x in xs)


def sin(x):
    return apply("sin", x) if _is_var(x) else np.sin(x)


def cos(x):
    return apply("cos", x) if _is_var(x) else np.cos(x)


def exp(x):
    return apply("exp", x) if _is_var(x) else np.exp(x)


def log(x):
    return apply("log", x) if _is_var(x) else np.log(x)


def tanh(x):
    return apply("tanh", x) if _is_var(x) else np.tanh(x)


def softplus(x):
    """log(1 + e^x), evaluated stably; strictly positive."""
    return apply("softplus", x) if _is_var(x) else np.logaddexp(0.0, x)


def maximum(a, b):
    return apply("max", a, b) if _is_var(a, b) else np.maximum(a, b)


def minimum(a, b):
    """Elementwise min, composed as -max(-a, -b) so the primitive set stays closed."""
    if _is_var(a, b):
        return -maximum(-a, -b)
    return np.minimum(a, b)


def matvec(a, b):
    """Matrix product of 1-D/2-D operands (np.matmul semantics)."""
    return apply("matvec", a, b) if _is_var(a, b) else _matvec_fwd(
        np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    )


def vsum(x, axis=None):
    return apply("sum", x, ctx=axis) if _is_var(x) else np.sum(x, axis=axis)


def vmean(x, axis=None):
    return apply("mean", x, ctx=axis) if _is_var(x) else np.mean(x, axis=axis)


def clip(x, lo, hi):
    return apply("clip", x, ctx=(lo, hi)) if _is_var(x) else np.clip(x, lo, hi)


def gather(x, idx):
    idx = np.asarray(idx)
    return apply("gather", x, ctx=idx) if _is_var(x) else np.asarray(x, dtype=np.float64)[idx]


def reshape(x, shape):
    shape = tuple(shape)
    return apply("reshape", x, ctx=shape) if _is_var(x) else np.reshape(x, shape)


def transpose(x):
    return apply("transpose", x) if _is_var(x) else np.asarray(x).T


def square(x):
    return x * x


# -- recording and differentiation --------------------------------------------

def record_forward(fn, inputs):
    """Run `fn` on tape-wrapped `inputs` and return (outputs, tape).

    `inputs` is a sequence of arrays/scalars; each becomes a leaf in order.
    Outputs are bitwise equal to calling `fn` on the raw inputs directly.
    """
    tape = Tape()
    leaves = [tape.leaf(x) for x in inputs]
    out = fn(*leaves)
    tape.output = out if isinstance(out, Var) else out[0]
    return out, tape


@dataclass
class GradVector:
    """Gradients for every leaf of one tape, in leaf creation order."""

    leaf_ids: list[int]
    grads: list[np.ndarray]
    _by_id: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self._by_id = dict(zip(self.leaf_ids, self.grads))

    def wrt(self, leaf: Var) -> np.ndarray:
        return self._by_id[leaf.idx]

    def flat(self, leaves=None) -> np.ndarray:
        gs = self.grads if leaves is None else [self.wrt(v) for v in leaves]
        return np.concatenate([g.ravel() for g in gs]) if gs else np.zeros(0)


def backward(tape: Tape, seed=1.0, output: Var | None = None) -> GradVector:
    """Reverse sweep from `output` (default: the one recorded by record_forward).

    `seed` is the output cotangent; its shape must match the output's.
    """
    out = output if output is not None else tape.output
    if out is None:
        raise ContractShapeError("tape has no designated output; pass `output=`")
    nodes = tape.nodes
    seed = np.asarray(seed, dtype=np.float64)
    if seed.shape != nodes[out.idx].value.shape:
        raise ContractShapeError(
            f"seed shape {seed.shape} does not match output shape "
            f"{nodes[out.idx].value.shape}"
        )
    adjoint: list[np.ndarray | None] = [None] * len(nodes)
    adjoint[out.idx] = seed
    for i in range(out.idx, -1, -1):
        g = adjoint[i]
        node = nodes[i]
        if g is None or node.op in ("leaf", "const"):
            continue
        rules = _OPS[node.op][1]
        vals = [nodes[j].value for j in node.args]
        for rule, parent in zip(rules, node.args):
            if nodes[parent].op == "const":
                continue
            pg = rule(g, node.value, *vals, node.ctx)
            adjoint[parent] = pg if adjoint[parent] is None else adjoint[parent] + pg
    grads = [
        adjoint[i] if adjoint[i] is not None else np.zeros_like(nodes[i].value)
        for i in tape.leaf_ids
    ]
    return GradVector(list(tape.leaf_ids), grads)


@dataclass
class FiniteDiffReport:
    """Central-difference comparison of analytic gradients, per coordinate."""

    max_rel_err: float
    failing_indices: list[tuple[int, tuple]]
    analytic: list[np.ndarray]
    numeric: list[np.ndarray]
    tol: float

    @property
    def passed(self) -> bool:
        return self.max_rel_err < self.tol


def finite_diff_check(fn, point, h=1e-6, tol=1e-5) -> FiniteDiffReport:
    """Check d(fn)/d(point) against central differences.

    `fn` must be scalar-valued over the arrays in `point`.  Relative error per
    coordinate uses denominator max(|analytic|, |numeric|, 1e-8); the report
    carries every failing (input index, coordinate) pair rather than raising.
    """
    point = [np.asarray(p, dtype=np.float64) for p in point]
    out, tape = record_forward(fn, point)
    if np.asarray(out.value).shape != ():
        raise ContractShapeError("finite_diff_check requires a scalar-valued fn")
    leaves = [Var(tape, i) for i in tape.leaf_ids]
    grads = backward(tape, 1.0)
    analytic = [grads.wrt(v) for v in leaves]

    numeric = []
    for k, p in enumerate(point):
        gn = np.zeros_like(p)
        flat = p.ravel()
        gview = gn.ravel()
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + h
            fp = float(np.asarray(fn(*point)))
            flat[j] = orig - h
            fm = float(np.asarray(fn(*point)))
            flat[j] = orig
            gview[j] = (fp - fm) / (2.0 * h)
        numeric.append(gn)

    max_rel = 0.0
    failing = []
    for k, (ga, gn) in enumerate(zip(analytic, numeric)):
        denom = np.maximum(np.maximum(np.abs(ga), np.abs(gn)), 1e-8)
        rel = np.abs(ga - gn) / denom
        max_rel = max(max_rel, float(rel.max()) if rel.size else 0.0)
        for coord in np.argwhere(rel >= tol):
            failing.append((k, tuple(int(c) for c in coord)))
    return FiniteDiffReport(max_rel, failing, analytic, numeric, tol)
