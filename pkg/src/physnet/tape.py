"""Computation tapes over a small set of primitive operations.

A :class:`Tape` is a topologically ordered list of primitive nodes (affine
maps bound to parameter slots, elementwise activations, adds, hadamard
products, ...) describing a function of one input vector and a flat
parameter vector.  Tapes support

* forward evaluation (:func:`eval_tape`), batched over input rows,
* reverse-mode vector-Jacobian products w.r.t. parameters and inputs
  (:func:`grad_params`, :func:`vjp`),
* input gradients of scalar-output tapes (:func:`grad_inputs`), and
* symbolic differentiation into a new tape (:func:`grad_graph`) whose
  forward pass computes the input gradient of the original.  The derived
  tape uses activation-derivative primitives and shares the original
  parameter slots, so one more reverse pass through it yields parameter
  gradients of input gradients.

Execution is delegated to a backend (compiled core or numpy fallback)
through :mod:`physnet.backend`; this module owns the graph structure and
the lowering to a flat :class:`Program` both backends consume.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .activations import VALUE_DERIV_KINDS, activation_code
from .errors import ShapeError, UnsupportedPrimitiveError

# Opcodes shared with the executors.
OP_INPUT = 0
OP_MATVEC = 1        # y = x @ W.T (+ b)  or, transposed,  y = x @ W
OP_CONST_LINEAR = 2  # y = x @ A.T (+ c)  with constant (non-trainable) A, c
OP_ACT = 3
OP_ACT_D1 = 4
OP_ACT_D2 = 5
OP_ADD = 6
OP_MUL = 7
OP_NEG = 8
OP_SCALE = 9
OP_SUM = 10          # y = sum of components, width 1
OP_CONST = 11        # fixed row, broadcast over the batch
OP_ACT_D1V = 12      # sigma'(x) computed from v = sigma(x) (input is the ACT node)


class ParamStore:
    """Flat float64 parameter vector with per-layer (W, b) layout.

    Layer ``i`` with shape ``(out, in)`` occupies ``out*in`` row-major
    weight entries followed by ``out`` bias entries.
    """

    def __init__(self, shapes, values=None):
        self.shapes = [(int(o), int(i)) for o, i in shapes]
        self._w_off = []
        self._b_off = []
        off = 0
        for out, inp in self.shapes:
            self._w_off.append(off)
            off += out * inp
            self._b_off.append(off)
            off += out
        self.n_params = off
        if values is None:
            self.values = np.zeros(off, dtype=np.float64)
        else:
            values = np.asarray(values, dtype=np.float64).ravel()
            if values.size != off:
                raise ShapeError(
                    f"parameter vector has {values.size} entries, layout needs {off}"
                )
            self.values = values.copy()

    def weight(self, layer: int) -> np.ndarray:
        out, inp = self.shapes[layer]
        off = self._w_off[layer]
        return self.values[off : off + out * inp].reshape(out, inp)

    def bias(self, layer: int) -> np.ndarray:
        out, _ = self.shapes[layer]
        off = self._b_off[layer]
        return self.values[off : off + out]

    def weight_offset(self, layer: int) -> int:
        return self._w_off[layer]

    def bias_offset(self, layer: int) -> int:
        return self._b_off[layer]

    def copy(self) -> "ParamStore":
        return ParamStore(self.shapes, self.values)

    def __len__(self) -> int:
        return self.n_params


@dataclass
class Node:
    op: int
    inputs: tuple
    width: int
    layer: int = -1
    transpose: bool = False
    use_bias: bool = False
    act: int = -1
    scale: float = 1.0
    amat: np.ndarray | None = None   # const matrix for OP_CONST_LINEAR
    cvec: np.ndarray | None = None   # const row for OP_CONST / bias for OP_CONST_LINEAR


class Tape:
    """Topologically ordered computation graph; node 0 is the input."""

    def __init__(self, input_dim: int, param_shapes):
        self.input_dim = int(input_dim)
        self.param_shapes = [(int(o), int(i)) for o, i in param_shapes]
        self.nodes = [Node(OP_INPUT, (), self.input_dim)]
        self.output_id = 0
        self._programs = {}

    # -- builder helpers ------------------------------------------------

    def _push(self, node: Node) -> int:
        self.nodes.append(node)
        self._programs.clear()
        return len(self.nodes) - 1

    def _width(self, node_id: int) -> int:
        return self.nodes[node_id].width

    def affine(self, x: int, layer: int) -> int:
        """y = x @ W_layer.T + b_layer."""
        out, inp = self.param_shapes[layer]
        if self._width(x) != inp:
            raise ShapeError(f"affine layer {layer} expects width {inp}, got {self._width(x)}")
        return self._push(Node(OP_MATVEC, (x,), out, layer=layer, use_bias=True))

    def linear(self, x: int, layer: int, transpose: bool = False) -> int:
        """y = x @ W_layer.T (transpose=False) or y = x @ W_layer (transpose=True)."""
        out, inp = self.param_shapes[layer]
        expect, result = (out, inp) if transpose else (inp, out)
        if self._width(x) != expect:
            raise ShapeError(f"linear layer {layer} expects width {expect}, got {self._width(x)}")
        return self._push(Node(OP_MATVEC, (x,), result, layer=layer, transpose=transpose))

    def const_linear(self, x: int, amat, cvec=None) -> int:
        amat = np.ascontiguousarray(amat, dtype=np.float64)
        if amat.ndim != 2 or amat.shape[1] != self._width(x):
            raise ShapeError(f"const matrix shape {amat.shape} does not accept width {self._width(x)}")
        if cvec is not None:
            cvec = np.ascontiguousarray(cvec, dtype=np.float64).ravel()
            if cvec.size != amat.shape[0]:
                raise ShapeError("const bias length does not match const matrix rows")
        return self._push(Node(OP_CONST_LINEAR, (x,), amat.shape[0], amat=amat, cvec=cvec))

    def act(self, x: int, kind) -> int:
        code = kind if isinstance(kind, int) else activation_code(kind)
        return self._push(Node(OP_ACT, (x,), self._width(x), act=code))

    def act_d1(self, x: int, kind) -> int:
        code = kind if isinstance(kind, int) else activation_code(kind)
        return self._push(Node(OP_ACT_D1, (x,), self._width(x), act=code))

    def act_d2(self, x: int, kind) -> int:
        code = kind if isinstance(kind, int) else activation_code(kind)
        return self._push(Node(OP_ACT_D2, (x,), self._width(x), act=code))

    def act_d1v(self, v: int, kind) -> int:
        """sigma'(x) from the activation value node v = sigma(x)."""
        code = kind if isinstance(kind, int) else activation_code(kind)
        if code not in VALUE_DERIV_KINDS:
            raise UnsupportedPrimitiveError(
                f"activation code {code} has no value-form derivative"
            )
        return self._push(Node(OP_ACT_D1V, (v,), self._width(v), act=code))

    def add(self, x: int, y: int) -> int:
        if self._width(x) != self._width(y):
            raise ShapeError("add operands have different widths")
        return self._push(Node(OP_ADD, (x, y), self._width(x)))

    def mul(self, x: int, y: int) -> int:
        if self._width(x) != self._width(y):
            raise ShapeError("mul operands have different widths")
        return self._push(Node(OP_MUL, (x, y), self._width(x)))

    def neg(self, x: int) -> int:
        return self._push(Node(OP_NEG, (x,), self._width(x)))

    def scale(self, x: int, s: float) -> int:
        return self._push(Node(OP_SCALE, (x,), self._width(x), scale=float(s)))

    def sum(self, x: int) -> int:
        return self._push(Node(OP_SUM, (x,), 1))

    def const(self, row) -> int:
        row = np.ascontiguousarray(row, dtype=np.float64).ravel()
        return self._push(Node(OP_CONST, (), row.size, cvec=row))

    def set_output(self, node_id: int):
        self.output_id = node_id
        self._programs.clear()

    @property
    def output_width(self) -> int:
        return self.nodes[self.output_id].width

    @property
    def n_params(self) -> int:
        return sum(o * i + o for o, i in self.param_shapes)


@dataclass
class Program:
    """Flat array lowering of a Tape, consumed by both executors."""

    op: np.ndarray
    in1: np.ndarray
    in2: np.ndarray
    width: np.ndarray
    woff: np.ndarray          # cumulative width offsets into a flat workspace
    layer: np.ndarray
    transpose: np.ndarray
    use_bias: np.ndarray
    act: np.ndarray
    scale: np.ndarray
    amat_off: np.ndarray
    amat_rows: np.ndarray
    cvec_off: np.ndarray
    const_pool: np.ndarray
    w_off: np.ndarray
    w_rows: np.ndarray
    w_cols: np.ndarray
    b_off: np.ndarray
    n_params: int
    input_dim: int
    out_id: int
    total_width: int = field(init=False)

    def __post_init__(self):
        self.total_width = int(self.woff[-1] + self.width[-1])


def lower(tape: Tape) -> Program:
    """Lower a tape to the flat Program representation (cached per tape)."""
    cached = tape._programs.get("program")
    if cached is not None:
        return cached
    n = len(tape.nodes)
    op = np.zeros(n, dtype=np.int32)
    in1 = np.full(n, -1, dtype=np.int32)
    in2 = np.full(n, -1, dtype=np.int32)
    width = np.zeros(n, dtype=np.int32)
    layer = np.full(n, -1, dtype=np.int32)
    transpose = np.zeros(n, dtype=np.int8)
    use_bias = np.zeros(n, dtype=np.int8)
    act = np.full(n, -1, dtype=np.int8)
    scale = np.ones(n, dtype=np.float64)
    amat_off = np.full(n, -1, dtype=np.int64)
    amat_rows = np.zeros(n, dtype=np.int32)
    cvec_off = np.full(n, -1, dtype=np.int64)
    pool = []
    pool_len = 0

    def _pool(arr):
        nonlocal pool_len
        flat = np.ascontiguousarray(arr, dtype=np.float64).ravel()
        pool.append(flat)
        off = pool_len
        pool_len += flat.size
        return off

    for i, node in enumerate(tape.nodes):
        op[i] = node.op
        width[i] = node.width
        if len(node.inputs) > 0:
            in1[i] = node.inputs[0]
        if len(node.inputs) > 1:
            in2[i] = node.inputs[1]
        layer[i] = node.layer
        transpose[i] = 1 if node.transpose else 0
        use_bias[i] = 1 if node.use_bias else 0
        act[i] = node.act
        scale[i] = node.scale
        if node.amat is not None:
            amat_off[i] = _pool(node.amat)
            amat_rows[i] = node.amat.shape[0]
        if node.cvec is not None:
            cvec_off[i] = _pool(node.cvec)

    woff = np.zeros(n, dtype=np.int64)
    np.cumsum(width[:-1], out=woff[1:])

    n_layers = len(tape.param_shapes)
    w_off = np.zeros(n_layers, dtype=np.int64)
    w_rows = np.zeros(n_layers, dtype=np.int32)
    w_cols = np.zeros(n_layers, dtype=np.int32)
    b_off = np.zeros(n_layers, dtype=np.int64)
    off = 0
    for li, (out, inp) in enumerate(tape.param_shapes):
        w_off[li] = off
        w_rows[li] = out
        w_cols[li] = inp
        off += out * inp
        b_off[li] = off
        off += out

    prog = Program(
        op=op, in1=in1, in2=in2, width=width, woff=woff, layer=layer,
        transpose=transpose, use_bias=use_bias, act=act, scale=scale,
        amat_off=amat_off, amat_rows=amat_rows, cvec_off=cvec_off,
        const_pool=np.concatenate(pool) if pool else np.zeros(0, dtype=np.float64),
        w_off=w_off, w_rows=w_rows, w_cols=w_cols, b_off=b_off,
        n_params=off, input_dim=tape.input_dim, out_id=tape.output_id,
    )
    tape._programs["program"] = prog
    return prog


# -- gradient graph construction ----------------------------------------


def grad_graph(tape: Tape) -> Tape:
    """Differentiate a scalar-output tape into a new tape computing its
    input gradient.

    The returned tape shares the original parameter slots, contains a copy
    of the original nodes plus adjoint nodes, and outputs a vector of the
    input dimension.  All nodes it introduces have first-derivative rules,
    so reverse mode over the result yields parameter gradients of the
    input gradient.
    """
    if tape.output_width != 1:
        raise ShapeError("grad_graph requires a scalar-output tape")

    g = Tape(tape.input_dim, tape.param_shapes)
    g.nodes = [Node(n.op, n.inputs, n.width, n.layer, n.transpose, n.use_bias,
                    n.act, n.scale, n.amat, n.cvec) for n in tape.nodes]
    g._programs = {}

    adj: dict[int, int] = {}

    def accumulate(target: int, contribution: int):
        if target in adj:
            adj[target] = g.add(adj[target], contribution)
        else:
            adj[target] = contribution

    adj[tape.output_id] = g.const([1.0])

    for i in range(len(tape.nodes) - 1, -1, -1):
        if i not in adj:
            continue
        a = adj[i]
        node = tape.nodes[i]
        if node.op == OP_INPUT:
            continue
        if node.op == OP_MATVEC:
            accumulate(node.inputs[0], g.linear(a, node.layer, transpose=not node.transpose))
        elif node.op == OP_CONST_LINEAR:
            accumulate(node.inputs[0], g.const_linear(a, node.amat.T))
        elif node.op == OP_ACT:
            if node.act in VALUE_DERIV_KINDS:
                # derivative from the stored activation value (node i itself)
                accumulate(node.inputs[0], g.mul(a, g.act_d1v(i, node.act)))
            else:
                accumulate(node.inputs[0], g.mul(a, g.act_d1(node.inputs[0], node.act)))
        elif node.op == OP_ACT_D1:
            accumulate(node.inputs[0], g.mul(a, g.act_d2(node.inputs[0], node.act)))
        elif node.op in (OP_ACT_D2, OP_ACT_D1V):
            raise UnsupportedPrimitiveError(
                "higher derivative nodes have no registered derivative rule "
                "(third derivatives are out of scope)"
            )
        elif node.op == OP_ADD:
            accumulate(node.inputs[0], a)
            accumulate(node.inputs[1], a)
        elif node.op == OP_MUL:
            x, y = node.inputs
            accumulate(x, g.mul(a, y))
            accumulate(y, g.mul(a, x))
        elif node.op == OP_NEG:
            accumulate(node.inputs[0], g.neg(a))
        elif node.op == OP_SCALE:
            accumulate(node.inputs[0], g.scale(a, node.scale))
        elif node.op == OP_SUM:
            in_width = tape.nodes[node.inputs[0]].width
            accumulate(node.inputs[0], g.const_linear(a, np.ones((in_width, 1))))
        elif node.op == OP_CONST:
            continue
        else:
            raise UnsupportedPrimitiveError(f"no derivative rule for opcode {node.op}")

    if 0 in adj:
        g.set_output(adj[0])
    else:
        g.set_output(g.const(np.zeros(tape.input_dim)))
    return g


# -- evaluation entry points ---------------------------------------------


def _as_batch(x, dim, what="input"):
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x.reshape(1, -1)
    if x.ndim != 2 or x.shape[1] != dim:
        raise ShapeError(f"{what} must have width {dim}, got shape {x.shape}")
    return np.ascontiguousarray(x), single


def _executor(tape: Tape):
    from . import backend

    return backend.executor_for(tape)


def eval_tape(tape: Tape, params: ParamStore, x) -> np.ndarray:
    """Forward-evaluate the tape; pure, batched over rows of ``x``."""
    xb, single = _as_batch(x, tape.input_dim)
    out, _ = _executor(tape).forward(params.values, xb)
    return out[0] if single else out


def forward_saved(tape: Tape, params: ParamStore, x):
    """Forward pass that also returns executor state reusable by vjp_saved."""
    xb, single = _as_batch(x, tape.input_dim)
    out, saved = _executor(tape).forward(params.values, xb)
    return (out[0] if single else out), saved


def vjp_saved(tape: Tape, params: ParamStore, x, seed, saved):
    """Reverse pass reusing buffers from :func:`forward_saved`."""
    xb, single = _as_batch(x, tape.input_dim)
    sb, _ = _as_batch(seed, tape.output_width, what="seed")
    if sb.shape[0] != xb.shape[0]:
        raise ShapeError("seed and input batch sizes differ")
    pgrad, igrad = _executor(tape).vjp(params.values, xb, sb, saved)
    return pgrad, (igrad[0] if single else igrad)


def vjp(tape: Tape, params: ParamStore, x, seed):
    """Vector-Jacobian product: returns (d(seed.y)/dparams, d(seed.y)/dx).

    Batched inputs contribute additively to the parameter gradient; the
    input gradient is returned per row.
    """
    xb, single = _as_batch(x, tape.input_dim)
    sb, _ = _as_batch(seed, tape.output_width, what="seed")
    if sb.shape[0] != xb.shape[0]:
        raise ShapeError("seed and input batch sizes differ")
    pgrad, igrad = _executor(tape).vjp(params.values, xb, sb, None)
    return pgrad, (igrad[0] if single else igrad)


def grad_params(tape: Tape, params: ParamStore, x, seed) -> np.ndarray:
    """seed-weighted parameter gradient, flat over the ParamStore."""
    return vjp(tape, params, x, seed)[0]


def grad_inputs(tape: Tape, params: ParamStore, x) -> np.ndarray:
    """Gradient of a scalar-output tape w.r.t. its input (batched)."""
    if tape.output_width != 1:
        raise ShapeError("grad_inputs requires a scalar-output tape")
    xb, single = _as_batch(x, tape.input_dim)
    ones = np.ones((xb.shape[0], 1), dtype=np.float64)
    _, igrad = _executor(tape).vjp(params.values, xb, ones, None)
    return igrad[0] if single else igrad
