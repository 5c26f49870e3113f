"""Pure numpy executor for lowered tape programs.

This is the always-available fallback backend.  It interprets the same
Program representation the compiled core consumes, so the two can be
checked against each other directly.
"""

import numpy as np

from .activations import (
    VALUE_DERIV_KINDS,
    act_deriv1,
    act_deriv1_from_value,
    act_deriv1v_deriv,
    act_deriv2,
    act_value,
)
from .errors import UnsupportedPrimitiveError
from .tape import (
    OP_ACT,
    OP_ACT_D1,
    OP_ACT_D1V,
    OP_ACT_D2,
    OP_ADD,
    OP_CONST,
    OP_CONST_LINEAR,
    OP_INPUT,
    OP_MATVEC,
    OP_MUL,
    OP_NEG,
    OP_SCALE,
    OP_SUM,
)


class NumpyExecutor:
    def __init__(self, program):
        self.prog = program

    # -- helpers ---------------------------------------------------------

    def _weight(self, params, layer):
        p = self.prog
        off = p.w_off[layer]
        return params[off : off + p.w_rows[layer] * p.w_cols[layer]].reshape(
            p.w_rows[layer], p.w_cols[layer]
        )

    def _bias(self, params, layer):
        p = self.prog
        off = p.b_off[layer]
        return params[off : off + p.w_rows[layer]]

    def _amat(self, i):
        p = self.prog
        off = p.amat_off[i]
        rows = p.amat_rows[i]
        cols = p.width[p.in1[i]]
        return p.const_pool[off : off + rows * cols].reshape(rows, cols)

    def _cvec(self, i, size):
        p = self.prog
        off = p.cvec_off[i]
        return p.const_pool[off : off + size]

    # -- passes ----------------------------------------------------------

    def forward(self, params, x):
        p = self.prog
        n = x.shape[0]
        bufs = [None] * len(p.op)
        for i, op in enumerate(p.op):
            if op == OP_INPUT:
                bufs[i] = x
            elif op == OP_MATVEC:
                w = self._weight(params, p.layer[i])
                if p.transpose[i]:
                    y = bufs[p.in1[i]] @ w
                else:
                    y = bufs[p.in1[i]] @ w.T
                    if p.use_bias[i]:
                        y += self._bias(params, p.layer[i])
                bufs[i] = y
            elif op == OP_CONST_LINEAR:
                y = bufs[p.in1[i]] @ self._amat(i).T
                if p.cvec_off[i] >= 0:
                    y += self._cvec(i, p.width[i])
                bufs[i] = y
            elif op == OP_ACT:
                bufs[i] = act_value(p.act[i], bufs[p.in1[i]])
            elif op == OP_ACT_D1:
                bufs[i] = act_deriv1(p.act[i], bufs[p.in1[i]])
            elif op == OP_ACT_D2:
                bufs[i] = act_deriv2(p.act[i], bufs[p.in1[i]])
            elif op == OP_ACT_D1V:
                bufs[i] = act_deriv1_from_value(p.act[i], bufs[p.in1[i]])
            elif op == OP_ADD:
                bufs[i] = bufs[p.in1[i]] + bufs[p.in2[i]]
            elif op == OP_MUL:
                bufs[i] = bufs[p.in1[i]] * bufs[p.in2[i]]
            elif op == OP_NEG:
                bufs[i] = -bufs[p.in1[i]]
            elif op == OP_SCALE:
                bufs[i] = p.scale[i] * bufs[p.in1[i]]
            elif op == OP_SUM:
                bufs[i] = bufs[p.in1[i]].sum(axis=1, keepdims=True)
            elif op == OP_CONST:
                bufs[i] = np.broadcast_to(self._cvec(i, p.width[i]), (n, p.width[i]))
            else:
                raise UnsupportedPrimitiveError(f"unknown opcode {op}")
        return bufs[p.out_id], bufs

    def vjp(self, params, x, seed, saved=None):
        p = self.prog
        bufs = saved if saved is not None else self.forward(params, x)[1]
        adj = [None] * len(p.op)
        adj[p.out_id] = seed
        pgrad = np.zeros(p.n_params, dtype=np.float64)

        def acc(j, contribution):
            if adj[j] is None:
                adj[j] = contribution.copy() if contribution is seed else contribution
            else:
                adj[j] = adj[j] + contribution

        for i in range(len(p.op) - 1, -1, -1):
            a = adj[i]
            if a is None:
                continue
            op = p.op[i]
            if op == OP_INPUT or op == OP_CONST:
                continue
            j = p.in1[i]
            if op == OP_MATVEC:
                layer = p.layer[i]
                w = self._weight(params, layer)
                woff = p.w_off[layer]
                wsize = p.w_rows[layer] * p.w_cols[layer]
                gw = pgrad[woff : woff + wsize].reshape(p.w_rows[layer], p.w_cols[layer])
                if p.transpose[i]:
                    acc(j, a @ w.T)
                    gw += bufs[j].T @ a
                else:
                    acc(j, a @ w)
                    gw += a.T @ bufs[j]
                    if p.use_bias[i]:
                        boff = p.b_off[layer]
                        pgrad[boff : boff + p.w_rows[layer]] += a.sum(axis=0)
            elif op == OP_CONST_LINEAR:
                acc(j, a @ self._amat(i))
            elif op == OP_ACT:
                if p.act[i] in VALUE_DERIV_KINDS:
                    acc(j, a * act_deriv1_from_value(p.act[i], bufs[i]))
                else:
                    acc(j, a * act_deriv1(p.act[i], bufs[j]))
            elif op == OP_ACT_D1:
                acc(j, a * act_deriv2(p.act[i], bufs[j]))
            elif op == OP_ACT_D1V:
                acc(j, a * act_deriv1v_deriv(p.act[i], bufs[j]))
            elif op == OP_ACT_D2:
                raise UnsupportedPrimitiveError(
                    "cannot backpropagate through a second-derivative node "
                    "(third derivatives are out of scope)"
                )
            elif op == OP_ADD:
                acc(j, a)
                acc(p.in2[i], a)
            elif op == OP_MUL:
                acc(j, a * bufs[p.in2[i]])
                acc(p.in2[i], a * bufs[j])
            elif op == OP_NEG:
                acc(j, -a)
            elif op == OP_SCALE:
                acc(j, p.scale[i] * a)
            elif op == OP_SUM:
                acc(j, np.broadcast_to(a, bufs[j].shape))
            else:
                raise UnsupportedPrimitiveError(f"unknown opcode {op}")

        igrad = adj[0]
        if igrad is None:
            igrad = np.zeros_like(x)
        else:
            igrad = np.array(igrad, dtype=np.float64, copy=True)
        return pgrad, igrad
