# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled tape-program executor.

Interprets the same lowered Program as the numpy fallback, with BLAS
dgemm for the linear maps and fused C loops for the elementwise nodes.
The win over numpy is largest for single-row evaluations (ODE rollouts),
where per-op numpy dispatch overhead dominates.
"""

import sys
import threading

import numpy as np

cimport numpy as cnp
from libc.math cimport cos, exp, sin, tanh
from libc.string cimport memcpy, memset
from scipy.linalg.cython_blas cimport dgemm

from .errors import UnsupportedPrimitiveError

cnp.import_array()

# Reuse large workspaces across calls: freshly mmap'd pages cost more
# than the arithmetic for batched passes.  A cached buffer is reused only
# when nothing else holds a reference to it, so saved forward state held
# by a caller is never clobbered.
_REUSE_BYTES = 1 << 22

cdef enum:
    OP_INPUT = 0
    OP_MATVEC = 1
    OP_CONST_LINEAR = 2
    OP_ACT = 3
    OP_ACT_D1 = 4
    OP_ACT_D2 = 5
    OP_ADD = 6
    OP_MUL = 7
    OP_NEG = 8
    OP_SCALE = 9
    OP_SUM = 10
    OP_CONST = 11
    OP_ACT_D1V = 12

cdef enum:
    ACT_TANH = 0
    ACT_SIGMOID = 1
    ACT_RELU = 2
    ACT_SINE = 3


cdef inline double c_sigmoid(double z) noexcept nogil:
    cdef double e
    if z >= 0.0:
        return 1.0 / (1.0 + exp(-z))
    e = exp(z)
    return e / (1.0 + e)


cdef inline double c_act(int kind, double z) noexcept nogil:
    if kind == ACT_TANH:
        return tanh(z)
    if kind == ACT_SIGMOID:
        return c_sigmoid(z)
    if kind == ACT_RELU:
        return z if z > 0.0 else 0.0
    return sin(z)


cdef inline double c_d1(int kind, double z) noexcept nogil:
    cdef double t
    if kind == ACT_TANH:
        t = tanh(z)
        return 1.0 - t * t
    if kind == ACT_SIGMOID:
        t = c_sigmoid(z)
        return t * (1.0 - t)
    if kind == ACT_RELU:
        return 1.0 if z > 0.0 else 0.0
    return cos(z)


cdef inline double c_d2(int kind, double z) noexcept nogil:
    cdef double t
    if kind == ACT_TANH:
        t = tanh(z)
        return -2.0 * t * (1.0 - t * t)
    if kind == ACT_SIGMOID:
        t = c_sigmoid(z)
        return t * (1.0 - t) * (1.0 - 2.0 * t)
    if kind == ACT_RELU:
        return 0.0
    return -sin(z)


cdef inline bint c_has_d1v(int kind) noexcept nogil:
    return kind == ACT_TANH or kind == ACT_SIGMOID or kind == ACT_RELU


cdef inline double c_d1v(int kind, double v) noexcept nogil:
    # sigma'(x) from v = sigma(x)
    if kind == ACT_TANH:
        return 1.0 - v * v
    if kind == ACT_SIGMOID:
        return v * (1.0 - v)
    return 1.0 if v > 0.0 else 0.0


cdef inline double c_d1v_deriv(int kind, double v) noexcept nogil:
    if kind == ACT_TANH:
        return -2.0 * v
    if kind == ACT_SIGMOID:
        return 1.0 - 2.0 * v
    return 0.0


cdef inline void gemm_rm(bint ta, bint tb, int m, int n, int k, double alpha,
                         double* a, int ca, double* b, int cb, double beta,
                         double* c) noexcept nogil:
    """Row-major C(m,n) = alpha*op(A)(m,k) @ op(B)(k,n) + beta*C."""
    cdef char fta = b'T' if ta else b'N'
    cdef char ftb = b'T' if tb else b'N'
    if m == 0 or n == 0:
        return
    dgemm(&ftb, &fta, &n, &m, &k, &alpha, b, &cb, a, &ca, &beta, c, &n)


cdef class CoreExecutor:
    cdef int n_nodes, input_dim, out_id
    cdef long long n_params, total_width
    cdef int[::1] op, in1, in2, width, layer, amat_rows, w_rows, w_cols
    cdef long long[::1] woff, amat_off, cvec_off, w_off, b_off
    cdef signed char[::1] transpose, use_bias, act
    cdef double[::1] scale, const_pool
    cdef object _tls

    def _scratch(self, slot, long long size):
        """Thread-local reusable float64 buffer for the given slot name.

        Reused only when idle (no outside references) and correctly sized;
        otherwise a fresh array is returned and becomes the new cache.
        """
        if size * 8 < _REUSE_BYTES:
            return np.empty(size, dtype=np.float64)
        tls = self._tls
        buf = getattr(tls, slot, None)
        # refcount 2 = the tls attribute + the getrefcount argument
        if buf is not None and buf.size == size and sys.getrefcount(buf) == 2:
            return buf
        buf = np.empty(size, dtype=np.float64)
        setattr(tls, slot, buf)
        return buf

    def __init__(self, prog):
        self._tls = threading.local()
        self.op = np.ascontiguousarray(prog.op, dtype=np.int32)
        self.in1 = np.ascontiguousarray(prog.in1, dtype=np.int32)
        self.in2 = np.ascontiguousarray(prog.in2, dtype=np.int32)
        self.width = np.ascontiguousarray(prog.width, dtype=np.int32)
        self.woff = np.ascontiguousarray(prog.woff, dtype=np.int64)
        self.layer = np.ascontiguousarray(prog.layer, dtype=np.int32)
        self.transpose = np.ascontiguousarray(prog.transpose, dtype=np.int8)
        self.use_bias = np.ascontiguousarray(prog.use_bias, dtype=np.int8)
        self.act = np.ascontiguousarray(prog.act, dtype=np.int8)
        self.scale = np.ascontiguousarray(prog.scale, dtype=np.float64)
        self.amat_off = np.ascontiguousarray(prog.amat_off, dtype=np.int64)
        self.amat_rows = np.ascontiguousarray(prog.amat_rows, dtype=np.int32)
        self.cvec_off = np.ascontiguousarray(prog.cvec_off, dtype=np.int64)
        pool = np.ascontiguousarray(prog.const_pool, dtype=np.float64)
        self.const_pool = pool if pool.size else np.zeros(1, dtype=np.float64)
        self.w_off = np.ascontiguousarray(prog.w_off, dtype=np.int64)
        self.w_rows = np.ascontiguousarray(prog.w_rows, dtype=np.int32)
        self.w_cols = np.ascontiguousarray(prog.w_cols, dtype=np.int32)
        self.b_off = np.ascontiguousarray(prog.b_off, dtype=np.int64)
        self.n_nodes = len(prog.op)
        self.n_params = prog.n_params
        self.input_dim = prog.input_dim
        self.out_id = prog.out_id
        self.total_width = prog.total_width

    def forward(self, params, x):
        cdef double[::1] pv = np.ascontiguousarray(params, dtype=np.float64)
        cdef double[:, ::1] xv = np.ascontiguousarray(x, dtype=np.float64)
        cdef int n = xv.shape[0]
        ws = self._scratch("ws", n * self.total_width)
        cdef double[::1] wsv = ws
        self._forward(&pv[0], &xv[0, 0], n, &wsv[0])
        cdef int w_out = self.width[self.out_id]
        out = np.empty((n, w_out), dtype=np.float64)
        cdef double[:, ::1] ov = out
        memcpy(&ov[0, 0], &wsv[self.woff[self.out_id] * n], n * w_out * sizeof(double))
        return out, ws

    def vjp(self, params, x, seed, saved=None):
        cdef double[::1] pv = np.ascontiguousarray(params, dtype=np.float64)
        cdef double[:, ::1] xv = np.ascontiguousarray(x, dtype=np.float64)
        cdef double[:, ::1] sv = np.ascontiguousarray(seed, dtype=np.float64)
        cdef int n = xv.shape[0]
        cdef double[::1] wsv
        if saved is None:
            ws = self._scratch("fwd_ws", n * self.total_width)
            wsv = ws
            self._forward(&pv[0], &xv[0, 0], n, &wsv[0])
        else:
            wsv = saved
        adj = self._scratch("adj", n * self.total_width)
        cdef double[::1] av = adj
        present = np.zeros(self.n_nodes, dtype=np.int8)
        cdef signed char[::1] prv = present
        pgrad = np.zeros(self.n_params, dtype=np.float64)
        cdef double[::1] gv = pgrad
        igrad = np.zeros((n, self.input_dim), dtype=np.float64)
        cdef double[:, ::1] iv = igrad
        cdef int bad = self._vjp(&pv[0], n, &wsv[0], &sv[0, 0], &av[0], &prv[0],
                                 &gv[0], &iv[0, 0])
        if bad >= 0:
            raise UnsupportedPrimitiveError(
                "cannot backpropagate through a second-derivative node "
                "(third derivatives are out of scope)"
            )
        return pgrad, igrad

    cdef void _forward(self, double* params, double* x, int n, double* ws) noexcept nogil:
        cdef int i, j, r, w, wi, op, n_in
        cdef long long size
        cdef double* dst
        cdef double* src
        cdef double* src2
        cdef double s
        for i in range(self.n_nodes):
            op = self.op[i]
            w = self.width[i]
            dst = ws + self.woff[i] * n
            size = <long long> n * w
            if op == OP_INPUT:
                memcpy(dst, x, size * sizeof(double))
                continue
            if op == OP_CONST:
                src = &self.const_pool[0] + self.cvec_off[i]
                for r in range(n):
                    memcpy(dst + r * w, src, w * sizeof(double))
                continue
            src = ws + self.woff[self.in1[i]] * n
            n_in = self.width[self.in1[i]]
            if op == OP_MATVEC:
                self._matvec_fwd(params, i, n, src, dst)
            elif op == OP_CONST_LINEAR:
                gemm_rm(0, 1, n, w, n_in, 1.0, src, n_in,
                        &self.const_pool[0] + self.amat_off[i], n_in, 0.0, dst)
                if self.cvec_off[i] >= 0:
                    src2 = &self.const_pool[0] + self.cvec_off[i]
                    for r in range(n):
                        for j in range(w):
                            dst[r * w + j] += src2[j]
            elif op == OP_ACT:
                for j in range(size):
                    dst[j] = c_act(self.act[i], src[j])
            elif op == OP_ACT_D1:
                for j in range(size):
                    dst[j] = c_d1(self.act[i], src[j])
            elif op == OP_ACT_D2:
                for j in range(size):
                    dst[j] = c_d2(self.act[i], src[j])
            elif op == OP_ACT_D1V:
                for j in range(size):
                    dst[j] = c_d1v(self.act[i], src[j])
            elif op == OP_ADD:
                src2 = ws + self.woff[self.in2[i]] * n
                for j in range(size):
                    dst[j] = src[j] + src2[j]
            elif op == OP_MUL:
                src2 = ws + self.woff[self.in2[i]] * n
                for j in range(size):
                    dst[j] = src[j] * src2[j]
            elif op == OP_NEG:
                for j in range(size):
                    dst[j] = -src[j]
            elif op == OP_SCALE:
                s = self.scale[i]
                for j in range(size):
                    dst[j] = s * src[j]
            elif op == OP_SUM:
                for r in range(n):
                    s = 0.0
                    for j in range(n_in):
                        s += src[r * n_in + j]
                    dst[r] = s

    cdef void _matvec_fwd(self, double* params, int i, int n, double* src,
                          double* dst) noexcept nogil:
        cdef int li = self.layer[i]
        cdef int rows = self.w_rows[li], cols = self.w_cols[li]
        cdef double* wmat = params + self.w_off[li]
        cdef double* bias
        cdef int r, j
        if self.transpose[i]:
            # y (n, cols) = x (n, rows) @ W (rows, cols)
            gemm_rm(0, 0, n, cols, rows, 1.0, src, rows, wmat, cols, 0.0, dst)
        else:
            # y (n, rows) = x (n, cols) @ W.T
            gemm_rm(0, 1, n, rows, cols, 1.0, src, cols, wmat, cols, 0.0, dst)
            if self.use_bias[i]:
                bias = params + self.b_off[li]
                for r in range(n):
                    for j in range(rows):
                        dst[r * rows + j] += bias[j]

    cdef int _vjp(self, double* params, int n, double* ws, double* seed,
                  double* adj, signed char* present, double* pgrad,
                  double* igrad) noexcept nogil:
        """Reverse pass.  Returns the index of an offending node if an
        underivable primitive is hit, else -1."""
        cdef int i, j, jj, r, w, op, li, rows, cols, n_in
        cdef long long size
        cdef double* a
        cdef double* dst
        cdef double* xbuf
        cdef double* wmat
        cdef double s
        cdef bint fresh

        w = self.width[self.out_id]
        memcpy(adj + self.woff[self.out_id] * n, seed,
               <long long> n * w * sizeof(double))
        present[self.out_id] = 1

        for i in range(self.n_nodes - 1, -1, -1):
            if not present[i]:
                continue
            op = self.op[i]
            if op == OP_INPUT:
                memcpy(igrad, adj + self.woff[i] * n,
                       <long long> n * self.input_dim * sizeof(double))
                continue
            if op == OP_CONST:
                continue
            a = adj + self.woff[i] * n
            w = self.width[i]
            size = <long long> n * w
            j = self.in1[i]
            n_in = self.width[j]
            xbuf = ws + self.woff[j] * n
            if op == OP_ACT_D2:
                return i
            if op == OP_MATVEC:
                li = self.layer[i]
                rows = self.w_rows[li]
                cols = self.w_cols[li]
                wmat = params + self.w_off[li]
                fresh = self._touch(present, j)
                dst = adj + self.woff[j] * n
                if self.transpose[i]:
                    # y = x @ W : xbar += a @ W.T ; Wbar += x.T @ a
                    gemm_rm(0, 1, n, rows, cols, 1.0, a, cols, wmat, cols,
                            0.0 if fresh else 1.0, dst)
                    gemm_rm(1, 0, rows, cols, n, 1.0, xbuf, rows, a, cols, 1.0,
                            pgrad + self.w_off[li])
                else:
                    # y = x @ W.T (+ b) : xbar += a @ W ; Wbar += a.T @ x
                    gemm_rm(0, 0, n, cols, rows, 1.0, a, rows, wmat, cols,
                            0.0 if fresh else 1.0, dst)
                    gemm_rm(1, 0, rows, cols, n, 1.0, a, rows, xbuf, cols, 1.0,
                            pgrad + self.w_off[li])
                    if self.use_bias[i]:
                        dst = pgrad + self.b_off[li]
                        for r in range(n):
                            for jj in range(rows):
                                dst[jj] += a[r * rows + jj]
            elif op == OP_CONST_LINEAR:
                fresh = self._touch(present, j)
                gemm_rm(0, 0, n, n_in, w, 1.0, a, w,
                        &self.const_pool[0] + self.amat_off[i], n_in,
                        0.0 if fresh else 1.0, adj + self.woff[j] * n)
            elif op == OP_ACT:
                if c_has_d1v(self.act[i]):
                    # derivative from the node's own output values
                    self._acc_ew(present, adj, n, j, a, ws + self.woff[i] * n,
                                 size, 3, self.act[i])
                else:
                    self._acc_ew(present, adj, n, j, a, xbuf, size, 1, self.act[i])
            elif op == OP_ACT_D1:
                self._acc_ew(present, adj, n, j, a, xbuf, size, 2, self.act[i])
            elif op == OP_ACT_D1V:
                self._acc_ew(present, adj, n, j, a, xbuf, size, 4, self.act[i])
            elif op == OP_ADD:
                self._acc_copy(present, adj, n, j, a, size, 1.0)
                self._acc_copy(present, adj, n, self.in2[i], a, size, 1.0)
            elif op == OP_MUL:
                self._acc_mul(present, adj, n, j, a, ws + self.woff[self.in2[i]] * n, size)
                self._acc_mul(present, adj, n, self.in2[i], a, xbuf, size)
            elif op == OP_NEG:
                self._acc_copy(present, adj, n, j, a, size, -1.0)
            elif op == OP_SCALE:
                self._acc_copy(present, adj, n, j, a, size, self.scale[i])
            elif op == OP_SUM:
                fresh = self._touch(present, j)
                dst = adj + self.woff[j] * n
                if fresh:
                    for r in range(n):
                        for jj in range(n_in):
                            dst[r * n_in + jj] = a[r]
                else:
                    for r in range(n):
                        for jj in range(n_in):
                            dst[r * n_in + jj] += a[r]
        return -1

    cdef inline bint _touch(self, signed char* present, int j) noexcept nogil:
        if present[j]:
            return 0
        present[j] = 1
        return 1

    cdef inline void _acc_copy(self, signed char* present, double* adj, int n,
                               int j, double* a, long long size, double s) noexcept nogil:
        cdef double* dst = adj + self.woff[j] * n
        cdef long long k
        if self._touch(present, j):
            for k in range(size):
                dst[k] = s * a[k]
        else:
            for k in range(size):
                dst[k] += s * a[k]

    cdef inline void _acc_mul(self, signed char* present, double* adj, int n,
                              int j, double* a, double* other, long long size) noexcept nogil:
        cdef double* dst = adj + self.woff[j] * n
        cdef long long k
        if self._touch(present, j):
            for k in range(size):
                dst[k] = a[k] * other[k]
        else:
            for k in range(size):
                dst[k] += a[k] * other[k]

    cdef inline void _acc_ew(self, signed char* present, double* adj, int n,
                             int j, double* a, double* xbuf, long long size,
                             int order, int kind) noexcept nogil:
        # order: 1 = d1(input), 2 = d2(input), 3 = d1 from value, 4 = d(d1v)/dv
        cdef double* dst = adj + self.woff[j] * n
        cdef bint fresh = self._touch(present, j)
        cdef long long k
        cdef double d
        for k in range(size):
            if order == 1:
                d = c_d1(kind, xbuf[k])
            elif order == 2:
                d = c_d2(kind, xbuf[k])
            elif order == 3:
                d = c_d1v(kind, xbuf[k])
            else:
                d = c_d1v_deriv(kind, xbuf[k])
            if fresh:
                dst[k] = a[k] * d
            else:
                dst[k] += a[k] * d
