"""Expression-graph engine: exact jets of scalar fields and loss gradients.

Fields over (x, t) are immutable expression graphs. A forward pass carries the
value and the partials u_x, u_t, u_xx, u_xt, u_xxx through every node,
vectorized over evaluation points; a reverse pass over the same jet
computation yields exact gradients of scalar losses with respect to
registered parameter slots.

Only the six multi-indices above are supported; requests outside that set are
rejected. Evaluation is deterministic: reductions run in fixed order, so two
evaluations of the same graph at the same parameters are bit-identical.
Graphs are safe to share across threads after construction; each evaluation
owns its workspace.
"""

from __future__ import annotations

import itertools
import math
from collections.abc import Mapping
from typing import Iterable, Sequence

import numpy as np

SUPPORTED_INDICES: tuple[tuple[int, int], ...] = (
    (0, 0), (1, 0), (0, 1), (2, 0), (1, 1), (3, 0))
IDX = {mi: k for k, mi in enumerate(SUPPORTED_INDICES)}

# row numbers inside a jet block
K00, K10, K01, K20, K11, K30 = range(6)


class UnsupportedIndexError(ValueError):
    """Raised for derivative requests outside the supported multi-index set."""


class NonFiniteError(ArithmeticError):
    """Raised eagerly when a node evaluates to a non-finite value."""


def check_index(index) -> tuple[int, int]:
    mi = (int(index[0]), int(index[1]))
    if mi not in IDX:
        raise UnsupportedIndexError(
            f"multi-index {mi} not in supported set {SUPPORTED_INDICES}")
    return mi


class Jet(Mapping):
    """Value and partial derivatives of a scalar field at a point.

    Entries map (x-order, t-order) to floats or to arrays (one value per
    evaluation point). The (0,0) entry must be present and all entries finite.
    """

    __slots__ = ("entries",)

    def __init__(self, entries: Mapping):
        ent = {}
        for mi, v in entries.items():
            ent[check_index(mi)] = v
        if (0, 0) not in ent:
            raise ValueError("jet must contain the (0,0) entry")
        for mi, v in ent.items():
            if not np.all(np.isfinite(v)):
                raise NonFiniteError(f"non-finite jet entry at {mi}")
        self.entries = ent

    def __getitem__(self, mi):
        return self.entries[check_index(mi)]

    def __iter__(self):
        return iter(self.entries)

    def __len__(self):
        return len(self.entries)

    def __repr__(self):
        return f"Jet({self.entries!r})"


class ComplexJet:
    """Real/imaginary jet pair sharing one multi-index set."""

    __slots__ = ("re", "im")

    def __init__(self, re: Jet, im: Jet):
        if set(re.entries) != set(im.entries):
            raise ValueError("re and im must share the same multi-index set")
        self.re = re
        self.im = im

    def __repr__(self):
        return f"ComplexJet(re={self.re!r}, im={self.im!r})"


class Params:
    """Registry of trainable parameter slots backed by one flat float64 vector."""

    def __init__(self):
        self.values = np.zeros(0, dtype=np.float64)
        self.names: list[str] = []

    @property
    def n(self) -> int:
        return self.values.size

    def add(self, name: str, init: float = 0.0) -> int:
        slot = self.values.size
        self.values = np.append(self.values, float(init))
        self.names.append(name)
        return slot

    def add_block(self, name: str, array: np.ndarray) -> int:
        arr = np.asarray(array, dtype=np.float64).ravel()
        start = self.values.size
        self.values = np.concatenate([self.values, arr])
        self.names.extend(f"{name}[{i}]" for i in range(arr.size))
        return start

    def get_block(self, start: int, shape: tuple[int, ...]) -> np.ndarray:
        size = int(np.prod(shape))
        return self.values[start:start + size].reshape(shape)


_ids = itertools.count()

_UNARY_KINDS = frozenset(
    {"tanh", "sin", "cos", "sinh", "cosh", "exp", "recip", "atan", "powi"})
_MAX_POW = 4


class Expr:
    """One node of an immutable expression graph.

    Node kinds: input x/t, constant, parameter slot, per-point data, unary and
    binary ops, affine layers over vector-valued children, jet-entry
    extraction (``deriv``) and mean reduction over points. Nodes downstream of
    ``deriv`` or per-point data carry values only ("value-only"); asking such
    an expression for derivative entries is an unsupported-index error.
    """

    __slots__ = ("id", "kind", "children", "width", "full", "const", "slot",
                 "store", "data", "index", "power", "w_start", "w_shape",
                 "b_start", "_plan")

    def __init__(self, kind, children=(), *, width=1, full=True, const=None,
                 slot=None, store=None, data=None, index=None, power=None,
                 w_start=None, w_shape=None, b_start=None):
        self.id = next(_ids)
        self.kind = kind
        self.children = tuple(children)
        self.width = width
        self.full = full
        self.const = const
        self.slot = slot
        self.store = store
        self.data = data
        self.index = index
        self.power = power
        self.w_start = w_start
        self.w_shape = w_shape
        self.b_start = b_start
        self._plan = None

    # -- construction sugar ------------------------------------------------

    @staticmethod
    def _wrap(v) -> "Expr":
        if isinstance(v, Expr):
            return v
        return const(v)

    def _binary(self, kind, other, swap=False):
        other = Expr._wrap(other)
        a, b = (other, self) if swap else (self, other)
        return Expr(kind, (a, b), width=max(a.width, b.width),
                    full=a.full and b.full)

    def __add__(self, other):
        return self._binary("add", other)

    __radd__ = __add__

    def __sub__(self, other):
        return self._binary("sub", other)

    def __rsub__(self, other):
        return self._binary("sub", other, swap=True)

    def __mul__(self, other):
        return self._binary("mul", other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return self * recip(Expr._wrap(other))

    def __rtruediv__(self, other):
        return Expr._wrap(other) * recip(self)

    def __neg__(self):
        return Expr("neg", (self,), width=self.width, full=self.full)

    def __pow__(self, n):
        if not isinstance(n, int) or not 1 <= n <= _MAX_POW:
            raise ValueError(f"only integer powers 1..{_MAX_POW} are supported")
        if n == 1:
            return self
        return Expr("powi", (self,), width=self.width, full=self.full, power=n)

    def _unary(self, kind):
        return Expr(kind, (self,), width=self.width, full=self.full)


def x_input() -> Expr:
    return Expr("x")


def t_input() -> Expr:
    return Expr("t")


def const(c: float) -> Expr:
    return Expr("const", const=float(c))


def param(store: Params, slot: int) -> Expr:
    if not 0 <= slot < store.n:
        raise ValueError(f"parameter slot {slot} is not registered")
    return Expr("param", slot=slot, store=store)


def point_data(values: np.ndarray) -> Expr:
    """Per-point constants (sampled data); value-only by construction."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 1:
        raise ValueError("point data must be a 1-D array")
    return Expr("pointdata", data=arr, full=False)


def stack(exprs: Sequence[Expr]) -> Expr:
    exprs = tuple(exprs)
    if any(e.width != 1 for e in exprs):
        raise ValueError("stack expects scalar children")
    return Expr("stack", exprs, width=len(exprs),
                full=all(e.full for e in exprs))


def take(e: Expr, i: int) -> Expr:
    if not 0 <= i < e.width:
        raise ValueError(f"take index {i} out of range for width {e.width}")
    return Expr("take", (e,), index=i, full=e.full)


def affine(e: Expr, store: Params, w_start: int, w_shape: tuple[int, int],
           b_start: int) -> Expr:
    """W @ e + b with W, b read from contiguous parameter-store blocks."""
    if w_shape[1] != e.width:
        raise ValueError("affine fan-in must match child width")
    return Expr("affine", (e,), width=w_shape[0], full=e.full, store=store,
                w_start=w_start, w_shape=tuple(w_shape), b_start=b_start)


def deriv(e: Expr, index) -> Expr:
    """Extract one jet entry of e as a value-only expression."""
    mi = check_index(index)
    if not e.full and mi != (0, 0):
        raise UnsupportedIndexError(
            "derivative entries are unavailable downstream of deriv/point data")
    return Expr("deriv", (e,), width=e.width, full=False, index=IDX[mi])


def mean(e: Expr) -> Expr:
    """Mean of e's value over the evaluation points (scalar result)."""
    if e.width != 1:
        raise ValueError("mean expects a scalar child")
    return Expr("mean", (e,), full=False)


# type-dispatched math usable on Expr, floats and arrays alike
def sin(z):
    return z._unary("sin") if isinstance(z, Expr) else np.sin(z)


def cos(z):
    return z._unary("cos") if isinstance(z, Expr) else np.cos(z)


def tanh(z):
    return z._unary("tanh") if isinstance(z, Expr) else np.tanh(z)


def sinh(z):
    return z._unary("sinh") if isinstance(z, Expr) else np.sinh(z)


def cosh(z):
    return z._unary("cosh") if isinstance(z, Expr) else np.cosh(z)


def exp(z):
    return z._unary("exp") if isinstance(z, Expr) else np.exp(z)


def atan(z):
    return z._unary("atan") if isinstance(z, Expr) else np.arctan(z)


def recip(z):
    return z._unary("recip") if isinstance(z, Expr) else 1.0 / z


def sech(z):
    return recip(cosh(z))


# -- unary derivative tables -------------------------------------------------

def _unary_derivs(kind: str, u: np.ndarray, power, upto: int) -> list:
    """[phi(u), phi'(u), ..., phi^(upto)(u)]."""
    if kind == "tanh":
        y = np.tanh(u)
        s = 1.0 - y * y
        out = [y, s, -2.0 * y * s, s * (6.0 * y * y - 2.0),
               8.0 * y * s * (2.0 - 3.0 * y * y)]
    elif kind == "sin":
        sn, cn = np.sin(u), np.cos(u)
        out = [sn, cn, -sn, -cn, sn]
    elif kind == "cos":
        sn, cn = np.sin(u), np.cos(u)
        out = [cn, -sn, -cn, sn, cn]
    elif kind == "sinh":
        sh, ch = np.sinh(u), np.cosh(u)
        out = [sh, ch, sh, ch, sh]
    elif kind == "cosh":
        sh, ch = np.sinh(u), np.cosh(u)
        out = [ch, sh, ch, sh, ch]
    elif kind == "exp":
        e = np.exp(u)
        out = [e, e, e, e, e]
    elif kind == "recip":
        r = 1.0 / u
        r2 = r * r
        out = [r, -r2, 2.0 * r2 * r, -6.0 * r2 * r2, 24.0 * r2 * r2 * r]
    elif kind == "atan":
        w = 1.0 / (1.0 + u * u)
        w2 = w * w
        out = [np.arctan(u), w, -2.0 * u * w2, (6.0 * u * u - 2.0) * w2 * w,
               24.0 * u * (1.0 - u * u) * w2 * w2]
    elif kind == "powi":
        n = power
        out = [u ** n]
        coef = 1.0
        for k in range(1, 5):
            if k > n:
                out.append(np.zeros_like(u))
            else:
                coef *= n - k + 1
                out.append(coef * u ** (n - k) if n - k > 0
                           else np.full_like(u, coef))
    else:  # pragma: no cover
        raise ValueError(f"unknown unary kind {kind}")
    return out[:upto + 1]


# -- forward / backward kernels ----------------------------------------------

def _mul_forward(A, B):
    if A.shape[0] == 1 or B.shape[0] == 1:
        return A[:1] * B[:1]
    h = [A[K00] * B[K00],
         A[K10] * B[K00] + A[K00] * B[K10],
         A[K01] * B[K00] + A[K00] * B[K01],
         A[K20] * B[K00] + 2.0 * A[K10] * B[K10] + A[K00] * B[K20],
         A[K11] * B[K00] + A[K10] * B[K01] + A[K01] * B[K10] + A[K00] * B[K11],
         A[K30] * B[K00] + 3.0 * A[K20] * B[K10] + 3.0 * A[K10] * B[K20]
         + A[K00] * B[K30]]
    return np.stack(h)


def _mul_backward(H, A, B):
    """Adjoints of C = A*B w.r.t. A given output adjoint H (full jets)."""
    g = np.empty(np.broadcast_shapes(H.shape, B.shape))
    g[K00] = (H[K00] * B[K00] + H[K10] * B[K10] + H[K01] * B[K01]
              + H[K20] * B[K20] + H[K11] * B[K11] + H[K30] * B[K30])
    g[K10] = (H[K10] * B[K00] + 2.0 * H[K20] * B[K10] + H[K11] * B[K01]
              + 3.0 * H[K30] * B[K20])
    g[K01] = H[K01] * B[K00] + H[K11] * B[K10]
    g[K20] = H[K20] * B[K00] + 3.0 * H[K30] * B[K10]
    g[K11] = H[K11] * B[K00]
    g[K30] = H[K30] * B[K00]
    return g


def _unary_forward(kind, U, power):
    if U.shape[0] == 1:
        return _unary_derivs(kind, U[0], power, 0)[0][None]
    d = _unary_derivs(kind, U[K00], power, 3)
    u1, u2, u3, u4, u5 = U[K10], U[K01], U[K20], U[K11], U[K30]
    h = [d[0],
         d[1] * u1,
         d[1] * u2,
         d[2] * u1 * u1 + d[1] * u3,
         d[2] * u1 * u2 + d[1] * u4,
         d[3] * u1 ** 3 + 3.0 * d[2] * u1 * u3 + d[1] * u5]
    return np.stack(h)


def _unary_backward(kind, H, U, power):
    if H.shape[0] == 1:
        d = _unary_derivs(kind, U[0], power, 1)
        return H * d[1]
    d = _unary_derivs(kind, U[K00], power, 4)
    u1, u2, u3, u4, u5 = U[K10], U[K01], U[K20], U[K11], U[K30]
    g = np.empty(np.broadcast_shapes(H.shape, U.shape))
    g[K00] = (H[K00] * d[1] + H[K10] * d[2] * u1 + H[K01] * d[2] * u2
              + H[K20] * (d[3] * u1 * u1 + d[2] * u3)
              + H[K11] * (d[3] * u1 * u2 + d[2] * u4)
              + H[K30] * (d[4] * u1 ** 3 + 3.0 * d[3] * u1 * u3 + d[2] * u5))
    g[K10] = (H[K10] * d[1] + 2.0 * H[K20] * d[2] * u1 + H[K11] * d[2] * u2
              + H[K30] * (3.0 * d[3] * u1 * u1 + 3.0 * d[2] * u3))
    g[K01] = H[K01] * d[1] + H[K11] * d[2] * u1
    g[K20] = H[K20] * d[1] + 3.0 * H[K30] * d[2] * u1
    g[K11] = H[K11] * d[1]
    g[K30] = H[K30] * d[1]
    return g


def _unbroadcast(arr: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum arr over broadcast axes so it matches shape."""
    if arr.shape == shape:
        return arr
    for ax in range(arr.ndim):
        if shape[ax] == 1 and arr.shape[ax] != 1:
            arr = arr.sum(axis=ax, keepdims=True)
    return arr


class Evaluator:
    """Compiled forward/backward passes over the union graph of some roots.

    The node list is fixed at construction; parameter values are read from the
    owning store at every call, so one evaluator serves a whole training run.
    """

    def __init__(self, roots: Sequence[Expr]):
        self.roots = tuple(roots)
        nodes: dict[int, Expr] = {}
        order: list[Expr] = []

        def visit(e: Expr):
            if e.id in nodes:
                return
            for c in e.children:
                visit(c)
            nodes[e.id] = e
            order.append(e)

        for r in self.roots:
            visit(r)
        order.sort(key=lambda e: e.id)
        self.nodes = order
        stores = {id(e.store): e.store for e in order if e.store is not None}
        if len(stores) > 1:
            raise ValueError("graph references more than one parameter store")
        self.store = next(iter(stores.values())) if stores else None
        for e in order:
            if e.kind == "param" and not 0 <= e.slot < e.store.n:
                raise ValueError(f"parameter slot {e.slot} is not registered")
        self.n_evals = 0

    def forward(self, xs=None, ts=None, sel=None) -> dict[int, np.ndarray]:
        """sel optionally restricts per-point data nodes to a subset of rows
        (mini-batching); xs/ts must already be sliced accordingly."""
        if xs is None:
            xs = np.zeros(1)
        xs = np.atleast_1d(np.asarray(xs, dtype=np.float64))
        ts = np.zeros_like(xs) if ts is None else np.atleast_1d(
            np.asarray(ts, dtype=np.float64))
        if xs.shape != ts.shape:
            raise ValueError("xs and ts must have the same length")
        n = xs.size
        ws: dict[int, np.ndarray] = {}
        for e in self.nodes:
            k = e.kind
            if k == "x":
                J = np.zeros((6, 1, n))
                J[K00, 0] = xs
                J[K10, 0] = 1.0
            elif k == "t":
                J = np.zeros((6, 1, n))
                J[K00, 0] = ts
                J[K01, 0] = 1.0
            elif k == "const":
                J = np.zeros((6, 1, 1))
                J[K00, 0, 0] = e.const
            elif k == "param":
                J = np.zeros((6, 1, 1))
                J[K00, 0, 0] = e.store.values[e.slot]
            elif k == "pointdata":
                data = e.data if sel is None else e.data[sel]
                if data.size != n:
                    raise ValueError(
                        f"point data of length {data.size} evaluated at {n} points")
                J = data[None, None, :]
            elif k == "add":
                A, B = ws[e.children[0].id], ws[e.children[1].id]
                kk = min(A.shape[0], B.shape[0])
                J = A[:kk] + B[:kk]
            elif k == "sub":
                A, B = ws[e.children[0].id], ws[e.children[1].id]
                kk = min(A.shape[0], B.shape[0])
                J = A[:kk] - B[:kk]
            elif k == "mul":
                J = _mul_forward(ws[e.children[0].id], ws[e.children[1].id])
            elif k == "neg":
                J = -ws[e.children[0].id]
            elif k in _UNARY_KINDS:
                J = _unary_forward(k, ws[e.children[0].id], e.power)
            elif k == "stack":
                cs = [ws[c.id] for c in e.children]
                kk = min(c.shape[0] for c in cs)
                J = np.empty((kk, e.width, n))
                for i, c in enumerate(cs):
                    J[:, i, :] = np.broadcast_to(c[:kk, 0, :], (kk, n))
            elif k == "take":
                A = ws[e.children[0].id]
                J = A[:, e.index:e.index + 1, :]
            elif k == "affine":
                A = ws[e.children[0].id]
                W = e.store.get_block(e.w_start, e.w_shape)
                b = e.store.get_block(e.b_start, (e.w_shape[0],))
                J = W @ A
                J[0] = J[0] + b[:, None]
            elif k == "deriv":
                A = ws[e.children[0].id]
                J = A[e.index:e.index + 1]
            elif k == "mean":
                A = ws[e.children[0].id]
                J = np.full((1, 1, 1), A[0].mean())
            else:  # pragma: no cover
                raise ValueError(f"unknown node kind {k}")
            if not np.all(np.isfinite(J)):
                raise NonFiniteError(
                    f"non-finite value at node {e.id} ({e.kind})")
            ws[e.id] = J
        self.n_evals += 1
        return ws

    def backward(self, ws: dict[int, np.ndarray],
                 seeds: Mapping[int, np.ndarray]) -> np.ndarray:
        """Reverse pass; returns d(seeded outputs)/d(store values)."""
        grad = np.zeros(self.store.n if self.store is not None else 0)
        adj: dict[int, np.ndarray] = {}

        def acc(node: Expr, contrib: np.ndarray):
            J = ws[node.id]
            kk = contrib.shape[0]
            if node.id not in adj:
                adj[node.id] = np.zeros_like(J)
            target = adj[node.id]
            target[:kk] += _unbroadcast(contrib, target[:kk].shape)

        for e in reversed(self.nodes):
            if e.id in seeds:
                acc(e, np.asarray(seeds[e.id]))
            H = adj.get(e.id)
            if H is None:
                continue
            k = e.kind
            if k in ("x", "t", "const", "pointdata"):
                continue
            if k == "param":
                grad[e.slot] += H[K00].sum()
            elif k in ("add", "sub"):
                a, b = e.children
                acc(a, H)
                acc(b, -H if k == "sub" else H)
            elif k == "mul":
                a, b = e.children
                A, B = ws[a.id], ws[b.id]
                if H.shape[0] == 1:
                    acc(a, H * B[:1])
                    acc(b, H * A[:1])
                else:
                    acc(a, _mul_backward(H, A, B))
                    acc(b, _mul_backward(H, B, A))
            elif k == "neg":
                acc(e.children[0], -H)
            elif k in _UNARY_KINDS:
                acc(e.children[0],
                    _unary_backward(k, H, ws[e.children[0].id], e.power))
            elif k == "stack":
                kk = H.shape[0]
                for i, c in enumerate(e.children):
                    acc(c, H[:kk, i:i + 1, :])
            elif k == "take":
                A = ws[e.children[0].id]
                contrib = np.zeros((H.shape[0],) + A.shape[1:])
                contrib[:, e.index, :] = H[:, 0, :]
                acc(e.children[0], contrib)
            elif k == "affine":
                A = ws[e.children[0].id]
                W = e.store.get_block(e.w_start, e.w_shape)
                acc(e.children[0], np.swapaxes(W, 0, 1) @ H)
                gw = np.einsum("kon,kin->oi", H, np.broadcast_to(
                    A, (H.shape[0],) + A.shape[1:]))
                grad[e.w_start:e.w_start + gw.size] += gw.ravel()
                grad[e.b_start:e.b_start + e.w_shape[0]] += H[0].sum(axis=-1)
            elif k == "deriv":
                A = ws[e.children[0].id]
                contrib = np.zeros((A.shape[0],) + np.broadcast_shapes(
                    A.shape[1:], H.shape[1:]))
                contrib[e.index] = H[0]
                acc(e.children[0], contrib)
            elif k == "mean":
                A = ws[e.children[0].id]
                npts = A.shape[-1]
                acc(e.children[0],
                    np.full((1,) + A.shape[1:], H[0, 0, 0] / npts))
            else:  # pragma: no cover
                raise ValueError(f"unknown node kind {k}")
        return grad


def _plan(expr: Expr) -> Evaluator:
    if expr._plan is None:
        expr._plan = Evaluator([expr])
    return expr._plan


def eval_values(expr: Expr, xs, ts) -> np.ndarray:
    """Values of a scalar expression at many points."""
    ws = _plan(expr).forward(xs, ts)
    out = ws[expr.id][K00]
    return np.broadcast_to(out, (out.shape[0], np.atleast_1d(xs).size))[0]

def eval_jet_arrays(expr: Expr, xs, ts) -> dict[tuple[int, int], np.ndarray]:
    """All six jet entries of a full scalar expression, per point."""
    if not expr.full:
        raise UnsupportedIndexError(
            "expression is value-only; derivative entries unavailable")
    if expr.width != 1:
        raise ValueError("jets are defined for scalar expressions")
    ws = _plan(expr).forward(xs, ts)
    J = ws[expr.id]
    n = np.atleast_1d(xs).size
    return {mi: np.array(np.broadcast_to(J[k, 0], (n,)))
            for mi, k in IDX.items()}


def eval_jet(expr: Expr, point, orders: Iterable = None) -> Jet:
    """Exact partial derivatives of expr at one point.

    orders defaults to the full supported set; every requested order must be
    supported (and (0,0) is always included).
    """
    if orders is None:
        orders = SUPPORTED_INDICES if expr.full else [(0, 0)]
    orders = {check_index(mi) for mi in orders} | {(0, 0)}
    if not expr.full and orders != {(0, 0)}:
        raise UnsupportedIndexError(
            "expression is value-only; derivative entries unavailable")
    x, t = point
    if expr.full:
        arrs = eval_jet_arrays(expr, [x], [t])
        return Jet({mi: float(arrs[mi][0]) for mi in orders})
    ws = _plan(expr).forward([x], [t])
    return Jet({(0, 0): float(ws[expr.id][0, 0, 0])})


def grad_params(loss: Expr, slots: Sequence[int] = None,
                xs=None, ts=None) -> np.ndarray:
    """d loss / d parameter-slot, exact, for a scalar loss expression.

    Differentiates through jet-entry extractions (deriv nodes) inside the
    loss. Points default to the single point (0,0) for losses without x/t
    inputs.
    """
    ev = _plan(loss)
    if loss.width != 1:
        raise ValueError("loss must be scalar-valued")
    ws = ev.forward(xs, ts)
    val = ws[loss.id]
    if val.shape[-1] != 1 or val.shape[1] != 1:
        raise ValueError("loss must reduce to a single scalar (use mean)")
    seed = np.zeros((1, 1, 1))
    seed[0, 0, 0] = 1.0
    grad = ev.backward(ws, {loss.id: seed})
    if not np.all(np.isfinite(grad)):
        raise NonFiniteError("non-finite gradient component")
    if slots is None:
        return grad
    return grad[np.asarray(slots, dtype=int)]


def value_and_grad(ev: Evaluator, loss: Expr, xs, ts, sel=None):
    """(loss value, full-store gradient) in one forward+reverse pass."""
    ws = ev.forward(xs, ts, sel=sel)
    seed = np.zeros((1, 1, 1))
    seed[0, 0, 0] = 1.0
    grad = ev.backward(ws, {loss.id: seed})
    return float(ws[loss.id][0, 0, 0]), grad, ws


def _stencil(offsets: Sequence[int], order: int) -> np.ndarray:
    """Finite-difference weights on integer offsets for a given derivative."""
    o = np.asarray(offsets, dtype=np.float64)
    m = o.size
    A = np.vander(o, m, increasing=True).T
    rhs = np.zeros(m)
    rhs[order] = math.factorial(order)
    return np.linalg.solve(A, rhs)


def fd_derivative(f, point, index, step: float, stencil_order: int = 2) -> float:
    """Central finite differences of f(x,t) for one supported multi-index.

    f is called with arrays of points; stencil_order 2 or 4 picks the accuracy
    of the underlying central stencils.
    """
    dx, dt = check_index(index)
    x0, t0 = point
    h = float(step)
    if h <= 0:
        raise ValueError("step must be positive")

    def offsets(order):
        if order == 0:
            return np.array([0])
        half = (order + 1) // 2 + (1 if stencil_order == 4 else 0)
        return np.arange(-half, half + 1)

    ox, ot = offsets(dx), offsets(dt)
    wx = _stencil(ox, dx) / h ** dx
    wt = _stencil(ot, dt) / h ** dt
    X = x0 + h * np.repeat(ox, ot.size)
    T = t0 + h * np.tile(ot, ox.size)
    vals = np.asarray(f(X, T), dtype=np.float64)
    w = np.outer(wx, wt).ravel()
    return float(w @ vals)


def check_derivative(expr: Expr, point, index, step: float,
                     stencil_order: int = 2):
    """(ad_value, fd_value, rel_err) for one jet entry against central FD."""
    mi = check_index(index)
    ad = eval_jet(expr, point, [mi])[mi]
    fd = fd_derivative(lambda X, T: eval_values(expr, X, T), point, mi, step,
                       stencil_order)
    rel = abs(ad - fd) / max(1.0, abs(fd))
    return ad, fd, rel
