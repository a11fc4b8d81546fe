"""Logistic-attention transformer primitives and the explicit weights that run ISTA in context.

Hidden-state rows (0-based, D = d + 2n + 7):

    x      0 .. d-1            ones  d            y     d+1         w   d+2
    phi    d+3 .. d+n+3        rho   d+n+4 .. d+2n+4
    lambda d+2n+5              y_hat d+2n+6 = D-1

Column j < N holds prompt example j; column N holds the query.
"""
from __future__ import annotations

import functools
import json
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse

from . import kernels
from .errors import (
    BarronICLError,
    ColumnInconsistency,
    InvalidDepth,
    NonPositiveTau,
    ShapeMismatch,
    TraceMissing,
    ValidationError,
)
from .features import FeatureBank, check_ball
from .lasso import LassoProblem

BLOCK_TAGS = ("Attn0FF0", "Attn1FF1", "Attn2FF2")
BROADCAST_TOL = 1e-12
_EPS = float(np.finfo(np.float64).eps)


@dataclass(frozen=True)
class Layout:
    d: int
    n: int

    def __post_init__(self):
        if self.d < 1 or self.n < 1:
            raise ValidationError("layout needs d >= 1 and n >= 1")

    @property
    def D(self):
        return self.d + 2 * self.n + 7

    @property
    def x(self):
        return slice(0, self.d)

    @property
    def ones(self):
        return self.d

    @property
    def y(self):
        return self.d + 1

    @property
    def w(self):
        return self.d + 2

    @property
    def phi(self):
        return slice(self.d + 3, self.d + self.n + 4)

    @property
    def rho(self):
        return slice(self.d + self.n + 4, self.d + 2 * self.n + 5)

    @property
    def lam(self):
        return self.d + 2 * self.n + 5

    @property
    def y_hat(self):
        return self.d + 2 * self.n + 6

    def slabs(self):
        """Row ranges [start, stop) of every slab."""
        def rng(s):
            return [s.start, s.stop] if isinstance(s, slice) else [s, s + 1]

        return {name: rng(getattr(self, name)) for name in ("x", "ones", "y", "w", "phi", "rho", "lam", "y_hat")}

    def slab_of(self, row):
        for name, (lo, hi) in self.slabs().items():
            if lo <= row < hi:
                return name
        raise ShapeMismatch(f"row {row} outside the layout")

    @classmethod
    def from_D(cls, D, d):
        n, rem = divmod(D - d - 7, 2)
        if rem or n < 1:
            raise ShapeMismatch(f"D={D} is not d + 2n + 7 for d={d}")
        return cls(d, n)


@dataclass(frozen=True, eq=False)
class HiddenState:
    matrix: np.ndarray
    layout: Layout

    def __post_init__(self):
        m = np.array(self.matrix, dtype=np.float64)
        if m.ndim != 2 or m.shape[0] != self.layout.D or m.shape[1] < 2:
            raise ShapeMismatch(f"state must be {self.layout.D} x (N+1) with N >= 1, got {m.shape}")
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    @property
    def N(self):
        return self.matrix.shape[1] - 1

    def __getattr__(self, name):
        if name in ("x", "ones", "y", "w", "phi", "rho", "lam", "y_hat"):
            return self.matrix[getattr(self.layout, name)]
        raise AttributeError(name)


# ---------------------------------------------------------------------------
# heads and layers


def _span(mask):
    """Smallest slice covering the True entries (empty slice when there are none)."""
    idx = np.flatnonzero(mask)
    return slice(int(idx[0]), int(idx[-1]) + 1) if idx.size else slice(0, 0)


def _empty(s):
    return s.stop <= s.start


@dataclass(frozen=True, eq=False)
class AttentionHead:
    Q: np.ndarray
    K: np.ndarray
    V: np.ndarray

    def __post_init__(self):
        mats = [np.array(m, dtype=np.float64) for m in (self.Q, self.K, self.V)]
        D = mats[0].shape[0]
        for m in mats:
            if m.shape != (D, D):
                raise ShapeMismatch("Q, K, V must be square and of equal size")
            m.setflags(write=False)
        object.__setattr__(self, "Q", mats[0])
        object.__setattr__(self, "K", mats[1])
        object.__setattr__(self, "V", mats[2])

    @property
    def D(self):
        return self.V.shape[0]

    @functools.cached_property
    def _plan(self):
        # Work on contiguous row ranges so slab reads are views; rows padded in
        # by a range only ever receive exact zeros.
        v_rows = _span(np.any(self.V != 0, axis=1))
        v_cols = _span(np.any(self.V != 0, axis=0))
        score = _span(np.any(self.Q != 0, axis=1) & np.any(self.K != 0, axis=1))
        q_cols = _span(np.any(self.Q[score] != 0, axis=0))
        k_cols = _span(np.any(self.K[score] != 0, axis=0))
        V = self.V[v_rows, v_cols]
        return {
            "v_rows": v_rows,
            "v_cols": v_cols,
            "V": sparse.csr_array(V),
            # one entry per row: V only rescales selected rows, so (VH)s = V(Hs) to rounding
            "V_select": bool(np.all(np.count_nonzero(V, axis=1) <= 1)),
            "score": score,
            "q_cols": q_cols,
            "k_cols": k_cols,
            "Q": self.Q[score, q_cols],
            "K": self.K[score, k_cols],
        }

    def contribution(self, G):
        """This head's output for a stacked state G of shape (D, B, M), restricted to its output rows.

        Returns (rows, varying, offset). ``rows`` is a slice; ``varying`` has
        shape (rows, B, M) or (rows, B) and ``offset`` has shape (rows, B) or is
        None. The offset is the logistic(0) = 1/2 share of the output, kept apart
        so heads with opposite value matrices cancel it exactly.
        """
        plan = self._plan
        rows = plan["v_rows"]
        _, B, M = G.shape
        N = M - 1
        if _empty(rows):
            return rows, np.zeros((0, B)), None
        Hv = G[plan["v_cols"]]
        V = plan["V"]
        select = plan["V_select"]

        def apply_v(X):
            shape = X.shape
            return (V @ X.reshape(shape[0], -1)).reshape((-1,) + shape[1:])

        VH = None if select else apply_v(Hv)
        if _empty(plan["score"]):
            # every score is 0, so every logistic weight is exactly 1/2
            total = apply_v(Hv.sum(axis=2)) if select else VH.sum(axis=2)
            return rows, np.zeros_like(total), 0.5 * total / N
        Hk = G[plan["k_cols"]]
        Hq = G[plan["q_cols"]]
        if np.array_equal(Hk[:, :, 1:], np.broadcast_to(Hk[:, :, :1], (Hk.shape[0], B, M - 1))):
            # keys identical across columns: one score per value column, and
            # logistic(s) is split as 1/2 + tanh(s/2)/2 so tiny scores keep full precision
            key = plan["K"] @ Hk[:, :, 0]
            scores = np.einsum("cbm,cb->bm", Hq, plan["Q"].T @ key)
            dev = 0.5 * np.tanh(0.5 * scores)
            if select:
                varying = apply_v(np.einsum("cbm,bm->cb", Hv, dev))
                offset = 0.5 * apply_v(Hv.sum(axis=2))
            else:
                varying = np.einsum("rbm,bm->rb", VH, dev)
                offset = 0.5 * VH.sum(axis=2)
            return rows, varying / N, offset / N
        if VH is None:
            VH = apply_v(Hv)
        out = np.empty((VH.shape[0], B, M))
        for b in range(B):
            out[:, b, :] = kernels.logistic_attention(
                VH[:, b, :], plan["Q"] @ Hq[:, b, :], plan["K"] @ Hk[:, b, :]
            ) / N
        return rows, out, None


@dataclass(frozen=True, eq=False)
class LayerWeights:
    heads: tuple
    U: np.ndarray
    W: np.ndarray
    block_tag: str

    def __post_init__(self):
        if self.block_tag not in BLOCK_TAGS:
            raise ValidationError(f"unknown block tag {self.block_tag!r}")
        U = np.array(self.U, dtype=np.float64)
        W = np.array(self.W, dtype=np.float64)
        if U.ndim != 2 or U.shape != W.shape or U.shape[0] != U.shape[1]:
            raise ShapeMismatch("U and W must be square and of equal size")
        heads = tuple(self.heads)
        if len(heads) > 4:
            raise ValidationError("at most four heads per layer")
        for h in heads:
            if h.D != U.shape[0]:
                raise ShapeMismatch("head size differs from feed-forward size")
        U.setflags(write=False)
        W.setflags(write=False)
        object.__setattr__(self, "heads", heads)
        object.__setattr__(self, "U", U)
        object.__setattr__(self, "W", W)

    @property
    def D(self):
        return self.U.shape[0]

    @functools.cached_property
    def _ff_plan(self):
        live = np.any(self.W != 0, axis=1) & np.any(self.U != 0, axis=0)
        hidden = np.flatnonzero(live)
        w_cols = _span(np.any(self.W[hidden] != 0, axis=0))
        u_rows = _span(np.any(self.U[:, hidden] != 0, axis=1))
        return {
            "w_cols": w_cols,
            "u_rows": u_rows,
            "W": sparse.csr_array(self.W[hidden][:, w_cols]),
            "U": sparse.csr_array(self.U[u_rows][:, hidden]),
        }


@dataclass(frozen=True, eq=False)
class TransformerWeights:
    layers: tuple
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        layers = tuple(self.layers)
        if len(layers) % 2 == 0:
            raise InvalidDepth("depth must be odd")
        object.__setattr__(self, "layers", layers)

    @property
    def L(self):
        return len(self.layers)

    @property
    def layout(self):
        return Layout(self.meta["d"], self.meta["n"])

    def to_dict(self):
        """Sparse-triplet JSON form. Repeated blocks are stored once and referenced by index."""
        distinct, index = [], []
        for layer in self.layers:
            for k, seen in enumerate(distinct):
                if seen is layer:
                    index.append(k)
                    break
            else:
                distinct.append(layer)
                index.append(len(distinct) - 1)
        meta = dict(self.meta)
        if isinstance(meta.get("bank"), FeatureBank):
            meta["bank"] = meta["bank"].to_dict()
        if "d" in meta and "n" in meta:
            meta["slabs"] = Layout(meta["d"], meta["n"]).slabs()
        return {
            "D": self.layers[0].D,
            "meta": meta,
            "blocks": [_layer_to_dict(layer) for layer in distinct],
            "layers": index,
        }

    @classmethod
    def from_dict(cls, data):
        try:
            D = int(data["D"])
            blocks = [_layer_from_dict(b, D) for b in data["blocks"]]
            meta = dict(data.get("meta", {}))
            meta.pop("slabs", None)
            if isinstance(meta.get("bank"), dict):
                meta["bank"] = FeatureBank.from_dict(meta["bank"])
            return cls(tuple(blocks[i] for i in data["layers"]), meta)
        except (KeyError, TypeError, IndexError) as exc:
            raise ValidationError(f"malformed weights: {exc}") from exc


def _triplets(M):
    r, c = np.nonzero(M)
    return [[int(i), int(j), float(M[i, j])] for i, j in zip(r, c)]


def _from_triplets(trip, D):
    M = np.zeros((D, D))
    for i, j, v in trip:
        M[int(i), int(j)] = float(v)
    return M


def _layer_to_dict(layer):
    return {
        "block_tag": layer.block_tag,
        "heads": [{k: _triplets(getattr(h, k)) for k in ("Q", "K", "V")} for h in layer.heads],
        "U": _triplets(layer.U),
        "W": _triplets(layer.W),
    }


def _layer_from_dict(data, D):
    heads = tuple(
        AttentionHead(*(_from_triplets(h[k], D) for k in ("Q", "K", "V"))) for h in data["heads"]
    )
    return LayerWeights(heads, _from_triplets(data["U"], D), _from_triplets(data["W"], D), data["block_tag"])


# ---------------------------------------------------------------------------
# primitives (dense reference forms)


def _check_pair(H, M, what):
    H = np.asarray(H, dtype=np.float64)
    if H.ndim != 2 or H.shape[0] != M.shape[1]:
        raise ShapeMismatch(f"{what}: state has shape {H.shape}, weights expect {M.shape[1]} rows")
    if H.shape[1] < 2:
        raise ShapeMismatch(f"{what}: need at least two columns (N >= 1)")
    return H


def attention_op(H, head):
    """(1/N) V H logistic((Q H)^T K H) with N = columns - 1."""
    H = _check_pair(_as_matrix(H), head.V, "attention")
    N = H.shape[1] - 1
    return kernels.logistic_attention(head.V @ H, head.Q @ H, head.K @ H) / N


def attention_layer(H, heads):
    H = _as_matrix(H)
    out = np.array(H, dtype=np.float64)
    for head in heads:
        out += attention_op(H, head)
    return out


def ff_layer(H, U, W):
    """H + U relu(W H)."""
    U = np.asarray(U, dtype=np.float64)
    W = np.asarray(W, dtype=np.float64)
    if U.shape != W.shape:
        raise ShapeMismatch("U and W shapes differ")
    H = _check_pair(_as_matrix(H), W, "feed-forward")
    return H + U @ np.maximum(W @ H, 0.0)


def _as_matrix(H):
    return H.matrix if isinstance(H, HiddenState) else np.asarray(H, dtype=np.float64)


# ---------------------------------------------------------------------------
# prompt encoding


def init_hidden(prompt_x, prompt_y, x_query, n):
    """Initial state: x columns, ones row, labels with a zero for the query, w = (1, ..., 1, 0)."""
    X = np.atleast_2d(np.asarray(prompt_x, dtype=np.float64))
    y = np.asarray(prompt_y, dtype=np.float64).ravel()
    xq = np.asarray(x_query, dtype=np.float64).ravel()
    N, d = X.shape
    if y.shape[0] != N:
        raise ShapeMismatch("one label per prompt input is required")
    if xq.shape[0] != d:
        raise ShapeMismatch("query dimension differs from prompt dimension")
    check_ball(X)
    check_ball(xq)
    lay = Layout(d, n)
    H = np.zeros((lay.D, N + 1))
    H[lay.x, :N] = X.T
    H[lay.x, N] = xq
    H[lay.ones] = 1.0
    H[lay.y, :N] = y
    H[lay.w, :N] = 1.0
    return HiddenState(H, lay)


def init_hidden_batch(prompt_x, prompt_y, queries, n):
    """Stacked initial states, shape (B, D, N+1), one per query row."""
    Q = np.atleast_2d(np.asarray(queries, dtype=np.float64))
    base = init_hidden(prompt_x, prompt_y, Q[0], n).matrix
    check_ball(Q)
    lay = Layout(Q.shape[1], n)
    out = np.repeat(base[None], Q.shape[0], axis=0)
    out[:, lay.x, -1] = Q
    return out


# ---------------------------------------------------------------------------
# construction


def build_icl_transformer(bank, L, lambda_bar, tau, eta, N):
    """Weights whose forward pass runs (L-1)/2 inexact ISTA steps on the prompt.

    ``bank.tau`` is the feature sharpness used by the first feed-forward layer;
    ``tau`` is the attention sharpness. The prediction head carries a factor N
    so that the 1/N attention normalization leaves a single query term.
    """
    if int(L) != L or L < 1 or L % 2 == 0:
        raise InvalidDepth(f"depth must be odd, got {L}")
    if not tau > 0:
        raise NonPositiveTau(f"attention sharpness must be positive, got {tau}")
    if not lambda_bar >= 0:
        raise ValidationError("lambda_bar must be >= 0")
    if not eta > 0:
        raise ValidationError("eta must be positive")
    if int(N) != N or N < 1:
        raise ValidationError("N must be a positive integer")
    d, n = bank.d, bank.n
    lay = Layout(d, n)
    first = _build_ff0(bank, lay, lambda_bar)
    layers = [first]
    if L > 1:
        gd = _build_attn1_ff1(lay, tau, eta)
        pred = _build_attn2_ff2(lay, tau, N)
        layers += [gd, pred] * ((L - 1) // 2)
    for layer in {id(l): l for l in layers}.values():
        _self_check(layer, lay)
    meta = {
        "d": d,
        "n": n,
        "N": int(N),
        "tau": float(tau),
        "tau_ff": bank.tau,
        "eta": float(eta),
        "lambda_bar": float(lambda_bar),
        "bank": bank,
    }
    return TransformerWeights(tuple(layers), meta)


def _build_ff0(bank, lay, lambda_bar):
    D, n, d = lay.D, lay.n, lay.d
    W = np.zeros((D, D))
    U = np.zeros((D, D))
    scaled = bank.tau * bank.unit_omegas
    offset = -bank.t * bank.tau
    W[0:n, lay.x] = scaled
    W[0:n, lay.ones] = offset + 0.5
    W[n, lay.ones] = 1.0
    W[n + 1 : 2 * n + 1, lay.x] = scaled
    W[n + 1 : 2 * n + 1, lay.ones] = offset - 0.5
    W[2 * n + 1, lay.ones] = -1.0
    W[2 * n + 2, lay.ones] = lambda_bar
    phi0 = lay.phi.start
    for k in range(n + 1):
        U[phi0 + k, k] = 1.0
        U[phi0 + k, n + 1 + k] = -1.0
    U[lay.lam, 2 * n + 2] = 1.0
    return LayerWeights((), U, W, "Attn0FF0")


def _build_attn1_ff1(lay, tau, eta):
    D, n = lay.D, lay.n
    p = n + 1
    rho0 = lay.rho.start
    V1 = np.zeros((D, D))
    V1[lay.rho, lay.phi] = 8.0 * tau * np.eye(p)
    Z = np.zeros((D, D))

    Q1 = np.zeros((D, D))
    Q1[0, lay.y] = eta / tau
    K1 = np.zeros((D, D))
    K1[0, lay.ones] = 1.0

    Q2 = np.zeros((D, D))
    Q2[0:p, lay.phi] = (eta / tau) * np.eye(p)
    K2 = np.zeros((D, D))
    K2[0:p, lay.rho] = np.eye(p)

    Q3 = np.zeros((D, D))
    Q3[0, lay.ones] = eta / tau
    Q3[0, lay.w] = -eta / tau
    K3 = np.zeros((D, D))
    K3[0, lay.y_hat] = 1.0

    heads = (
        AttentionHead(Q1, K1, V1),
        AttentionHead(Q2, K2, -V1),
        AttentionHead(Q3, K3, V1),
        # constant-score head removing the net logistic(0) offset left by the three above
        AttentionHead(Z, Z, -V1),
    )

    W = np.zeros((D, D))
    U = np.zeros((D, D))
    for k in range(p):
        W[k, rho0 + k] = 1.0
        W[k, lay.lam] = eta
        W[p + k, rho0 + k] = 1.0
        W[p + k, lay.lam] = -eta
        U[rho0 + k, k] = -1.0
        U[rho0 + k, p + k] = 1.0
        U[rho0 + k, 2 * p] = 1.0
    W[2 * p, lay.lam] = eta
    W[2 * p + 1, lay.y_hat] = 1.0
    W[2 * p + 2, lay.y_hat] = -1.0
    U[lay.y_hat, 2 * p + 1] = -1.0
    U[lay.y_hat, 2 * p + 2] = 1.0
    return LayerWeights(heads, U, W, "Attn1FF1")


def _build_attn2_ff2(lay, tau, N):
    D, p = lay.D, lay.n + 1
    V1 = np.zeros((D, D))
    V1[lay.y_hat, lay.ones] = 4.0 * tau * N
    V1[lay.y_hat, lay.w] = -4.0 * tau * N
    Q1 = np.zeros((D, D))
    Q1[0:p, lay.phi] = np.eye(p) / tau
    K1 = np.zeros((D, D))
    K1[0:p, lay.rho] = np.eye(p)
    Z = np.zeros((D, D))
    heads = (AttentionHead(Q1, K1, V1), AttentionHead(Z, Z, -V1))
    return LayerWeights(heads, Z, Z, "Attn2FF2")


_ALLOWED = {
    "Attn0FF0": {"W_cols": {"x", "ones"}, "U_rows": {"phi", "lam"}},
    "Attn1FF1": {
        "V_rows": {"rho"},
        "V_cols": {"phi"},
        "Q_cols": {"y", "ones", "w", "phi"},
        "K_cols": {"ones", "rho", "y_hat"},
        "W_cols": {"rho", "lam", "y_hat"},
        "U_rows": {"rho", "y_hat"},
    },
    "Attn2FF2": {"V_rows": {"y_hat"}, "V_cols": {"ones", "w"}, "Q_cols": {"phi"}, "K_cols": {"rho"}},
}


def _self_check(layer, lay):
    """Every nonzero entry must sit in a slab the block is documented to touch."""
    allowed = _ALLOWED[layer.block_tag]

    def check(M, axis, key):
        idx = np.flatnonzero(np.any(M != 0, axis=1 - axis))
        bad = {lay.slab_of(int(i)) for i in idx} - allowed.get(key, set())
        if bad:
            raise BarronICLError(f"{layer.block_tag}: {key} touches unexpected slabs {sorted(bad)}")

    for h in layer.heads:
        check(h.V, 0, "V_rows")
        check(h.V, 1, "V_cols")
        check(h.Q, 1, "Q_cols")
        check(h.K, 1, "K_cols")
    check(layer.W, 1, "W_cols")
    check(layer.U, 0, "U_rows")


# ---------------------------------------------------------------------------
# forward pass


def _attn_structured(G, layer):
    # Sum the heads per output range: offsets first (they cancel exactly between
    # heads with opposite value matrices), then the small varying parts.
    groups = {}
    for rows, varying, offset in (h.contribution(G) for h in layer.heads):
        if _empty(rows):
            continue
        acc = groups.setdefault((rows.start, rows.stop), {"offset": None, "varying": []})
        if offset is not None:
            acc["offset"] = offset if acc["offset"] is None else acc["offset"] + offset
        acc["varying"].append(varying)
    for (lo, hi), acc in groups.items():
        total = acc["offset"]
        for part in acc["varying"]:
            if total is None:
                total = part
            elif part.ndim > total.ndim:
                total = total[:, :, None] + part
            else:
                total = total + (part if part.ndim == total.ndim else part[:, :, None])
        G[lo:hi] += total[:, :, None] if total.ndim == 2 else total


def _ff_structured(G, layer):
    plan = layer._ff_plan
    if _empty(plan["u_rows"]):
        return
    _, B, M = G.shape
    src = G[plan["w_cols"]]
    hidden = plan["W"] @ src.reshape(src.shape[0], B * M)
    np.maximum(hidden, 0.0, out=hidden)
    G[plan["u_rows"]] += (plan["U"] @ hidden).reshape(-1, B, M)


def _attn_dense(G, layer):
    for b in range(G.shape[1]):
        G[:, b, :] = attention_layer(G[:, b, :], layer.heads)


def _ff_dense(G, layer):
    for b in range(G.shape[1]):
        G[:, b, :] = ff_layer(G[:, b, :], layer.U, layer.W)


def forward(weights, H0, trace=False, callback=None, dense=False):
    """Run all layers. Returns (H_L, trace) where trace[k] is the state after k half-layers.

    H0 may be a HiddenState, a (D, N+1) array, or a stacked (B, D, N+1) array
    (batch mode; tracing is then unavailable). ``callback(k, state)`` is called
    for every half-layer state of a single episode, which lets traces stream to
    disk. ``dense=True`` evaluates every layer through the dense reference
    primitives instead of the sparsity-aware path.
    """
    layout = weights.layout
    wrap = isinstance(H0, HiddenState)
    arr = _as_matrix(H0)
    batched = arr.ndim == 3
    if not batched:
        if arr.ndim != 2:
            raise ShapeMismatch("state must be 2-D or a stacked 3-D batch")
        arr = arr[None]
    if arr.shape[1] != layout.D or arr.shape[2] < 2:
        raise ShapeMismatch(f"state rows {arr.shape[1]} differ from D = {layout.D}")
    if batched and (trace or callback):
        raise ValidationError("tracing is only available for a single episode")
    G = np.array(np.moveaxis(arr, 0, 1), dtype=np.float64, order="C")
    attn, ff = (_attn_dense, _ff_dense) if dense else (_attn_structured, _ff_structured)

    states = []

    def emit(k):
        if trace or callback:
            st = HiddenState(G[:, 0, :].copy(), layout)
            if trace:
                states.append(st)
            if callback:
                callback(k, st)

    emit(0)
    for l, layer in enumerate(weights.layers, start=1):
        attn(G, layer)
        emit(2 * l - 1)
        ff(G, layer)
        emit(2 * l)
    out = np.moveaxis(G, 1, 0)
    if not batched:
        out = out[0]
        if wrap:
            out = HiddenState(out, layout)
    return out, (states if trace else None)


def readout(H):
    """Prediction: the bottom-right entry (one value per episode in batch mode)."""
    arr = _as_matrix(H)
    return float(arr[-1, -1]) if arr.ndim == 2 else arr[:, -1, -1].copy()


def extract_state(H, layout=None):
    """(rho, y_hat, lambda, phi_matrix) after checking the broadcast rows agree across columns."""
    if isinstance(H, HiddenState):
        layout, arr = H.layout, H.matrix
    else:
        arr = np.asarray(H, dtype=np.float64)
        if layout is None:
            raise ValidationError("layout is required for a raw matrix")
    for name in ("rho", "lam", "y_hat"):
        block = np.atleast_2d(arr[getattr(layout, name)])
        spread = np.abs(block - block[:, :1])
        scale = np.maximum(1.0, np.abs(block[:, :1]))
        if np.any(spread > BROADCAST_TOL * scale):
            raise ColumnInconsistency(f"{name} row(s) differ across columns by {spread.max():.3g}")
    return (
        arr[layout.rho, 0].copy(),
        float(arr[layout.y_hat, 0]),
        float(arr[layout.lam, 0]),
        arr[layout.phi].copy(),
    )


def problem_from_state(H, eta, lam):
    """The Lasso instance encoded in a state (features from the phi slab, labels from the y row)."""
    _, _, _, phi = extract_state(H)
    y = H.matrix[H.layout.y, :-1]
    return LassoProblem(phi[:, :-1].T, y, lam, eta)


# ---------------------------------------------------------------------------
# emulation certification


@dataclass(frozen=True)
class StepGap:
    """Measured gaps against their bounds for one block.

    The bounds hold in exact arithmetic; the ``*_roundoff`` terms are the
    float64 forward-error allowance of evaluating the compared quantities.
    """

    t: int
    e_inf: float
    e_bound: float
    y_hat_gap: float
    y_hat_bound: float
    e_roundoff: float = 0.0
    y_hat_roundoff: float = 0.0

    @property
    def e_ok(self):
        return self.e_inf <= self.e_bound + self.e_roundoff

    @property
    def y_hat_ok(self):
        return self.y_hat_gap <= self.y_hat_bound + self.y_hat_roundoff


@dataclass(frozen=True)
class EmulationReport:
    steps: tuple
    tau: float
    residuals: np.ndarray  # (T, p), row t-1 holds e_t

    @property
    def max_e(self):
        return max((s.e_inf for s in self.steps), default=0.0)

    @property
    def all_ok(self):
        return all(s.e_ok and s.y_hat_ok for s in self.steps)

    def rows(self):
        return [
            {
                "t": s.t,
                "e_inf": s.e_inf,
                "e_bound": s.e_bound,
                "e_ok": s.e_ok,
                "y_hat_gap": s.y_hat_gap,
                "y_hat_bound": s.y_hat_bound,
                "y_hat_ok": s.y_hat_ok,
                "e_roundoff": s.e_roundoff,
                "y_hat_roundoff": s.y_hat_roundoff,
            }
            for s in self.steps
        ]


def emulation_gap(layer_trace, problem, eta, lambda_bar, tau):
    """Per block t: e_t = rho^(2t+1) - exact step from rho^(2t-1), and the prediction gap, with explicit bounds.

    ``layer_trace[k]`` is the state after k half-layers, so H^(l) is ``layer_trace[2l]``.
    """
    if not layer_trace:
        raise TraceMissing("no trace recorded; run forward with trace=True")
    if (len(layer_trace) - 1) % 2:
        raise TraceMissing("trace length does not match whole layers")
    L = (len(layer_trace) - 1) // 2
    T = (L - 1) // 2
    N = problem.N
    Phi, y = problem.Phi, problem.y
    kappa = eta * lambda_bar
    coef = 4.0 * eta**2 / (N * tau)
    steps, residuals = [], np.zeros((T, problem.p))
    for t in range(1, T + 1):
        before = layer_trace[2 * (2 * t - 1)]
        after = layer_trace[2 * (2 * t + 1)]
        rho_prev, yhat_prev, _, phi_prev = extract_state(before)
        rho_next, yhat_next, _, phi_next = extract_state(after)
        grad_step = (2.0 * eta / N) * (Phi.T @ (y - Phi @ rho_prev))
        exact = kernels.soft_threshold(rho_prev + grad_step, kappa)
        e = rho_next - exact
        residuals[t - 1] = e
        inner = phi_prev.T @ rho_prev
        bound = (
            coef * float(before.y[:-1] @ before.y[:-1])
            + coef * float(inner @ inner)
            + coef * yhat_prev**2
            + (2.0 * eta / N) * abs(yhat_prev - inner[-1])
        )
        pred = float(phi_next[:, -1] @ rho_next)
        e_round = (N + problem.p + 4) * _EPS * float(np.max(np.abs(rho_prev) + np.abs(grad_step)) + kappa)
        steps.append(
            StepGap(
                t,
                float(np.abs(e).max()),
                bound,
                abs(yhat_next - pred),
                2.0 * pred**2 / tau,
                e_round,
                dot_roundoff(phi_next[:, -1], rho_next),
            )
        )
    residuals.setflags(write=False)
    return EmulationReport(tuple(steps), float(tau), residuals)


def dot_roundoff(a, b):
    """Forward-error allowance for a float64 dot product of a and b, computed two ways."""
    return 2.0 * (len(a) + 2) * _EPS * float(np.abs(a) @ np.abs(b))


def readout_gap(H_L):
    """(|readout - phi_query . rho|, |rho|_1) for a final state."""
    rho, _, _, phi = extract_state(H_L)
    return abs(readout(H_L) - float(phi[:, -1] @ rho)), float(np.abs(rho).sum())


def readout_check(H_L, tau):
    """(gap, bound 2 |rho|_1^2 / tau, roundoff allowance, ok) for a final state."""
    rho, _, _, phi = extract_state(H_L)
    gap, l1 = readout_gap(H_L)
    bound = 2.0 * l1**2 / tau
    allowance = dot_roundoff(phi[:, -1], rho)
    return gap, bound, allowance, gap <= bound + allowance


# ---------------------------------------------------------------------------
# trace streaming


def write_trace_jsonl(states, fh, start=0):
    """One JSON object per state: index k, half-layer k/2, and the sparse nonzero triplets."""
    for k, st in enumerate(states, start=start):
        fh.write(json.dumps(_state_record(k, st)) + "\n")


def _state_record(k, st):
    m = st.matrix
    return {
        "index": k,
        "half_layer": k / 2,
        "d": st.layout.d,
        "n": st.layout.n,
        "shape": list(m.shape),
        "entries": _triplets(m),
    }


def trace_streamer(fh):
    """Callback for :func:`forward` that writes each state as it is produced."""

    def cb(k, st):
        fh.write(json.dumps(_state_record(k, st)) + "\n")

    return cb


def read_trace_jsonl(fh):
    out = []
    for line in fh:
        if not line.strip():
            continue
        rec = json.loads(line)
        M = np.zeros(rec["shape"])
        for i, j, v in rec["entries"]:
            M[i, j] = v
        out.append(HiddenState(M, Layout(rec["d"], rec["n"])))
    return out
