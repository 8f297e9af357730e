"""Routed attention with rotary position coding on the score vectors.

A small set of learned routing tokens sits between queries and keys: keys
are summarized into one value per route, and each query then mixes those
summaries. Both hops are plain softmax attention, so the cost is linear in
the number of tokens instead of quadratic. Relative position enters through
block-diagonal rotations of the per-token score vectors: the query-side
vector at position m turns by m*theta, the key-side vector at position n by
n*theta, and the composed bilinear form depends on positions only through
m - n. Softmax attention and a kernelized linear variant are provided as
drop-in baselines, and a scalar-loop oracle pins down the routed semantics.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .numerics import ShapeError, Tensor, concat, elu1, matmul, silu, softmax


@dataclass(frozen=True)
class RoRAConfig:
    d_model: int
    heads: int
    routes: int
    rotary_enabled: bool = True
    gate_enabled: bool = True
    skip_enabled: bool = True
    rotary_base: float = 10000.0

    def __post_init__(self):
        if self.d_model % self.heads != 0:
            raise ValueError(
                f"token width {self.d_model} is not divisible by {self.heads} heads"
            )
        if self.routes < 1:
            raise ValueError(f"need at least one route, got {self.routes}")
        if self.rotary_base <= 0:
            raise ValueError(f"rotary base must be positive, got {self.rotary_base}")

    @property
    def head_dim(self):
        return self.d_model // self.heads


@dataclass
class RoRAWeights:
    """Projection set for one routed-attention layer; no bias terms anywhere."""

    w_query: Tensor  # d_model x d_model
    w_key: Tensor  # d_model x d_model
    w_value: Tensor  # d_model x d_model
    w_gate: Tensor  # d_model x d_model
    routing_tokens: Tensor  # routes x d_model
    route_proj: Tensor  # heads x d_model x head_dim
    skip_proj: Tensor  # heads x head_dim x head_dim
    w_out: Tensor  # d_model x d_model


@dataclass(frozen=True)
class RotaryAngles:
    theta: np.ndarray  # floor(routes/2) angles, strictly decreasing in (0, 1]


def make_rotary_angles(routes, base=10000.0):
    k = routes // 2
    theta = np.array([base ** (-2.0 * i / routes) for i in range(k)])
    if k > 0 and (theta[0] > 1.0 or theta[-1] <= 0.0 or np.any(np.diff(theta) >= 0)):
        raise ValueError(f"degenerate rotary angle schedule for base {base}")
    return RotaryAngles(theta=theta)


def rotary_rotate(scores, angles):
    """Rotate row m of (..., M, r) scores by the block-diagonal rotation m*theta.

    Adjacent coordinate pairs (0,1), (2,3), ... form the rotation planes; an
    odd trailing coordinate passes through. The backward pass is the inverse
    rotation, since each block is orthogonal.
    """
    x = scores if isinstance(scores, Tensor) else Tensor(scores)
    m_len = x.shape[-2]
    k = angles.theta.size
    if k == 0:
        return x
    ang = np.arange(m_len)[:, None] * angles.theta[None, :]
    c = np.cos(ang)
    s = np.sin(ang)
    even = x.data[..., 0 : 2 * k : 2]
    odd = x.data[..., 1 : 2 * k : 2]
    out = x.data.copy()
    out[..., 0 : 2 * k : 2] = even * c - odd * s
    out[..., 1 : 2 * k : 2] = even * s + odd * c
    t = Tensor(out, parents=(x,))

    def _backward(g):
        ge = g[..., 0 : 2 * k : 2]
        go = g[..., 1 : 2 * k : 2]
        gx = g.copy()
        gx[..., 0 : 2 * k : 2] = ge * c + go * s
        gx[..., 1 : 2 * k : 2] = -ge * s + go * c
        x._accumulate(gx)

    t._backward = _backward
    return t


def _swap_last(t):
    axes = list(range(t.ndim))
    axes[-2], axes[-1] = axes[-1], axes[-2]
    return t.transpose(axes)


def route_scores_qr(q_head, r_head, cfg):
    """Each token's softmax distribution over routes, rotary-rotated by row."""
    scores = matmul(q_head, _swap_last(r_head)) * (1.0 / math.sqrt(q_head.shape[-1]))
    attn = softmax(scores, axis=-1)
    if cfg.rotary_enabled:
        attn = rotary_rotate(attn, make_rotary_angles(cfg.routes, cfg.rotary_base))
    return attn


def route_scores_rk(k_head, r_head, cfg):
    """Each route's softmax distribution over tokens; column n rotated by n*theta."""
    scores = matmul(r_head, _swap_last(k_head)) * (1.0 / math.sqrt(k_head.shape[-1]))
    attn = softmax(scores, axis=-1)
    if cfg.rotary_enabled:
        angles = make_rotary_angles(cfg.routes, cfg.rotary_base)
        attn = _swap_last(rotary_rotate(_swap_last(attn), angles))
    return attn


def rora_forward(tokens, w, cfg):
    """Two-hop routed attention over (..., M, d_model) tokens.

    Keys and values are first summarized into one vector per route, queries
    then attend over the routes, so no M x M product is ever formed. The
    optional skip path adds a per-head linear image of the values, the
    optional gate multiplies the merged heads elementwise before the output
    projection.
    """
    x = tokens if isinstance(tokens, Tensor) else Tensor(tokens)
    if x.shape[-1] != cfg.d_model:
        raise ShapeError(
            f"token width {x.shape[-1]} does not match configured width {cfg.d_model}"
        )
    d_h = cfg.head_dim
    q = matmul(x, w.w_query)
    k = matmul(x, w.w_key)
    v = matmul(x, w.w_value)
    head_outputs = []
    for h in range(cfg.heads):
        cols = slice(h * d_h, (h + 1) * d_h)
        q_h = q[..., cols]
        k_h = k[..., cols]
        v_h = v[..., cols]
        r_h = matmul(w.routing_tokens, w.route_proj[h])
        routed_values = matmul(route_scores_rk(k_h, r_h, cfg), v_h)
        out_h = matmul(route_scores_qr(q_h, r_h, cfg), routed_values)
        if cfg.skip_enabled:
            out_h = out_h + matmul(v_h, w.skip_proj[h])
        head_outputs.append(out_h)
    merged = concat(head_outputs, axis=-1)
    if cfg.gate_enabled:
        merged = merged * silu(matmul(x, w.w_gate))
    return matmul(merged, w.w_out)


def rora_naive_oracle(tokens, w, cfg):
    """Same semantics as rora_forward in deliberate scalar loops.

    Nothing here is vectorized or shared with the fast path; this is the
    reference the equivalence tests compare against.
    """
    x = tokens.data if isinstance(tokens, Tensor) else np.asarray(tokens, dtype=float)
    if x.ndim != 2:
        raise ShapeError(f"oracle handles a single M x d_model matrix, got {x.shape}")
    M, D = x.shape
    if D != cfg.d_model:
        raise ShapeError(f"token width {D} does not match configured width {cfg.d_model}")
    H, r = cfg.heads, cfg.routes
    d_h = D // H
    scale = 1.0 / math.sqrt(d_h)
    theta = [cfg.rotary_base ** (-2.0 * i / r) for i in range(r // 2)]

    def raw(mat):
        return mat.data if isinstance(mat, Tensor) else np.asarray(mat, dtype=float)

    def cell(mat, i, j):
        return float(raw(mat)[i, j])

    def rotate_in_place(vec, position):
        for i, th in enumerate(theta):
            a, b = vec[2 * i], vec[2 * i + 1]
            cth = math.cos(position * th)
            sth = math.sin(position * th)
            vec[2 * i] = a * cth - b * sth
            vec[2 * i + 1] = a * sth + b * cth

    def softmax_list(vals):
        top = max(vals)
        exps = [math.exp(val - top) for val in vals]
        total = sum(exps)
        return [e / total for e in exps]

    merged = [[0.0] * D for _ in range(M)]
    for h in range(H):
        off = h * d_h
        q_h = [[sum(x[m][t] * cell(w.w_query, t, off + c) for t in range(D)) for c in range(d_h)] for m in range(M)]
        k_h = [[sum(x[m][t] * cell(w.w_key, t, off + c) for t in range(D)) for c in range(d_h)] for m in range(M)]
        v_h = [[sum(x[m][t] * cell(w.w_value, t, off + c) for t in range(D)) for c in range(d_h)] for m in range(M)]
        r_h = [
            [
                sum(cell(w.routing_tokens, i, t) * float(raw(w.route_proj)[h, t, c]) for t in range(D))
                for c in range(d_h)
            ]
            for i in range(r)
        ]
        a_rk = []
        for i in range(r):
            a_rk.append(softmax_list([sum(r_h[i][c] * k_h[n][c] for c in range(d_h)) * scale for n in range(M)]))
        if cfg.rotary_enabled:
            for n in range(M):
                col = [a_rk[i][n] for i in range(r)]
                rotate_in_place(col, n)
                for i in range(r):
                    a_rk[i][n] = col[i]
        routed = [[sum(a_rk[i][n] * v_h[n][c] for n in range(M)) for c in range(d_h)] for i in range(r)]
        for m in range(M):
            row = softmax_list([sum(q_h[m][c] * r_h[i][c] for c in range(d_h)) * scale for i in range(r)])
            if cfg.rotary_enabled:
                rotate_in_place(row, m)
            for c in range(d_h):
                val = sum(row[i] * routed[i][c] for i in range(r))
                if cfg.skip_enabled:
                    val += sum(v_h[m][c2] * float(raw(w.skip_proj)[h, c2, c]) for c2 in range(d_h))
                merged[m][off + c] = val
    out = [[0.0] * D for _ in range(M)]
    for m in range(M):
        if cfg.gate_enabled:
            for t in range(D):
                pre = sum(x[m][tt] * cell(w.w_gate, tt, t) for tt in range(D))
                merged[m][t] *= pre / (1.0 + math.exp(-pre))
        for dcol in range(D):
            out[m][dcol] = sum(merged[m][t] * cell(w.w_out, t, dcol) for t in range(D))
    return np.array(out)


def softmax_attention(q, k, v):
    """Dense pairwise attention: softmax(QK^T / sqrt(d)) V."""
    q = q if isinstance(q, Tensor) else Tensor(q)
    k = k if isinstance(k, Tensor) else Tensor(k)
    v = v if isinstance(v, Tensor) else Tensor(v)
    if q.shape[-1] != k.shape[-1] or k.shape[-2] != v.shape[-2]:
        raise ShapeError(f"attention shapes disagree: {q.shape}, {k.shape}, {v.shape}")
    scores = matmul(q, _swap_last(k)) * (1.0 / math.sqrt(q.shape[-1]))
    return matmul(softmax(scores, axis=-1), v)


def linear_attention(q, k, v):
    """Kernelized attention with the strictly positive feature map elu(x) + 1.

    The key-value product is associated the other way, (phi(K)^T V) first, so
    the cost is linear in the token count.
    """
    q = q if isinstance(q, Tensor) else Tensor(q)
    k = k if isinstance(k, Tensor) else Tensor(k)
    v = v if isinstance(v, Tensor) else Tensor(v)
    if q.shape[-1] != k.shape[-1] or k.shape[-2] != v.shape[-2]:
        raise ShapeError(f"attention shapes disagree: {q.shape}, {k.shape}, {v.shape}")
    phi_q = elu1(q)
    phi_k = elu1(k)
    kv = matmul(_swap_last(phi_k), v)
    denom = matmul(phi_q, _swap_last(phi_k.sum(axis=-2, keepdims=True)))
    return matmul(phi_q, kv) / denom
