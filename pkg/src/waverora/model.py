"""Forecasting model: normalize, decompose, embed, mix, predict, reconstruct.

The input window is normalized per variable, decomposed into J+1 wavelet
components, and each component is embedded into D dimensions. Concatenating
the levels gives one token per variable, which N routed-attention layers mix
across the variable axis. Per-level heads then predict the coefficients of
the forecast horizon, the inverse transform returns to the time domain, and
the stored normalization statistics are applied in reverse.

Level blocks inside a token are ordered finest high-pass first, then coarser
high-pass levels, with the low-pass tail last. Checkpoints depend on this
ordering, as does the per-level normalization in the encoder.
"""

from __future__ import annotations

import json
import math
import struct
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field

import numpy as np

from .attention import (
    RoRAConfig,
    RoRAWeights,
    linear_attention,
    rora_forward,
    softmax_attention,
)
from .numerics import (
    Parameter,
    RngState,
    ShapeError,
    Tensor,
    concat,
    dropout,
    gelu,
    matmul,
)
from .wavelet import (
    CoefficientPyramid,
    dwt,
    idwt,
    length_schedule,
    make_filter_bank,
)

_NORM_EPS = 1e-5
_CHECKPOINT_MAGIC = b"WRR1"

ATTENTION_KINDS = ("rora", "softmax", "linear")
LOSS_DOMAINS = ("time", "coefficient")


class CheckpointError(ValueError):
    """Checkpoint file malformed or incompatible with this build."""


def auto_routes(m):
    """Route count rule min(10, (ln M + sqrt(M)) / 2), floored, at least 2."""
    if m < 1:
        raise ValueError(f"variable count must be at least 1, got {m}")
    return max(2, int(math.floor(min(10.0, (math.log(m) + math.sqrt(m)) / 2.0))))


@dataclass(frozen=True)
class ModelConfig:
    lookback: int
    horizon: int
    variables: int
    levels: int = 4
    embed_dim: int = 64
    encoder_layers: int = 2
    heads: int = 8
    routes: int = 0  # 0 applies the auto rule to the variable count
    basis: str = "sym3"
    dropout: float = 0.1
    rotary_enabled: bool = True
    gate_enabled: bool = True
    skip_enabled: bool = True
    attention_kind: str = "rora"
    loss_domain: str = "time"
    outer_residual: bool = False

    def __post_init__(self):
        fb = make_filter_bank(self.basis)
        length_schedule(self.lookback, fb.S, self.levels)
        length_schedule(self.horizon, fb.S, self.levels)
        if self.token_width % self.heads != 0:
            raise ValueError(
                f"token width (levels+1)*embed_dim = {self.token_width} is not "
                f"divisible by {self.heads} heads"
            )
        if self.attention_kind not in ATTENTION_KINDS:
            raise ValueError(
                f"attention kind {self.attention_kind!r} not one of {ATTENTION_KINDS}"
            )
        if self.loss_domain not in LOSS_DOMAINS:
            raise ValueError(f"loss domain {self.loss_domain!r} not one of {LOSS_DOMAINS}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout rate must be in [0, 1), got {self.dropout}")

    @property
    def token_width(self):
        return (self.levels + 1) * self.embed_dim

    @property
    def effective_routes(self):
        return self.routes if self.routes >= 1 else auto_routes(self.variables)


@dataclass
class InstanceNormState:
    mu: np.ndarray  # (..., 1, M) per-variable mean of the input window
    sigma: np.ndarray  # (..., 1, M) per-variable std, floored away from zero


def instance_normalize(x):
    """Center and scale each variable over the time axis; stats are detached."""
    t = x if isinstance(x, Tensor) else Tensor(x)
    if t.shape[-2] < 2:
        raise ShapeError(f"normalization needs at least 2 time steps, got {t.shape}")
    mu = t.data.mean(axis=-2, keepdims=True)
    sigma = np.sqrt(t.data.var(axis=-2, keepdims=True) + _NORM_EPS)
    state = InstanceNormState(mu=mu, sigma=sigma)
    return (t - Tensor(mu)) / Tensor(sigma), state


def instance_denormalize(y, state):
    t = y if isinstance(y, Tensor) else Tensor(y)
    return t * Tensor(state.sigma) + Tensor(state.mu)


@dataclass
class EncoderLayer:
    attn: RoRAWeights
    norm_scales: list  # one (D,) parameter per wavelet level
    norm_shifts: list


@dataclass
class WaveRoRAModel:
    config: ModelConfig
    embed: list  # (weight (D, L_j), bias (D,)) per level
    encoders: list  # EncoderLayer per encoder block
    predictors: list  # (weight (H_j, D), bias (H_j,)) per level
    rora: RoRAConfig | None
    params: list = field(default_factory=list)

    def parameters(self):
        return list(self.params)


def _level_lengths(schedule):
    # finest high-pass ... coarsest high-pass, then the low-pass tail
    return list(schedule.per_level) + [schedule.per_level[-1]]


def build_model(config, seed=0):
    """Allocate and initialize all parameters from a single seeded stream.

    Affine maps draw uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)); routing tokens
    draw normal(0, 0.02); normalization scales start at 1, shifts at 0. Only
    tensors the configured graph actually uses are allocated, so an ablated
    model carries no dead weights.
    """
    rng = RngState(seed)
    fb = make_filter_bank(config.basis)
    in_sched = length_schedule(config.lookback, fb.S, config.levels)
    out_sched = length_schedule(config.horizon, fb.S, config.levels)
    d_tok = config.token_width
    d_head = d_tok // config.heads
    params = []

    def affine(shape, fan_in, name):
        bound = 1.0 / math.sqrt(fan_in)
        p = Parameter(rng.uniform(shape, low=-bound, high=bound), name)
        params.append(p)
        return p

    def constant(value, shape, name):
        p = Parameter(np.full(shape, float(value)), name)
        params.append(p)
        return p

    embed = []
    for j, L_j in enumerate(_level_lengths(in_sched)):
        embed.append(
            (
                affine((config.embed_dim, L_j), L_j, f"embed.{j}.weight"),
                affine((config.embed_dim,), L_j, f"embed.{j}.bias"),
            )
        )

    routed = config.attention_kind == "rora"
    encoders = []
    for n in range(config.encoder_layers):
        prefix = f"encoder.{n}.attn"
        w = RoRAWeights(
            w_query=affine((d_tok, d_tok), d_tok, f"{prefix}.w_query"),
            w_key=affine((d_tok, d_tok), d_tok, f"{prefix}.w_key"),
            w_value=affine((d_tok, d_tok), d_tok, f"{prefix}.w_value"),
            w_gate=(
                affine((d_tok, d_tok), d_tok, f"{prefix}.w_gate")
                if routed and config.gate_enabled
                else None
            ),
            routing_tokens=(
                _normal_param(rng, params, (config.effective_routes, d_tok), f"{prefix}.routing_tokens")
                if routed
                else None
            ),
            route_proj=(
                affine((config.heads, d_tok, d_head), d_tok, f"{prefix}.route_proj")
                if routed
                else None
            ),
            skip_proj=(
                affine((config.heads, d_head, d_head), d_head, f"{prefix}.skip_proj")
                if routed and config.skip_enabled
                else None
            ),
            w_out=affine((d_tok, d_tok), d_tok, f"{prefix}.w_out"),
        )
        scales = []
        shifts = []
        for j in range(config.levels + 1):
            scales.append(constant(1.0, (config.embed_dim,), f"encoder.{n}.norm.{j}.scale"))
            shifts.append(constant(0.0, (config.embed_dim,), f"encoder.{n}.norm.{j}.shift"))
        encoders.append(EncoderLayer(attn=w, norm_scales=scales, norm_shifts=shifts))

    predictors = []
    for j, H_j in enumerate(_level_lengths(out_sched)):
        predictors.append(
            (
                affine((H_j, config.embed_dim), config.embed_dim, f"predict.{j}.weight"),
                affine((H_j,), config.embed_dim, f"predict.{j}.bias"),
            )
        )

    rora = (
        RoRAConfig(
            d_model=d_tok,
            heads=config.heads,
            routes=config.effective_routes,
            rotary_enabled=config.rotary_enabled,
            gate_enabled=config.gate_enabled,
            skip_enabled=config.skip_enabled,
        )
        if routed
        else None
    )
    return WaveRoRAModel(
        config=config,
        embed=embed,
        encoders=encoders,
        predictors=predictors,
        rora=rora,
        params=params,
    )


def _normal_param(rng, params, shape, name):
    p = Parameter(rng.normal(shape, std=0.02), name)
    params.append(p)
    return p


def _swap_last(t):
    axes = list(range(t.ndim))
    axes[-2], axes[-1] = axes[-1], axes[-2]
    return t.transpose(axes)


@contextmanager
def _stage(name):
    try:
        yield
    except ValueError as err:
        raise type(err)(f"{name}: {err}") from None


def wave_embed(pyramid, model):
    """Per-level affine embedding of coefficients; one M x D tensor per level."""
    cfg = model.config
    expected = _level_lengths(length_schedule(cfg.lookback, make_filter_bank(cfg.basis).S, cfg.levels))
    components = pyramid.components
    if [c.shape[-1] for c in components] != expected:
        raise ShapeError(
            f"pyramid lengths {[c.shape[-1] for c in components]} do not match "
            f"the configured input schedule {expected}"
        )
    out = []
    for component, (weight, bias) in zip(components, model.embed):
        out.append(matmul(component, weight.transpose((1, 0))) + bias)
    return out


def _baseline_attention(tokens, w, cfg, kind):
    # Multi-head dense baseline reusing the query/key/value/output projections.
    d_h = cfg.token_width // cfg.heads
    q = matmul(tokens, w.w_query)
    k = matmul(tokens, w.w_key)
    v = matmul(tokens, w.w_value)
    attend = softmax_attention if kind == "softmax" else linear_attention
    heads = []
    for h in range(cfg.heads):
        cols = slice(h * d_h, (h + 1) * d_h)
        heads.append(attend(q[..., cols], k[..., cols], v[..., cols]))
    return matmul(concat(heads, axis=-1), w.w_out)


def encode(tokens, model, training=False, rng=None):
    """N attention blocks, each followed by per-level normalization and dropout."""
    cfg = model.config
    d = cfg.embed_dim
    x = tokens if isinstance(tokens, Tensor) else Tensor(tokens)
    if x.shape[-1] != cfg.token_width:
        raise ShapeError(
            f"token width {x.shape[-1]} does not match configured {cfg.token_width}"
        )
    for layer in model.encoders:
        if cfg.attention_kind == "rora":
            mixed = rora_forward(x, layer.attn, model.rora)
        else:
            mixed = _baseline_attention(x, layer.attn, cfg, cfg.attention_kind)
        if cfg.outer_residual:
            mixed = mixed + x
        levels = []
        for j in range(cfg.levels + 1):
            t = mixed[..., j * d : (j + 1) * d]
            mu = t.mean(axis=-1, keepdims=True)
            centered = t - mu
            var = (centered * centered).mean(axis=-1, keepdims=True)
            z = centered / (var + _NORM_EPS).sqrt()
            levels.append(z * layer.norm_scales[j] + layer.norm_shifts[j])
        x = dropout(concat(levels, axis=-1), cfg.dropout, rng, training)
    return x


def wave_predict(level_tokens, model):
    """Per-level heads mapping D-dim tokens to horizon-schedule coefficients."""
    cfg = model.config
    fb = make_filter_bank(cfg.basis)
    out_sched = length_schedule(cfg.horizon, fb.S, cfg.levels)
    if len(level_tokens) != cfg.levels + 1:
        raise ShapeError(
            f"expected {cfg.levels + 1} level tokens, got {len(level_tokens)}"
        )
    coeffs = []
    for tokens, (weight, bias) in zip(level_tokens, model.predictors):
        coeffs.append(matmul(gelu(tokens), weight.transpose((1, 0))) + bias)
    return CoefficientPyramid(
        high=coeffs[:-1], low=coeffs[-1], schedule=out_sched, basis=cfg.basis
    )


def forward_with_pyramid(model, x, training=False, rng=None):
    """Full pipeline; also returns the predicted pyramid and the norm state."""
    cfg = model.config
    fb = make_filter_bank(cfg.basis)
    t = x if isinstance(x, Tensor) else Tensor(x)
    if t.shape[-2] != cfg.lookback or t.shape[-1] != cfg.variables:
        raise ShapeError(
            f"input shape {t.shape} does not match lookback {cfg.lookback} x "
            f"variables {cfg.variables}"
        )
    if training and cfg.dropout > 0.0 and rng is None:
        raise ValueError("training-mode forward with dropout needs an rng")
    with _stage("normalize"):
        normalized, state = instance_normalize(t)
    with _stage("decompose"):
        pyramid = dwt(_swap_last(normalized), fb, cfg.levels)
    with _stage("embed"):
        levels = wave_embed(pyramid, model)
        tokens = concat(levels, axis=-1)
    with _stage("encode"):
        encoded = encode(tokens, model, training=training, rng=rng)
    with _stage("predict"):
        d = cfg.embed_dim
        level_tokens = [
            encoded[..., j * d : (j + 1) * d] for j in range(cfg.levels + 1)
        ]
        predicted = wave_predict(level_tokens, model)
    with _stage("reconstruct"):
        series = idwt(predicted, fb, cfg.horizon)
    with _stage("denormalize"):
        out = instance_denormalize(_swap_last(series), state)
    return out, predicted, state


def forward(model, x, training=False, rng=None):
    """Forecast horizon x variables from lookback x variables."""
    out, _, _ = forward_with_pyramid(model, x, training=training, rng=rng)
    return out


# -- checkpoints ----------------------------------------------------------------


def save_checkpoint(model, path):
    params = model.parameters()
    header = {
        "config": asdict(model.config),
        "params": [{"name": p.name, "shape": list(p.shape)} for p in params],
        "dtype": "float64",
    }
    blob = json.dumps(header).encode("utf-8")
    with open(path, "wb") as f:
        f.write(_CHECKPOINT_MAGIC)
        f.write(struct.pack("<Q", len(blob)))
        f.write(blob)
        for p in params:
            f.write(np.ascontiguousarray(p.data).tobytes())


def load_checkpoint(path):
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != _CHECKPOINT_MAGIC:
            raise CheckpointError(
                f"{path}: not a checkpoint file (magic {magic!r}, expected "
                f"{_CHECKPOINT_MAGIC!r})"
            )
        (header_len,) = struct.unpack("<Q", f.read(8))
        try:
            header = json.loads(f.read(header_len).decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as err:
            raise CheckpointError(f"{path}: corrupt checkpoint header: {err}") from None
        try:
            config = ModelConfig(**header["config"])
        except (TypeError, ValueError) as err:
            raise CheckpointError(f"{path}: incompatible config: {err}") from None
        model = build_model(config, seed=0)
        manifest = header["params"]
        params = model.parameters()
        if [m["name"] for m in manifest] != [p.name for p in params]:
            raise CheckpointError(
                f"{path}: parameter manifest does not match this build's layout"
            )
        for meta, p in zip(manifest, params):
            if list(p.shape) != meta["shape"]:
                raise CheckpointError(
                    f"{path}: parameter {p.name} has shape {meta['shape']} in the "
                    f"file but {list(p.shape)} in the model"
                )
            n = int(np.prod(meta["shape"])) if meta["shape"] else 1
            buf = f.read(n * 8)
            if len(buf) != n * 8:
                raise CheckpointError(f"{path}: truncated tensor data for {p.name}")
            p.data[...] = np.frombuffer(buf, dtype=np.float64).reshape(p.shape)
    return model
