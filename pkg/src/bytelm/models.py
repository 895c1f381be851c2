"""Autoregressive byte and subword language models.

Five kinds share one parameter registry and forward contract:

- transformer: one stack, full causal attention.
- window_transformer: one stack, attention limited to a sliding window.
- megabyte: patch-pooled global stack feeding per-patch local stacks,
  offset by one patch.
- spacebyte: local byte stack with wide global blocks spliced in at
  rule-selected byte positions (word boundaries by default).
- spacebyte_fixed: same splice machinery with boundaries every `patch`
  bytes instead of at word boundaries.

Byte models use ids 0..255 with 255 as BOS; subword models use BPE ids
with 256 as BOS.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from types import SimpleNamespace

import numpy as np

from .blocks import HEAD_DIM, AttentionConfig, BlockWeights, run_blocks
from .errors import ConfigError, DataError
from .segment import BOS, insertion_mask
from .tensor import (
    Tensor,
    concat,
    cross_entropy_masked,
    embedding,
    gather_time,
    layer_norm,
    matmul,
    narrow,
    reshape,
    scatter_add_time,
    softmax,
    transpose,
)

KINDS = ("transformer", "window_transformer", "megabyte", "spacebyte", "spacebyte_fixed")
MULTISCALE = ("megabyte", "spacebyte", "spacebyte_fixed")
RULES = ("spacelike", "fixed", "always")


@dataclass
class ModelConfig:
    """Architecture hyperparameters; None fields are filled by kind defaults."""

    kind: str
    vocab_size: int = 256
    dim: int = 512
    local_dim: int | None = None
    context: int | None = None
    global_context: int | None = None
    patch: int | None = None
    window: int | None = None
    layers: int | None = None
    global_layers: int | None = None
    local_layers: int | None = None
    ff_mult: int = 4
    head_dim: int = HEAD_DIM
    tie_embeddings: bool = False

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown model kind {self.kind!r}; expected one of {KINDS}")
        k = self.kind
        if k == "transformer":
            if self.context is None:
                self.context = self.dim
            if self.window is None:
                self.window = self.context
        elif k == "window_transformer":
            if self.window is None:
                self.window = self.dim
            if self.context is None:
                self.context = 6 * self.window
        elif k == "megabyte":
            if self.patch is None:
                self.patch = 4
            if self.local_dim is None:
                self.local_dim = self.dim // 2
            if self.context is None and self.global_context is None:
                self.global_context = self.dim
            if self.context is None:
                self.context = self.patch * self.global_context
            if self.global_context is None:
                if self.context % self.patch:
                    raise ConfigError(
                        f"megabyte context {self.context} not a multiple of patch {self.patch}"
                    )
                self.global_context = self.context // self.patch
            if self.local_layers is None:
                self.local_layers = self.global_layers
        elif k in ("spacebyte", "spacebyte_fixed"):
            if self.local_dim is None:
                self.local_dim = self.dim // 2
            if self.global_context is None:
                self.global_context = self.dim
            if k == "spacebyte_fixed" and self.patch is None:
                self.patch = 6
            if self.context is None:
                mult = self.patch if k == "spacebyte_fixed" else 6
                self.context = mult * self.global_context
            if self.local_layers is None:
                self.local_layers = self.global_layers
        self._validate()

    def _validate(self):
        k = self.kind
        if self.vocab_size < 2:
            raise ConfigError(f"vocab_size must be >= 2, got {self.vocab_size}")
        if self.dim % self.head_dim:
            raise ConfigError(f"dim {self.dim} not divisible by head_dim {self.head_dim}")
        if self.context is None or self.context < 2:
            raise ConfigError(f"context must be >= 2, got {self.context}")
        if k in ("transformer", "window_transformer"):
            if self.layers is None or self.layers < 1:
                raise ConfigError(f"{k} needs layers >= 1, got {self.layers}")
            if self.window is None or self.window < 1:
                raise ConfigError(f"window must be >= 1, got {self.window}")
        if k in MULTISCALE:
            if self.tie_embeddings:
                raise ConfigError(f"tie_embeddings is only supported for single-stack kinds")
            if self.global_layers is None or self.global_layers < 1:
                raise ConfigError(f"{k} needs global_layers >= 1")
            if self.local_layers is None or self.local_layers < 1:
                raise ConfigError(f"{k} needs local_layers >= 1")
            if self.local_dim is None or self.local_dim % self.head_dim:
                raise ConfigError(
                    f"local_dim {self.local_dim} not divisible by head_dim {self.head_dim}"
                )
            if self.local_dim > self.dim:
                raise ConfigError(f"local_dim {self.local_dim} exceeds dim {self.dim}")
            if self.global_context is None or self.global_context < 1:
                raise ConfigError("global_context must be >= 1")
        if k == "megabyte":
            if self.patch is None or self.patch < 1:
                raise ConfigError(f"patch must be >= 1, got {self.patch}")
            if self.context != self.patch * self.global_context:
                raise ConfigError(
                    f"megabyte requires context == patch * global_context; "
                    f"got {self.context} != {self.patch} * {self.global_context}"
                )
            if self.dim % self.patch:
                raise ConfigError(f"dim {self.dim} not divisible by patch {self.patch}")
        if k in ("spacebyte", "spacebyte_fixed"):
            if self.global_context > self.context:
                raise ConfigError(
                    f"global_context {self.global_context} exceeds context {self.context}"
                )
            if self.local_layers % 2:
                raise ConfigError(
                    f"{k} splits local layers around the global stack; "
                    f"local_layers must be even, got {self.local_layers}"
                )
        if k == "spacebyte_fixed" and (self.patch is None or self.patch < 1):
            raise ConfigError(f"patch must be >= 1, got {self.patch}")

    @property
    def local_window(self) -> int:
        """Attention window of the local byte stack."""
        if self.window is not None:
            return self.window
        return self.local_dim

    @property
    def bos_token(self) -> int:
        """255 in byte space; 256 in BPE token space."""
        return BOS if self.vocab_size == 256 else 256

    @property
    def default_rule(self) -> str:
        return {"spacebyte": "spacelike", "spacebyte_fixed": "fixed"}.get(self.kind, "always")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        fields = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - fields
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        if "kind" not in d:
            raise ConfigError("model config needs a 'kind'")
        return cls(**d)


@dataclass(frozen=True)
class SlotStats:
    """Global-slot usage for one forward pass (zeros for single-stack kinds)."""

    used: int = 0
    overflowed: int = 0
    padded: int = 0


@dataclass
class ForwardOutput:
    logits: Tensor
    loss: Tensor | None
    effective_targets: np.ndarray | None
    stats: SlotStats


class ParamBuilder:
    """Creates named parameters with their init scale and role recorded."""

    def __init__(self, rng: np.random.Generator | None, dtype):
        self.rng = rng
        self.dtype = dtype
        self.params: dict[str, Tensor] = {}
        self.sigma: dict[str, float] = {}
        self.roles: dict[str, str] = {}

    def _add(self, name, data, sigma, role) -> Tensor:
        if name in self.params:
            raise ConfigError(f"duplicate parameter name {name}")
        t = Tensor(data, requires_grad=True, dtype=self.dtype)
        self.params[name] = t
        self.sigma[name] = sigma
        self.roles[name] = role
        return t

    def linear(self, name, d_in, d_out) -> Tensor:
        sigma = float(d_in) ** -0.5
        data = self.rng.normal(0.0, sigma, (d_in, d_out)) if self.rng is not None else np.zeros((d_in, d_out))
        return self._add(name, data, sigma, "linear")

    def table(self, name, rows, cols) -> Tensor:
        data = self.rng.normal(0.0, 1.0, (rows, cols)) if self.rng is not None else np.zeros((rows, cols))
        return self._add(name, data, 1.0, "table")

    def gain(self, name, dim) -> Tensor:
        return self._add(name, np.ones(dim), 1.0, "gain")

    def block(self, prefix, d, ff_mult, head_dim) -> BlockWeights:
        return BlockWeights(
            wq=self.linear(f"{prefix}.wq", d, d),
            wk=self.linear(f"{prefix}.wk", d, d),
            wv=self.linear(f"{prefix}.wv", d, d),
            wo=self.linear(f"{prefix}.wo", d, d),
            w1=self.linear(f"{prefix}.w1", d, ff_mult * d),
            w2=self.linear(f"{prefix}.w2", ff_mult * d, d),
            ln1_gain=self.gain(f"{prefix}.ln1_gain", d),
            ln2_gain=self.gain(f"{prefix}.ln2_gain", d),
            q_gain=self.gain(f"{prefix}.q_gain", head_dim),
            k_gain=self.gain(f"{prefix}.k_gain", head_dim),
        )

    def stack(self, prefix, n, d, ff_mult, head_dim) -> list[BlockWeights]:
        return [self.block(f"{prefix}.{i}", d, ff_mult, head_dim) for i in range(n)]


class Model:
    """Config, named parameters, and a kind-dispatched forward."""

    def __init__(self, cfg: ModelConfig, builder: ParamBuilder, view: SimpleNamespace):
        self.cfg = cfg
        self.params = builder.params
        self.sigma = builder.sigma
        self.roles = builder.roles
        self.view = view

    def zero_grad(self):
        for p in self.params.values():
            p.zero_grad()

    def matrix_param_count(self) -> int:
        """Size of all weight matrices, the de-embedding map included."""
        total = sum(p.data.size for n, p in self.params.items() if self.roles[n] == "linear")
        if self.cfg.tie_embeddings:
            total += self.params["embed"].data.size
        return total

    def forward(self, tokens, targets=None, rule: str | None = None) -> ForwardOutput:
        k = self.cfg.kind
        if k in ("transformer", "window_transformer"):
            if rule is not None:
                raise ConfigError(f"{k} takes no boundary rule")
            return transformer_lm_forward(self, tokens, targets)
        if k == "megabyte":
            if rule is not None:
                raise ConfigError("megabyte takes no boundary rule")
            return megabyte_forward(self, tokens, targets)
        return spacebyte_forward(self, tokens, targets, rule=rule)


def build_model(cfg: ModelConfig, rng: np.random.Generator | None = None, dtype=np.float32) -> Model:
    """Materialize parameters for `cfg`; zeros when rng is None (checkpoint load)."""
    b = ParamBuilder(rng, dtype)
    c = cfg
    v = SimpleNamespace()
    if c.kind in ("transformer", "window_transformer"):
        v.embed = b.table("embed", c.vocab_size, c.dim)
        v.pos = b.table("pos", c.context, c.dim)
        v.blocks = b.stack("blocks", c.layers, c.dim, c.ff_mult, c.head_dim)
        v.final_gain = b.gain("final_gain", c.dim)
        v.deembed = None if c.tie_embeddings else b.linear("deembed", c.dim, c.vocab_size)
        v.attn = AttentionConfig(c.dim, c.window, c.head_dim, c.ff_mult)
    elif c.kind == "megabyte":
        v.g_embed = b.table("g_embed", c.vocab_size, c.dim // c.patch)
        v.global_pos = b.table("global_pos", c.global_context, c.dim)
        v.gblocks = b.stack("global", c.global_layers, c.dim, c.ff_mult, c.head_dim)
        v.gl_proj = b.linear("gl_proj", c.dim // c.patch, c.local_dim)
        v.l_embed = b.table("l_embed", c.vocab_size, c.local_dim)
        v.local_pos = b.table("local_pos", c.patch, c.local_dim)
        v.lblocks = b.stack("local", c.local_layers, c.local_dim, c.ff_mult, c.head_dim)
        v.final_gain = b.gain("final_gain", c.local_dim)
        v.deembed = b.linear("deembed", c.local_dim, c.vocab_size)
        v.gattn = AttentionConfig(c.dim, c.global_context, c.head_dim, c.ff_mult)
        v.lattn = AttentionConfig(c.local_dim, c.patch, c.head_dim, c.ff_mult)
    else:
        half = c.local_layers // 2
        v.embed = b.table("embed", c.vocab_size, c.local_dim)
        v.local_pos = b.table("local_pos", c.context, c.local_dim)
        v.lblocks1 = b.stack("local1", half, c.local_dim, c.ff_mult, c.head_dim)
        v.global_pos = b.table("global_pos", c.global_context, c.dim)
        v.gblocks = b.stack("global", c.global_layers, c.dim, c.ff_mult, c.head_dim)
        v.lblocks2 = b.stack("local2", half, c.local_dim, c.ff_mult, c.head_dim)
        v.final_gain = b.gain("final_gain", c.local_dim)
        v.deembed = b.linear("deembed", c.local_dim, c.vocab_size)
        v.gattn = AttentionConfig(c.dim, c.global_context, c.head_dim, c.ff_mult)
        v.lattn = AttentionConfig(c.local_dim, c.local_window, c.head_dim, c.ff_mult)
    return Model(cfg, b, v)


def _check_tokens(cfg: ModelConfig, tokens) -> np.ndarray:
    tokens = np.asarray(tokens)
    if tokens.ndim != 2:
        raise DataError(f"tokens must be [batch, time], got shape {tokens.shape}")
    if tokens.shape[1] > cfg.context:
        raise DataError(f"sequence length {tokens.shape[1]} exceeds context {cfg.context}")
    if tokens.shape[1] < 1:
        raise DataError("empty sequence")
    return tokens.astype(np.int64)


def _finish(model, x, targets, eff_targets, stats) -> ForwardOutput:
    v = model.view
    x = layer_norm(x, v.final_gain)
    if model.cfg.tie_embeddings:
        logits = matmul(x, transpose(v.embed, (1, 0)))
    else:
        logits = matmul(x, v.deembed)
    loss = None
    if eff_targets is not None:
        loss = cross_entropy_masked(logits, eff_targets)
    return ForwardOutput(logits=logits, loss=loss, effective_targets=eff_targets, stats=stats)


def transformer_lm_forward(model: Model, tokens, targets=None) -> ForwardOutput:
    cfg, v = model.cfg, model.view
    tokens = _check_tokens(cfg, tokens)
    t = tokens.shape[1]
    x = embedding(v.embed, tokens) + narrow(v.pos, 0, 0, t)
    x = run_blocks(x, v.attn, v.blocks)
    eff = None if targets is None else np.asarray(targets, dtype=np.int64)
    return _finish(model, x, targets, eff, SlotStats())


def boundary_mask(cfg: ModelConfig, tokens: np.ndarray, rule: str) -> np.ndarray:
    """[B, T] bool: positions whose local state enters the global stack."""
    if rule == "spacelike":
        return insertion_mask(tokens)
    if rule == "fixed":
        mask = np.zeros(tokens.shape, dtype=bool)
        mask[:, ::cfg.patch] = True
        mask |= tokens == cfg.bos_token
        return mask
    if rule == "always":
        return np.ones(tokens.shape, dtype=bool)
    raise ConfigError(f"unknown boundary rule {rule!r}; expected one of {RULES}")


def _build_slots(mask: np.ndarray, n_slots: int, targets):
    """Left-pack marked positions into `n_slots`; mask targets past the overflow."""
    b, t = mask.shape
    idx = np.full((b, n_slots), t - 1, dtype=np.int64)
    counts = np.zeros(b, dtype=np.int64)
    eff = None if targets is None else np.array(targets, dtype=np.int64, copy=True)
    overflowed = 0
    for row in range(b):
        pos = np.flatnonzero(mask[row])
        n = min(len(pos), n_slots)
        counts[row] = n
        idx[row, :n] = pos[:n]
        if len(pos) > n_slots:
            overflowed += len(pos) - n_slots
            if eff is not None:
                eff[row, pos[n_slots]:] = -1
    used = int(counts.sum())
    stats = SlotStats(used=used, overflowed=overflowed, padded=b * n_slots - used)
    return idx, counts, eff, stats


def spacebyte_forward(model: Model, tokens, targets=None, rule: str | None = None) -> ForwardOutput:
    cfg, v = model.cfg, model.view
    if cfg.kind not in ("spacebyte", "spacebyte_fixed"):
        raise ConfigError(f"spacebyte_forward needs a spacebyte kind, got {cfg.kind}")
    tokens = _check_tokens(cfg, tokens)
    b, t = tokens.shape
    rule = cfg.default_rule if rule is None else rule
    if rule == "fixed" and (cfg.patch is None or cfg.patch < 1):
        raise ConfigError("fixed rule needs patch >= 1")
    mask = boundary_mask(cfg, tokens, rule)
    idx, counts, eff, stats = _build_slots(mask, cfg.global_context, targets)

    x = embedding(v.embed, tokens) + narrow(v.local_pos, 0, 0, t)
    x = run_blocks(x, v.lattn, v.lblocks1)

    g = gather_time(x, idx)
    pad = Tensor(
        np.zeros((b, cfg.global_context, cfg.dim - cfg.local_dim)), dtype=x.data.dtype
    )
    g = concat([g, pad], axis=2)
    g = g + v.global_pos
    g = run_blocks(g, v.gattn, v.gblocks)
    g = narrow(g, 2, 0, cfg.local_dim)
    x = scatter_add_time(x, idx, g, counts)

    x = run_blocks(x, v.lattn, v.lblocks2)
    if targets is None:
        eff = None
    return _finish(model, x, targets, eff, stats)


def megabyte_forward(model: Model, tokens, targets=None) -> ForwardOutput:
    cfg, v = model.cfg, model.view
    if cfg.kind != "megabyte":
        raise ConfigError(f"megabyte_forward needs kind megabyte, got {cfg.kind}")
    tokens = _check_tokens(cfg, tokens)
    b, t = tokens.shape
    p = cfg.patch
    if t % p:
        raise DataError(f"megabyte needs length a multiple of patch {p}, got {t}")
    g_count = t // p

    ge = embedding(v.g_embed, tokens)
    gin = reshape(ge, (b, g_count, cfg.dim)) + narrow(v.global_pos, 0, 0, g_count)
    gout = run_blocks(gin, v.gattn, v.gblocks)

    chunks = reshape(gout, (b, g_count, p, cfg.dim // p))
    proj = matmul(chunks, v.gl_proj)
    zeros = Tensor(np.zeros((b, 1, p, cfg.local_dim)), dtype=proj.data.dtype)
    shifted = concat([zeros, narrow(proj, 1, 0, g_count - 1)], axis=1) if g_count > 1 else zeros

    le = embedding(v.l_embed, tokens)
    lin = reshape(le, (b, g_count, p, cfg.local_dim)) + shifted + v.local_pos
    lin = reshape(lin, (b * g_count, p, cfg.local_dim))
    lout = run_blocks(lin, v.lattn, v.lblocks)
    x = reshape(lout, (b, t, cfg.local_dim))

    eff = None if targets is None else np.asarray(targets, dtype=np.int64)
    return _finish(model, x, targets, eff, SlotStats())


def _marked_count(cfg: ModelConfig, seq: np.ndarray) -> int:
    mask = boundary_mask(cfg, seq[None, :], cfg.default_rule)
    return int(mask.sum())


def generate(
    model: Model,
    prompt,
    max_new: int,
    temperature: float = 1.0,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """Sample a continuation; temperature 0 is greedy argmax.

    Stops early when the context fills, or (multiscale kinds) when the
    boundary rule has marked `global_context` positions.
    """
    cfg = model.cfg
    if temperature < 0:
        raise ConfigError(f"temperature must be >= 0, got {temperature}")
    if temperature > 0 and rng is None:
        raise ConfigError("sampling with temperature > 0 needs an rng")
    seq = np.asarray(prompt, dtype=np.int64).reshape(-1)
    if seq.size == 0 or seq[0] != cfg.bos_token:
        raise DataError(f"prompt must begin with BOS token {cfg.bos_token}")
    if seq.size > cfg.context:
        raise DataError(f"prompt length {seq.size} exceeds context {cfg.context}")
    out = []
    for _ in range(max_new):
        if seq.size >= cfg.context:
            break
        if cfg.kind in ("spacebyte", "spacebyte_fixed") and _marked_count(cfg, seq) >= cfg.global_context:
            break
        if cfg.kind == "megabyte":
            pad = (-seq.size) % cfg.patch
            fed = np.concatenate([seq, np.zeros(pad, dtype=np.int64)]) if pad else seq
        else:
            fed = seq
        logits = model.forward(fed[None, :]).logits.data[0, seq.size - 1].astype(np.float64)
        if temperature == 0:
            nxt = int(np.argmax(logits))
        else:
            probs = softmax(Tensor(logits / temperature, dtype=np.float64), axis=-1).data
            nxt = int(rng.choice(cfg.vocab_size, p=probs / probs.sum()))
        out.append(nxt)
        seq = np.concatenate([seq, [nxt]])
    return np.asarray(out, dtype=np.int64)
