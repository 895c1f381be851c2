"""Compute accounting: parameter counts, FLOPs per byte, bits per byte,
hyperparameter grids, and Pareto frontiers.

Parameter counts cover weight matrices only (the de-embedding included);
embedding lookups, position tables, and gains are excluded, matching the
convention that a forward pass costs 2 FLOPs per weight-matrix parameter
per position it touches. Attention score/mix matmuls add 4*span*dim per
position per layer, where span is the attention width (the full sequence
for causal stacks, the window otherwise).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import ConfigError, DataError
from .models import ModelConfig


@dataclass(frozen=True)
class ParamCounts:
    """Weight-matrix parameters by stack; single-stack kinds use m_global."""

    m_global: int
    m_local: int

    @property
    def total(self) -> int:
        return self.m_global + self.m_local


def _block_params(layers: int, dim: int, ff_mult: int = 4) -> int:
    return layers * (4 + 2 * ff_mult) * dim * dim


def count_params(cfg: ModelConfig) -> ParamCounts:
    """Exact weight-matrix counts per stack for any model kind."""
    c = cfg
    if c.kind in ("transformer", "window_transformer"):
        return ParamCounts(
            m_global=_block_params(c.layers, c.dim, c.ff_mult) + c.dim * c.vocab_size,
            m_local=0,
        )
    if c.kind == "megabyte":
        local = (
            _block_params(c.local_layers, c.local_dim, c.ff_mult)
            + c.local_dim * (c.dim // c.patch)
            + c.local_dim * c.vocab_size
        )
        return ParamCounts(m_global=_block_params(c.global_layers, c.dim, c.ff_mult), m_local=local)
    # spacebyte kinds
    local = _block_params(c.local_layers, c.local_dim, c.ff_mult) + c.local_dim * c.vocab_size
    return ParamCounts(m_global=_block_params(c.global_layers, c.dim, c.ff_mult), m_local=local)


@dataclass(frozen=True)
class FlopsBreakdown:
    """Forward FLOPs per byte of text, split by stack and matmul family."""

    global_linear: float
    global_attention: float
    local_linear: float
    local_attention: float
    bytes_per_token: float

    @property
    def per_byte(self) -> float:
        return self.global_linear + self.global_attention + self.local_linear + self.local_attention

    def rows(self) -> list[tuple[str, float]]:
        return [
            ("global_linear", self.global_linear),
            ("global_attention", self.global_attention),
            ("local_linear", self.local_linear),
            ("local_attention", self.local_attention),
        ]


def flops_per_byte(cfg: ModelConfig, bytes_per_token: float = 1.0) -> FlopsBreakdown:
    """Forward FLOPs per byte.

    `bytes_per_token` converts per-token costs for subword models; byte
    models must pass 1.0. Weight matmuls cost 2 FLOPs per parameter,
    attention 4*span*dim per position per layer. Stacks that run on a
    coarser sequence are scaled by how rarely they run per byte.
    """
    if bytes_per_token <= 0:
        raise ConfigError(f"bytes_per_token must be positive, got {bytes_per_token}")
    c = cfg
    p = count_params(cfg)
    if c.kind in ("transformer", "window_transformer"):
        span = min(c.window, c.context)
        return FlopsBreakdown(
            global_linear=2 * p.m_global / bytes_per_token,
            global_attention=4 * c.layers * span * c.dim / bytes_per_token,
            local_linear=0.0,
            local_attention=0.0,
            bytes_per_token=bytes_per_token,
        )
    if bytes_per_token != 1.0:
        raise ConfigError(f"{c.kind} is byte-level; bytes_per_token must be 1.0")
    if c.kind == "megabyte":
        return FlopsBreakdown(
            global_linear=2 * p.m_global / c.patch,
            global_attention=4 * c.global_layers * c.global_context * c.dim / c.patch,
            local_linear=2 * p.m_local,
            local_attention=4 * c.local_layers * c.patch * c.local_dim,
            bytes_per_token=1.0,
        )
    # spacebyte kinds: the global stack runs once per byte times T_global/T
    rate = c.global_context / c.context
    span_local = min(c.local_window, c.context)
    return FlopsBreakdown(
        global_linear=2 * p.m_global * rate,
        global_attention=4 * c.global_layers * c.global_context * c.dim * rate,
        local_linear=2 * p.m_local,
        local_attention=4 * c.local_layers * span_local * c.local_dim,
        bytes_per_token=1.0,
    )


def training_flops_per_byte(cfg: ModelConfig, bytes_per_token: float = 1.0) -> float:
    """Forward plus backward: 3x the forward cost."""
    return 3.0 * flops_per_byte(cfg, bytes_per_token).per_byte


LN2 = math.log(2.0)


def bits_per_byte(total_nats: float, n_bytes: float) -> float:
    """Cross-entropy in nats, normalized per byte of text, reported in bits."""
    if n_bytes <= 0:
        raise DataError(f"n_bytes must be positive, got {n_bytes}")
    if total_nats < 0:
        raise DataError(f"negative total_nats {total_nats}")
    return total_nats / (n_bytes * LN2)


def bpb_mean_stderr(window_bpbs) -> tuple[float, float]:
    """Mean and standard error over per-window bits-per-byte values."""
    import numpy as np

    vals = np.asarray(list(window_bpbs), dtype=np.float64)
    if vals.size == 0:
        raise DataError("no evaluation windows")
    if vals.size == 1:
        return float(vals[0]), 0.0
    return float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(vals.size))


# -- hyperparameter grid --------------------------------------------------------


def half_powers_of_two(limit: float) -> list[float]:
    """1, 1.5, 2, 3, 4, 6, 8, 12, ... up to at least `limit`."""
    out = [1.0]
    k = 0
    while out[-1] < limit:
        out.append(1.5 * 2**k)
        out.append(2.0 * 2 ** (k + 0))
        k += 1
        out[-2:] = sorted(out[-2:])
    return sorted(set(out))


def round_to_half_power(value: float) -> int:
    """Nearest number of the form 2^k or 3*2^k; ties go down."""
    if value <= 0:
        raise ConfigError(f"cannot round non-positive {value}")
    ladder = half_powers_of_two(value * 2 + 2)
    best = min(ladder, key=lambda x: (abs(x - value), x))
    return int(round(best))


def layers_for_dim(dim: int) -> int:
    """Depth budget 12.5 * log2(dim / 154), snapped to a half power of two."""
    if dim <= 154:
        raise ConfigError(f"dim must exceed 154, got {dim}")
    return round_to_half_power(12.5 * math.log2(dim / 154.0))


_TIERS = {
    "small": {"dims": (384, 512, 768), "local_floor": 256},
    "large": {"dims": (512, 768, 1024), "local_floor": 384},
}


def _is_pow2(n: int) -> bool:
    return n & (n - 1) == 0


def _layer_options(total: int) -> list[int]:
    if _is_pow2(total):
        return [3 * total // 8, total // 2]
    return [total // 3, total // 2]


def _local_dim_options(dim: int, floor: int) -> list[int]:
    cands = [dim // 2, 3 * dim // 4] if _is_pow2(dim) else [dim // 2, 2 * dim // 3]
    return [d for d in cands if d >= floor and d % 64 == 0]


def grid_configs(kind: str, tier: str, vocab_size: int = 256, context_mult: int = 6) -> list[ModelConfig]:
    """Model sweep for one kind at one compute tier.

    Every returned config validates; depth comes from `layers_for_dim`,
    with single-stack kinds also trying half depth and multiscale kinds
    trying two global/local splits and two local widths.
    """
    if tier not in _TIERS:
        raise ConfigError(f"unknown tier {tier!r}; expected one of {sorted(_TIERS)}")
    tier_table = _TIERS[tier]
    out: list[ModelConfig] = []
    for dim in tier_table["dims"]:
        depth = layers_for_dim(dim)
        if kind == "transformer":
            for layers in (depth // 2, depth):
                out.append(ModelConfig(kind=kind, vocab_size=vocab_size, dim=dim,
                                       layers=layers, context=dim))
        elif kind == "window_transformer":
            for layers in (depth // 2, depth):
                out.append(ModelConfig(kind=kind, vocab_size=vocab_size, dim=dim,
                                       layers=layers, window=dim, context=context_mult * dim))
        elif kind == "megabyte":
            for patch in (4, 8):
                if dim % patch:
                    continue
                for layers in _layer_options(depth):
                    for local_dim in _local_dim_options(dim, tier_table["local_floor"]):
                        out.append(ModelConfig(
                            kind=kind, vocab_size=vocab_size, dim=dim, local_dim=local_dim,
                            patch=patch, global_context=dim, context=patch * dim,
                            global_layers=layers, local_layers=layers,
                        ))
        elif kind in ("spacebyte", "spacebyte_fixed"):
            for layers in _layer_options(depth):
                local_layers = layers + layers % 2
                for local_dim in _local_dim_options(dim, tier_table["local_floor"]):
                    kw = dict(
                        kind=kind, vocab_size=vocab_size, dim=dim, local_dim=local_dim,
                        global_context=dim, context=context_mult * dim,
                        global_layers=layers, local_layers=local_layers,
                    )
                    if kind == "spacebyte_fixed":
                        kw["patch"] = context_mult
                    out.append(ModelConfig(**kw))
        else:
            raise ConfigError(f"unknown model kind {kind!r}")
    return out


# -- Pareto frontier --------------------------------------------------------------


@dataclass(frozen=True)
class ParetoPoint:
    flops_per_byte: float
    bpb: float
    model_id: str = ""

    def __post_init__(self):
        for field_name in ("flops_per_byte", "bpb"):
            try:
                v = float(getattr(self, field_name))
            except (TypeError, ValueError):
                raise DataError(f"{field_name} must be a number")
            if not (math.isfinite(v) and v > 0):
                raise DataError(f"{field_name} must be a finite positive number, got {v!r}")
            object.__setattr__(self, field_name, v)


def pareto_frontier(points: list[ParetoPoint]) -> list[ParetoPoint]:
    """Non-dominated points on the lower convex hull in log-log space.

    Returns a subset of the input ordered by increasing flops_per_byte.
    Coordinate duplicates collapse to the earliest input occurrence.
    Collinear interior points (in log space) are dropped.
    """
    if not points:
        return []
    seen = set()
    uniq = []
    for p in sorted(points, key=lambda p: (p.flops_per_byte, p.bpb)):
        key = (p.flops_per_byte, p.bpb)
        if key in seen:
            continue
        seen.add(key)
        uniq.append(p)
    # dominance sweep: strictly decreasing bpb as flops increase
    nd = []
    best = math.inf
    for p in uniq:
        if p.bpb < best:
            nd.append(p)
            best = p.bpb
    if len(nd) <= 2:
        return nd
    # lower convex hull over (log f, log b)
    logs = [(math.log(p.flops_per_byte), math.log(p.bpb)) for p in nd]
    hull: list[int] = []
    for i in range(len(nd)):
        while len(hull) >= 2:
            (x1, y1), (x2, y2) = logs[hull[-2]], logs[hull[-1]]
            x3, y3 = logs[i]
            if (x2 - x1) * (y3 - y1) - (y2 - y1) * (x3 - x1) <= 0:
                hull.pop()
            else:
                break
        hull.append(i)
    return [nd[i] for i in hull]


# -- plotting ---------------------------------------------------------------------


def _log_ticks(lo: float, hi: float) -> list[float]:
    ticks = []
    k = math.floor(math.log10(lo))
    while 10.0**k <= hi * 1.0001:
        for m in (1.0, 2.0, 5.0):
            v = m * 10.0**k
            if lo * 0.9999 <= v <= hi * 1.0001:
                ticks.append(v)
        k += 1
    return ticks or [lo, hi]


def _fmt(v: float) -> str:
    if v >= 1e9:
        return f"{v / 1e9:g}G"
    if v >= 1e6:
        return f"{v / 1e6:g}M"
    if v >= 1e3:
        return f"{v / 1e3:g}k"
    return f"{v:g}"


def svg_scatter(
    points: list[ParetoPoint],
    frontier: list[ParetoPoint],
    path,
    title: str = "compute vs bits per byte",
    xlabel: str = "FLOPs per byte",
    ylabel: str = "bits per byte",
) -> None:
    """Write a self-contained log-log SVG scatter with the frontier polyline."""
    if not points:
        raise DataError("nothing to plot")
    w, h = 640, 480
    ml, mr, mt, mb = 70, 20, 40, 55
    xs = [p.flops_per_byte for p in points]
    ys = [p.bpb for p in points]
    xlo, xhi = min(xs) / 1.15, max(xs) * 1.15
    ylo, yhi = min(ys) / 1.1, max(ys) * 1.1

    def sx(v: float) -> float:
        return ml + (math.log(v) - math.log(xlo)) / (math.log(xhi) - math.log(xlo)) * (w - ml - mr)

    def sy(v: float) -> float:
        return h - mb - (math.log(v) - math.log(ylo)) / (math.log(yhi) - math.log(ylo)) * (h - mt - mb)

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {w} {h}" '
        f'font-family="sans-serif" font-size="12">',
        f'<rect width="{w}" height="{h}" fill="white"/>',
        f'<text x="{w / 2:.0f}" y="22" text-anchor="middle" font-size="15">{title}</text>',
    ]
    for v in _log_ticks(xlo, xhi):
        x = sx(v)
        out.append(f'<line x1="{x:.1f}" y1="{mt}" x2="{x:.1f}" y2="{h - mb}" stroke="#ddd"/>')
        out.append(f'<text x="{x:.1f}" y="{h - mb + 18}" text-anchor="middle">{_fmt(v)}</text>')
    for v in _log_ticks(ylo, yhi):
        y = sy(v)
        out.append(f'<line x1="{ml}" y1="{y:.1f}" x2="{w - mr}" y2="{y:.1f}" stroke="#ddd"/>')
        out.append(f'<text x="{ml - 8}" y="{y + 4:.1f}" text-anchor="end">{_fmt(v)}</text>')
    out.append(
        f'<rect x="{ml}" y="{mt}" width="{w - ml - mr}" height="{h - mt - mb}" '
        f'fill="none" stroke="#333"/>'
    )
    out.append(
        f'<text x="{(ml + w - mr) / 2:.0f}" y="{h - 12}" text-anchor="middle">{xlabel}</text>'
    )
    out.append(
        f'<text x="18" y="{(mt + h - mb) / 2:.0f}" text-anchor="middle" '
        f'transform="rotate(-90 18 {(mt + h - mb) / 2:.0f})">{ylabel}</text>'
    )
    if len(frontier) > 1:
        pts = " ".join(f"{sx(p.flops_per_byte):.1f},{sy(p.bpb):.1f}" for p in frontier)
        out.append(f'<polyline points="{pts}" fill="none" stroke="#c33" stroke-width="1.5"/>')
    frontier_keys = {(p.flops_per_byte, p.bpb) for p in frontier}
    for p in points:
        on = (p.flops_per_byte, p.bpb) in frontier_keys
        color = "#c33" if on else "#36c"
        out.append(
            f'<circle cx="{sx(p.flops_per_byte):.1f}" cy="{sy(p.bpb):.1f}" r="4" '
            f'fill="{color}" fill-opacity="0.85"><title>{p.model_id}</title></circle>'
        )
    out.append("</svg>")
    with open(path, "w", encoding="utf-8") as f:
        f.write("\n".join(out) + "\n")
