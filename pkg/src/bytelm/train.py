"""Training: AdamW with per-tensor step sizes, warmup + cosine decay, and a
deterministic loop that logs metrics, checkpoints, and evaluates bits per byte.

Every float written to metrics.csv uses repr() so reruns with the same seed
produce byte-identical logs. No wall-clock values are recorded anywhere.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .accounting import bits_per_byte, count_params, training_flops_per_byte
from .checkpoint import save_checkpoint
from .data import Corpus, eval_windows, sample_batch
from .errors import ConfigError, NumericError
from .models import Model, ModelConfig, build_model
from .tensor import Tensor

LN2 = math.log(2.0)


@dataclass
class TrainConfig:
    batch_size: int = 64
    lr: float | None = None  # None picks 0.005 / sqrt(batch_size)
    beta1: float = 0.9
    beta2: float = 0.98
    weight_decay: float = 0.01
    clip_norm: float | None = 1.0
    adam_eps: float = 1e-8
    steps: int | None = None
    flop_budget: float | None = None
    warmup_frac: float = 0.01
    eval_every: int | None = None
    eval_windows: int | None = 64
    eval_batch: int = 8
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.steps is not None and self.flop_budget is not None:
            raise ConfigError("set steps or flop_budget, not both")
        if not 0.0 <= self.warmup_frac < 1.0:
            raise ConfigError(f"warmup_frac must lie in [0, 1), got {self.warmup_frac}")
        for name in ("beta1", "beta2"):
            b = getattr(self, name)
            if not 0.0 <= b < 1.0:
                raise ConfigError(f"{name} must lie in [0, 1), got {b}")

    @property
    def base_lr(self) -> float:
        if self.lr is not None:
            return self.lr
        return 0.005 / math.sqrt(self.batch_size)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        unknown = set(d) - {f for f in cls.__dataclass_fields__}
        if unknown:
            raise ConfigError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**d)


def lr_at_step(base: float, step: int, total_steps: int, warmup_frac: float = 0.01) -> float:
    """Linear warmup over the first `warmup_frac` of training, then the tail
    of a cosine taking the rate to zero at `total_steps`. Step 0 is always 0."""
    if total_steps < 1:
        raise ConfigError(f"total_steps must be >= 1, got {total_steps}")
    if not 0 <= step <= total_steps:
        raise ConfigError(f"step {step} outside [0, {total_steps}]")
    warm = warmup_frac * total_steps
    ramp = min(1.0, step / warm) if warm > 0 else 1.0
    return base * ramp * math.cos(0.5 * math.pi * step / total_steps)


def steps_from_budget(
    budget: float, model_cfg: ModelConfig, batch_size: int, bytes_per_token: float = 1.0
) -> int:
    """Largest step count whose total training FLOPs fit inside `budget`."""
    per_byte = training_flops_per_byte(model_cfg, bytes_per_token)
    per_step = per_byte * batch_size * model_cfg.context * bytes_per_token
    steps = int(budget // per_step)
    if steps < 1:
        raise ConfigError(
            f"budget {budget:.3g} is below one step ({per_step:.3g} FLOPs)"
        )
    return steps


def resolve_steps(train_cfg: TrainConfig, model_cfg: ModelConfig, bytes_per_token: float = 1.0) -> int:
    if train_cfg.steps is not None:
        if train_cfg.steps < 1:
            raise ConfigError(f"steps must be >= 1, got {train_cfg.steps}")
        return train_cfg.steps
    if train_cfg.flop_budget is not None:
        return steps_from_budget(train_cfg.flop_budget, model_cfg, train_cfg.batch_size, bytes_per_token)
    raise ConfigError("one of steps or flop_budget is required")


def clip_gradients(params: dict[str, Tensor], clip_norm: float | None) -> float:
    """Scale all gradients so the global L2 norm is at most clip_norm.

    Returns the pre-clip norm. Non-finite gradients raise NumericError.
    """
    total = 0.0
    grads = []
    for name, p in params.items():
        g = p._grad
        if g is None:
            continue
        grads.append(g)
        total += float(np.sum(g.astype(np.float64) ** 2))
    norm = math.sqrt(total)
    if not math.isfinite(norm):
        raise NumericError(f"non-finite gradient norm {norm}")
    if clip_norm is not None and norm > clip_norm > 0:
        scale = clip_norm / norm
        for g in grads:
            g *= scale
    return norm


class AdamW:
    """Decoupled weight decay Adam over a named parameter dict.

    `lr_scale` multiplies the step size per tensor; the training loop passes
    each parameter's init scale so wide matrices move proportionally less.
    """

    def __init__(
        self,
        params: dict[str, Tensor],
        lr_scale: dict[str, float],
        beta1: float = 0.9,
        beta2: float = 0.98,
        weight_decay: float = 0.01,
        eps: float = 1e-8,
    ):
        missing = set(params) - set(lr_scale)
        if missing:
            raise ConfigError(f"lr_scale missing entries for {sorted(missing)}")
        self.params = params
        self.lr_scale = lr_scale
        self.beta1 = beta1
        self.beta2 = beta2
        self.weight_decay = weight_decay
        self.eps = eps
        self.t = 0
        self.m = {n: np.zeros_like(p.data) for n, p in params.items()}
        self.v = {n: np.zeros_like(p.data) for n, p in params.items()}

    @classmethod
    def for_model(cls, model: Model, cfg: TrainConfig) -> "AdamW":
        return cls(
            model.params,
            model.sigma,
            beta1=cfg.beta1,
            beta2=cfg.beta2,
            weight_decay=cfg.weight_decay,
            eps=cfg.adam_eps,
        )

    def step(self, lr: float) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for name, p in self.params.items():
            g = p._grad
            if g is None:
                g = np.zeros_like(p.data)
            lr_eff = lr * self.lr_scale[name]
            if self.weight_decay:
                p.data -= lr_eff * self.weight_decay * p.data
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            mhat = m / bc1
            vhat = v / bc2
            p.data -= lr_eff * mhat / (np.sqrt(vhat) + self.eps)


# -- evaluation ---------------------------------------------------------------------


@dataclass
class EvalResult:
    bpb: float  # pooled: total nats over total bytes, in bits
    stderr: float  # spread of per-window bpb values
    n_windows: int
    total_bytes: float
    total_nats: float


def _batch_window_nats(model: Model, samples, byte_lengths) -> list[tuple[float, float]]:
    tokens = np.stack([s.tokens for s in samples])
    targets = np.stack([s.targets for s in samples])
    out = model.forward(tokens, targets)
    eff = out.effective_targets
    logits = out.logits.data.astype(np.float64)
    m = logits.max(axis=-1, keepdims=True)
    lse = m[..., 0] + np.log(np.exp(logits - m).sum(axis=-1))
    valid = eff >= 0
    safe = np.where(valid, eff, 0)
    nll = lse - np.take_along_axis(logits, safe[..., None], axis=-1)[..., 0]
    nll = np.where(valid, nll, 0.0)
    rows = []
    for b in range(tokens.shape[0]):
        nats = float(nll[b].sum())
        if byte_lengths is None:
            n_bytes = float(valid[b].sum())
        else:
            n_bytes = float(byte_lengths[eff[b][valid[b]]].sum())
        rows.append((nats, n_bytes))
    return rows


def eval_bpb(
    model: Model,
    corpus: Corpus,
    limit: int | None = None,
    byte_lengths: np.ndarray | None = None,
    batch_size: int = 8,
) -> EvalResult:
    """Bits per byte over non-overlapping context windows of the corpus.

    `byte_lengths` maps token ids to byte counts for subword models; byte
    models leave it None and count one byte per scored position.
    """
    per_window: list[tuple[float, float]] = []
    batch: list = []
    for sample in eval_windows(corpus, model.cfg.context, limit=limit):
        batch.append(sample)
        if len(batch) == batch_size:
            per_window.extend(_batch_window_nats(model, batch, byte_lengths))
            batch = []
    if batch:
        per_window.extend(_batch_window_nats(model, batch, byte_lengths))
    if not per_window:
        raise ConfigError("corpus too small for a single evaluation window")
    total_nats = sum(n for n, _ in per_window)
    total_bytes = sum(b for _, b in per_window)
    bpbs = [n / (b * LN2) for n, b in per_window if b > 0]
    if len(bpbs) > 1:
        arr = np.asarray(bpbs)
        stderr = float(arr.std(ddof=1) / math.sqrt(arr.size))
    else:
        stderr = 0.0
    return EvalResult(
        bpb=bits_per_byte(total_nats, total_bytes),
        stderr=stderr,
        n_windows=len(per_window),
        total_bytes=total_bytes,
        total_nats=total_nats,
    )


# -- the loop ----------------------------------------------------------------------


_CSV_HEADER = "step,lr,train_loss,grad_norm,eval_bpb,eval_stderr"


@dataclass
class TrainResult:
    steps: int
    final_loss: float
    final_eval: EvalResult | None
    metrics_path: Path
    checkpoint_path: Path
    run_path: Path
    model: Model = field(repr=False)


def _metrics_row(step, lr, loss, norm, ev: EvalResult | None) -> str:
    cells = [str(step), repr(lr), repr(loss), repr(norm)]
    cells += [repr(ev.bpb), repr(ev.stderr)] if ev is not None else ["", ""]
    return ",".join(cells)


def train_loop(
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    corpus: Corpus,
    out_dir,
    eval_corpus: Corpus | None = None,
    byte_lengths: np.ndarray | None = None,
    bytes_per_token: float = 1.0,
    log=None,
) -> TrainResult:
    """Train a freshly initialized model; write metrics.csv, checkpoint.bin,
    and run.json under `out_dir`. Fully determined by the configs and seed.

    On non-finite loss or gradients the current parameters are saved to
    diagnostic.bin and the NumericError is re-raised.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    total_steps = resolve_steps(train_cfg, model_cfg, bytes_per_token)
    rng = np.random.Generator(np.random.Philox(train_cfg.seed))
    model = build_model(model_cfg, rng)
    opt = AdamW.for_model(model, train_cfg)

    metrics_path = out / "metrics.csv"
    ckpt_path = out / "checkpoint.bin"
    run_path = out / "run.json"
    rows = [_CSV_HEADER]

    def flush_metrics():
        metrics_path.write_text("\n".join(rows) + "\n", encoding="utf-8")

    loss_val = math.nan
    ev = None
    try:
        for step in range(total_steps):
            lr = lr_at_step(train_cfg.base_lr, step, total_steps, train_cfg.warmup_frac)
            batch = sample_batch(corpus, model_cfg.context, train_cfg.batch_size, rng)
            model.zero_grad()
            fwd = model.forward(batch.tokens, batch.targets)
            fwd.loss.backward()
            norm = clip_gradients(model.params, train_cfg.clip_norm)
            opt.step(lr)
            loss_val = fwd.loss.item()
            ev = None
            due = train_cfg.eval_every and (step + 1) % train_cfg.eval_every == 0
            if due and eval_corpus is not None and step + 1 < total_steps:
                ev = eval_bpb(
                    model, eval_corpus, train_cfg.eval_windows, byte_lengths, train_cfg.eval_batch
                )
                save_checkpoint(ckpt_path, model)
            rows.append(_metrics_row(step, lr, loss_val, norm, ev))
            if ev is not None:
                flush_metrics()
            if log is not None and (ev is not None or step == 0 or step + 1 == total_steps):
                msg = f"step {step + 1}/{total_steps} loss {loss_val:.4f}"
                if ev is not None:
                    msg += f" eval_bpb {ev.bpb:.4f}"
                log(msg)
    except NumericError:
        save_checkpoint(out / "diagnostic.bin", model)
        rows.append(f"# aborted at step {len(rows) - 1}: non-finite loss or gradient")
        flush_metrics()
        raise

    if eval_corpus is not None:
        ev = eval_bpb(
            model, eval_corpus, train_cfg.eval_windows, byte_lengths, train_cfg.eval_batch
        )
        rows[-1] = _metrics_row(total_steps - 1, lr, loss_val, norm, ev)
    flush_metrics()
    save_checkpoint(ckpt_path, model)

    counts = count_params(model_cfg)
    run = {
        "model": model_cfg.to_dict(),
        "train": train_cfg.to_dict(),
        "steps": total_steps,
        "final_train_loss": loss_val,
        "final_eval_bpb": None if ev is None else ev.bpb,
        "final_eval_stderr": None if ev is None else ev.stderr,
        "matrix_params": counts.total,
        "train_flops_per_byte": training_flops_per_byte(model_cfg, bytes_per_token),
        "bytes_per_token": bytes_per_token,
    }
    run_path.write_text(json.dumps(run, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return TrainResult(
        steps=total_steps,
        final_loss=loss_val,
        final_eval=ev,
        metrics_path=metrics_path,
        checkpoint_path=ckpt_path,
        run_path=run_path,
        model=model,
    )
