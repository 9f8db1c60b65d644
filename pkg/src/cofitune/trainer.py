"""Supervised fine-tuning engine: scope-restricted Adam with a warmup+cosine
schedule, L1/L2 parameter-shift penalties, LoRA adapters and Wise-FT."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .data import PAD, Example, encode_example
from .errors import BadRange, BadRank, BadScope, ConfigError, DimMismatch, MissingGrad, NonFinite, ShapeMismatch
from .model import (
    FFN,
    MHA,
    LoraWeights,
    Parameters,
    ParamId,
    backward,
    forward,
    param_ids,
)
from .tensor import SeededRng, log_softmax_lastdim

MODULE_KINDS = ("MHA", "FFN", "UP", "DOWN", "ALL")
_EXPAND = {
    "MHA": {(MHA, m) for m in ("Q", "K", "V", "O")},
    "FFN": {(FFN, "UP"), (FFN, "DOWN")},
    "UP": {(FFN, "UP")},
    "DOWN": {(FFN, "DOWN")},
}
METHODS = ("FULL", "L1", "L2", "LORA", "WISEFT", "VSOFTMASK", "COFITUNE")


@dataclass(frozen=True)
class TuningScope:
    """Layers ``start+1 .. end`` (1-based) and a set of module kinds."""

    start: int
    end: int
    modules: frozenset[str]

    def __post_init__(self):
        mods = frozenset(m.upper() for m in self.modules)
        object.__setattr__(self, "modules", mods)
        if not mods or not mods <= set(MODULE_KINDS):
            raise BadScope(f"modules must be a nonempty subset of {MODULE_KINDS}, got {sorted(mods)}")
        if not 0 <= self.start < self.end:
            raise BadRange(f"need 0 <= a < b, got ({self.start}, {self.end}]")

    @classmethod
    def parse(cls, text: str) -> "TuningScope":
        """``"a:b:MODS"`` where MODS is ``+``/``,``/``&``-separated."""
        try:
            a, b, mods = text.split(":")
            names = [m for m in mods.replace(",", "+").replace("&", "+").split("+") if m]
            return cls(int(a), int(b), frozenset(names))
        except ValueError as e:
            if isinstance(e, (BadScope, BadRange)):
                raise
            raise BadScope(f"cannot parse scope {text!r}; expected a:b:MODS") from None

    def __str__(self) -> str:
        order = [m for m in ("MHA", "FFN", "UP", "DOWN", "ALL") if m in self.modules]
        return f"{self.start}:{self.end}:{'+'.join(order)}"

    def layers(self) -> range:
        return range(self.start + 1, self.end + 1)


def full_scope(num_layers: int) -> TuningScope:
    return TuningScope(0, num_layers, frozenset({"ALL"}))


def apply_scope(params: Parameters, scope: TuningScope) -> list[ParamId]:
    """Trainable parameter ids, in canonical order."""
    n = params.config.num_layers
    if scope.end > n:
        raise BadRange(f"scope ({scope.start}, {scope.end}] exceeds {n} layers")
    if "ALL" in scope.modules:
        allowed = None
    else:
        allowed = set().union(*(_EXPAND[m] for m in scope.modules))
    out = []
    for pid in param_ids(params.config):
        if isinstance(pid.layer, str):
            if allowed is None and scope.start == 0 and scope.end == n:
                out.append(pid)
            continue
        if scope.start < pid.layer <= scope.end and (allowed is None or (pid.module, pid.matrix) in allowed):
            out.append(pid)
    return out


@dataclass
class TrainConfig:
    peak_lr: float = 1e-3
    epochs: int = 1
    batch_size: int = 16
    warmup_frac: float = 0.03
    seed: int = 0
    method: str = "FULL"
    l1_strength: float = 0.001
    l2_strength: float = 0.001
    optimizer: str = "adam"
    max_steps: int | None = None
    lora_rank: int = 8
    wiseft_alpha: float = 0.6
    importance_dropout: float = 0.1
    importance_samples: int | None = None  # None: the whole SFT set
    group_by_length: bool = False

    def __post_init__(self):
        self.method = self.method.upper()
        if self.method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r}")
        if not 0.0 <= self.warmup_frac < 1.0:
            raise ConfigError("warmup_frac must be in [0, 1)")
        if self.l1_strength < 0 or self.l2_strength < 0:
            raise ConfigError("regularization strengths must be >= 0")
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigError("optimizer must be 'adam' or 'sgd'")
        if self.epochs < 0 or self.batch_size < 1:
            raise ConfigError("epochs must be >= 0 and batch_size >= 1")
        if self.importance_samples is not None and self.importance_samples < 1:
            raise ConfigError("importance_samples must be >= 1 or null")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**d)


def sft_loss(logits: np.ndarray, targets, loss_mask) -> tuple[float, np.ndarray]:
    """Mean next-token NLL over masked-in positions and its logits gradient."""
    targets = np.asarray(targets, dtype=np.int64)
    mask = np.asarray(loss_mask, dtype=bool)
    if logits.shape[:-1] != targets.shape or targets.shape != mask.shape:
        raise DimMismatch(f"logits {logits.shape}, targets {targets.shape}, mask {mask.shape}")
    count = int(mask.sum())
    if count == 0:
        return 0.0, np.zeros_like(logits)
    logp = log_softmax_lastdim(logits)
    picked = np.take_along_axis(logp, targets[..., None], axis=-1)[..., 0]
    loss = float(-np.sum(np.where(mask, picked, 0.0), dtype=np.float64) / count)
    if not math.isfinite(loss):
        raise NonFinite("non-finite training loss")
    grad = np.exp(logp)
    np.put_along_axis(grad, targets[..., None],
                      np.take_along_axis(grad, targets[..., None], axis=-1) - 1.0, axis=-1)
    grad *= (mask / count)[..., None].astype(grad.dtype)
    return loss, grad


def lr_at(step: int, total_steps: int, cfg: TrainConfig) -> float:
    """Linear warmup to peak, then cosine decay to zero at ``total_steps``."""
    if total_steps <= 0:
        return 0.0
    warm = int(cfg.warmup_frac * total_steps)
    if step < warm:
        return cfg.peak_lr * step / warm
    if step >= total_steps:
        return 0.0
    progress = (step - warm) / (total_steps - warm)
    return cfg.peak_lr * 0.5 * (1.0 + math.cos(math.pi * progress))


@dataclass
class OptimizerState:
    """Adam moments for the trainable tensors only."""

    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_tensors(cls, tensors: dict, keys: Iterable) -> "OptimizerState":
        st = cls()
        for k in keys:
            st.m[k] = np.zeros_like(tensors[k])
            st.v[k] = np.zeros_like(tensors[k])
        return st


def adam_step(tensors, grads: dict, state: OptimizerState, lr: float) -> None:
    """Bias-corrected Adam update, in place, on the keys held by ``state``."""
    missing = [k for k in state.m if k not in grads]
    if missing:
        raise MissingGrad(f"no gradient for trainable {missing[0]}")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    for k in state.m:
        g = grads[k]
        m, v = state.m[k], state.v[k]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        upd = (lr / c1) * m / (np.sqrt(v / c2) + state.eps)
        tensors[k] -= upd.astype(tensors[k].dtype)


def sgd_step(tensors, grads: dict, keys: Iterable, lr: float) -> None:
    for k in keys:
        if k not in grads:
            raise MissingGrad(f"no gradient for trainable {k}")
        tensors[k] -= (lr * grads[k]).astype(tensors[k].dtype)


def regularized_grads(grads: dict, params: Parameters, pretrained: Parameters, method: str,
                      strength: float) -> dict:
    """Add the gradient of ``strength * |p - p0|_1`` (L1) or
    ``strength * |p - p0|_2^2`` (L2) to each given gradient."""
    method = method.upper()
    out = {}
    for k, g in grads.items():
        delta = params[k] - pretrained[k]
        if method == "L1":
            out[k] = g + strength * np.sign(delta)
        elif method == "L2":
            out[k] = g + 2.0 * strength * delta
        else:
            raise ConfigError(f"no regularizer for method {method!r}")
    return out


# ---------------------------------------------------------------- LoRA

LORA_TARGETS = (("MHA", "Q"), ("MHA", "K"), ("MHA", "V"), ("FFN", "UP"), ("FFN", "DOWN"))
LORA_RANKS = (4, 8, 16)


@dataclass
class LoraAdapter:
    rank: int
    alpha: float
    weights: dict[ParamId, LoraWeights]

    @property
    def scale(self) -> float:
        return self.alpha / self.rank


def lora_attach(params: Parameters, rank: int, seed: int, init_std: float = 0.01) -> LoraAdapter:
    """Adapters on Q, K, V, UP, DOWN of every layer; B starts at zero."""
    if rank not in LORA_RANKS:
        raise BadRank(f"LoRA rank must be one of {LORA_RANKS}, got {rank}")
    rng = SeededRng(seed, 0x1024)
    alpha = 2.0 * rank
    weights = {}
    for layer in range(1, params.config.num_layers + 1):
        for mod, mat in LORA_TARGETS:
            pid = ParamId(layer, mod, mat)
            d_in, d_out = params[pid].shape
            A = rng.derive(layer, hash_matrix(mat)).normal((rank, d_in), init_std, params.dtype)
            B = np.zeros((d_out, rank), dtype=params.dtype)
            weights[pid] = LoraWeights(A, B, alpha / rank)
    return LoraAdapter(rank, alpha, weights)


def hash_matrix(mat: str) -> int:
    return {"Q": 0, "K": 1, "V": 2, "O": 3, "GATE": 4, "UP": 5, "DOWN": 6}[mat]


def lora_merge(params: Parameters, adapter: LoraAdapter) -> Parameters:
    out = params.copy()
    for pid, w in adapter.weights.items():
        out[pid] = (params[pid] + w.scale * (w.B @ w.A).T).astype(params.dtype)
    return out


def lora_forward(params: Parameters, adapter: LoraAdapter, tokens, mode="eval", rng=None):
    """Forward through the unmerged side paths."""
    return forward(params, tokens, mode, rng=rng, adapters=adapter.weights)


def wise_ft_interpolate(theta: Parameters, theta_hat: Parameters, alpha: float) -> Parameters:
    """``(1 - alpha) * theta + alpha * theta_hat`` for every tensor."""
    if not 0.0 <= alpha <= 1.0:
        raise ConfigError(f"alpha must be in [0, 1], got {alpha}")
    if set(theta.tensors) != set(theta_hat.tensors):
        raise ShapeMismatch("parameter sets differ")
    out = {}
    for k, a in theta.items():
        b = theta_hat[k]
        if a.shape != b.shape:
            raise ShapeMismatch(f"{k}: {a.shape} vs {b.shape}")
        if alpha == 0.0:
            out[k] = a.copy()
        elif alpha == 1.0:
            out[k] = b.copy()
        else:
            out[k] = ((1.0 - alpha) * a + alpha * b).astype(a.dtype)
    return Parameters(theta.config, out)


# ---------------------------------------------------------------- training

@dataclass
class Batch:
    inputs: np.ndarray
    targets: np.ndarray
    mask: np.ndarray


def make_batch(encoded: Sequence[tuple[list[int], list[bool]]]) -> Batch:
    T = max(len(s) for s, _ in encoded) - 1
    B = len(encoded)
    inputs = np.full((B, T), PAD, dtype=np.int64)
    targets = np.full((B, T), PAD, dtype=np.int64)
    mask = np.zeros((B, T), dtype=bool)
    for i, (seq, m) in enumerate(encoded):
        n = len(seq) - 1
        inputs[i, :n] = seq[:-1]
        targets[i, :n] = seq[1:]
        mask[i, :n] = m[1:]
    return Batch(inputs, targets, mask)


def iter_batches(encoded, batch_size: int, rng: SeededRng, epochs: int, group_by_length: bool = False):
    """Shuffled batches per epoch. ``group_by_length`` sorts each window of
    eight batches by sequence length (less padding) and shuffles the
    resulting batches."""
    n = len(encoded)
    for epoch in range(epochs):
        order = list(rng.derive(epoch).permutation(n))
        if not group_by_length:
            for s in range(0, n, batch_size):
                yield make_batch([encoded[i] for i in order[s : s + batch_size]])
            continue
        win = 8 * batch_size
        chunks = []
        for w in range(0, n, win):
            part = sorted(order[w : w + win], key=lambda i: len(encoded[i][0]))
            chunks += [part[s : s + batch_size] for s in range(0, len(part), batch_size)]
        for j in rng.derive(epoch, 1).permutation(len(chunks)):
            yield make_batch([encoded[i] for i in chunks[j]])


def total_steps(n_examples: int, cfg: TrainConfig) -> int:
    steps = cfg.epochs * math.ceil(n_examples / cfg.batch_size) if n_examples else 0
    return min(steps, cfg.max_steps) if cfg.max_steps is not None else steps


@dataclass
class TrainResult:
    params: Parameters
    log: list[dict]
    adapter: LoraAdapter | None = None


def train(
    params: Parameters,
    dataset: Sequence[Example],
    cfg: TrainConfig,
    scope: TuningScope | None = None,
    mask=None,
    adapter: LoraAdapter | None = None,
    pretrained: Parameters | None = None,
) -> TrainResult:
    """Fine-tune a copy of ``params``.

    Per step: train-mode forward, masked SFT loss, backward, optional L1/L2
    penalty (``cfg.method``), optional soft mask (``mask.apply``), then an
    optimizer step with the scheduled learning rate. Parameters outside the
    scope are never written. With ``adapter`` only the LoRA tensors train.
    """
    params = params.copy()
    if adapter is not None:
        trainable: list = []
        adapter = LoraAdapter(adapter.rank, adapter.alpha,
                              {k: LoraWeights(w.A.copy(), w.B.copy(), w.scale) for k, w in adapter.weights.items()})
    else:
        trainable = apply_scope(params, scope or full_scope(params.config.num_layers))
    reg = cfg.method if cfg.method in ("L1", "L2") else None
    if reg is not None:
        pretrained = pretrained if pretrained is not None else params.copy()
    strength = cfg.l1_strength if reg == "L1" else cfg.l2_strength

    encoded = [encode_example(e) for e in dataset]
    steps = total_steps(len(encoded), cfg)
    rng = SeededRng(cfg.seed, 0x7A1)
    if adapter is not None:
        tensors = {}
        for pid, w in adapter.weights.items():
            tensors[(pid, "A")] = w.A
            tensors[(pid, "B")] = w.B
        keys = list(tensors)
    else:
        tensors = params.tensors
        keys = trainable
    state = OptimizerState.for_tensors(tensors, keys)

    log = []
    for step, batch in enumerate(iter_batches(encoded, cfg.batch_size, rng.derive(1), cfg.epochs,
                                                      cfg.group_by_length)):
        if step >= steps:
            break
        logits, trace = forward(params, batch.inputs, "train", rng=rng.derive(2, step),
                                adapters=adapter.weights if adapter else None)
        loss, dlogits = sft_loss(logits, batch.targets, batch.mask)
        g = backward(trace, dlogits, need_param_grads=False if adapter is not None else trainable)
        if adapter is not None:
            grads = {}
            for pid, (dA, dB) in g.adapters.items():
                grads[(pid, "A")] = dA
                grads[(pid, "B")] = dB
        else:
            grads = {k: g.params[k] for k in trainable}
            if reg is not None:
                grads = regularized_grads(grads, params, pretrained, reg, strength)
            if mask is not None:
                grads = mask.apply(grads)
        lr = lr_at(step, steps, cfg)
        if cfg.optimizer == "adam":
            adam_step(tensors, grads, state, lr)
        else:
            sgd_step(tensors, grads, keys, lr)
        log.append({"step": step, "loss": loss, "lr": lr})
    return TrainResult(params, log, adapter)


def write_log(log: list[dict], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for row in log:
            fh.write(json.dumps(row) + "\n")
