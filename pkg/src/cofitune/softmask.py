"""Unit importance from two dropout-perturbed passes, and gradient soft-masking.

A unit is an attention head or an intermediate FFN neuron. Its importance is
the mean absolute gradient of KL(P1 || P2) with respect to a multiplicative
all-ones gate on that unit, where P1 and P2 come from two train-mode passes
over the same sequence with independent dropout draws. Fine-tuning then
scales each unit's parameter gradients by ``1 - importance``.
"""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .data import PAD, Example, encode_example
from .errors import BadProbability, ShapeMismatch
from .model import FFN, MHA, Parameters, ParamId, backward, forward, ones_gates
from .tensor import SeededRng, log_softmax_lastdim
from .trainer import TrainConfig, TrainResult, TuningScope, full_scope, train


@dataclass
class ImportanceVector:
    layer: int
    module: str  # MHA or FFN
    values: np.ndarray
    raw_max: float | None = None


@dataclass
class ImportanceMaskSet:
    vectors: dict[tuple[int, str], ImportanceVector] = field(default_factory=dict)
    scope: str | None = None
    normalized: bool = False

    def apply(self, grads: dict) -> dict:
        return mask_gradients(grads, self)

    def to_json(self) -> dict:
        return {
            "scope": self.scope,
            "normalized": self.normalized,
            "modules": [
                {"layer": v.layer, "module": v.module, "values": [float(x) for x in v.values],
                 "raw_max": v.raw_max}
                for _, v in sorted(self.vectors.items())
            ],
        }

    @classmethod
    def from_json(cls, d: dict) -> "ImportanceMaskSet":
        vecs = {}
        for m in d["modules"]:
            vecs[(m["layer"], m["module"])] = ImportanceVector(
                m["layer"], m["module"], np.asarray(m["values"], dtype=np.float64), m.get("raw_max"))
        return cls(vecs, d.get("scope"), d.get("normalized", False))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=1) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "ImportanceMaskSet":
        return cls.from_json(json.loads(Path(path).read_text()))


def modules_for_scope(scope: TuningScope) -> list[tuple[int, str]]:
    """Module instances a scope touches: MHA for MHA, FFN for FFN/UP/DOWN."""
    kinds = []
    if scope.modules & {"MHA", "ALL"}:
        kinds.append(MHA)
    if scope.modules & {"FFN", "UP", "DOWN", "ALL"}:
        kinds.append(FFN)
    return [(layer, k) for layer in scope.layers() for k in kinds]


def kl_and_grads(logits1: np.ndarray, logits2: np.ndarray):
    """KL(softmax(l1) || softmax(l2)) averaged over positions, with gradients
    for both logit arrays."""
    lp1 = log_softmax_lastdim(logits1)
    lp2 = log_softmax_lastdim(logits2)
    p1, p2 = np.exp(lp1), np.exp(lp2)
    diff = lp1 - lp2
    per_pos = np.sum(p1 * diff, axis=-1, keepdims=True)
    n = per_pos.size
    loss = float(np.sum(per_pos, dtype=np.float64) / n)
    d1 = p1 * (diff - per_pos) / n
    d2 = (p2 - p1) / n
    return loss, d1, d2


def batched_kl_and_grads(logits1: np.ndarray, logits2: np.ndarray, lengths: Sequence[int]):
    """Per-sequence KL(P1 || P2) over (B, T, V) logits, each sequence averaged
    over its first ``lengths[b]`` positions (padding contributes nothing).

    Returns ``(losses[B], d1, d2)`` where d1, d2 are the gradients of
    ``sum(losses)``."""
    B, T, _ = logits1.shape
    n = np.asarray(lengths)
    if n.shape != (B,) or np.any(n < 1) or np.any(n > T):
        raise ShapeMismatch(f"lengths {list(n)} do not fit logits of shape {logits1.shape}")
    w = (np.arange(T)[None, :] < n[:, None]) / n[:, None]  # (B, T)
    lp1 = log_softmax_lastdim(logits1)
    lp2 = log_softmax_lastdim(logits2)
    p1, p2 = np.exp(lp1), np.exp(lp2)
    diff = lp1 - lp2
    per_pos = np.sum(p1 * diff, axis=-1, keepdims=True)
    losses = np.sum(per_pos[..., 0] * w, axis=1, dtype=np.float64)
    w = w[..., None].astype(logits1.dtype)
    return losses, p1 * (diff - per_pos) * w, (p2 - p1) * w


def _with_dropout(params: Parameters, p: float) -> Parameters:
    cfg = dataclasses.replace(params.config, dropout_p=p)
    return Parameters(cfg, params.tensors)


def sample_streams(seed: int, k: int, equal_streams: bool = False) -> tuple[SeededRng, SeededRng]:
    base = SeededRng(seed, 0x1AB).derive(k)
    return (base.derive(1), base.derive(1) if equal_streams else base.derive(2))


def compute_importance(
    params: Parameters,
    data: Sequence[Example],
    dropout_p: float,
    target_modules: Iterable[tuple[int, str]],
    seed: int,
    equal_streams: bool = False,
    batch_size: int = 16,
) -> ImportanceMaskSet:
    """Raw importances, ``1/K * sum_k |dKL_k / dg|`` over the K sequences.

    Sequences are processed ``batch_size`` at a time (right-padded); batch j
    draws its two dropout streams from ``sample_streams(seed, j)``. Gate
    gradients are kept per sequence, so the absolute value is taken before
    summing over sequences."""
    if not 0.0 < dropout_p < 1.0:
        raise BadProbability(f"importance needs 0 < dropout_p < 1, got {dropout_p}")
    if len(data) == 0:
        raise ValueError("importance needs at least one sample")
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    targets = list(target_modules)
    pp = _with_dropout(params, dropout_p)
    gates = ones_gates(params.config, targets, params.dtype)
    acc = {key: np.zeros(len(g), dtype=np.float64) for key, g in gates.items()}
    for j, start in enumerate(range(0, len(data), batch_size)):
        seqs = [encode_example(ex)[0] for ex in data[start:start + batch_size]]
        lengths = [len(q) for q in seqs]
        tokens = np.full((len(seqs), max(lengths)), PAD, dtype=np.int64)
        for i, q in enumerate(seqs):
            tokens[i, :len(q)] = q
        r1, r2 = sample_streams(seed, j, equal_streams)
        l1, t1 = forward(pp, tokens, "train", gates, r1)
        l2, t2 = forward(pp, tokens, "train", gates, r2)
        _, d1, d2 = batched_kl_and_grads(l1, l2, lengths)
        g1 = backward(t1, d1, need_param_grads=False, per_sample_gates=True).gates
        g2 = backward(t2, d2, need_param_grads=False, per_sample_gates=True).gates
        for key in acc:
            acc[key] += np.abs(g1[key].astype(np.float64) + g2[key]).sum(axis=0)
    K = len(data)
    vecs = {key: ImportanceVector(key[0], key[1], v / K) for key, v in acc.items()}
    return ImportanceMaskSet(vecs)


def normalize_importance(raw: ImportanceMaskSet) -> ImportanceMaskSet:
    """Divide each module instance by its own max (zeros stay zeros)."""
    out = {}
    for key, v in raw.vectors.items():
        vals = np.asarray(v.values, dtype=np.float64)
        if np.any(vals < 0):
            raise ValueError("raw importances must be non-negative")
        mx = float(vals.max()) if vals.size else 0.0
        norm = vals / mx if mx > 0 else vals.copy()
        out[key] = ImportanceVector(v.layer, v.module, norm, v.raw_max if v.raw_max is not None else mx)
    return ImportanceMaskSet(out, raw.scope, True)


def unit_factors(values: np.ndarray, width: int) -> np.ndarray:
    """Per-coordinate factors ``1 - I`` expanded by copying each unit ``width`` times."""
    return np.repeat(1.0 - np.asarray(values, dtype=np.float64), width)


def mask_gradients(grads: dict, masks: ImportanceMaskSet) -> dict:
    """Scale each masked unit's gradient slices by ``1 - I``.

    Head u: columns of its block in Q/K/V and rows of its block in O.
    Neuron u: column u of UP and row u of DOWN. Everything else is returned
    unchanged (same array objects).
    """
    out = dict(grads)
    for (layer, module), vec in masks.vectors.items():
        vals = np.asarray(vec.values)
        if module == MHA:
            for mat in ("Q", "K", "V", "O"):
                pid = ParamId(layer, MHA, mat)
                if pid not in grads:
                    continue
                g = grads[pid]
                d = g.shape[1] if mat != "O" else g.shape[0]
                if d % len(vals):
                    raise ShapeMismatch(f"{pid}: {d} not divisible by {len(vals)} heads")
                f = unit_factors(vals, d // len(vals)).astype(g.dtype)
                out[pid] = g * (f[None, :] if mat != "O" else f[:, None])
        elif module == FFN:
            for mat in ("UP", "DOWN"):
                pid = ParamId(layer, FFN, mat)
                if pid not in grads:
                    continue
                g = grads[pid]
                n = g.shape[1] if mat == "UP" else g.shape[0]
                if n != len(vals):
                    raise ShapeMismatch(f"{pid}: {n} neurons vs {len(vals)} importances")
                f = (1.0 - vals.astype(np.float64)).astype(g.dtype)
                out[pid] = g * (f[None, :] if mat == "UP" else f[:, None])
        else:
            raise ShapeMismatch(f"unknown module kind {module!r}")
    return out


def default_scope(num_layers: int) -> TuningScope:
    """``(N*25%, N*50%]`` over up/down projections."""
    return TuningScope(num_layers // 4, num_layers // 2, frozenset({"FFN"}))


@dataclass
class SoftMaskRun:
    result: TrainResult
    masks: ImportanceMaskSet | None
    scope: TuningScope


def cofitune_train(
    params: Parameters,
    dataset: Sequence[Example],
    cfg: TrainConfig,
    scope: TuningScope | None = None,
    use_mask: bool = True,
    masks: ImportanceMaskSet | None = None,
) -> SoftMaskRun:
    """Freeze everything outside ``scope`` (default ``default_scope(N)``),
    score the in-scope units on the first K training samples, then train with
    the soft mask. ``use_mask=False`` is the freeze-only ablation."""
    scope = scope or default_scope(params.config.num_layers)
    if use_mask and masks is None:
        raw = compute_importance(params, dataset[: cfg.importance_samples], cfg.importance_dropout,
                                 modules_for_scope(scope), cfg.seed)
        raw.scope = str(scope)
        masks = normalize_importance(raw)
    res = train(params, dataset, dataclasses.replace(cfg, method="COFITUNE"), scope,
                mask=masks if use_mask else None)
    return SoftMaskRun(res, masks if use_mask else None, scope)


def vsoftmask_train(params: Parameters, dataset: Sequence[Example], cfg: TrainConfig) -> SoftMaskRun:
    """All parameters trainable; MHA and FFN of every layer soft-masked."""
    scope = full_scope(params.config.num_layers)
    raw = compute_importance(params, dataset[: cfg.importance_samples], cfg.importance_dropout,
                             vsoftmask_modules(params.config.num_layers), cfg.seed)
    raw.scope = str(scope)
    masks = normalize_importance(raw)
    res = train(params, dataset, dataclasses.replace(cfg, method="VSOFTMASK"), scope, mask=masks)
    return SoftMaskRun(res, masks, scope)


def vsoftmask_modules(num_layers: int) -> list[tuple[int, str]]:
    return [(layer, k) for layer in range(1, num_layers + 1) for k in (MHA, FFN)]
