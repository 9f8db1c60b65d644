"""Toy Llama-style decoder with a hand-written backward pass.

Layout conventions: activations are ``(B, T, d)``, weights act on the right
(``h @ W``), so Q/K/V/O are ``d x d``, GATE/UP ``d x f``, DOWN ``f x d``.
Head ``u`` owns columns ``u*dk:(u+1)*dk`` of Q/K/V and the same rows of O;
FFN neuron ``u`` owns column ``u`` of GATE/UP and row ``u`` of DOWN.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Collection, Iterable, Iterator, Mapping, NamedTuple

import numpy as np

from .errors import (
    BadProbability,
    ConfigError,
    SeqTooLong,
    ShapeMismatch,
    TokenOutOfRange,
    TraceMismatch,
)
from .tensor import F32, SeededRng, check_finite, dropout_mask, log_softmax_lastdim, sigmoid

MHA, FFN, NORM1, NORM2 = "MHA", "FFN", "NORM1", "NORM2"
EMBED, LMHEAD, FINALNORM = "EMBED", "LMHEAD", "FINALNORM"
MHA_MATRICES = ("Q", "K", "V", "O")
FFN_MATRICES = ("GATE", "UP", "DOWN")


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int = 99
    embed_dim: int = 64
    num_heads: int = 4
    ffn_dim: int = 176
    num_layers: int = 8
    dropout_p: float = 0.1
    max_seq_len: int = 256
    rms_eps: float = 1e-6
    rope_base: float = 10000.0

    def __post_init__(self):
        if self.num_layers < 1:
            raise ConfigError("num_layers must be >= 1")
        if self.embed_dim % self.num_heads:
            raise ConfigError("embed_dim must be divisible by num_heads")
        if self.head_dim % 2:
            raise ConfigError("head_dim must be even for rotary embeddings")
        if not 0.0 <= self.dropout_p < 1.0:
            raise BadProbability(f"dropout_p must be in [0, 1), got {self.dropout_p}")

    @property
    def head_dim(self) -> int:
        return self.embed_dim // self.num_heads

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: Mapping) -> "ModelConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)


class ParamId(NamedTuple):
    layer: int | str  # 1-based layer index, or EMBED / LMHEAD / FINALNORM
    module: str | None
    matrix: str

    def __str__(self) -> str:
        if isinstance(self.layer, str):
            return self.layer
        return f"L{self.layer}.{self.module}.{self.matrix}"

    @classmethod
    def parse(cls, name: str) -> "ParamId":
        if name in (EMBED, LMHEAD, FINALNORM):
            return cls(name, None, "WEIGHT")
        layer, module, matrix = name.split(".")
        return cls(int(layer[1:]), module, matrix)


EMBED_ID = ParamId(EMBED, None, "WEIGHT")
LMHEAD_ID = ParamId(LMHEAD, None, "WEIGHT")
FINALNORM_ID = ParamId(FINALNORM, None, "WEIGHT")


def param_ids(config: ModelConfig) -> list[ParamId]:
    """All parameter ids in canonical (checkpoint) order."""
    ids = [ParamId(EMBED, None, "WEIGHT")]
    for layer in range(1, config.num_layers + 1):
        ids.append(ParamId(layer, NORM1, "WEIGHT"))
        ids += [ParamId(layer, MHA, m) for m in MHA_MATRICES]
        ids.append(ParamId(layer, NORM2, "WEIGHT"))
        ids += [ParamId(layer, FFN, m) for m in FFN_MATRICES]
    ids.append(ParamId(FINALNORM, None, "WEIGHT"))
    ids.append(ParamId(LMHEAD, None, "WEIGHT"))
    return ids


def param_shape(config: ModelConfig, pid: ParamId) -> tuple[int, ...]:
    d, f, v = config.embed_dim, config.ffn_dim, config.vocab_size
    if pid.layer == EMBED:
        return (v, d)
    if pid.layer == LMHEAD:
        return (d, v)
    if pid.layer == FINALNORM or pid.module in (NORM1, NORM2):
        return (d,)
    if pid.module == MHA:
        return (d, d)
    return {"GATE": (d, f), "UP": (d, f), "DOWN": (f, d)}[pid.matrix]


@dataclass
class Parameters:
    """Named weight tensors of one model."""

    config: ModelConfig
    tensors: dict[ParamId, np.ndarray]

    def __getitem__(self, pid: ParamId) -> np.ndarray:
        return self.tensors[pid]

    def __setitem__(self, pid: ParamId, value: np.ndarray):
        self.tensors[pid] = value

    def __iter__(self) -> Iterator[ParamId]:
        return iter(self.tensors)

    def __len__(self):
        return len(self.tensors)

    def __contains__(self, pid):
        return pid in self.tensors

    def items(self):
        return self.tensors.items()

    @property
    def dtype(self):
        return self.tensors[ParamId(EMBED, None, "WEIGHT")].dtype

    def copy(self) -> "Parameters":
        return Parameters(self.config, {k: v.copy() for k, v in self.tensors.items()})

    def astype(self, dtype) -> "Parameters":
        return Parameters(self.config, {k: v.astype(dtype) for k, v in self.tensors.items()})

    def num_parameters(self) -> int:
        return int(sum(v.size for v in self.tensors.values()))

    def validate(self):
        expected = param_ids(self.config)
        if set(expected) != set(self.tensors):
            raise ShapeMismatch("parameter set does not match config")
        for pid in expected:
            if self.tensors[pid].shape != param_shape(self.config, pid):
                raise ShapeMismatch(f"{pid}: shape {self.tensors[pid].shape}")


def init_params(config: ModelConfig, rng: SeededRng, std: float = 0.02, dtype=F32) -> Parameters:
    tensors = {}
    for i, pid in enumerate(param_ids(config)):
        shape = param_shape(config, pid)
        if len(shape) == 1:
            tensors[pid] = np.ones(shape, dtype=dtype)
        else:
            tensors[pid] = rng.derive(i).normal(shape, std, dtype)
    return Parameters(config, tensors)


# gates: (layer, MHA|FFN) -> vector of length h or f
GateSet = dict[tuple[int, str], np.ndarray]


def ones_gates(config: ModelConfig, modules: Iterable[tuple[int, str]], dtype=F32) -> GateSet:
    return {
        (layer, mod): np.ones(config.num_heads if mod == MHA else config.ffn_dim, dtype=dtype)
        for layer, mod in modules
    }


@dataclass
class LoraWeights:
    """Side path ``h @ W + scale * (h @ A.T) @ B.T`` for one projection."""

    A: np.ndarray  # r x d_in
    B: np.ndarray  # d_out x r
    scale: float


@dataclass
class _LayerCache:
    x: np.ndarray
    inv1: np.ndarray
    h1: np.ndarray
    q: np.ndarray
    k: np.ndarray
    v: np.ndarray
    att: np.ndarray
    att_mask: np.ndarray | None
    o: np.ndarray
    cat: np.ndarray
    xm: np.ndarray
    inv2: np.ndarray
    h2: np.ndarray
    gpre: np.ndarray
    sg: np.ndarray
    up: np.ndarray
    act: np.ndarray
    act_g: np.ndarray
    ffn_mask: np.ndarray | None
    lora_u: dict = field(default_factory=dict)


@dataclass
class ForwardTrace:
    params: Parameters
    tokens: np.ndarray
    mode: str
    gates: GateSet | None
    adapters: Mapping[ParamId, LoraWeights] | None
    layers: list[_LayerCache]
    x_final: np.ndarray
    inv_final: np.ndarray
    h_final: np.ndarray
    logits_shape: tuple[int, ...]
    squeeze: bool
    cos: np.ndarray
    sin: np.ndarray


def _rope_tables(config: ModelConfig, T: int, dtype):
    half = config.head_dim // 2
    inv_freq = config.rope_base ** (-np.arange(half, dtype=np.float64) / half)
    ang = np.arange(T, dtype=np.float64)[:, None] * inv_freq[None, :]
    return np.cos(ang).astype(dtype), np.sin(ang).astype(dtype)


def _rope(x, cos, sin):
    half = x.shape[-1] // 2
    x1, x2 = x[..., :half], x[..., half:]
    return np.concatenate([x1 * cos - x2 * sin, x2 * cos + x1 * sin], axis=-1)


def _rope_back(dy, cos, sin):
    half = dy.shape[-1] // 2
    d1, d2 = dy[..., :half], dy[..., half:]
    return np.concatenate([d1 * cos + d2 * sin, d2 * cos - d1 * sin], axis=-1)


def _rms(x, w, eps):
    inv = 1.0 / np.sqrt(np.mean(x * x, axis=-1, keepdims=True) + eps)
    return w * (x * inv), inv


def _rms_back(dy, x, w, inv):
    g = dy * w
    d = x.shape[-1]
    dx = inv * g - x * (inv**3) * np.sum(g * x, axis=-1, keepdims=True) / d
    dw = np.sum((dy * x * inv).reshape(-1, d), axis=0)
    return dx, dw


def _flat(x):
    return x.reshape(-1, x.shape[-1])


def forward(
    params: Parameters,
    tokens,
    mode: str = "eval",
    gates: GateSet | None = None,
    rng: SeededRng | None = None,
    adapters: Mapping[ParamId, LoraWeights] | None = None,
) -> tuple[np.ndarray, ForwardTrace]:
    """Logits for a ``(T,)`` or right-padded ``(B, T)`` token array.

    Train mode applies inverted dropout to the attention weights and to the
    down_proj output of every layer; eval mode applies none. Gates multiply
    each head's output before W^O and each FFN neuron before W^2.
    """
    cfg = params.config
    toks = np.asarray(tokens, dtype=np.int64)
    squeeze = toks.ndim == 1
    if squeeze:
        toks = toks[None, :]
    B, T = toks.shape
    if T > cfg.max_seq_len:
        raise SeqTooLong(f"sequence length {T} > max_seq_len {cfg.max_seq_len}")
    if T == 0:
        raise SeqTooLong("empty token sequence")
    if toks.min() < 0 or toks.max() >= cfg.vocab_size:
        raise TokenOutOfRange(f"token ids must lie in [0, {cfg.vocab_size})")
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    p = cfg.dropout_p if mode == "train" else 0.0
    if p > 0 and rng is None:
        raise ValueError("train mode with dropout needs an rng")

    dt = params.dtype
    h, dk = cfg.num_heads, cfg.head_dim
    scale = 1.0 / math.sqrt(dk)
    cos, sin = _rope_tables(cfg, T, dt)
    causal = np.triu(np.ones((T, T), dtype=bool), k=1)
    adapters = adapters or {}

    def proj(x, pid, store):
        y = x @ params[pid]
        ad = adapters.get(pid)
        if ad is not None:
            u = x @ ad.A.T
            store[pid] = u
            y = y + ad.scale * (u @ ad.B.T)
        return y

    x = params[ParamId(EMBED, None, "WEIGHT")][toks]
    caches = []
    for layer in range(1, cfg.num_layers + 1):
        lu: dict = {}
        h1, inv1 = _rms(x, params[ParamId(layer, NORM1, "WEIGHT")], cfg.rms_eps)
        q = proj(h1, ParamId(layer, MHA, "Q"), lu).reshape(B, T, h, dk).transpose(0, 2, 1, 3)
        k = proj(h1, ParamId(layer, MHA, "K"), lu).reshape(B, T, h, dk).transpose(0, 2, 1, 3)
        v = proj(h1, ParamId(layer, MHA, "V"), lu).reshape(B, T, h, dk).transpose(0, 2, 1, 3)
        q, k = _rope(q, cos, sin), _rope(k, cos, sin)
        s = (q @ k.transpose(0, 1, 3, 2)) * dt.type(scale)
        s = np.where(causal, -np.inf, s)
        att = np.exp(s - s.max(axis=-1, keepdims=True))
        att = att / att.sum(axis=-1, keepdims=True)
        att_mask = None
        if p > 0:
            att_mask = dropout_mask(att.shape, p, rng.derive(layer, 0), dt)
            o = (att * att_mask) @ v
        else:
            o = att @ v
        og = o
        if gates is not None and (layer, MHA) in gates:
            og = o * gates[(layer, MHA)].astype(dt)[None, :, None, None]
        cat = og.transpose(0, 2, 1, 3).reshape(B, T, h * dk)
        xm = x + proj(cat, ParamId(layer, MHA, "O"), lu)

        h2, inv2 = _rms(xm, params[ParamId(layer, NORM2, "WEIGHT")], cfg.rms_eps)
        gpre = proj(h2, ParamId(layer, FFN, "GATE"), lu)
        up = proj(h2, ParamId(layer, FFN, "UP"), lu)
        sg = sigmoid(gpre)
        act = gpre * sg * up
        act_g = act
        if gates is not None and (layer, FFN) in gates:
            act_g = act * gates[(layer, FFN)].astype(dt)
        down = proj(act_g, ParamId(layer, FFN, "DOWN"), lu)
        ffn_mask = None
        if p > 0:
            ffn_mask = dropout_mask(down.shape, p, rng.derive(layer, 1), dt)
            down = down * ffn_mask
        caches.append(
            _LayerCache(x, inv1, h1, q, k, v, att, att_mask, o, cat, xm, inv2, h2, gpre, sg, up,
                        act, act_g, ffn_mask, lu)
        )
        x = xm + down

    hf, invf = _rms(x, params[ParamId(FINALNORM, None, "WEIGHT")], cfg.rms_eps)
    logits = check_finite(hf @ params[ParamId(LMHEAD, None, "WEIGHT")], "logits")
    trace = ForwardTrace(params, toks, mode, gates, adapters, caches, x, invf, hf, logits.shape,
                         squeeze, cos, sin)
    return (logits[0] if squeeze else logits), trace


@dataclass
class Gradients:
    params: dict[ParamId, np.ndarray]
    gates: dict[tuple[int, str], np.ndarray]
    adapters: dict[ParamId, tuple[np.ndarray, np.ndarray]]


def backward(trace: ForwardTrace, d_logits: np.ndarray, need_param_grads: bool | Collection[ParamId] = True,
             per_sample_gates: bool = False) -> Gradients:
    """Exact gradients of a scalar loss given dLoss/dlogits.

    ``need_param_grads`` is True (every parameter), False (none: only gate and
    adapter gradients, as importance scoring needs) or a collection of ids.
    Backpropagation stops below the lowest layer that still needs a
    gradient. With ``per_sample_gates`` gate gradients keep the batch axis,
    shape (B, units).
    """
    params = trace.params
    cfg = params.config
    dl = np.asarray(d_logits)
    if trace.squeeze and dl.ndim == 2:
        dl = dl[None]
    if dl.shape != trace.logits_shape:
        raise TraceMismatch(f"d_logits shape {dl.shape} != logits shape {trace.logits_shape}")
    dl = dl.astype(params.dtype, copy=False)
    B, T, _ = trace.logits_shape
    h, dk = cfg.num_heads, cfg.head_dim
    dt = params.dtype
    scale = dt.type(1.0 / math.sqrt(dk))
    grads: dict[ParamId, np.ndarray] = {}
    gate_grads: dict[tuple[int, str], np.ndarray] = {}
    ad_grads: dict[ParamId, tuple[np.ndarray, np.ndarray]] = {}
    adapters = trace.adapters or {}
    if need_param_grads is True or need_param_grads is False:
        wanted = None
        want = (lambda pid: True) if need_param_grads else (lambda pid: False)
    else:
        wanted = set(need_param_grads)
        want = wanted.__contains__
    needed_layers = [k[0] for k in (trace.gates or {})] + [k.layer for k in adapters if isinstance(k.layer, int)]
    if need_param_grads is True or (wanted is not None and EMBED_ID in wanted):
        needed_layers.append(0)
    needed_layers += [k.layer for k in (wanted or ()) if isinstance(k.layer, int)]
    lowest = max(min(needed_layers, default=cfg.num_layers + 1), 1)

    def proj_back(dy, x, pid, lu):
        W = params[pid]
        if want(pid):
            grads[pid] = _flat(x).T @ _flat(dy)
        dx = dy @ W.T
        ad = adapters.get(pid)
        if ad is not None:
            u = lu[pid]
            du = ad.scale * (dy @ ad.B)
            dB = ad.scale * (_flat(dy).T @ _flat(u))
            dA = _flat(du).T @ _flat(x)
            ad_grads[pid] = (dA, dB)
            dx = dx + du @ ad.A
        return dx

    lm = ParamId(LMHEAD, None, "WEIGHT")
    if want(lm):
        grads[lm] = _flat(trace.h_final).T @ _flat(dl)
    dhf = dl @ params[lm].T
    fn = ParamId(FINALNORM, None, "WEIGHT")
    dx, dwf = _rms_back(dhf, trace.x_final, params[fn], trace.inv_final)
    if want(fn):
        grads[fn] = dwf

    for layer in range(cfg.num_layers, lowest - 1, -1):
        c = trace.layers[layer - 1]
        # FFN branch
        ddown = dx if c.ffn_mask is None else dx * c.ffn_mask
        dact_g = proj_back(ddown, c.act_g, ParamId(layer, FFN, "DOWN"), c.lora_u)
        dact = dact_g
        if trace.gates is not None and (layer, FFN) in trace.gates:
            g = trace.gates[(layer, FFN)].astype(dt)
            prod = dact_g * c.act
            gate_grads[(layer, FFN)] = (prod.reshape(B, -1, prod.shape[-1]).sum(axis=1) if per_sample_gates
                                        else np.sum(_flat(prod), axis=0))
            dact = dact_g * g
        dup = dact * (c.gpre * c.sg)
        dgpre = dact * c.up * (c.sg * (1.0 + c.gpre * (1.0 - c.sg)))
        dh2 = proj_back(dgpre, c.h2, ParamId(layer, FFN, "GATE"), c.lora_u)
        dh2 = dh2 + proj_back(dup, c.h2, ParamId(layer, FFN, "UP"), c.lora_u)
        n2 = ParamId(layer, NORM2, "WEIGHT")
        dxm_n, dw2 = _rms_back(dh2, c.xm, params[n2], c.inv2)
        if want(n2):
            grads[n2] = dw2
        dxm = dx + dxm_n

        # attention branch
        dcat = proj_back(dxm, c.cat, ParamId(layer, MHA, "O"), c.lora_u)
        dog = dcat.reshape(B, T, h, dk).transpose(0, 2, 1, 3)
        do = dog
        if trace.gates is not None and (layer, MHA) in trace.gates:
            g = trace.gates[(layer, MHA)].astype(dt)
            gate_grads[(layer, MHA)] = np.sum(dog * c.o, axis=(2, 3) if per_sample_gates else (0, 2, 3))
            do = dog * g[None, :, None, None]
        att_d = c.att if c.att_mask is None else c.att * c.att_mask
        dv = att_d.transpose(0, 1, 3, 2) @ do
        datt = do @ c.v.transpose(0, 1, 3, 2)
        if c.att_mask is not None:
            datt = datt * c.att_mask
        ds = c.att * (datt - np.sum(datt * c.att, axis=-1, keepdims=True))
        dq = (ds @ c.k) * scale
        dkk = (ds.transpose(0, 1, 3, 2) @ c.q) * scale
        dq = _rope_back(dq, trace.cos, trace.sin)
        dkk = _rope_back(dkk, trace.cos, trace.sin)

        def merge(t):
            return t.transpose(0, 2, 1, 3).reshape(B, T, h * dk)

        dh1 = proj_back(merge(dq), c.h1, ParamId(layer, MHA, "Q"), c.lora_u)
        dh1 = dh1 + proj_back(merge(dkk), c.h1, ParamId(layer, MHA, "K"), c.lora_u)
        dh1 = dh1 + proj_back(merge(dv), c.h1, ParamId(layer, MHA, "V"), c.lora_u)
        n1 = ParamId(layer, NORM1, "WEIGHT")
        dx_n, dw1 = _rms_back(dh1, c.x, params[n1], c.inv1)
        if want(n1):
            grads[n1] = dw1
        dx = dxm + dx_n

    if want(EMBED_ID):
        emb = EMBED_ID
        dE = np.zeros_like(params[emb])
        np.add.at(dE, trace.tokens.reshape(-1), _flat(dx))
        grads[emb] = dE
    return Gradients(grads, gate_grads, ad_grads)


def _pad_batch(seqs: list[list[int]], pad: int = 0) -> np.ndarray:
    T = max(len(s) for s in seqs)
    out = np.full((len(seqs), T), pad, dtype=np.int64)
    for i, s in enumerate(seqs):
        out[i, : len(s)] = s
    return out


def _decode_step(params: Parameters, toks: np.ndarray, pos: np.ndarray, kv: list, adapters) -> np.ndarray:
    """Eval-mode logits (B, V) for one new token per row at positions ``pos``,
    attending to the key/value cache ``kv`` (updated in place)."""
    cfg = params.config
    dt = params.dtype
    B = len(toks)
    h, dk = cfg.num_heads, cfg.head_dim
    cos, sin = _rope_tables(cfg, cfg.max_seq_len, dt)
    cos, sin = cos[pos][:, None, None, :], sin[pos][:, None, None, :]
    rows = np.arange(B)
    hidden = np.arange(kv[0][0].shape[2])[None, None, None, :] > pos[:, None, None, None]

    def proj(x, pid):
        y = x @ params[pid]
        ad = adapters.get(pid)
        if ad is not None:
            y = y + ad.scale * ((x @ ad.A.T) @ ad.B.T)
        return y

    x = params[EMBED_ID][toks][:, None, :]
    for layer in range(1, cfg.num_layers + 1):
        K, V = kv[layer - 1]
        h1, _ = _rms(x, params[ParamId(layer, NORM1, "WEIGHT")], cfg.rms_eps)
        q, k, v = (proj(h1, ParamId(layer, MHA, m)).reshape(B, 1, h, dk).transpose(0, 2, 1, 3) for m in "QKV")
        q, k = _rope(q, cos, sin), _rope(k, cos, sin)
        K[rows, :, pos] = k[:, :, 0]
        V[rows, :, pos] = v[:, :, 0]
        sc = np.where(hidden, -np.inf, (q @ K.transpose(0, 1, 3, 2)) * dt.type(1.0 / math.sqrt(dk)))
        att = np.exp(sc - sc.max(axis=-1, keepdims=True))
        att = att / att.sum(axis=-1, keepdims=True)
        cat = (att @ V).transpose(0, 2, 1, 3).reshape(B, 1, h * dk)
        xm = x + proj(cat, ParamId(layer, MHA, "O"))
        h2, _ = _rms(xm, params[ParamId(layer, NORM2, "WEIGHT")], cfg.rms_eps)
        gpre = proj(h2, ParamId(layer, FFN, "GATE"))
        x = xm + proj(gpre * sigmoid(gpre) * proj(h2, ParamId(layer, FFN, "UP")), ParamId(layer, FFN, "DOWN"))
    hf, _ = _rms(x, params[FINALNORM_ID], cfg.rms_eps)
    return check_finite(hf[:, 0] @ params[LMHEAD_ID], "logits")


def decode_greedy_batch(params: Parameters, prompts: list[list[int]], max_new: int, eos: int,
                        adapters=None) -> list[list[int]]:
    """Greedy continuation of several prompts at once: one eval forward over
    the right-padded prompts (safe because attention is causal), then one
    token per step against a key/value cache."""
    cfg = params.config
    if any(len(p) == 0 for p in prompts):
        raise ValueError("prompt must be nonempty")
    longest = max(len(p) for p in prompts)
    if longest + max_new > cfg.max_seq_len:
        raise SeqTooLong(f"prompt ({longest}) + max_new ({max_new}) > {cfg.max_seq_len}")
    outs: list[list[int]] = [[] for _ in prompts]
    if max_new <= 0:
        return outs
    logits, trace = forward(params, _pad_batch(prompts), "eval", adapters=adapters)
    width = longest + max_new
    kv = []
    for c in trace.layers:
        K = np.zeros(c.k.shape[:2] + (width, c.k.shape[3]), dtype=params.dtype)
        V = np.zeros_like(K)
        K[:, :, :longest], V[:, :, :longest] = c.k, c.v
        kv.append((K, V))
    pos = np.array([len(p) for p in prompts])
    # argmax: first max = lowest id
    nxt = np.argmax(logits[np.arange(len(prompts)), pos - 1], axis=-1)
    live = np.ones(len(prompts), dtype=bool)
    for step in range(max_new):
        live &= nxt != eos
        if not live.any():
            break
        for i in np.flatnonzero(live):
            outs[i].append(int(nxt[i]))
        if step == max_new - 1:
            break
        logits = _decode_step(params, np.where(live, nxt, eos), pos, kv, adapters or {})
        pos = pos + live
        nxt = np.argmax(logits, axis=-1)
    return outs


def decode_greedy(params: Parameters, prompt: list[int], max_new: int, eos: int) -> list[int]:
    return decode_greedy_batch(params, [prompt], max_new, eos)[0]


def log_likelihood_batch(params: Parameters, pairs: list[tuple[list[int], list[int]]],
                         batch_size: int = 32) -> list[float]:
    """Summed log p(continuation | context) for each (context, continuation)."""
    out: list[float] = []
    for start in range(0, len(pairs), batch_size):
        chunk = pairs[start : start + batch_size]
        seqs = []
        for ctx, cont in chunk:
            if len(cont) == 0:
                raise ValueError("continuation must be nonempty")
            if len(ctx) == 0:
                raise ValueError("context must be nonempty")
            seqs.append(list(ctx) + list(cont))
        batch = _pad_batch([s[:-1] for s in seqs])
        logits, _ = forward(params, batch, "eval")
        logp = log_softmax_lastdim(logits.astype(np.float64))
        for row, (ctx, cont) in enumerate(chunk):
            pos = np.arange(len(ctx) - 1, len(ctx) - 1 + len(cont))
            out.append(float(np.sum(logp[row, pos, np.asarray(cont)])))
    return out


def log_likelihood(params: Parameters, context: list[int], continuation: list[int]) -> float:
    return log_likelihood_batch(params, [(context, continuation)])[0]
