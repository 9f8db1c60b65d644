"""Scoring: n-gram overlap (BLEU, Rouge-1/2/L), greedy embedding-match F1,
the log-likelihood instruction score, multiple-choice accuracy, and the
composite Spec / Vers / Uni formulas."""
from __future__ import annotations

import math
from collections import Counter
from dataclasses import asdict, dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .errors import MissingScore, UnknownToken

BLEU_EPS = 1e-9


def _ngrams(seq: Sequence, n: int) -> Counter:
    return Counter(tuple(seq[i : i + n]) for i in range(len(seq) - n + 1))


def bleu(candidate: Sequence, references: Sequence[Sequence], max_n: int = 4) -> float:
    """Sentence BLEU: clipped n-gram precisions (zero matches replaced by a
    1e-9 count), geometric mean, brevity penalty against the closest
    reference length. Orders longer than the candidate are skipped."""
    if not references:
        raise ValueError("bleu needs at least one reference")
    c = len(candidate)
    if c == 0:
        return 0.0
    log_p = []
    for n in range(1, max_n + 1):
        cand = _ngrams(candidate, n)
        total = sum(cand.values())
        if total == 0:
            break
        max_ref: Counter = Counter()
        for ref in references:
            for g, k in _ngrams(ref, n).items():
                max_ref[g] = max(max_ref[g], k)
        clipped = sum(min(k, max_ref[g]) for g, k in cand.items())
        log_p.append(math.log(max(clipped, BLEU_EPS) / total))
    r = min((len(ref) for ref in references), key=lambda L: (abs(L - c), L))
    bp = 1.0 if c >= r else math.exp(1.0 - r / c)
    return bp * math.exp(sum(log_p) / len(log_p))


def _f1(p: float, r: float) -> float:
    return 0.0 if p + r == 0 else 2.0 * p * r / (p + r)


def rouge_n(candidate: Sequence, reference: Sequence, n: int) -> float:
    if n < 1:
        raise ValueError("n must be >= 1")
    cand, ref = _ngrams(candidate, n), _ngrams(reference, n)
    nc, nr = sum(cand.values()), sum(ref.values())
    if nc == 0 or nr == 0:
        return 0.0
    overlap = sum(min(k, ref[g]) for g, k in cand.items())
    return _f1(overlap / nc, overlap / nr)


def lcs_length(a: Sequence, b: Sequence) -> int:
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b):
            cur.append(prev[j] + 1 if x == y else max(prev[j + 1], cur[j]))
        prev = cur
    return prev[-1]


def rouge_l(candidate: Sequence, reference: Sequence) -> float:
    if not candidate or not reference:
        return 0.0
    lcs = lcs_length(candidate, reference)
    return _f1(lcs / len(candidate), lcs / len(reference))


class EmbeddingProvider:
    """Token id -> unit vector, from the rows of an embedding table."""

    def __init__(self, table: np.ndarray):
        t = np.asarray(table, dtype=np.float64)
        norms = np.linalg.norm(t, axis=1, keepdims=True)
        self.table = t / np.where(norms == 0, 1.0, norms)

    def __call__(self, ids: Sequence[int]) -> np.ndarray:
        ids = np.asarray(ids, dtype=np.int64)
        if ids.size and (ids.min() < 0 or ids.max() >= len(self.table)):
            raise UnknownToken("token id outside the embedding table")
        return self.table[ids]


def embed_match_f1(candidate: Sequence[int], reference: Sequence[int], embeddings) -> float:
    """Greedy cosine matching F1 (the BERTScore procedure) over ``embeddings``."""
    if len(candidate) == 0 or len(reference) == 0:
        return 0.0
    sim = embeddings(candidate) @ embeddings(reference).T
    precision = float(np.mean(sim.max(axis=1)))
    recall = float(np.mean(sim.max(axis=0)))
    return _f1(precision, recall)


def instruct_score(total_nll: float, divisor: float = 1000.0) -> float:
    return 1.0 - total_nll / divisor


def pick_choice(option_lls: Sequence[float], lengths: Sequence[int] | None = None) -> int:
    """Index of the best option; ties go to the lowest index."""
    scores = np.asarray(option_lls, dtype=np.float64)
    if lengths is not None:
        scores = scores / np.asarray(lengths, dtype=np.float64)
    return int(np.argmax(scores))


@dataclass
class ScoreBreakdown:
    spec: float
    vers: float
    uni: float
    vers_wo_instruct: float
    uni_wo_instruct: float
    gen_kn: float
    gen_rs: float
    instruct: float
    gen_rs_sub: dict[str, float] = field(default_factory=dict)
    embed_f1: float | None = None
    bleu: float | None = None
    rouge1: float | None = None
    rouge2: float | None = None
    rougeL: float | None = None
    rouge: float | None = None
    accuracy: float | None = None
    nll: float | None = None

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: Mapping) -> "ScoreBreakdown":
        return cls(**{k: d[k] for k in cls.__dataclass_fields__ if k in d})

    def csv_header(self) -> list[str]:
        return (["BERTScore", "Rouge", "BLEU", "Rouge-1", "Rouge-2", "Rouge-L", "Spec",
                 "Instruct", "Gen-Kn", "Gen-Rs"] + list(self.gen_rs_sub)
                + ["Vers", "Uni", "Uni-wo-instruct"])

    def csv_row(self) -> list:
        return ([self.embed_f1, self.rouge, self.bleu, self.rouge1, self.rouge2, self.rougeL, self.spec,
                 self.instruct, self.gen_kn, self.gen_rs] + list(self.gen_rs_sub.values())
                + [self.vers, self.uni, self.uni_wo_instruct])


def _need(name, value):
    if value is None:
        raise MissingScore(f"missing raw score: {name}")
    return float(value)


def compose(
    *,
    gen_kn: float | None = None,
    instruct: float | None = None,
    gen_rs: float | None = None,
    gen_rs_sub: Mapping[str, float] | None = None,
    embed_f1: float | None = None,
    bleu: float | None = None,
    rouge1: float | None = None,
    rouge2: float | None = None,
    rougeL: float | None = None,
    accuracy: float | None = None,
    spec_kind: str = "generative",
    nll: float | None = None,
) -> ScoreBreakdown:
    """Build every composite from raw scores.

    Rouge = mean(R1, R2, RL); Spec = mean(embed-F1, Rouge, BLEU) for
    generative tasks or the accuracy for exact-answer tasks; Gen-Rs = mean of
    its sub-scores when given; Vers = mean(Gen-Kn, Gen-Rs, Instruct);
    Uni = Spec + Vers. The "w/o instruct" variants drop Instruct from Vers.
    """
    rouge = None
    if spec_kind == "generative":
        r1, r2, rl = _need("rouge1", rouge1), _need("rouge2", rouge2), _need("rougeL", rougeL)
        rouge = (r1 + r2 + rl) / 3.0
        spec = (_need("embed_f1", embed_f1) + rouge + _need("bleu", bleu)) / 3.0
    elif spec_kind == "accuracy":
        spec = _need("accuracy", accuracy)
    else:
        raise ValueError(f"unknown spec_kind {spec_kind!r}")
    subs = dict(gen_rs_sub or {})
    if subs:
        gen_rs = sum(subs.values()) / len(subs)
    gk, gr, ins = _need("gen_kn", gen_kn), _need("gen_rs", gen_rs), _need("instruct", instruct)
    vers = (gk + gr + ins) / 3.0
    vers_wo = (gk + gr) / 2.0
    return ScoreBreakdown(
        spec=spec, vers=vers, uni=spec + vers, vers_wo_instruct=vers_wo, uni_wo_instruct=spec + vers_wo,
        gen_kn=gk, gen_rs=gr, instruct=ins, gen_rs_sub=subs,
        embed_f1=None if embed_f1 is None else float(embed_f1),
        bleu=None if bleu is None else float(bleu),
        rouge1=None if rouge1 is None else float(rouge1),
        rouge2=None if rouge2 is None else float(rouge2),
        rougeL=None if rougeL is None else float(rougeL),
        rouge=rouge, accuracy=None if accuracy is None else float(accuracy), nll=nll,
    )
