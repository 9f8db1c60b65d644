"""Score a parameter set on a task suite: greedy generation for the
speciality task, option log-likelihood for the multiple-choice probes, and
response NLL for instruction following."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import BOS, EOS, ChoiceItem, Example, TaskSuite, build_prompt, detokenize, tokenize
from .metrics import (
    EmbeddingProvider,
    ScoreBreakdown,
    bleu,
    compose,
    embed_match_f1,
    instruct_score,
    pick_choice,
    rouge_l,
    rouge_n,
)
from .model import EMBED_ID, Parameters, decode_greedy_batch, log_likelihood_batch


@dataclass
class EvalOptions:
    instruct_divisor: float = 1000.0
    bleu_max_n: int = 4
    max_new: int = 40
    length_normalized: bool = False
    batch_size: int = 32

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class EvalResult:
    scores: ScoreBreakdown
    details: dict = field(default_factory=dict)


def prompt_ids(e: Example) -> list[int]:
    return [BOS] + tokenize(build_prompt(e, include_output=False))


def option_log_likelihoods(params: Parameters, items: list[ChoiceItem], batch_size: int = 32) -> list[list[float]]:
    """Summed LL of each option (followed by EOS) given the item prompt."""
    pairs, spans = [], []
    for it in items:
        if len(it.options) < 2:
            raise ValueError("a choice item needs at least two options")
        ctx = prompt_ids(it.example)
        spans.append((len(pairs), len(it.options)))
        pairs += [(ctx, tokenize(o) + [EOS]) for o in it.options]
    flat = log_likelihood_batch(params, pairs, batch_size)
    return [flat[s : s + n] for s, n in spans]


def choice_accuracy(params: Parameters, items: list[ChoiceItem], length_normalized: bool = False,
                    batch_size: int = 32) -> tuple[float, list[bool]]:
    if not items:
        raise ValueError("no choice items")
    lls = option_log_likelihoods(params, items, batch_size)
    correct = []
    for it, ll in zip(items, lls):
        lengths = [len(o) + 1 for o in it.options] if length_normalized else None
        correct.append(pick_choice(ll, lengths) == it.answer)
    return float(np.mean(correct)), correct


def response_nll(params: Parameters, examples: list[Example], batch_size: int = 32) -> list[float]:
    pairs = [(prompt_ids(e), tokenize(e.output) + [EOS]) for e in examples]
    return [-x for x in log_likelihood_batch(params, pairs, batch_size)]


def generate(params: Parameters, examples: list[Example], max_new: int, batch_size: int = 32) -> list[list[int]]:
    out: list[list[int]] = []
    for s in range(0, len(examples), batch_size):
        out += decode_greedy_batch(params, [prompt_ids(e) for e in examples[s : s + batch_size]], max_new, EOS)
    return out


def evaluate(params: Parameters, suite: TaskSuite, opts: EvalOptions = EvalOptions(),
             embeddings=None) -> EvalResult:
    """Full score breakdown plus per-item arrays.

    ``embeddings`` is the provider for the embedding-match F1; by default it is
    built from ``params``' own input-embedding rows.
    """
    embeddings = embeddings or EmbeddingProvider(params[EMBED_ID])
    gens = generate(params, suite.speciality_test, opts.max_new, opts.batch_size)
    per = {"embed_f1": [], "bleu": [], "rouge1": [], "rouge2": [], "rougeL": [], "exact": []}
    texts = []
    for e, cand in zip(suite.speciality_test, gens):
        ref = tokenize(e.output)
        per["embed_f1"].append(embed_match_f1(cand, ref, embeddings))
        per["bleu"].append(bleu(cand, [ref], opts.bleu_max_n))
        per["rouge1"].append(rouge_n(cand, ref, 1))
        per["rouge2"].append(rouge_n(cand, ref, 2))
        per["rougeL"].append(rouge_l(cand, ref))
        per["exact"].append(cand == ref)
        texts.append(_safe_text(cand))

    gen_kn, kn_correct = choice_accuracy(params, suite.gen_kn, opts.length_normalized, opts.batch_size)
    subs, rs_correct = {}, {}
    for name, items in suite.gen_rs_subtasks().items():
        if items:
            subs[name], rs_correct[name] = choice_accuracy(params, items, opts.length_normalized, opts.batch_size)
    nlls = response_nll(params, suite.instruct_test, opts.batch_size)
    nll = float(np.mean(nlls))

    means = {k: float(np.mean(v)) for k, v in per.items()}
    scores = compose(
        embed_f1=means["embed_f1"], bleu=means["bleu"], rouge1=means["rouge1"], rouge2=means["rouge2"],
        rougeL=means["rougeL"], gen_kn=gen_kn, gen_rs_sub=subs,
        instruct=instruct_score(nll, opts.instruct_divisor), nll=nll,
    )
    details = {
        "speciality": {k: [float(x) for x in v] for k, v in per.items()},
        "generations": texts,
        "gen_kn_correct": [bool(x) for x in kn_correct],
        "gen_rs_correct": {k: [bool(x) for x in v] for k, v in rs_correct.items()},
        "instruct_nll": nlls,
    }
    return EvalResult(scores, details)


def _safe_text(ids: list[int]) -> str:
    return detokenize([i for i in ids if i > EOS])
