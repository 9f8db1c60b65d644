import numpy as np
import pytest
from hypothesis import given, strategies as st

from cofitune.errors import MissingScore, UnknownToken
from cofitune.metrics import (
    EmbeddingProvider,
    bleu,
    compose,
    embed_match_f1,
    instruct_score,
    lcs_length,
    pick_choice,
    rouge_l,
    rouge_n,
)

seqs = st.lists(st.integers(0, 5), min_size=1, max_size=12)


def test_bleu_examples():
    assert bleu([1, 2, 3, 4, 5], [[1, 2, 3, 4, 5]]) == pytest.approx(1.0)
    assert bleu([], [[1, 2]]) == 0.0
    assert bleu(["a", "b"], [["a", "c"]], max_n=1) == pytest.approx(0.5)


def test_bleu_brevity_penalty():
    # all unigrams match, candidate half the reference length
    assert bleu([1, 2], [[1, 2, 3, 4]], max_n=1) == pytest.approx(np.exp(1 - 4 / 2))


def test_bleu_zero_count_smoothing():
    # no bigram matches: p2 = 1e-9 / 1
    assert bleu([1, 2], [[2, 1]], max_n=2) == pytest.approx(np.sqrt(1.0 * 1e-9))


def test_bleu_needs_reference():
    with pytest.raises(ValueError):
        bleu([1], [])


def test_rouge_examples():
    assert rouge_n(["a", "b"], ["a", "c"], 1) == pytest.approx(0.5)
    assert rouge_l(["a", "b", "c"], ["a", "c"]) == pytest.approx(0.8)
    assert rouge_n([1], [1], 2) == 0.0  # no bigrams on either side
    assert lcs_length("abcbdab", "bdcaba") == 4


@given(seqs)
def test_identical_sequences_score_one(s):
    assert rouge_n(s, s, 1) == pytest.approx(1.0)
    assert rouge_l(s, s) == pytest.approx(1.0)
    assert bleu(s, [s]) == pytest.approx(1.0)
    if len(s) >= 2:
        assert rouge_n(s, s, 2) == pytest.approx(1.0)


@given(seqs, seqs)
def test_metrics_in_unit_interval(a, b):
    for v in (bleu(a, [b]), rouge_n(a, b, 1), rouge_n(a, b, 2), rouge_l(a, b)):
        assert 0.0 <= v <= 1.0 + 1e-12


def _unit_vectors():
    a = np.array([1.0, 0.0, 0.0])
    b = np.array([0.0, 1.0, 0.0])
    c = np.array([0.0, 0.5, np.sqrt(0.75)])
    return EmbeddingProvider(np.stack([a, b, c]))


def test_embed_match_hand_value():
    emb = _unit_vectors()  # a.b = 0, a.c = 0, b.c = 0.5
    assert embed_match_f1([0, 1], [0, 2], emb) == pytest.approx(0.75)


def test_embed_match_edges():
    emb = EmbeddingProvider(np.eye(3))
    assert embed_match_f1([0, 1], [0, 1], emb) == pytest.approx(1.0)
    assert embed_match_f1([0], [1, 2], emb) == 0.0
    assert embed_match_f1([], [1], emb) == 0.0
    with pytest.raises(UnknownToken):
        embed_match_f1([5], [1], emb)


@given(st.lists(st.integers(0, 4), min_size=1, max_size=6), st.lists(st.integers(0, 4), min_size=1, max_size=6),
       st.randoms(use_true_random=False))
def test_embed_precision_order_invariant(cand, ref, rnd):
    emb = EmbeddingProvider(np.random.default_rng(0).normal(size=(5, 4)))
    shuffled = list(cand)
    rnd.shuffle(shuffled)
    assert embed_match_f1(shuffled, ref, emb) == pytest.approx(embed_match_f1(cand, ref, emb))


def test_instruct_score():
    assert instruct_score(531.27) == pytest.approx(0.46873)
    assert instruct_score(0.0) == 1.0
    assert instruct_score(1000.0, 1000.0) == 0.0
    assert instruct_score(1500.0) == pytest.approx(-0.5)  # no clamping


def test_pick_choice_ties_low():
    assert pick_choice([-1.0, -1.0, -3.0]) == 0
    assert pick_choice([-5.0, -1.0, -1.0]) == 1
    assert pick_choice([-4.0, -6.0], lengths=[4, 2]) == 0


def test_compose_full_sft_row():
    s = compose(embed_f1=0.7376, rouge1=0.5440, rouge2=0.2752, rougeL=0.3728, bleu=0.2163, instruct=0.4608,
                gen_kn=0.3158, gen_rs_sub={"a": 0.2666, "b": 0.2969, "c": 0.4441, "d": 0.6673})
    assert s.rouge == pytest.approx(0.3973, abs=5e-4)
    assert s.spec == pytest.approx(0.4504, abs=5e-4)
    assert s.gen_rs == pytest.approx(0.4188, abs=5e-4)
    assert s.vers == pytest.approx(0.3984, abs=1e-3)
    assert s.uni == pytest.approx(0.8488, abs=1e-3)


def test_compose_without_instruct():
    s = compose(accuracy=0.4264, spec_kind="accuracy", gen_kn=0.3518, gen_rs=0.4437, instruct=0.5)
    assert s.uni_wo_instruct == pytest.approx(0.8241, abs=2e-4)
    assert s.spec == 0.4264


def test_compose_missing():
    with pytest.raises(MissingScore):
        compose(gen_kn=0.1, gen_rs=0.2, instruct=0.3, rouge1=0.1, rouge2=0.1, rougeL=0.1, bleu=0.1)
    with pytest.raises(MissingScore):
        compose(accuracy=0.5, spec_kind="accuracy", gen_kn=0.1, instruct=0.3)


unit = st.floats(0, 1)


@given(unit, unit, unit, unit, unit, unit, st.lists(unit, min_size=1, max_size=4), unit)
def test_compose_invariants(e, r1, r2, rl, b, kn, subs, ins):
    s = compose(embed_f1=e, rouge1=r1, rouge2=r2, rougeL=rl, bleu=b, gen_kn=kn,
                gen_rs_sub={str(i): v for i, v in enumerate(subs)}, instruct=ins)
    assert s.rouge == pytest.approx((r1 + r2 + rl) / 3, abs=1e-9)
    assert s.spec == pytest.approx((e + s.rouge + b) / 3, abs=1e-9)
    assert s.gen_rs == pytest.approx(sum(subs) / len(subs), abs=1e-9)
    assert s.vers == pytest.approx((kn + s.gen_rs + ins) / 3, abs=1e-9)
    assert s.uni == pytest.approx(s.spec + s.vers, abs=1e-9)
    assert 0.0 <= s.uni <= 2.0 + 1e-12


def test_csv_columns():
    s = compose(embed_f1=0.5, rouge1=0.5, rouge2=0.5, rougeL=0.5, bleu=0.5, gen_kn=0.5,
                gen_rs_sub={"reverse": 0.5, "sort": 0.5}, instruct=0.5)
    assert s.csv_header() == ["BERTScore", "Rouge", "BLEU", "Rouge-1", "Rouge-2", "Rouge-L", "Spec", "Instruct",
                              "Gen-Kn", "Gen-Rs", "reverse", "sort", "Vers", "Uni", "Uni-wo-instruct"]
    assert len(s.csv_row()) == len(s.csv_header())
