import numpy as np
import pytest
from hypothesis import given, strategies as st

from cofitune.errors import ConfigError, SeqTooLong, TokenOutOfRange, TraceMismatch
from cofitune.model import (
    EMBED_ID,
    FFN,
    MHA,
    LoraWeights,
    ModelConfig,
    ParamId,
    backward,
    decode_greedy,
    decode_greedy_batch,
    forward,
    init_params,
    log_likelihood,
    log_likelihood_batch,
    ones_gates,
    param_ids,
    param_shape,
)
from cofitune.tensor import SeededRng, log_softmax_lastdim
from oracles import gradcheck_model


def test_config_validation():
    with pytest.raises(ConfigError):
        ModelConfig(embed_dim=10, num_heads=3)
    with pytest.raises(ConfigError):
        ModelConfig(num_layers=0)
    with pytest.raises(ValueError):
        ModelConfig(dropout_p=1.0)
    with pytest.raises(ConfigError):
        ModelConfig.from_dict({"embed_dim": 16, "colour": 1})
    c = ModelConfig(embed_dim=16, num_heads=2)
    assert ModelConfig.from_dict(c.to_dict()) == c


def test_param_layout(tiny_config):
    ids = param_ids(tiny_config)
    assert ids[0] == EMBED_ID and str(ids[-1]) == "LMHEAD"
    assert len(ids) == 3 + tiny_config.num_layers * 9
    for pid in ids:
        assert ParamId.parse(str(pid)) == pid
    d, f = tiny_config.embed_dim, tiny_config.ffn_dim
    assert param_shape(tiny_config, ParamId(1, FFN, "DOWN")) == (f, d)
    assert param_shape(tiny_config, ParamId(2, MHA, "O")) == (d, d)
    assert param_shape(tiny_config, EMBED_ID) == (tiny_config.vocab_size, d)


def test_init_deterministic(tiny_config):
    a = init_params(tiny_config, SeededRng(1))
    b = init_params(tiny_config, SeededRng(1))
    for pid in param_ids(tiny_config):
        np.testing.assert_array_equal(a[pid], b[pid])
    np.testing.assert_array_equal(a[ParamId(1, "NORM1", "WEIGHT")], 1.0)


def test_gradients_match_finite_differences():
    results = gradcheck_model(n_param_coords=40, seed=11)
    worst = max(r[3] for r in results)
    assert worst < 1e-6, sorted(results, key=lambda r: -r[3])[:3]


def test_padding_does_not_change_real_positions(tiny_params64):
    toks = [3, 5, 7, 9, 11]
    alone, _ = forward(tiny_params64, toks)
    batch, _ = forward(tiny_params64, np.array([toks + [0, 0], [1, 2, 3, 4, 5, 6, 7]]))
    np.testing.assert_allclose(batch[0, :5], alone, atol=1e-12)


def test_causal(tiny_params64):
    a, _ = forward(tiny_params64, [3, 5, 7, 9])
    b, _ = forward(tiny_params64, [3, 5, 7, 1])
    np.testing.assert_allclose(a[:3], b[:3], atol=1e-12)
    assert not np.allclose(a[3], b[3])


def test_eval_mode_ignores_rng_and_ones_gates_are_neutral(tiny_params64, tiny_config):
    toks = [1, 4, 6, 8]
    a, _ = forward(tiny_params64, toks, "eval")
    b, _ = forward(tiny_params64, toks, "eval", rng=SeededRng(99))
    np.testing.assert_array_equal(a, b)
    gates = ones_gates(tiny_config, [(1, MHA), (2, FFN)], np.float64)
    c, _ = forward(tiny_params64, toks, "eval", gates)
    np.testing.assert_array_equal(a, c)


def test_train_mode_dropout_is_seeded(tiny_params64):
    toks = [1, 4, 6, 8]
    a, _ = forward(tiny_params64, toks, "train", rng=SeededRng(3))
    b, _ = forward(tiny_params64, toks, "train", rng=SeededRng(3))
    c, _ = forward(tiny_params64, toks, "train", rng=SeededRng(4))
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, c)
    with pytest.raises(ValueError):
        forward(tiny_params64, toks, "train")


def test_zero_down_row_silences_neuron(tiny_params64, tiny_config):
    p = tiny_params64.copy()
    p[ParamId(1, FFN, "DOWN")][5] = 0.0
    gates = ones_gates(tiny_config, [(1, FFN)], np.float64)
    logits, trace = forward(p, [1, 2, 3], "eval", gates)
    g = backward(trace, np.ones_like(logits))
    assert g.gates[(1, FFN)][5] == 0.0


@given(st.sets(st.integers(0, 20), max_size=5), st.booleans())
def test_selected_param_grads_match_full_backward(picks, with_gate):
    cfg = ModelConfig(vocab_size=20, embed_dim=8, num_heads=2, ffn_dim=8, num_layers=2, max_seq_len=16)
    p = init_params(cfg, SeededRng(4), std=0.3, dtype=np.float64)
    ids = param_ids(cfg)
    chosen = {ids[i] for i in picks}
    gates = ones_gates(cfg, [(2, MHA)], np.float64) if with_gate else None
    d = SeededRng(5).normal((1, 6, 20), 1.0, np.float64)
    logits, trace = forward(p, [[1, 4, 2, 9, 3, 7]], "train", gates, SeededRng(6))
    full = backward(trace, d)
    part = backward(trace, d, need_param_grads=chosen)
    assert set(part.params) == chosen
    for k in chosen:
        np.testing.assert_array_equal(part.params[k], full.params[k])
    if with_gate:
        np.testing.assert_array_equal(part.gates[(2, MHA)], full.gates[(2, MHA)])


def test_forward_errors(tiny_params64):
    with pytest.raises(TokenOutOfRange):
        forward(tiny_params64, [1, 20])
    with pytest.raises(SeqTooLong):
        forward(tiny_params64, list(range(1, 20)) * 2)
    logits, trace = forward(tiny_params64, [1, 2, 3])
    with pytest.raises(TraceMismatch):
        backward(trace, np.ones((2, 20)))


def test_log_likelihood_matches_manual(tiny_params64):
    ctx, cont = [1, 5, 6], [7, 8]
    logits, _ = forward(tiny_params64, ctx + cont[:-1])
    lp = log_softmax_lastdim(logits)
    manual = lp[2, 7] + lp[3, 8]
    assert log_likelihood(tiny_params64, ctx, cont) == pytest.approx(manual, abs=1e-12)
    batch = log_likelihood_batch(tiny_params64, [(ctx, cont), ([1], [9, 9, 9])], batch_size=1)
    assert batch[0] == pytest.approx(manual, abs=1e-12)
    with pytest.raises(ValueError):
        log_likelihood(tiny_params64, ctx, [])


@given(st.lists(st.integers(3, 19), min_size=1, max_size=6), st.integers(1, 5))
def test_greedy_decode_is_argmax_chain(prompt, n):
    params = init_params(ModelConfig(vocab_size=20, embed_dim=16, num_heads=2, ffn_dim=32, num_layers=2,
                                     max_seq_len=32), SeededRng(2), std=0.5)
    out = decode_greedy(params, prompt, n, eos=2)
    seq = list(prompt)
    for tok in out:
        logits, _ = forward(params, seq)
        assert tok == int(np.argmax(logits[-1])) and tok != 2
        seq.append(tok)
    assert len(out) <= n
    if len(out) < n:
        logits, _ = forward(params, seq)
        assert int(np.argmax(logits[-1])) == 2


@given(st.lists(st.lists(st.integers(3, 19), min_size=1, max_size=6), min_size=1, max_size=4),
       st.integers(0, 6), st.booleans())
def test_cached_batch_decode_matches_recomputed_argmax(prompts, n, with_lora):
    cfg = ModelConfig(vocab_size=20, embed_dim=16, num_heads=2, ffn_dim=32, num_layers=2, max_seq_len=16)
    params = init_params(cfg, SeededRng(3), std=0.5, dtype=np.float64)
    adapters = None
    if with_lora:
        r = SeededRng(4)
        adapters = {}
        for i, pid in enumerate([ParamId(1, MHA, "Q"), ParamId(2, MHA, "V"), ParamId(2, FFN, "DOWN")]):
            d_in, d_out = params[pid].shape
            adapters[pid] = LoraWeights(r.derive(i, 0).normal((2, d_in), 0.5, np.float64),
                                        r.derive(i, 1).normal((d_out, 2), 0.5, np.float64), 1.5)
    outs = decode_greedy_batch(params, prompts, n, eos=2, adapters=adapters)
    for prompt, out in zip(prompts, outs):
        seq = list(prompt)  # recompute the whole prefix for every token
        expect = []
        while len(expect) < n:
            tok = int(np.argmax(forward(params, seq, adapters=adapters)[0][-1]))
            if tok == 2:
                break
            expect.append(tok)
            seq.append(tok)
        assert out == expect


def test_batched_decode_matches_single(tiny_params64):
    prompts = [[1, 5, 6], [1, 7], [1, 3, 4, 5, 6]]
    batch = decode_greedy_batch(tiny_params64, prompts, 6, eos=2)
    assert batch == [decode_greedy(tiny_params64, p, 6, eos=2) for p in prompts]
    with pytest.raises(SeqTooLong):
        decode_greedy(tiny_params64, [1] * 30, 5, eos=2)
