"""Acceptance suite: one test per criterion, each checked at its stated
tolerance and runtime budget. A pass/fail line per criterion is printed in
the terminal summary."""
import dataclasses
import json
import time
from pathlib import Path

import numpy as np
import pytest

from cofitune.checkpoint import load_checkpoint, save_checkpoint
from cofitune.data import generate_suite
from cofitune.evaluation import EvalOptions, evaluate
from cofitune.metrics import compose
from cofitune.model import FFN, ModelConfig, ParamId, forward, init_params, param_ids
from cofitune.pipeline import BenchmarkConfig, directional_checks, run_benchmark
from cofitune.schemas import validate
from cofitune.search import SearchState, coarse_search, get_best_layer_range, scripted_evaluator, search_report
from cofitune.softmask import (
    ImportanceMaskSet,
    ImportanceVector,
    cofitune_train,
    compute_importance,
    default_scope,
    modules_for_scope,
)
from cofitune.tensor import SeededRng
from cofitune.trainer import (
    TrainConfig,
    apply_scope,
    lora_attach,
    lora_forward,
    lora_merge,
    sgd_step,
    train,
    wise_ft_interpolate,
)
from helpers import TINY_SIZES, tiny_params, toy_examples
from landscapes import SCORES_32, UNTABULATED
from oracles import gradcheck_model, importance_fd_check, penalty_fd_check

REPORT_DIR = Path(__file__).resolve().parent.parent / "runs" / "acceptance"


@pytest.mark.criterion("1 metric composition (Full SFT row)")
def test_c1_metric_composition():
    t = time.perf_counter()
    s = compose(embed_f1=0.7376, rouge1=0.5440, rouge2=0.2752, rougeL=0.3728, bleu=0.2163, instruct=0.4608,
                gen_kn=0.3158, gen_rs_sub={"a": 0.2666, "b": 0.2969, "c": 0.4441, "d": 0.6673})
    assert s.rouge == pytest.approx(0.3973, abs=1e-3)
    assert s.spec == pytest.approx(0.4504, abs=1e-3)
    assert s.gen_rs == pytest.approx(0.4188, abs=1e-3)
    assert s.vers == pytest.approx(0.3984, abs=1e-3)
    assert s.uni == pytest.approx(0.8488, abs=1e-3)
    assert time.perf_counter() - t < 1.0


@pytest.mark.criterion("2 versatility without instruction following")
def test_c2_uni_without_instruct():
    t = time.perf_counter()
    s = compose(embed_f1=0.7266, bleu=0.1807, rouge1=0.5262, rouge2=0.2466, rougeL=0.3434, gen_kn=0.3518,
                gen_rs_sub={"all": 0.4437}, instruct=0.0)
    assert s.spec == pytest.approx(0.4264, abs=2e-4)
    assert s.uni_wo_instruct == pytest.approx(0.8241, abs=2e-4)
    assert s.uni_wo_instruct == pytest.approx(s.spec + (0.3518 + 0.4437) / 2, abs=1e-12)
    assert time.perf_counter() - t < 1.0


@pytest.mark.criterion("3 gradient correctness")
def test_c3_gradients():
    t = time.perf_counter()
    res = gradcheck_model(n_param_coords=60, seed=3)
    assert len(res) >= 50
    assert sum(lbl.startswith("gate") for lbl, *_ in res) > 0
    worst = max(res, key=lambda r: r[3])
    assert worst[3] < 1e-6, worst
    assert time.perf_counter() - t < 60


@pytest.mark.criterion("4 soft-mask contract")
def test_c4_soft_mask():
    t = time.perf_counter()
    base = tiny_params(dtype=np.float64)
    scope = default_scope(base.config.num_layers)
    f = base.config.ffn_dim
    # units 0..5 fully important, the rest partially
    vals = np.where(np.arange(f) < 6, 1.0, 0.25)
    masks = ImportanceMaskSet({k: ImportanceVector(*k, vals) for k in modules_for_scope(scope)})
    cfg = TrainConfig(peak_lr=1e-2, epochs=1, batch_size=6, max_steps=1, warmup_frac=0.0)
    out = cofitune_train(base, toy_examples(), cfg, masks=masks).result.params
    moved = 0
    for layer, _ in modules_for_scope(scope):
        up, down = ParamId(layer, FFN, "UP"), ParamId(layer, FFN, "DOWN")
        d_up, d_down = out[up] - base[up], out[down] - base[down]
        assert np.all(d_up[:, :6] == 0.0) and np.all(d_down[:6] == 0.0)
        moved += int(np.count_nonzero(d_up[:, 6:]))
    assert moved > 0
    # exact scaling for a rank-1 gradient on dyadic values; starting from zero
    # weights the delta itself is stored, so no rounding enters the comparison
    up = ParamId(scope.end, FFN, "UP")
    imp = np.resize([0.0, 0.25, 0.5, 0.75, 1.0], f)
    g = np.outer(2.0 ** np.arange(base.config.embed_dim), np.ones(f))
    single = ImportanceMaskSet({(scope.end, FFN): ImportanceVector(scope.end, FFN, imp)})
    tensors = {up: np.zeros_like(base[up])}
    sgd_step(tensors, single.apply({up: g}), [up], 0.5)
    np.testing.assert_array_equal(tensors[up], -0.5 * g * (1 - imp)[None, :])
    assert time.perf_counter() - t < 10


@pytest.mark.criterion("5 freeze soundness")
def test_c5_freeze():
    t = time.perf_counter()
    cfg = ModelConfig()
    base = init_params(cfg, SeededRng(0, 5))
    suite = generate_suite(0, TINY_SIZES)
    run = cofitune_train(base, suite.speciality_train, TrainConfig(epochs=2, batch_size=8, importance_samples=8))
    assert run.scope == default_scope(cfg.num_layers)
    inside = set(apply_scope(base, run.scope))
    assert len(run.result.log) == 6
    for pid in param_ids(cfg):
        same = run.result.params[pid].tobytes() == base[pid].tobytes()
        assert same == (pid not in inside), pid
    assert time.perf_counter() - t < 120


@pytest.mark.criterion("6 baseline identities")
def test_c6_baselines():
    t = time.perf_counter()
    a, b = tiny_params(1), tiny_params(2)
    for pid in param_ids(a.config):
        assert wise_ft_interpolate(a, b, 0.0)[pid].tobytes() == a[pid].tobytes()
        assert wise_ft_interpolate(a, b, 1.0)[pid].tobytes() == b[pid].tobytes()
    ad = lora_attach(a, 8, seed=0)
    toks = np.array([[1, 40, 41, 42, 43, 14, 30]])
    np.testing.assert_array_equal(forward(a, toks)[0], lora_forward(a, ad, toks)[0])
    res = train(a, toy_examples(), TrainConfig(peak_lr=1e-2, epochs=2, batch_size=3, method="LORA"), adapter=ad)
    gap = np.max(np.abs(lora_forward(a, res.adapter, toks)[0] - forward(lora_merge(a, res.adapter), toks)[0]))
    assert gap <= 1e-5
    assert penalty_fd_check("L1", 0.05) <= 1e-6
    assert penalty_fd_check("L2", 0.05) <= 1e-6
    assert time.perf_counter() - t < 60


@pytest.mark.criterion("7 search behavior")
def test_c7_search():
    t = time.perf_counter()
    calls = []

    def ev(c):
        calls.append(c)
        return scripted_evaluator(SCORES_32, default=UNTABULATED)(c)

    state = SearchState(32)
    assert get_best_layer_range(8, 16, 8, ev, state, step=2) == 8
    assert [c.start for c in calls][-1] == 10
    res = coarse_search(32, ev)
    assert res.step_winners["step3"] == "(8,16]-FFN"
    assert res.best.candidate.key() == "(8,16]-FFN"
    assert res.state.calls <= 12
    assert search_report(res) == search_report(coarse_search(32, scripted_evaluator(SCORES_32, default=UNTABULATED)))
    for seed in range(20):
        for n in (4, 8, 16, 32, 64):
            r = np.random.default_rng(seed)
            table = {}

            def rand_ev(c, table=table, r=r):
                if c not in table:
                    table[c] = (float(r.random()), float(r.random()))
                return scripted_evaluator(table)(c)

            assert coarse_search(n, rand_ev).state.calls <= 12
    assert time.perf_counter() - t < 1.0


@pytest.mark.criterion("8 importance oracle")
def test_c8_importance():
    t = time.perf_counter()
    res = importance_fd_check(seed=5, eps=1e-4, dropout_p=0.2)
    worst = max(res, key=lambda r: r[3])
    assert worst[3] < 1e-4, worst
    p = tiny_params(dtype=np.float64)
    raw = compute_importance(p, toy_examples(4), 0.2, modules_for_scope(default_scope(8)), seed=0,
                             equal_streams=True)
    assert all(np.all(v.values == 0.0) for v in raw.vectors.values())
    assert time.perf_counter() - t < 60


@pytest.mark.criterion("9 end-to-end forgetting benchmark")
def test_c9_benchmark():
    cfg = BenchmarkConfig()
    assert 4e5 <= init_params(cfg.model, SeededRng(0)).num_parameters() <= 6e5
    rep = run_benchmark(cfg, log=lambda s: None)
    checks = directional_checks(rep)
    REPORT_DIR.mkdir(parents=True, exist_ok=True)
    report = {"table": rep.table(), "seconds": rep.seconds,
              "per_seed": {m: [s.to_dict() for s in runs] for m, runs in rep.runs.items()},
              "checks": [dataclasses.asdict(c) for c in checks]}
    (REPORT_DIR / "benchmark.json").write_text(json.dumps(report, indent=1) + "\n")
    for c in checks:
        print(f"{'PASS' if c.passed else 'FAIL'}  {c.name}: {c.detail}")
    failed = [c for c in checks if not c.passed]
    assert not failed, "; ".join(f"{c.name}: {c.detail}" for c in failed)
    assert rep.seconds["total"] < 600


@pytest.mark.criterion("10 persistence")
def test_c10_persistence(tmp_path):
    t = time.perf_counter()
    for dtype in (np.float32, np.float64):
        p = tiny_params(4, dtype)
        q = load_checkpoint(save_checkpoint(p, tmp_path / f"{np.dtype(dtype).name}.coft"))
        assert all(q[k].tobytes() == p[k].tobytes() and q[k].dtype == p[k].dtype for k in param_ids(p.config))
    suite = generate_suite(0, TINY_SIZES)
    res = evaluate(tiny_params(), suite, EvalOptions(max_new=4))
    rep = {"kind": "eval", "config_hash": "0" * 16, "checkpoint": "x.coft", "scores": res.scores.to_dict(),
           "eval_options": EvalOptions(max_new=4).to_dict(), "details": res.details}
    validate(json.loads(json.dumps(rep)), "eval")
    search = search_report(coarse_search(32, scripted_evaluator(SCORES_32, default=UNTABULATED)))
    validate(json.loads(json.dumps(search)), "search")
    masks = ImportanceMaskSet({(3, FFN): ImportanceVector(3, FFN, np.array([0.0, 1.0]))}, "2:4:FFN", True)
    validate({**masks.to_json(), "config_hash": "0" * 16}, "importance")
    assert time.perf_counter() - t < 10
