"""End-to-end runs: pretrain a base model, evaluate search candidates, and
the method comparison benchmark."""
from __future__ import annotations

import dataclasses
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .data import SuiteSizes, TaskConfig, TaskSuite, generate_suite
from .evaluation import EvalOptions, evaluate
from .methods import run_method
from .metrics import EmbeddingProvider, ScoreBreakdown, compose
from .model import EMBED_ID, ModelConfig, Parameters, init_params
from .search import CandidateConfig, EvalRecord, Evaluator, candidate_seed
from .tensor import SeededRng
from .trainer import TrainConfig, train, wise_ft_interpolate


def pretrain_base(suite: TaskSuite, model: ModelConfig, cfg: TrainConfig, seed: int,
                  dropout_p: float | None = None) -> tuple[Parameters, list[dict]]:
    """Train a freshly initialized model on the versatility mixture.

    ``dropout_p`` overrides the model's dropout for pretraining only; the
    returned parameters carry ``model`` unchanged."""
    run_cfg = model if dropout_p is None else dataclasses.replace(model, dropout_p=dropout_p)
    base = init_params(run_cfg, SeededRng(seed, 0xBA5E))
    res = train(base, suite.pretrain_mixture(), dataclasses.replace(cfg, seed=seed))
    return Parameters(model, res.params.tensors), res.log


def make_search_evaluator(base: Parameters, suite: TaskSuite, cfg: TrainConfig, opts: EvalOptions,
                          base_seed: int) -> Evaluator:
    """Candidate -> record: freeze-only tuning of a fresh copy of ``base``
    under the candidate scope, then a full evaluation."""
    emb = EmbeddingProvider(base[EMBED_ID])

    def evaluate_candidate(c: CandidateConfig) -> EvalRecord:
        seed = candidate_seed(base_seed, c)
        res = train(base, suite.speciality_train, dataclasses.replace(cfg, seed=seed, method="COFITUNE"),
                    c.to_scope())
        s = evaluate(res.params, suite, opts, emb).scores
        return EvalRecord(c, s.spec, s.vers, s.spec + s.vers, seed, len(res.log))

    return evaluate_candidate


BENCH_METHODS = ("full", "l1", "l2", "lora", "wiseft", "vsoftmask", "cofitune", "cofitune-nomask")


@dataclass
class BenchmarkConfig:
    data_seed: int = 0
    base_seed: int = 0
    seeds: tuple[int, ...] = (1, 2, 3)
    sizes: SuiteSizes = field(default_factory=SuiteSizes)
    task: TaskConfig = field(default_factory=lambda: TaskConfig(template="compact"))
    model: ModelConfig = field(default_factory=ModelConfig)
    pretrain: TrainConfig = field(default_factory=lambda: TrainConfig(
        peak_lr=3e-3, epochs=40, batch_size=32))
    pretrain_dropout: float | None = 0.0
    sft: TrainConfig = field(default_factory=lambda: TrainConfig(peak_lr=1e-3, epochs=3))
    eval: EvalOptions = field(default_factory=lambda: EvalOptions(instruct_divisor=100.0, max_new=32))
    methods: tuple[str, ...] = BENCH_METHODS


@dataclass
class BenchmarkReport:
    base: ScoreBreakdown
    runs: dict[str, list[ScoreBreakdown]]
    seconds: dict[str, float]

    def mean(self, method: str) -> ScoreBreakdown:
        return mean_breakdown(self.runs[method])

    def table(self) -> list[dict]:
        rows = [{"method": "base", **_row(self.base)}]
        for m in self.runs:
            rows.append({"method": m, **_row(self.mean(m))})
        return rows


def _row(s: ScoreBreakdown) -> dict:
    return {"spec": s.spec, "vers": s.vers, "uni": s.uni, "gen_kn": s.gen_kn, "gen_rs": s.gen_rs,
            "instruct": s.instruct, "uni_wo_instruct": s.uni_wo_instruct}


def mean_breakdown(runs: list[ScoreBreakdown]) -> ScoreBreakdown:
    """Average raw scores over seeds, then recompose."""
    def avg(name):
        return float(np.mean([getattr(r, name) for r in runs]))

    subs = {k: float(np.mean([r.gen_rs_sub[k] for r in runs])) for k in runs[0].gen_rs_sub}
    return compose(embed_f1=avg("embed_f1"), bleu=avg("bleu"), rouge1=avg("rouge1"), rouge2=avg("rouge2"),
                   rougeL=avg("rougeL"), gen_kn=avg("gen_kn"), gen_rs_sub=subs, instruct=avg("instruct"),
                   nll=avg("nll"))


def run_benchmark(cfg: BenchmarkConfig = BenchmarkConfig(), log: Callable[[str], None] = print) -> BenchmarkReport:
    t0 = time.time()
    suite = generate_suite(cfg.data_seed, cfg.sizes, cfg.task)
    base, _ = pretrain_base(suite, cfg.model, cfg.pretrain, cfg.base_seed, cfg.pretrain_dropout)
    seconds = {"pretrain": time.time() - t0}
    emb = EmbeddingProvider(base[EMBED_ID])
    base_scores = evaluate(base, suite, cfg.eval, emb).scores
    log(f"base: spec={base_scores.spec:.4f} vers={base_scores.vers:.4f} uni={base_scores.uni:.4f} "
        f"({seconds['pretrain']:.0f}s pretrain)")
    runs: dict[str, list[ScoreBreakdown]] = {m: [] for m in cfg.methods}
    for seed in cfg.seeds:
        sft = dataclasses.replace(cfg.sft, seed=seed)
        full_params = None
        for m in cfg.methods:
            t = time.time()
            if m == "wiseft" and full_params is not None:
                # same seed and data as the full run, so reuse its weights
                params = wise_ft_interpolate(base, full_params, sft.wiseft_alpha)
            elif m == "cofitune-nomask":
                params = run_method("cofitune", base, suite.speciality_train, sft, use_mask=False).params
            else:
                params = run_method(m, base, suite.speciality_train, sft).params
            if m == "full":
                full_params = params
            s = evaluate(params, suite, cfg.eval, emb).scores
            runs[m].append(s)
            seconds[m] = seconds.get(m, 0.0) + time.time() - t
            log(f"seed {seed} {m}: spec={s.spec:.4f} vers={s.vers:.4f} uni={s.uni:.4f} "
                f"kn={s.gen_kn:.3f} rs={s.gen_rs:.3f} ins={s.instruct:.3f} ({time.time() - t:.1f}s)")
    seconds["total"] = time.time() - t0
    return BenchmarkReport(base_scores, runs, seconds)


@dataclass
class Check:
    name: str
    passed: bool
    detail: str


def directional_checks(rep: BenchmarkReport) -> list[Check]:
    cofi, full, nomask = rep.mean("cofitune"), rep.mean("full"), rep.mean("cofitune-nomask")
    checks = [
        Check("vers(cofitune) > vers(full)", cofi.vers > full.vers, f"{cofi.vers:.4f} vs {full.vers:.4f}"),
        Check("spec(cofitune) >= 0.8 spec(full)", cofi.spec >= 0.8 * full.spec,
              f"{cofi.spec:.4f} vs 0.8*{full.spec:.4f}"),
        Check("vers(cofitune) >= vers(no mask)", cofi.vers >= nomask.vers, f"{cofi.vers:.4f} vs {nomask.vers:.4f}"),
        Check("spec(cofitune) within 2% of no mask", abs(cofi.spec - nomask.spec) <= 0.02 * abs(nomask.spec),
              f"{cofi.spec:.4f} vs {nomask.spec:.4f}"),
    ]
    others = [m for m in rep.runs if m not in ("cofitune", "cofitune-nomask")]
    worst = [m for m in others if rep.mean(m).uni > cofi.uni]
    checks.append(Check("uni(cofitune) >= every baseline", not worst,
                        f"cofitune {cofi.uni:.4f}; " + ", ".join(f"{m} {rep.mean(m).uni:.4f}" for m in others)))
    return checks
