"""Coarse search over tuning scopes.

Three steps, each maximizing Uni = Spec + Vers:

1. ranges of width N/2 over MHA&FFN, probed at the left end, the right end,
   the midpoint, and the midpoint of the two best starts;
2. the same probe with width halved, starting from the step-1 winner;
3. inside the step-2 range, MHA alone vs FFN alone, and if FFN wins its
   sub-modules UP and DOWN.

Every distinct candidate is evaluated once (memoized), so the whole search
costs at most 12 evaluations.
"""
from __future__ import annotations

import csv
import hashlib
import json
import os
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

from .errors import BadRange, BadScope
from .trainer import TuningScope

MODULE_ORDER = ("MHA&FFN", "FFN", "MHA", "DOWN", "UP")
SUB_MODULES = {"FFN": ("UP", "DOWN"), "MHA": ()}
_SCOPE_MODULES = {
    "MHA&FFN": frozenset({"MHA", "FFN"}),
    "MHA": frozenset({"MHA"}),
    "FFN": frozenset({"FFN"}),
    "UP": frozenset({"UP"}),
    "DOWN": frozenset({"DOWN"}),
}


@dataclass(frozen=True, order=True)
class CandidateConfig:
    start: int
    end: int
    modules: str = "MHA&FFN"

    def __post_init__(self):
        if self.modules not in _SCOPE_MODULES:
            raise BadScope(f"unknown candidate modules {self.modules!r}")
        if not 0 <= self.start < self.end:
            raise BadRange(f"bad range ({self.start}, {self.end}]")

    def to_scope(self) -> TuningScope:
        return TuningScope(self.start, self.end, _SCOPE_MODULES[self.modules])

    def key(self) -> str:
        return f"({self.start},{self.end}]-{self.modules}"

    def to_json(self) -> dict:
        return {"start": self.start, "end": self.end, "modules": self.modules}

    @classmethod
    def from_json(cls, d: dict) -> "CandidateConfig":
        return cls(int(d["start"]), int(d["end"]), d["modules"])


@dataclass(frozen=True)
class EvalRecord:
    candidate: CandidateConfig
    spec: float
    vers: float
    uni: float
    seed: int | None = None
    steps: int | None = None
    search_step: int = 0
    order: int = 0  # evaluation index, for the trace

    def __post_init__(self):
        if abs(self.uni - (self.spec + self.vers)) > 1e-9:
            raise ValueError(f"uni {self.uni} != spec + vers for {self.candidate.key()}")

    def to_json(self) -> dict:
        return {**self.candidate.to_json(), "key": self.candidate.key(), "spec": self.spec, "vers": self.vers,
                "uni": self.uni, "seed": self.seed, "steps": self.steps, "search_step": self.search_step,
                "order": self.order}


Evaluator = Callable[[CandidateConfig], EvalRecord]


def candidate_seed(base_seed: int, candidate: CandidateConfig) -> int:
    """Stable per-candidate seed, independent of evaluation order."""
    h = hashlib.sha256(f"{base_seed}|{candidate.key()}".encode()).digest()
    return int.from_bytes(h[:4], "little")


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("COFT_THREADS", "1")))
    except ValueError:
        return 1


@dataclass
class SearchState:
    """Memo of evaluated candidates plus the per-step trace."""

    num_layers: int
    cache: dict[CandidateConfig, EvalRecord] = field(default_factory=dict)
    trace: dict[int, list[str]] = field(default_factory=lambda: {1: [], 2: [], 3: []})
    calls: int = 0  # evaluator invocations (cache misses)
    threads: int = field(default_factory=_threads)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    def evaluate_many(self, cands: Sequence[CandidateConfig], evaluate: Evaluator, step: int) -> list[EvalRecord]:
        todo = []
        with self._lock:
            for c in cands:
                self.trace[step].append(c.key())
                if c not in self.cache and c not in todo:
                    todo.append(c)
        if self.threads > 1 and len(todo) > 1:
            with ThreadPoolExecutor(min(self.threads, len(todo))) as pool:
                results = list(pool.map(evaluate, todo))
        else:
            results = [evaluate(c) for c in todo]
        with self._lock:
            for c, r in zip(todo, results):  # insertion in candidate order keeps runs identical
                self.calls += 1
                self.cache[c] = EvalRecord(c, r.spec, r.vers, r.uni, r.seed, r.steps, step, len(self.cache))
            return [self.cache[c] for c in cands]

    def records(self) -> list[EvalRecord]:
        return sorted(self.cache.values(), key=lambda r: r.order)


def _rank_key(r: EvalRecord):
    """Sort key: best Uni first, then earlier step, lower start, module order."""
    return (-r.uni, r.search_step, r.candidate.start, MODULE_ORDER.index(r.candidate.modules))


def get_best_layer_range(left: int, right: int, alpha: int, evaluate: Evaluator, state: SearchState,
                         modules: str = "MHA&FFN", step: int = 1) -> int:
    """Start index of the best width-``alpha`` range among four probes.

    Probes ``left``, ``right`` and their midpoint, then the midpoint of the
    best and second-best starts. Ties go to the lowest start.
    """
    if not (0 <= left < right) or alpha < 1 or right + alpha > state.num_layers:
        raise BadRange(f"bad probe window left={left} right={right} alpha={alpha} N={state.num_layers}")
    pivot = (left + right) // 2
    starts = sorted({left, right, pivot})
    recs = state.evaluate_many([CandidateConfig(s, s + alpha, modules) for s in starts], evaluate, step)
    ranked = sorted(recs, key=lambda r: (-r.uni, r.candidate.start))
    pivot2 = (ranked[0].candidate.start + ranked[1].candidate.start) // 2
    recs += state.evaluate_many([CandidateConfig(pivot2, pivot2 + alpha, modules)], evaluate, step)
    best = min(recs, key=lambda r: (-r.uni, r.candidate.start))
    return best.candidate.start


@dataclass
class SearchResult:
    best: EvalRecord
    state: SearchState
    step_winners: dict[str, object]


def coarse_search(num_layers: int, evaluate: Evaluator, state: SearchState | None = None) -> SearchResult:
    state = state or SearchState(num_layers)
    a1 = num_layers // 2
    if a1 < 2:
        raise BadRange("coarse search needs at least 4 layers")
    s1 = get_best_layer_range(0, num_layers - a1, a1, evaluate, state, step=1)

    a2 = a1 // 2
    s2 = get_best_layer_range(s1, s1 + a2, a2, evaluate, state, step=2)

    lo, hi = s2, s2 + a2
    mha, ffn = state.evaluate_many([CandidateConfig(lo, hi, "MHA"), CandidateConfig(lo, hi, "FFN")], evaluate, 3)
    top = min((ffn, mha), key=_rank_key)
    subs = SUB_MODULES[top.candidate.modules]
    if subs:
        state.evaluate_many([CandidateConfig(lo, hi, m) for m in subs], evaluate, 3)

    best = min(state.cache.values(), key=_rank_key)
    winners = {"step1": CandidateConfig(s1, s1 + a1).key(), "step2": CandidateConfig(s2, s2 + a2).key(),
               "step3": top.candidate.key()}
    return SearchResult(best, state, winners)


def search_report(result: SearchResult, extra: dict | None = None) -> dict:
    st = result.state
    return {
        "num_layers": st.num_layers,
        "evaluations": st.calls,
        "records": [r.to_json() for r in st.records()],
        "trace": {str(k): v for k, v in st.trace.items()},
        "step_winners": result.step_winners,
        "best": result.best.to_json(),
        **(extra or {}),
    }


def write_search_csv(result: SearchResult, path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "layer_range", "modules", "Spec", "Vers", "Uni"])
        for r in result.state.records():
            w.writerow([r.search_step, f"({r.candidate.start},{r.candidate.end}]", r.candidate.modules,
                        f"{r.spec:.4f}", f"{r.vers:.4f}", f"{r.uni:.4f}"])


def write_best_config(result: SearchResult, path: str | Path) -> None:
    """Winner in a form ``sft --scope @file`` accepts."""
    c = result.best.candidate
    Path(path).write_text(json.dumps({"scope": str(c.to_scope()), **c.to_json(), "uni": result.best.uni},
                                     indent=2) + "\n")


def scripted_evaluator(table: dict[CandidateConfig, tuple[float, float]], default: tuple[float, float] | None = None,
                       ) -> Evaluator:
    """Evaluator backed by a fixed (spec, vers) table, for dry runs."""

    def evaluate(c: CandidateConfig) -> EvalRecord:
        if c in table:
            spec, vers = table[c]
        elif default is not None:
            spec, vers = default
        else:
            raise KeyError(f"no scripted score for {c.key()}")
        return EvalRecord(c, spec, vers, spec + vers)

    return evaluate
