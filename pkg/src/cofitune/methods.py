"""One entry point per fine-tuning method, all starting from the same base
parameters."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Sequence

from .data import Example
from .errors import BadMethod
from .model import Parameters
from .softmask import ImportanceMaskSet, cofitune_train, vsoftmask_train
from .trainer import (
    TrainConfig,
    TuningScope,
    full_scope,
    lora_attach,
    lora_merge,
    train,
    wise_ft_interpolate,
)

CLI_METHODS = ("full", "l1", "l2", "lora", "wiseft", "vsoftmask", "cofitune")


@dataclass
class MethodRun:
    method: str
    params: Parameters
    log: list[dict]
    scope: TuningScope | None = None
    masks: ImportanceMaskSet | None = None
    extra: dict = field(default_factory=dict)


def run_method(
    method: str,
    base: Parameters,
    dataset: Sequence[Example],
    cfg: TrainConfig,
    scope: TuningScope | None = None,
    use_mask: bool = True,
) -> MethodRun:
    """Fine-tune ``base`` on ``dataset`` with ``method``.

    ``scope`` only applies to ``cofitune`` (default: the quarter-to-half FFN
    range). ``use_mask=False`` turns ``cofitune`` into freeze-only tuning.
    Wise-FT trains fully, then interpolates with ``cfg.wiseft_alpha``; LoRA
    returns the merged weights.
    """
    m = method.lower()
    if m not in CLI_METHODS:
        raise BadMethod(f"unknown method {method!r}; expected one of {', '.join(CLI_METHODS)}")
    if scope is not None and m != "cofitune":
        raise BadMethod(f"--scope only applies to cofitune, not {m}")
    n = base.config.num_layers
    if m in ("full", "l1", "l2"):
        res = train(base, dataset, dataclasses.replace(cfg, method=m.upper()), full_scope(n), pretrained=base)
        return MethodRun(m, res.params, res.log, full_scope(n))
    if m == "wiseft":
        res = train(base, dataset, dataclasses.replace(cfg, method="WISEFT"), full_scope(n))
        merged = wise_ft_interpolate(base, res.params, cfg.wiseft_alpha)
        return MethodRun(m, merged, res.log, full_scope(n), extra={"alpha": cfg.wiseft_alpha})
    if m == "lora":
        adapter = lora_attach(base, cfg.lora_rank, cfg.seed)
        res = train(base, dataset, dataclasses.replace(cfg, method="LORA"), adapter=adapter)
        return MethodRun(m, lora_merge(base, res.adapter), res.log, extra={"rank": cfg.lora_rank})
    if m == "vsoftmask":
        run = vsoftmask_train(base, dataset, cfg)
        return MethodRun(m, run.result.params, run.result.log, run.scope, run.masks)
    run = cofitune_train(base, dataset, cfg, scope, use_mask=use_mask)
    return MethodRun(m if use_mask else "cofitune-nomask", run.result.params, run.result.log, run.scope,
                     run.masks, extra={"use_mask": use_mask})
