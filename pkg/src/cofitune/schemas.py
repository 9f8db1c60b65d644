"""JSON schemas for the reports the CLI writes."""
from __future__ import annotations

import jsonschema

_num = {"type": "number"}
_opt_num = {"type": ["number", "null"]}

SCORE_BREAKDOWN = {
    "type": "object",
    "required": ["spec", "vers", "uni", "vers_wo_instruct", "uni_wo_instruct", "gen_kn", "gen_rs", "instruct",
                 "gen_rs_sub", "embed_f1", "bleu", "rouge1", "rouge2", "rougeL", "rouge"],
    "properties": {
        **{k: _num for k in ("spec", "vers", "uni", "vers_wo_instruct", "uni_wo_instruct", "gen_kn", "gen_rs",
                             "instruct")},
        **{k: _opt_num for k in ("embed_f1", "bleu", "rouge1", "rouge2", "rougeL", "rouge", "accuracy", "nll")},
        "gen_rs_sub": {"type": "object", "additionalProperties": _num},
    },
    "additionalProperties": False,
}

EVAL_REPORT = {
    "type": "object",
    "required": ["kind", "config_hash", "checkpoint", "scores", "details", "eval_options"],
    "properties": {
        "kind": {"enum": ["eval", "sft"]},
        "config_hash": {"type": "string"},
        "checkpoint": {"type": "string"},
        "scores": SCORE_BREAKDOWN,
        "eval_options": {"type": "object"},
        "details": {
            "type": "object",
            "required": ["speciality", "generations", "gen_kn_correct", "gen_rs_correct", "instruct_nll"],
            "properties": {
                "speciality": {"type": "object", "additionalProperties": {"type": "array", "items": _num}},
                "generations": {"type": "array", "items": {"type": "string"}},
                "gen_kn_correct": {"type": "array", "items": {"type": "boolean"}},
                "gen_rs_correct": {"type": "object",
                                   "additionalProperties": {"type": "array", "items": {"type": "boolean"}}},
                "instruct_nll": {"type": "array", "items": _num},
            },
        },
    },
}

SFT_REPORT = {
    "allOf": [
        EVAL_REPORT,
        {
            "type": "object",
            "required": ["method", "scope", "train_config", "steps"],
            "properties": {
                "kind": {"const": "sft"},
                "method": {"type": "string"},
                "scope": {"type": ["string", "null"]},
                "train_config": {"type": "object"},
                "steps": {"type": "integer", "minimum": 0},
                "final_loss": _opt_num,
            },
        },
    ]
}

_record = {
    "type": "object",
    "required": ["start", "end", "modules", "key", "spec", "vers", "uni", "search_step"],
    "properties": {
        "start": {"type": "integer", "minimum": 0},
        "end": {"type": "integer", "minimum": 1},
        "modules": {"enum": ["MHA&FFN", "MHA", "FFN", "UP", "DOWN"]},
        "key": {"type": "string"},
        "spec": _num, "vers": _num, "uni": _num,
        "search_step": {"enum": [1, 2, 3]},
    },
}

SEARCH_REPORT = {
    "type": "object",
    "required": ["num_layers", "evaluations", "records", "trace", "step_winners", "best"],
    "properties": {
        "num_layers": {"type": "integer", "minimum": 4},
        "evaluations": {"type": "integer", "minimum": 1, "maximum": 12},
        "records": {"type": "array", "items": _record, "maxItems": 12},
        "trace": {"type": "object", "additionalProperties": {"type": "array", "items": {"type": "string"}}},
        "step_winners": {"type": "object"},
        "best": _record,
        "config_hash": {"type": "string"},
    },
}

IMPORTANCE_REPORT = {
    "type": "object",
    "required": ["scope", "normalized", "modules"],
    "properties": {
        "scope": {"type": ["string", "null"]},
        "normalized": {"type": "boolean"},
        "config_hash": {"type": "string"},
        "modules": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["layer", "module", "values", "raw_max"],
                "properties": {
                    "layer": {"type": "integer", "minimum": 1},
                    "module": {"enum": ["MHA", "FFN"]},
                    "values": {"type": "array", "items": {"type": "number", "minimum": 0}},
                    "raw_max": _opt_num,
                },
            },
        },
    },
}

SCHEMAS = {"eval": EVAL_REPORT, "sft": SFT_REPORT, "search": SEARCH_REPORT, "importance": IMPORTANCE_REPORT}


def validate(report: dict, kind: str) -> None:
    """Raise ``jsonschema.ValidationError`` if ``report`` does not match."""
    jsonschema.validate(report, SCHEMAS[kind])
