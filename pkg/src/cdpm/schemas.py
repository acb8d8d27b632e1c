"""JSON Schemas for the report files written by ``cdpm eval`` and ``cdpm compare``."""

_NUM = {"type": "number"}

_ROW = {
    "type": "object",
    "required": ["id", "kind", "chamfer", "fscore", "precision", "recall"],
    "properties": {
        "id": {"type": "integer", "minimum": 0},
        "kind": {"type": "string"},
        "chamfer": {"type": "number", "minimum": 0},
        "fscore": {"type": "number", "minimum": 0, "maximum": 1},
        "precision": {"type": "number", "minimum": 0, "maximum": 1},
        "recall": {"type": "number", "minimum": 0, "maximum": 1},
        "best_index": {"type": "integer", "minimum": 0},
    },
}

AGGREGATE_SCHEMA = {
    "type": "object",
    "required": ["category", "n_items", "chamfer_mean", "fscore_mean", "precision_mean",
                 "recall_mean", "tau", "convention", "aggregation", "per_item"],
    "properties": {
        "category": {"type": "string"},
        "n_items": {"type": "integer", "minimum": 0},
        "chamfer_mean": _NUM,
        "fscore_mean": _NUM,
        "precision_mean": _NUM,
        "recall_mean": _NUM,
        "tau": {"type": "number", "exclusiveMinimum": 0},
        "convention": {"type": "string"},
        "aggregation": {"type": "string"},
        "per_item": {"type": "array", "items": _ROW},
    },
}

REPORT_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["schema_version", "k", "single", "oracle", "by_category"],
    "properties": {
        "schema_version": {"const": 1},
        "k": {"type": "integer", "minimum": 1},
        "single": AGGREGATE_SCHEMA,
        "oracle": {"oneOf": [{"type": "null"}, AGGREGATE_SCHEMA]},
        "by_category": {"type": "object", "additionalProperties": AGGREGATE_SCHEMA},
        "run_config": {"type": "object"},
    },
}

_SIDE = {
    "type": "object",
    "required": ["mode", "seed", "centering_violations", "fscore", "chamfer_mean",
                 "terminal_centroid_mean", "centroid_norm_curve"],
    "properties": {
        "mode": {"enum": ["ddpm", "cdpm"]},
        "seed": {"type": "integer"},
        "centering_violations": {"type": "integer", "minimum": 0},
        "fscore": {"type": "object", "additionalProperties": _NUM},
        "chamfer_mean": _NUM,
        "terminal_centroid_mean": _NUM,
        "centroid_norm_curve": {"type": "array", "items": _NUM},
    },
    "not": {"required": ["train_seconds"]},
}

COMPARISON_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["schema_version", "tau", "taus", "mode_a", "mode_b", "config_a", "config_b",
                 "rows", "summary"],
    "properties": {
        "schema_version": {"const": 1},
        "rows": {"type": "array", "items": {
            "type": "object", "required": ["seed", "a", "b"],
            "properties": {"seed": {"type": "integer"}, "a": _SIDE, "b": _SIDE}}},
        "summary": {"type": "object", "required": ["b_fscore_wins", "b_chamfer_wins"]},
    },
}
