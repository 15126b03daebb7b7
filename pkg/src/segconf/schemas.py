"""JSON Schemas (draft 2020-12) for every JSON document the CLI writes."""

_NUM = {"type": "number"}
_INT = {"type": "integer", "minimum": 0}
_UNDEFINED = {"type": "array", "items": {"type": "string"}}


def _nullable(schema: dict) -> dict:
    """A metric that is null when undefined on the scene (listed under ``undefined``)."""
    return {"anyOf": [schema, {"type": "null"}]}


CONFIG = {
    "type": "object",
    "required": ["eta", "tau", "connectivity", "agg", "region", "refine_mode", "bins", "baseline", "seg_iou", "correlation"],
    "properties": {
        "eta": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
        "tau": {"type": "number", "minimum": 0, "maximum": 1},
        "connectivity": {"enum": [4, 8]},
        "agg": {"enum": ["mean", "median"]},
        "region": {"enum": ["inner", "whole"]},
        "refine_mode": {"enum": ["segment", "pixel", "off"]},
        "bins": {"type": "integer", "minimum": 2},
        "baseline": {"enum": ["cas", "softmax"]},
        "seg_iou": {"enum": ["adjusted", "accuracy"]},
        "correlation": {"enum": ["pearson", "spearman"]},
    },
}

MANIFEST = {
    "type": "object",
    "required": ["dtype", "shape", "layout", "endianness", "payload", "classes", "nodata", "abstain"],
    "properties": {
        "dtype": {"enum": ["f32", "u8", "u32"]},
        "shape": {"type": "array", "items": _INT, "minItems": 2, "maxItems": 3},
        "layout": {"const": "row-major"},
        "endianness": {"const": "little"},
        "payload": {"type": "string"},
        "classes": {"type": "array", "items": {"type": "string"}},
        "nodata": _INT,
        "abstain": _INT,
        "kind": {"type": "string"},
        "flags": {"type": "object"},
        "connectivity": {"enum": [4, 8]},
    },
}

SEGMENT_TABLE = {
    "type": "object",
    "required": ["schema_version", "segments"],
    "properties": {
        "schema_version": {"const": 1},
        "segments": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["id", "class", "size", "inner_size", "bbox"],
                "properties": {
                    "id": _INT,
                    "class": _INT,
                    "size": {"type": "integer", "minimum": 1},
                    "inner_size": _INT,
                    "bbox": {"type": "array", "items": _INT, "minItems": 4, "maxItems": 4},
                },
            },
        },
    },
}

NORMALIZATION = {
    "type": "object",
    "required": ["version", "active_stats", "bounds"],
    "properties": {
        "version": {"type": "string"},
        "active_stats": {"type": "array", "items": {"enum": ["margin", "neg_entropy", "gradient", "coverage"]}},
        "bounds": {
            "type": "object",
            "additionalProperties": {
                "type": "object",
                "required": ["lo", "hi"],
                "properties": {"lo": _NUM, "hi": _NUM},
            },
        },
    },
}

_COUNTS = {
    "type": "object",
    "required": ["n_correct", "n_incorrect", "n_abstained", "n_nodata"],
    "additionalProperties": _INT,
}

SEGMENT_REPORT = {
    "type": "object",
    "required": ["schema_version", "macro_iou", "per_class_iou", "macro_iou_unrefined", "pearson_r",
                 "correlation_method", "n_segments", "n_flagged", "config", "undefined"],
    "properties": {
        "schema_version": {"const": 1},
        "macro_iou": _NUM,
        "macro_iou_unrefined": _NUM,
        "per_class_iou": {"type": "object", "additionalProperties": _NUM},
        "pearson_r": _nullable({"type": "number", "minimum": -1, "maximum": 1}),
        "correlation_method": {"enum": ["pearson", "spearman"]},
        "n_segments": _INT,
        "n_flagged": _INT,
        "config": CONFIG,
        "undefined": _UNDEFINED,
    },
}

PIXEL_REPORT = {
    "type": "object",
    "required": ["schema_version", "wasserstein", "js", "kl_fwd", "kl_rev", "euclidean", "auroc",
                 "overlap_pct", "raw", "counts", "config", "undefined"],
    "properties": {
        "schema_version": {"const": 1},
        "wasserstein": _nullable({"type": "number", "minimum": 0}),
        "js": _nullable({"type": "number", "minimum": 0}),
        "kl_fwd": _nullable({"type": "number", "minimum": 0}),
        "kl_rev": _nullable({"type": "number", "minimum": 0}),
        "euclidean": _nullable({"type": "number", "minimum": 0}),
        "auroc": _nullable({"type": "number", "minimum": 0, "maximum": 1}),
        "overlap_pct": _nullable({"type": "number", "minimum": 0, "maximum": 100}),
        "raw": {"type": "object", "required": ["wasserstein", "euclidean"]},
        "counts": _COUNTS,
        "config": CONFIG,
        "undefined": _UNDEFINED,
    },
}

EVAL_REPORT = {
    "type": "object",
    "required": sorted(set(SEGMENT_REPORT["required"]) | set(PIXEL_REPORT["required"])),
    "properties": {**SEGMENT_REPORT["properties"], **PIXEL_REPORT["properties"]},
}

SCENE = {
    "type": "object",
    "required": ["seed", "height", "width", "q", "n_seeds", "error_rate", "confusion_pairs",
                 "sharpness", "informative_confidence", "feature_depth", "nodata_rate"],
}
