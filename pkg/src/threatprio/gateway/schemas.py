"""JSON Schemas for every structured response the gateway accepts."""

from __future__ import annotations

from typing import Any

from jsonschema import Draft202012Validator

_STR_LIST = {"type": "array", "items": {"type": "string"}}


def _classify(values: list[str]) -> dict[str, Any]:
    return {
        "type": "object",
        "required": ["value", "confidence", "rationale", "cited_spans"],
        "properties": {
            "value": {"type": "string", "enum": values},
            "confidence": {"type": "number", "minimum": 0, "maximum": 1},
            "rationale": {"type": "string"},
            "cited_spans": _STR_LIST,
        },
    }


_ACTION = {
    "type": "object",
    "required": ["title", "source_ref"],
    "properties": {
        "title": {"type": "string", "minLength": 1},
        "vendor": {"type": "string"},
        "version_scope": {"type": "string"},
        "released": {"type": ["string", "null"]},
        "identifier": {"type": "string"},
        "source_ref": {"type": "string"},
        "side_effects": {"type": "string"},
        "maturity": {"type": ["string", "null"], "enum": ["ga", "hotfix", "beta", None]},
        "complexity": {"type": "string", "enum": ["simple", "moderate", "complex"]},
    },
}

SCHEMAS: dict[str, dict[str, Any]] = {
    "disentangle": {
        "type": "object",
        "required": ["instances"],
        "properties": {
            "instances": {
                "type": "array",
                "items": {
                    "type": "object",
                    "required": ["vendor", "impact", "indicators"],
                    "properties": {
                        "vendor": {"type": "string"},
                        "affected_components": _STR_LIST,
                        "campaign": {"type": ["string", "null"]},
                        "impact": {"type": "string"},
                        "attack_patterns": _STR_LIST,
                        "indicators": _STR_LIST,
                        "cve_aliases": _STR_LIST,
                        "description": {"type": "string"},
                    },
                },
            }
        },
    },
    "metric-classify-av": _classify(["Network", "Adjacent", "Local", "Physical"]),
    "metric-classify-ac": _classify(["Low", "High"]),
    "metric-classify-pr": _classify(["None", "Low", "High"]),
    "metric-classify-ui": _classify(["None", "Required"]),
    "metric-classify-cia": _classify(["None", "Low", "High"]),
    "forecast": {
        "type": "object",
        "required": ["probability", "signals", "exposure", "adversary_interest"],
        "properties": {
            # range is enforced downstream by clamping, so out-of-range values are logged, not re-asked
            "probability": {"type": "number"},
            "signals": {"type": "string"},
            "exposure": {"type": "string"},
            "adversary_interest": {"type": "string"},
        },
    },
    "mitigation-retrieve": {
        "type": "object",
        "required": ["patches", "workarounds", "mitigation_notes", "detections"],
        "properties": {k: {"type": "array", "items": _ACTION}
                       for k in ("patches", "workarounds", "mitigation_notes", "detections")},
    },
    "mitigation-prioritize": {
        "type": "object",
        "required": ["justifications"],
        "properties": {
            "justifications": {
                "type": "array",
                "items": {
                    "type": "object",
                    "required": ["target", "note"],
                    "properties": {"target": {"type": "string"}, "note": {"type": "string"}},
                },
            }
        },
    },
}

_VALIDATORS = {k: Draft202012Validator(v) for k, v in SCHEMAS.items()}


def validation_errors(schema_id: str, document: Any) -> list[str]:
    """Human-readable schema errors, sorted for stable re-ask prompts."""
    validator = _VALIDATORS[schema_id]
    errors = []
    for err in validator.iter_errors(document):
        path = "/".join(str(p) for p in err.absolute_path) or "<root>"
        errors.append(f"{path}: {err.message}")
    return sorted(errors)
