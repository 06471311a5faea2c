"""Vendored MITRE ATT&CK (Enterprise) technique and mitigation catalog subset."""

from __future__ import annotations

import json
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources


@dataclass(frozen=True)
class Technique:
    id: str
    name: str
    tactics: tuple[str, ...]
    mitigations: tuple[str, ...] = ()


@dataclass(frozen=True)
class AttackMitigation:
    id: str
    name: str
    description: str = ""


@dataclass(frozen=True)
class AttackCatalog:
    version: str
    techniques: dict[str, Technique]
    mitigations: dict[str, AttackMitigation]

    def __contains__(self, technique_id: str) -> bool:
        return technique_id in self.techniques

    def mitigations_for(self, technique_id: str) -> list[AttackMitigation]:
        tech = self.techniques.get(technique_id)
        if tech is None:
            return []
        return [self.mitigations[m] for m in tech.mitigations if m in self.mitigations]


@lru_cache(maxsize=1)
def load_catalog() -> AttackCatalog:
    raw = json.loads(resources.files("threatprio").joinpath("data", "attack", "enterprise.json").read_text("utf-8"))
    techniques = {
        t["id"]: Technique(t["id"], t["name"], tuple(t["tactics"]), tuple(t.get("mitigations", ())))
        for t in raw["techniques"]
    }
    mitigations = {m["id"]: AttackMitigation(m["id"], m["name"], m.get("description", "")) for m in raw["mitigations"]}
    return AttackCatalog(raw["version"], techniques, mitigations)
