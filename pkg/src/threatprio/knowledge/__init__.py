"""External knowledge sources behind one cached, as-of-filtered facade."""

from .attack import AttackCatalog, AttackMitigation, Technique, load_catalog
from .cache import JsonCache
from .records import Advisory, CveRecord, CveStatus, EpssSnapshot, KevEntry, Reference, Remediation
from .store import KnowledgeStore, as_of_cutoff, normalize_cve_id

__all__ = [
    "Advisory",
    "AttackCatalog",
    "AttackMitigation",
    "CveRecord",
    "CveStatus",
    "EpssSnapshot",
    "JsonCache",
    "KevEntry",
    "KnowledgeStore",
    "Reference",
    "Remediation",
    "Technique",
    "as_of_cutoff",
    "load_catalog",
    "normalize_cve_id",
]
