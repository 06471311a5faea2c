"""CVSS v3.1 base-score computation.

Implements the first.org v3.1 base equations, including the integer-based
``Roundup`` as published by FIRST for CVSS v3.1 so scores are identical on
every platform.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import OutOfRange
from .model import (
    AttackComplexity,
    AttackVector,
    CvssVector,
    Impact,
    PrivilegesRequired,
    Rating,
    Scope,
    UserInteraction,
)

AV_WEIGHT = {
    AttackVector.NETWORK: 0.85,
    AttackVector.ADJACENT: 0.62,
    AttackVector.LOCAL: 0.55,
    AttackVector.PHYSICAL: 0.2,
}
AC_WEIGHT = {AttackComplexity.LOW: 0.77, AttackComplexity.HIGH: 0.44}
PR_WEIGHT = {
    Scope.UNCHANGED: {PrivilegesRequired.NONE: 0.85, PrivilegesRequired.LOW: 0.62, PrivilegesRequired.HIGH: 0.27},
    Scope.CHANGED: {PrivilegesRequired.NONE: 0.85, PrivilegesRequired.LOW: 0.68, PrivilegesRequired.HIGH: 0.5},
}
UI_WEIGHT = {UserInteraction.NONE: 0.85, UserInteraction.REQUIRED: 0.62}
CIA_WEIGHT = {Impact.NONE: 0.0, Impact.LOW: 0.22, Impact.HIGH: 0.56}


@dataclass(frozen=True)
class ScoreBreakdown:
    iss: float
    impact: float
    exploitability: float
    base: float


def roundup(value: float) -> float:
    """Smallest one-decimal number >= ``value``, immune to float representation drift."""
    int_input = round(value * 100_000)
    if int_input % 10_000 == 0:
        return int_input / 100_000.0
    return (math.floor(int_input / 10_000) + 1) / 10.0


def base_score(v: CvssVector) -> ScoreBreakdown:
    iss = 1 - (1 - CIA_WEIGHT[v.c]) * (1 - CIA_WEIGHT[v.i]) * (1 - CIA_WEIGHT[v.a])
    if v.scope is Scope.UNCHANGED:
        impact = 6.42 * iss
    else:
        impact = 7.52 * (iss - 0.029) - 3.25 * (iss - 0.02) ** 15
    exploitability = 8.22 * AV_WEIGHT[v.av] * AC_WEIGHT[v.ac] * PR_WEIGHT[v.scope][v.pr] * UI_WEIGHT[v.ui]
    if impact <= 0:
        base = 0.0
    elif v.scope is Scope.UNCHANGED:
        base = roundup(min(impact + exploitability, 10))
    else:
        base = roundup(min(1.08 * (impact + exploitability), 10))
    return ScoreBreakdown(iss=iss, impact=impact, exploitability=exploitability, base=base)


def severity_rating(score: float) -> Rating:
    """Qualitative band of a base score (None / Low / Medium / High / Critical)."""
    if not 0.0 <= score <= 10.0:
        raise OutOfRange(f"score {score} outside [0, 10]")
    if score == 0.0:
        return Rating.NONE
    if score < 4.0:
        return Rating.LOW
    if score < 7.0:
        return Rating.MEDIUM
    if score < 9.0:
        return Rating.HIGH
    return Rating.CRITICAL
