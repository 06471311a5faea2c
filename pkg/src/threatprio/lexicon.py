"""Per-metric cue lexicons used to localize CVSS evidence in threat text.

Each cue is a case-insensitive pattern with the metric value it suggests.
``necessary`` marks phrasing that states a condition is required for
exploitation (used by the AC and UI conflict rules).
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Optional

from .model import (
    AttackComplexity as AC,
    AttackVector as AV,
    Impact,
    Metric,
    PrivilegesRequired as PR,
    Scope,
    UserInteraction as UI,
)


@dataclass(frozen=True)
class Cue:
    metric: Metric
    pattern: re.Pattern
    value: Enum
    necessary: bool = False


@dataclass(frozen=True)
class CueHit:
    cue: Cue
    text: str
    start: int
    end: int

    @property
    def value(self) -> Enum:
        return self.cue.value


def _cues(metric: Metric, rows: Iterable[tuple]) -> list[Cue]:
    out = []
    for row in rows:
        value, pattern = row[0], row[1]
        necessary = row[2] if len(row) > 2 else False
        out.append(Cue(metric, re.compile(pattern, re.IGNORECASE), value, necessary))
    return out


_PROTO = r"(?:DCERPC|MS-RPRN|RPC|HTTPS?|SMB|SMBv[123]|LDAP|DNS|RDP|SOAP|JNDI|network|TCP|UDP|IKE)"
_DOC = r"(?:file|document|attachment|link|e-?mail|message|web ?page|website|URL|archive|spreadsheet|presentation)s?"
_OPEN = r"(?:open|click|visit|view|run|execute|download|preview|browse to|load)"
_ARBITRARY_CODE = (
    r"(?:execute|run) arbitrary (?:code|commands?|programs?)|arbitrary (?:code|command) execution"
    r"|remote code execution|code execution|execute code|take (?:complete |full )?control of"
    r"|full (?:system )?compromise|execute arbitrary (?:system |OS |shell )?commands|command injection"
    r"|take over (?:the )?(?:server|host|system|device|appliance)|compromise (?:the )?(?:server|host|system|appliance)"
)
_ESCALATION = (
    r"(?:elevat(?:e|es|ing|ion of)|escalat(?:e|es|ing|ion of)) (?:their |its |the )?privileges?"
    r"|elevation of privilege|privilege escalation"
    r"|gain (?:full )?(?:SYSTEM |root |administrator |administrative |elevated |kernel )?privileges"
    r"|with (?:SYSTEM|root|kernel) privileges|as NT AUTHORITY(?:\\SYSTEM)?|as SYSTEM\b|as root\b"
)

LEXICON: dict[Metric, list[Cue]] = {
    Metric.AV: _cues(Metric.AV, [
        (AV.NETWORK, r"\b(?:un)?authenticated,? remote attackers?\b"),
        (AV.NETWORK, r"\bremote(?:,)? (?:unauthenticated |authenticated )?attackers?\b"),
        (AV.NETWORK, rf"\b(?:specially )?crafted {_PROTO} (?:requests?|packets?|calls?|messages?|traffic|queries|query)\b"),
        (AV.NETWORK, r"\bover the (?:network|internet)\b|\bnetwork access\b|\bvia HTTP\b"),
        (AV.NETWORK, r"\bremotely exploitable\b|\bexploit(?:ed|able)? remotely\b|\bfrom a remote location\b"),
        (AV.NETWORK, r"\b(?:network|internet)[- ](?:accessible|facing|reachable)\b|\bexposed to the internet\b"),
        (AV.NETWORK, rf"\bsend(?:ing|s)? (?:a )?(?:specially )?crafted {_PROTO}? ?(?:requests?|packets?)\b"),
        (AV.ADJACENT, r"\badjacent network\b|\bsame (?:local )?(?:network segment|subnet|broadcast domain|Wi-?Fi network|L2 segment)\b"),
        (AV.ADJACENT, r"\bwithin (?:bluetooth|radio|wireless) range\b|\battackers? on the (?:same |local )network\b"),
        (AV.LOCAL, r"\blocal(?:ly)?,? (?:authenticated )?(?:attackers?|users?)\b|\blocal access\b"),
        (AV.LOCAL, r"\blogged[- ]on (?:users?|attackers?)\b|\bexploit(?:ed)? locally\b|\brun a (?:specially )?crafted application\b"),
        (AV.LOCAL, rf"\b(?:victims?|users?|targets?) (?:must|has to|have to|needs? to|is required to) {_OPEN} (?:an? |the )?(?:specially crafted |crafted |malicious )?(?:[\w-]+ )?{_DOC}\b"),
        (AV.LOCAL, rf"\bopen(?:s|ing)? (?:an? )?(?:specially crafted|crafted|malicious) (?:[\w-]+ )?{_DOC}\b"),
        (AV.PHYSICAL, r"\bphysical access\b|\bphysically (?:present|proximate)\b|\bphysical proximity\b"),
    ]),
    Metric.AC: _cues(Metric.AC, [
        (AC.LOW, r"\b(?:in|under) (?:the |its |their )?default configurations?\b|\bdefault (?:installations?|settings)\b"),
        (AC.LOW, r"\breliabl[ey] exploit(?:able|ed)?\b|\bwithout (?:any )?special (?:conditions|configuration)\b|\blow (?:attack )?complexity\b"),
        (AC.LOW, r"\beasily exploitable\b|\b(?:sends?|sending|via|with) (?:an? )?(?:specially )?crafted [\w.-]+(?: [\w-]+)?\b"),
        (AC.HIGH, r"\brace condition\b|\bwin(?:s|ning)? a race\b", True),
        (AC.HIGH, r"\b(?:man|machine|adversary)-in-the-middle (?:position|attack(?:er)?s?)\b", True),
        (AC.HIGH, r"\b(?:only )?(?:exploitable )?(?:if|when) (?:a |the )?non-default [\w -]{1,40}\b", True),
        (AC.HIGH, r"\brequires? (?:a |the )?(?:non-default|specific|uncommon|particular) configuration\b", True),
        (AC.HIGH, r"\bhigh (?:attack )?complexity\b|\bdifficult to exploit\b", True),
        (AC.HIGH, r"\b(?:if|when) (?:the )?Point[- ]and[- ]Print [^.;]{0,60}(?:enabled|configured|misconfigured|set)\b"),
        (AC.HIGH, r"\b(?:must|needs? to) (?:first )?(?:gather|obtain) (?:target-specific |additional )?(?:knowledge|information)\b"),
    ]),
    Metric.PR: _cues(Metric.PR, [
        (PR.NONE, r"\bunauthenticated\b|\bpre-?auth(?:entication)?\b|\banonymous(?:ly)?\b"),
        (PR.NONE, r"\bwithout (?:any )?(?:authentication|credentials|valid credentials|logging in)\b|\bno (?:authentication|credentials) (?:is |are )?required\b"),
        (PR.LOW, r"\bauthenticated,? (?:remote |local |low-privileged )?(?:attackers?|users?)\b"),
        (PR.LOW, r"\blow[- ]privileged? (?:local )?(?:users?|accounts?|attackers?)\b|\b(?:standard|regular|domain|unprivileged) (?:user|account)s?\b"),
        (PR.LOW, r"\bvalid (?:user )?(?:credentials|accounts?)\b|\blocal (?:authenticated )?users?\b|\blogged[- ]on users?\b"),
        (PR.HIGH, r"\b(?:administrat(?:or|ive)|admin|root|SYSTEM|high) (?:privileges|rights|access|account|credentials) (?:is |are )?(?:required|needed)\b"),
        (PR.HIGH, r"\brequires? (?:administrat(?:or|ive)|admin|root|SYSTEM|high)[- ]?(?:level )?(?:privileges|rights|access|credentials)\b"),
        (PR.HIGH, r"\b(?:authenticated|remote|local) administrators?\b|\bhigh[- ]privileged (?:users?|accounts?|attackers?)\b"),
        (PR.HIGH, r"\battackers? with administrat(?:or|ive) (?:privileges|rights|access|credentials)\b"),
    ]),
    Metric.UI: _cues(Metric.UI, [
        (UI.REQUIRED, rf"\b(?:victims?|users?|targets?) (?:must|has to|have to|needs? to|is required to) {_OPEN} (?:an? |the )?(?:specially crafted |crafted |malicious )?(?:[\w-]+ )?{_DOC}\b", True),
        (UI.REQUIRED, r"\b(?:convinc|entic|trick|persuad)(?:e|es|ing) (?:an? |the )?(?:users?|victims?|targets?) (?:to|into)\b", True),
        (UI.REQUIRED, r"\buser interaction is required\b|\brequires? user interaction\b", True),
        (UI.REQUIRED, rf"\b(?:crafted|malicious) {_DOC} (?:delivered )?via (?:phishing|e-?mail|a web ?site)\b"),
        (UI.REQUIRED, rf"\bopen(?:s|ing)? (?:an? )?(?:specially crafted|crafted|malicious) (?:[\w-]+ )?{_DOC}\b"),
        (UI.REQUIRED, r"\bcross-site scripting\b|\bcross-site request forgery\b|\bXSS\b|\bCSRF\b"),
        (UI.NONE, r"\bunauthenticated,? (?:remote )?attackers?\b|\blocal,? (?:unprivileged |low-privileged )?(?:users?|attackers?) (?:to|can|could|may)\b"),
        (UI.NONE, r"\bwithout (?:any )?user interaction\b|\bno user interaction\b|\bzero-click\b|\bwormable\b"),
        (UI.NONE, r"\battackers? (?:(?:who|that) )?(?:could |can |may )?(?:send|sends|connects?|uploads?|pass|execute|run)s?\b|\btriggers? automatically\b"),
    ]),
    Metric.S: _cues(Metric.S, [
        (Scope.CHANGED, r"\bsandbox escape\b|\bescape(?:s|d)? (?:from )?(?:the |a )?(?:sandbox|container|virtual machine|guest|hypervisor)\b"),
        (Scope.CHANGED, r"\bcross(?:es|ing)? (?:a |the )?(?:security|trust) boundar(?:y|ies)\b"),
        (Scope.CHANGED, r"\bguest[- ](?:to|on)[- ]host\b|\bfrom (?:a |the )?(?:guest|container|VM) to (?:the )?host\b"),
        (Scope.CHANGED, r"\bfrom (?:a )?(?:user|guest|container|VM) (?:context|mode|process) to (?:the )?(?:kernel|host|hypervisor)\b"),
        (Scope.CHANGED, r"\bcross-site scripting\b|\bXSS\b"),
        (Scope.CHANGED, r"\b(?:compromise|affect|impact)s? (?:the )?(?:entire )?(?:domain|other (?:components|systems|tenants))\b"),
    ]),
}


def _impact_cues(metric: Metric) -> list[Cue]:
    H, L = Impact.HIGH, Impact.LOW
    shared = [
        (H, rf"\b(?:{_ARBITRARY_CODE})\b"),
        (H, rf"\b(?:{_ESCALATION})"),
        (H, r"\binstall programs\b|\bfull user rights\b|\bcomplete (?:loss|compromise)\b"),
    ]
    rows = {
        Metric.C: [
            (H, r"\b(?:read|access|download|retrieve) arbitrary (?:files|data|memory)\b|\bview,? change,? or delete data\b"),
            (H, r"\b(?:obtain|steal|dump|extract|leak)s? (?:the )?(?:private keys?|credentials|password hashes|NTLM hashes|session tokens?|memory contents)\b"),
            (H, r"\bdisclos(?:e|ure of) (?:the )?(?:contents of )?(?:process )?memory\b|\bauthentication bypass\b|\bbypass authentication\b"),
            (H, r"\b(?:download|return|read) (?:arbitrary |system |sensitive )?files\b|\barbitrary file read(?:ing)?\b|\bread (?:kernel|privileged) memory\b"),
            (H, r"\bgain access to the database\b|\bdecrypt (?:\w+ )?ciphertext\b|\bunauthorized disclosure of information\b"),
            (L, r"\binformation disclosure\b|\b(?:obtain|disclose|expose|leak)s? (?:potentially )?sensitive (?:information|data)\b|\bmay allow data exposure\b"),
            (L, r"\bcross-site scripting\b|\bXSS\b|\bpartial (?:information|data) (?:disclosure|exposure)\b"),
            (L, r"\b(?:obtain|recover) (?:the )?(?:cleartext|plaintext)\b|\buser enumeration\b"),
        ],
        Metric.I: [
            (H, r"\b(?:write|modify|overwrite|delete|tamper with) arbitrary (?:files|data)\b|\bview,? change,? or delete data\b"),
            (H, r"\b(?:alter|modify|change) or delete data\b|\bwrite to (?:pages|files|memory)\b|\bmodify data\b"),
            (H, r"\bcreate new accounts\b|\bauthentication bypass\b|\bbypass authentication\b|\bspoof (?:the )?(?:identity|signatures?|certificates?)\b"),
            (L, r"\bcross-site scripting\b|\bXSS\b|\bcross-site request forgery\b|\bCSRF\b|\bcontent spoofing\b|\bmodify (?:some|limited) data\b"),
        ],
        Metric.A: [
            (H, r"\bdenial[- ]of[- ]service\b|\bDoS\b|\bcrash(?:es|ing)?\b|\binfinite loop\b|\bexhaust(?:s|ing|ion of)? (?:memory|CPU|resources)\b"),
            (H, r"\bview,? change,? or delete data\b|\bencrypt(?:s|ing)? (?:files|data) for ransom\b|\bservice (?:outage|disruption)\b"),
            (L, r"\bdegrad(?:e|es|ed|ation of) (?:performance|service)\b|\bintermittent(?:ly)? (?:unavailable|outages?)\b"),
        ],
    }[metric]
    return _cues(metric, shared + rows)


for _m in (Metric.C, Metric.I, Metric.A):
    LEXICON[_m] = _impact_cues(_m)


def find_cues(metric: Metric, text: str) -> list[CueHit]:
    """Non-overlapping cue hits in ``text``; the longest span wins an overlap, then the earliest."""
    hits = []
    for cue in LEXICON[Metric(metric)]:
        for m in cue.pattern.finditer(text):
            if m.end() > m.start():
                hits.append(CueHit(cue, text[m.start():m.end()], m.start(), m.end()))
    hits.sort(key=lambda h: (-(h.end - h.start), h.start))
    chosen: list[CueHit] = []
    for h in hits:
        if all(h.end <= c.start or h.start >= c.end for c in chosen):
            chosen.append(h)
    return sorted(chosen, key=lambda h: h.start)


def cue_for_span(metric: Metric, span: str) -> Optional[CueHit]:
    """Re-identify the cue behind a span (the longest hit covering most of it)."""
    hits = find_cues(metric, span)
    if not hits:
        return None
    return max(hits, key=lambda h: (h.end - h.start, -h.start))
