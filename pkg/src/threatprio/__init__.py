"""Cyber threat prioritization pipeline.

Raw incidents are split into single-threat instances and enriched
(:mod:`threatprio.triage`), scored with CVSS v3.1 (:mod:`threatprio.static_analysis`,
:mod:`threatprio.cvss`), given an exploitation forecast
(:mod:`threatprio.exploitation`) and turned into a phased mitigation plan
(:mod:`threatprio.mitigation`). Every model call goes through
:mod:`threatprio.gateway`.
"""

__version__ = "0.1.0"
