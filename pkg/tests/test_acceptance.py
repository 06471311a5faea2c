"""Acceptance suite: one block per criterion, summarised as PASS/FAIL lines at the end of the run.

Each test tags itself with ``record_property("criterion", n)``; the conftest hook
folds the outcomes into the summary printed after the session.
"""

from __future__ import annotations

import itertools
import logging
import math
import random
import time

import pytest
from cvss import CVSS3

from threatprio.cli import main
from threatprio.cvss import base_score
from threatprio.evaluation import classify_trend, generate_series, load_dilution_case, load_nvd_cases, window_sweep
from threatprio.evaluation.metrics import Direction, dir_acc, f1_set, kendall_tau, ndcg_at_k, rmse
from threatprio.evaluation.trends import Trend
from threatprio.gateway import Gateway, ScriptedBackend
from threatprio.mitigation import MitigationPlanner, PlanInput, RetrievalReport, prioritize
from threatprio.model import Metric, RiskInputs, parse_cvss_vector

import test_antifabrication as af
from test_cvss import ALL_VECTORS, EXPOSURE_DOWN, IMPACT_UP
from test_mitigation import THRESHOLD, oracle_order, oracle_risk, random_items
from test_no_lookahead import PERTURBATIONS, _perturb
from test_pipeline_cli import tree

CRITERIA = {
    1: "CVSS base scores equal the reference calculator on all 2,592 vectors and on >= 50 NVD pairs, in < 5 s",
    2: "CVSS monotonicity (impact upgrades, attack-vector downgrades) over the exhaustive vector space",
    3: "two fixture-mode pipeline runs give byte-identical trees; PrintNightmare splits into exactly two instances",
    4: "prioritize equals a brute-force oracle (1,000 random trials, exhaustive permutations, alpha scaling)",
    5: "metric functions match hand-computed examples to 1e-9; tau identities exhaustive to n = 7",
    6: "trend round-trip for 100 seeds per type; window sweep RMSE non-decreasing from 1y to 3y",
    7: "perturbing records dated after as_of leaves every pipeline output unchanged",
    8: "fabricated indicators and patches are dropped and logged in every adversarial fixture (>= 10)",
}

TOL = 1e-9


@pytest.fixture
def criterion(record_property):
    def mark(n: int) -> None:
        record_property("criterion", n)
    return mark


# -- 1 --------------------------------------------------------------------------------------------

def test_c1_cvss_reference_equivalence(criterion):
    criterion(1)
    assert len(ALL_VECTORS) == 2592
    cases = load_nvd_cases()
    assert len(cases) >= 50
    vectors = [parse_cvss_vector(t) for t in ALL_VECTORS]
    case_vectors = [parse_cvss_vector(c.vector) for c in cases]
    started = time.perf_counter()
    ours = [base_score(v).base for v in vectors]
    published = [base_score(v).base for v in case_vectors]
    elapsed = time.perf_counter() - started
    reference = [float(CVSS3("CVSS:3.1/" + t).scores()[0]) for t in ALL_VECTORS]
    assert ours == reference
    assert published == [c.score for c in cases]
    assert elapsed < 5.0, elapsed


# -- 2 --------------------------------------------------------------------------------------------

def test_c2_cvss_monotonicity(criterion):
    criterion(2)
    violations = []
    for text in ALL_VECTORS:
        v = parse_cvss_vector(text)
        score = base_score(v).base
        for m in (Metric.C, Metric.I, Metric.A):
            for better in IMPACT_UP[IMPACT_UP.index(v.get(m)) + 1:]:
                if base_score(v.replace(m, better)).base < score:
                    violations.append((text, m.value, better.abbrev))
        for worse in EXPOSURE_DOWN[EXPOSURE_DOWN.index(v.av) + 1:]:
            if base_score(v.replace(Metric.AV, worse)).base > score:
                violations.append((text, "AV", worse.abbrev))
    assert violations == []


# -- 3 --------------------------------------------------------------------------------------------

def test_c3_pipeline_determinism(criterion, demo_copy, tmp_path):
    criterion(3)
    import json

    trees = []
    for name in ("a", "b"):
        out = tmp_path / name
        assert main(["pipeline", "--config", str(demo_copy / "config.yaml"), "--out", str(out)]) == 0
        trees.append(tree(out))
    assert trees[0] == trees[1]
    manifest = json.loads(trees[0]["manifest.json"])
    assert manifest["counts"] == {"instances": 3, "assessments": 3, "forecasts": 3, "plans": 1}
    split = sorted(json.loads(body)["metadata"]["cve_id"] for path, body in trees[0].items()
                   if path.startswith("instances/INC-2021-0701-"))
    assert split == ["CVE-2021-1675", "CVE-2021-34527"]


# -- 4 --------------------------------------------------------------------------------------------

def test_c4_prioritize_random_trials(criterion):
    criterion(4)
    rng = random.Random(4)
    for _ in range(1000):
        items = random_items(rng, rng.randint(1, 6))
        assert prioritize(items).order() == oracle_order(items)


def test_c4_prioritize_exhaustive_permutations(criterion):
    criterion(4)
    rng = random.Random(44)
    for n in range(1, 7):
        for _ in range(2 if n < 6 else 1):
            items = random_items(rng, n)
            expected = oracle_order(items)
            for perm in itertools.permutations(items):
                assert prioritize(list(perm)).order() == expected


def test_c4_alpha_scaling_invariance(criterion):
    criterion(4)
    rng = random.Random(444)
    checked = 0
    for _ in range(500):
        items = random_items(rng, rng.randint(2, 6))
        c = rng.choice([1.5, 2.0, 3.0])
        scaled = [PlanInput(it.threat_id, RiskInputs(it.risk_inputs.severity, it.risk_inputs.exploit_prob,
                                                      it.risk_inputs.exposure_factor * c,
                                                      it.risk_inputs.criticality_factor),
                            it.actions, it.exploitation, it.constraints) for it in items]
        argsort = lambda xs: [x.threat_id for x in sorted(xs, key=lambda x: (-oracle_risk(x), x.threat_id))]
        assert argsort(items) == argsort(scaled)
        risks = sorted((oracle_risk(it) for it in items), reverse=True)
        if all(a - b >= THRESHOLD for a, b in zip(risks, risks[1:])):
            assert prioritize(items).order() == prioritize(scaled).order() == argsort(items)
            checked += 1
    assert checked > 50


# -- 5 --------------------------------------------------------------------------------------------

def test_c5_metric_examples(criterion):
    criterion(5)
    assert f1_set({"a", "b"}, {"a", "b"}) == 1.0
    assert f1_set({"a", "b"}, {"c", "d"}) == 0.0
    assert abs(f1_set({"a", "b", "c"}, {"b", "c", "d"}) - 2 / 3) < TOL
    assert rmse([0.4, 0.6], [0.4, 0.6]) == 0.0
    assert abs(rmse([0.1, 0.3], [0.2, 0.1]) - math.sqrt((0.01 + 0.04) / 2)) < TOL
    assert rmse([5.0], [7.0]) == 2.0
    inc, dec, stable = Direction.INC, Direction.DEC, Direction.STABLE
    assert abs(dir_acc([inc, dec, stable, inc], [inc, dec, stable, stable]) - 0.75) < TOL
    assert dir_acc([inc, stable], [inc, stable]) == 1.0
    rel = {"x": 3, "y": 2, "z": 1}
    assert abs(ndcg_at_k(["x", "y", "z"], rel, 5) - 1.0) < TOL
    expected = (2 + 3 / math.log2(3) + 0.5) / (3 + 2 / math.log2(3) + 0.5)
    assert abs(ndcg_at_k(["y", "x", "z"], rel, 3) - expected) < TOL
    assert abs(ndcg_at_k(["x", "y"], {"x": 0, "y": 0}, 5) - 1.0) < TOL
    assert kendall_tau([1, 2, 3], [1, 2, 3]) == 1.0
    assert kendall_tau([1, 2, 3], [3, 2, 1]) == -1.0
    assert abs(kendall_tau([1, 2, 3], [1, 3, 2]) - 1 / 3) < TOL


def test_c5_tau_identities_to_seven(criterion):
    criterion(5)
    for n in range(2, 8):
        for perm in itertools.permutations(range(n)):
            p = list(perm)
            assert kendall_tau(p, p) == 1.0 and kendall_tau(p, p[::-1]) == -1.0


# -- 6 --------------------------------------------------------------------------------------------

@pytest.mark.parametrize("trend", list(Trend), ids=lambda t: t.value)
def test_c6_trend_round_trip(criterion, trend):
    criterion(6)
    misses = [seed for seed in range(100) if classify_trend(generate_series(trend, None, seed)) is not trend]
    assert misses == []


def test_c6_window_dilution(criterion):
    criterion(6)
    rows = {r.window: r.rmse for r in window_sweep(load_dilution_case(), ["1y", "2y", "3y"])}
    assert rows["1y"] <= rows["2y"] <= rows["3y"]


# -- 7 --------------------------------------------------------------------------------------------

def test_c7_no_lookahead(criterion, demo_copy, tmp_path):
    criterion(7)
    argv = ["pipeline", "--config", str(demo_copy / "config.yaml")]
    assert main(argv + ["--out", str(tmp_path / "before")]) == 0
    _perturb(demo_copy, [*PERTURBATIONS, "incidents"])
    assert main(argv + ["--out", str(tmp_path / "after")]) == 0
    assert tree(tmp_path / "before") == tree(tmp_path / "after")


# -- 8 --------------------------------------------------------------------------------------------

def test_c8_anti_fabrication(criterion, caplog):
    criterion(8)
    outcomes = {}
    caplog.set_level(logging.WARNING)
    for name, (raw, fabricated) in af.TRIAGE_CASES.items():
        caplog.clear()
        out, report = af.separate(raw)
        kept = {i for inst in out for i in inst.indicators} | {inst.description for inst in out}
        outcomes[f"triage: {name}"] = (fabricated not in kept and bool(report.dropped)
                                       and fabricated[:40] in caplog.text)
    spooler = af.spooler()
    for name, (bucket, proposal, reason) in af.MITIGATION_CASES.items():
        caplog.clear()
        backend = ScriptedBackend(lambda p, b=bucket, q=proposal: af._answer(b, q, p))
        report = RetrievalReport(spooler.id)
        actions = MitigationPlanner(af.store(), Gateway(backend)).retrieve_mitigations(spooler, report)
        outcomes[f"mitigation: {name}"] = (proposal["title"] not in {a.title for a in actions}
                                           and [d["reason"] for d in report.dropped] == [reason]
                                           and proposal["title"] in caplog.text)
    assert len(outcomes) >= 10
    assert [k for k, ok in outcomes.items() if not ok] == []
