"""Acceptance criteria 1-6 of the two-player example study.

Each test prints one PASS/FAIL line with the measured values against the
stated tolerances, then asserts. Criteria whose tolerance cannot be met are
left failing; the reasons are recorded in the project's decision notes.
"""

import pytest

CRITERIA = {
    1: "error-free offline identification",
    2: "error-free online identification",
    3: "value-approximation structure",
    4: "cost-approximation structure",
    5: "property suites",
    6: "forward-solver oracles",
}


@pytest.mark.parametrize("criterion", sorted(CRITERIA))
def test_acceptance_criterion(criterion, repro_result, capsys):
    rows = [r for r in repro_result.rows if r.criterion == criterion]
    assert rows, f"no rows for criterion {criterion}"
    ok = all(r.ok for r in rows)
    failing = [r for r in rows if not r.ok]
    shown = [(r.detail or r.volatile) if isinstance(r.computed, bool) else r.computed for r in rows]
    summary = "; ".join(f"{r.name}: {v} ({r.tolerance})" for r, v in zip(rows, shown) if ok or not r.ok)
    with capsys.disabled():
        print(f"\nACCEPTANCE {criterion} [{'PASS' if ok else 'FAIL'}] {CRITERIA[criterion]}: {summary}")
    assert ok, "\n".join(f"{r.name}: computed {r.computed}, reference {r.reference}, tolerance {r.tolerance} {r.detail}"
                         for r in failing)
