"""Brute-force VEX status table over (executed, reachable, mitigation_active).

Writes vex_truth_table.json next to this file. Rules, in order:
  executed=yes with reachable=no is conflicting telemetry
  executed=no and reachable=no is not affected, whatever the mitigation
  any remaining unknown among executed/reachable is inconclusive
  otherwise the vulnerable path is live: mitigation yes/no/unknown decides
"""

import itertools
import json
import pathlib

STATES = ["yes", "no", "unknown"]


def status(executed, reachable, mitigation):
    if executed == "yes" and reachable == "no":
        return "under_investigation"
    if executed == "no" and reachable == "no":
        return "not_affected"
    if "unknown" in (executed, reachable):
        return "under_investigation"
    return {
        "yes": "affected_mitigated",
        "no": "affected_requires_review",
        "unknown": "under_investigation",
    }[mitigation]


rows = [
    {"executed": e, "reachable": r, "mitigation_active": m, "status": status(e, r, m)}
    for e, r, m in itertools.product(STATES, repeat=3)
]
assert len(rows) == 27
out = pathlib.Path(__file__).with_name("vex_truth_table.json")
out.write_text(json.dumps(rows, indent=1) + "\n")
