# %% [markdown]
# Repairing a toy bug with a scripted model
#
# The mock model reproduces the inverted null check under greedy decoding.
# The fix only shows up as the second-best token at the spot where the
# model hesitated, which is exactly what token-level refinement explores.

# %%
import json
from pathlib import Path

from tokenrepair import Harness, MockBackend, MockModelScript, RepairConfig, load_manifest, repair

here = Path(__file__).resolve().parent / "calc"
bug = load_manifest(here / "bug.json")
script = MockModelScript.load(here / "model.json")
print(bug.context())

# %%
config = RepairConfig(temperature=0.0)
report = repair(bug, config, MockBackend(script), Harness())
print(report.outcome.value, "after", report.budget_used, "generated patches")
for entry in report.ledger:
    print(f"  {entry.kind:<8} +{entry.amount:<2} -> {entry.total}")

# %%
for patch in report.patches:
    print(patch.id, patch.provenance.to_dict())
    print(patch.patch.text)

# %% [markdown]
# The event log shows the search step by step.

# %%
for event in report.events:
    if event["event"] in {"vote", "localize", "refine", "evaluated"}:
        print(json.dumps({k: v for k, v in event.items() if k != "text"})[:140])
