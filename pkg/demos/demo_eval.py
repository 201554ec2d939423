"""
Scoring the packaged scenario packs
===================================

Each packaged pack (classroom, prom, debate) carries a base and a reflected
config, guardrails with five predicate milestones, fault-injected scripts,
and the engineered ground-truth scores. The harness runs six conditions per
pack: Base, Auto, Man, and the same three on the reflected config (R), with
best-of-three selection per condition.

Scripted end to end, so the tables below are reproducible bit for bit.
"""

from dynex.evalharness import (
    emit_csv,
    emit_table,
    load_pack,
    packaged_pack_dir,
    run_pack,
    verify_expected,
)

results = {}
for name in ("classroom", "prom", "debate"):
    pack = load_pack(packaged_pack_dir(name))
    results[pack.name] = run_pack(pack)
    problems = verify_expected(pack, results[pack.name])
    verdict = "matches ground truth" if not problems else "; ".join(problems)
    print(f"{name}: {verdict}")

print()
print(emit_table(results))
print(emit_csv(results), end="")
