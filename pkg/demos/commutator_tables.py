"""Exact transport commutators and the K^0 bracket table in n = 3."""
from vlasovlab.fields import bracket_table, catalog, transport_commutator
from vlasovlab.verify import algebra_checks

for Z in catalog("K^", 3, 0):
    print(f"[T_0, {Z.name}] -> {transport_commutator(Z, 0).label()}")

rows = bracket_table("K^0", 3, 0)
print(f"\n{len(rows)} brackets in K^0; first few:")
for a, b, dec in rows[:8]:
    print(f"  [{a}, {b}] = {dec}")

print()
for r in algebra_checks(3):
    print(r.line())
