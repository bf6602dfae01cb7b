"""Comparing emulated and randomized hazard ratios from their published intervals."""
from trialemu.causal import equivalence_test, se_from_ci

pairs = {
    "FLAURA": ((0.63, (0.45, 0.88)), (0.61, (0.46, 0.80))),
    "KEYNOTE024": ((0.63, (0.47, 0.86)), (0.90, (0.70, 1.16))),
    "disparate": ((0.32, (0.16, 0.64)), (1.00, (0.90, 1.10))),
}
for name, (rct, emu) in pairs.items():
    res = equivalence_test(rct, emu)
    print(f"{name:11s} z = {res['z_difference']:+.3f}  consistent: {res['consistent']}  "
          f"equivalent within 1.3x: {res['equivalent']}")

print("SE recovered from CI (0.16, 0.64): %.4f" % se_from_ci(0.16, 0.64))
