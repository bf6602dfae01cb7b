"""The five diagnostic checks on the default synthetic cohort."""
from trialemu.diagnostics import DiagnosticConfig, run_diagnostics
from trialemu.synth import SynthConfig, generate_cohort

ds, _ = generate_cohort(SynthConfig(seed=0))
rep = run_diagnostics(ds, DiagnosticConfig(seed=0))  # 100 replicates per stochastic test
for test in rep.tests:
    print(f"{test.name:18s} {'pass' if test.passed else 'FAIL'}")

pl = rep.placebo.details
print(f"\nplacebo HRs: mean {pl['mean']:.3f}, original HR outside the 95% band: {pl['original_outside_band']}")
for row in rep.random_confounder.details["grid"][:3]:
    print("noise theta %.2f: drift %.3f%%" % (row["theta"], 100 * row["drift"]))
