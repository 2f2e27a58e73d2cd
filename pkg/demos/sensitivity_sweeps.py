"""Predicted-probability sweeps under the incremental logit.

Alternative 1 carries the average attribute difference of the design and
alternative 2 is the zero reference. One attribute is moved at a time.

Run with ``python3 demos/sensitivity_sweeps.py [outdir]``.
"""
import sys

from choicekit import MXLResult, design_baseline, load_model_spec
from choicekit.sensitivity import figure2_sweeps, figure3_sweeps, group_sweeps, write_tables

mnl = load_model_spec("table7-spec2")
base = design_baseline(mnl)
print("baseline differences:", {k: round(v, 3) for k, v in base.as_dict().items()})

tables = figure2_sweeps(base, mnl.vector())
for name, t in tables.items():
    flag = " (extrapolated ends)" if t.extrapolated.any() else ""
    print(f"logit {name:>12s}: {t.mean[0]:.3f} -> {t.mean[-1]:.3f}{flag}")

mxl = load_model_spec("table8-spec2")
res = MXLResult.from_spec(mxl)
mbase = design_baseline(mxl)
for name, t in figure3_sweeps(mbase, res).items():
    print(f"mixed {name:>16s}: mask/vaccine increment {t.increment():.3f}, "
          f"90% band at the end [{t.p5[-1]:.2f}, {t.p95[-1]:.2f}]")

for name, (g, c) in group_sweeps(mbase, res, n=9, n_draws=2000).items():
    print(f"group {name}: {g.mean[0]:.3f} -> {g.mean[-1]:.3f}, "
          f"complement {c.mean[0]:.3f} -> {c.mean[-1]:.3f}")

if len(sys.argv) > 1:
    paths = write_tables({f"fig2:{k}": t for k, t in tables.items()}, sys.argv[1])
    print("wrote", ", ".join(p.name for p in paths))
