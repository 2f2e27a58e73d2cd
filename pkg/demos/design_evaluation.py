"""Check, score and improve the shipped choice design.

Run with ``python3 demos/design_evaluation.py``.
"""
from choicekit import (bayesian_d_error, check_constraints, improve_design,
                       partial_profile_audit, reference_design)
from choicekit.design import default_prior, design_spec

design = reference_design()
spec, prior = design_spec(), default_prior()

print("constraint violations:", check_constraints(design) or "none")
audit = partial_profile_audit(design)
print("attributes held constant per choice set:", sorted(set(audit.constant_per_set.ravel().tolist())))
print(f"Bayesian D-error of the shipped design: {bayesian_d_error(design, prior, spec):.4f}")

# one sweep of constrained coordinate exchange; the partial-profile structure is preserved
trace = []
better = improve_design(design, iterations=1, seed=0,
                        callback=lambda plan: trace.append(bayesian_d_error(plan, prior, spec)))
print(f"after {len(trace)} accepted exchanges: {bayesian_d_error(better, prior, spec):.4f}")
print("still feasible:", not check_constraints(better), "| audit ok:", partial_profile_audit(better).ok())
