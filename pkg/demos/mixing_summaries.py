"""Summaries of the shipped mixed-logit coefficient distributions.

Shows the moments and percentiles of each random coefficient, their
delta-style standard errors, and how the share of respondents for whom
masks lower utility grows with trip length.

Run with ``python3 demos/mixing_summaries.py``.
"""

from choicekit import MXLResult, load_model_spec, mixing_summary, share_negative
from choicekit.report import format_mixing

for key in ("table8-spec1", "table8-spec2"):
    spec = load_model_spec(key)
    print(f"== {key}")
    print(format_mixing(mixing_summary(MXLResult.from_spec(spec)), spec))

spec = load_model_spec("table8-spec1")
mask, slope = spec.values["mask"], spec.values["travel_time:mask"]
print("trip length   share with negative mask coefficient")
for minutes in (15, 30, 45, 60, 90):
    s = share_negative(mask["mu"], mask["sigma"], slope * minutes / 100)
    print(f"{minutes:>8d} min   {s:.3f}")
