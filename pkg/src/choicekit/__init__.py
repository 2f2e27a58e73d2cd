"""Stated-choice analysis toolkit.

Choice-data handling, utility specification, multinomial and panel mixed
logit estimation, choice-design evaluation and search, synthetic data
generation and incremental-logit sensitivity sweeps.
"""
from .schema import STUDY_SCHEMA, Attribute, AttributeSchema, SchemaError, Transform
from .data import (ChoiceDataset, DataError, Respondent, ScreeningReport, filter_fast_responders,
                   filter_inconsistent, filter_straight_liners, load_responses, screen,
                   write_responses)
from .utility import (ConfigError, MixingRule, ModelSpec, TermSpec, expand, load_model_spec,
                      model_spec_from_dict)
from .mnl import (ConvergenceError, EstimationError, EstimationResult, IdentificationError,
                  estimate_mnl, lr_test, mnl_probability)
from .mxl import (MXLResult, estimate_mxl, lognormal_summary, make_draws, mixing_summary,
                  normal_summary, share_negative, simulated_panel_loglik)
from .design import (STUDY_CONSTRAINTS, DesignPlan, bayesian_d_error, check_constraints, d_error,
                     improve_design, load_design, partial_profile_audit, reference_design)
from .simulate import SimConfig, simulate_choice_probabilities, simulate_dataset
from .sensitivity import (Baseline, SweepSpec, compute_baseline, design_baseline, group_sweep,
                          sweep_mnl, sweep_mxl)

__version__ = "0.1.0"
