"""Default caps and tolerances, in one place.

Every entry may be overridden per config under ``"params"``; the master-equation
cap can also be overridden through the ``MFLAB_CAP_STATES`` environment variable.

=========================  ==========  ==================================================
key                        value       meaning
=========================  ==========  ==================================================
composition_cap            10**7       max compositions enumerated before refusing
mc_threshold               10**5       above this, averaging switches to Monte Carlo
mc_samples                 10**5       default Monte Carlo sample count
master_cap                 20_000      max states d**N of the master equation
master_expm_max            2_000       dense expm used up to this many states
mass_tol                   1e-10       probability-density normalization tolerance
clamp_tol                  1e-10       negative values above -clamp_tol are clamped
halving_tol                1e-8        step-halving agreement required at t_end
trace_mass_tol             1e-8        max mass defect along a trace
log_osc_slack              1e-6        slack for the log-oscillation growth bound
entropy_hard_tol           1e-6        entropy bound: hard failure beyond this excess
entropy_soft_tol           1e-9        entropy bound: flagged within-tolerance above
quad_budget                10.0        integral inequality budget is quad_budget*dt**2*t
mom_buckets                16          median-of-means bucket count
dt                         1e-2        default time step
t_end                      1.0         default horizon
=========================  ==========  ==================================================
"""
from __future__ import annotations

import os

DEFAULTS: dict = {
    "composition_cap": 10**7,
    "mc_threshold": 10**5,
    "mc_samples": 10**5,
    "master_cap": 20_000,
    "master_expm_max": 2_000,
    "mass_tol": 1e-10,
    "clamp_tol": 1e-10,
    "halving_tol": 1e-8,
    "trace_mass_tol": 1e-8,
    "log_osc_slack": 1e-6,
    "entropy_hard_tol": 1e-6,
    "entropy_soft_tol": 1e-9,
    "quad_budget": 10.0,
    "mom_buckets": 16,
    "dt": 1e-2,
    "t_end": 1.0,
}


def master_cap() -> int:
    """Master-equation state cap, honouring ``MFLAB_CAP_STATES``."""
    env = os.environ.get("MFLAB_CAP_STATES")
    if env:
        return int(env)
    return DEFAULTS["master_cap"]
