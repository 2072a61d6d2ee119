"""Simulation and estimation for renewal contact processes on finite boxes of Z^d."""
from ._accel import backend
from .estimators import (Estimate, MultiscaleParams, branching_bound, check_build_chain, check_fkg,
                         check_recursion, estimate_gap_prob, estimate_lambda_c, estimate_Pr, estimate_survival,
                         generation_census)
from .graphical import HarrisSystem, Lattice, StartPolicy, active_arrows, build_harris, load_system
from .reachability import (Censored, SeedSet, SpaceTimeRect, detect_A0, detect_chain, detect_gap,
                           has_spatial_crossing, has_temporal_crossing, propagate, stopping_index_Tn,
                           survival_time, windowed_temporal_crossing)
from .renewal import (Exponential, HazardField, ShiftedPareto, UniformLaw, Weibull, coupled_trains, hazard,
                      sample_train, sample_train_by_thinning)

__version__ = "0.1.0"
