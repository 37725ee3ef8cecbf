"""Event-driven simulation and statistics for stochastic energy-exchange chains."""
from .engine import (ClockTable, DeadlockError, EventRecord, ObserverError, RunConfig,
                     RunReport, Simulation, apply_event, build_clock_set, next_event, run,
                     short_time_increments)
from .model import (AnalysisError, BathSpec, DomainError, RateKind, RateSpec, SystemState,
                    Topology, apply_boundary_exchange, apply_pair_exchange, boundary_rate,
                    generator_drift_linear, pair_rate)
from .observables import (ConductivityEstimate, EnergyProfile, FluxLedger, SampleMatrix,
                          SkeletonSampler, bond_flux_profile, conductivity_estimate,
                          energy_profile, flux_of_event, skeleton_sample, time_average_profile)
from .rng import RngStream, derive_stream
from .stats import (ChiSquareReport, GammaFit, TemperatureProfile, chi2_quantile, chisq_gof,
                    extrapolate_chisq, gamma_mle, independence_chisq, pair_balance_residual,
                    predicted_profile, theoretical_flux)

__version__ = "0.1.0"
