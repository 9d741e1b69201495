"""Convoluted Poisson noise: kernels, sampled fields, grand-canonical particle
systems and their Gaussian scaling limit."""

from ._backend import COMPILED
from .field import (FieldContext, SingularityError, field_at, field_char_analytic, field_on_grid,
                    field_on_points, free_covariance, green_convolve, green_inner, pair_field,
                    sample_field_pairings)
from .gce import (GCEConfig, GCEError, SamplerState, TruncationError, brute_force_gce, log_flow,
                  mcmc_step, run_chain, run_chains)
from .kernel import (KernelError, KernelParams, KernelTable, MollifiedKernel, MollifierParams,
                     build_table, covariance_kernel, green_evaluate, green_fourier_quadrature,
                     green_mollified)
from .noise import (Box, BoxIndicator, ChargeConfiguration, ChargeLaw, FiniteSum, GaussianBump,
                    NoiseError, TestFunction, campbell_moments, noise_char_analytic, pair_noise,
                    sample_configuration, sample_pairings)
from .potential import (HardWall, IndicatorKernel, InteractionDomain, Move, PotentialError, Quadratic,
                        RenormalizedCosine, Trigger, Trigonometric, apply_move, delta_energy,
                        interaction_energy, renorm_normalizer)
from .scaling import (ScalingError, ScalingSweepSpec, blockspin_identity_check, ecf_convergence_sweep,
                      first_order_mc, perturbative_coefficient, triviality_curve)
from .stats import (EstimatorAccumulator, RngStream, StatsError, ecf_estimate, merge, summarize)

__version__ = "0.1.0"
