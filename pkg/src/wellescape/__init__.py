"""Escape from potential wells of forced, damped systems.

Hyperbolic trajectories and their invariant manifolds are computed as
boundary-value problems, interpolated into graphs and used to decide whether
an initial state escapes (capsizes) or stays in the well.
"""

from .atlas import (ManifoldGraph, ManifoldSampleSet, RbfGraph, fit_graph, immersion_jacobian,
                    sample_manifold)
from .bvp import NewtonReport, hyperbolic_trajectory, manifold_trajectory
from .capsize import (CAPSIZE_MINUS, CAPSIZE_PLUS, SAFE, DividingManifold, IntegrationClassifier,
                      ManifoldGraphClassifier, build_dividing_manifold, classify_by_integration,
                      classify_state, integrity_measure, time_to_capsize, well_volume)
from .dynamics import (GridTrajectory, QuasiPeriodicForcing, QuasiTerm, SampledForcing,
                       SaddleSystem, TimeGrid, ZeroForcing, eckart_1dof, flow_map, integrate,
                       roll_heave_2dof, sample_ou_path)
from .saddle import SaddleEigenstructure, eigenstructure_1dof, eigenstructure_2dof
from .validation import advect_manifold_1dof, differential_correction, globalize_manifolds

__version__ = "0.1.0"
