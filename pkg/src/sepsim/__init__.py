"""Exclusion processes on random neighbourhood graphs over flat tori."""

from .geometry import (CircleBundle, Potential, Torus,
                       fibre_distance_after_transport, geodesic_distance,
                       make_potential, potential_and_gradient)
from .kernels import (Kernel, KernelMoments, ProductKernel, density_estimate,
                      expected_density_oracle, kernel_moments, make_kernel,
                      make_product_kernel, product_kernel_moments)
from .sampling import (BandwidthSchedule, Configuration, LiftedCloud,
                       PointCloud, bandwidth, extend_ppp, gibbs_mass,
                       initial_configuration, lifted_bandwidths,
                       sample_lifted, sample_ppp)
from .graphs import (LiftedGraph, NeighbourhoodGraph, WeightScheme,
                     build_graph, build_lifted_graph, density_diagnostic,
                     density_field)
from .walkers import (ConsistencyReport, TestFunction, consistency_error,
                      limit_operator_apply, make_fourier_mode,
                      rw_generator_apply)
from .sep import (Trajectory, duality_check, dynkin_diagnostics, exchange,
                  sep_generator_apply, simulate)
from .pde import (FieldState, pde_pairing, solve_fokker_planck,
                  solve_horizontal_heat, solve_weighted_heat)

__version__ = "0.1.0"
