"""nullflow: a numerical laboratory for null energy conditions.

Builds null geodesic congruences from spacelike codimension-2 seed
surfaces, transports measures along them, and checks convexity of relative
Renyi entropies against pointwise curvature conditions; applications
include horizon-area monotonicity and trapped-surface focal bounds.
"""

__version__ = "0.1.0"

from .dsl import Expression, Jet2, parse, eval_jet2, backend_name
from .geometry import (MetricSpec, CurvaturePack, curvature_at,
                       classify_vector, be_null_gap, builtin_metric,
                       builtin_catalog, make_metric)
from .congruence import (SeedSurface, RaySolution, Congruence, null_normals,
                         integrate_ray, screen_frame, jacobi_evolve,
                         second_fundamental_form, cross_section_measure,
                         build_congruence)
from .transport import (Measure, InterpolationReport, make_measure,
                        pushforward_density, renyi_entropy, convexity_report,
                        localized_implies_global)
from .checks import (ScanReport, TrappedReport, nec_scan, witness_violation,
                     hawking_check, converging_test, penrose_bound)
