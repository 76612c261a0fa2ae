"""Random coefficient demand: simulation, inversion and nonparametric recovery.

Coefficient densities are recovered from aggregate demand by building the
projection CDF of the random coefficients from demand, differentiating it
in the offset and inverting the Radon transform by filtered back
projection. Bundle effects follow by deconvolution, and the inverse
demand functions are estimated by Tikhonov NPIV or simulated GMM.
"""

from .deconv import (CharacteristicFunction, cf_from_density, deconvolve,
                     deconvolve_conditional, deconvolve_difference)
from .demand import (DemandOracle, aggregate_shares_mc, bundle_choice_probabilities,
                     conditional_logit_shares, smoothed_shares)
from .densities import Gumbel, Normal, NormalMixture, PointMass, ProductDensity
from .errors import (ConfigError, ConvergenceError, CoverageError, DimensionError,
                     NormalizationError, RcDemandError, SignPatternError, SupportError)
from .estimate import (GmmSpec, MarketPanel, NpivProblem, PanelConfig, generate_panel,
                       gmm_criterion, gmm_estimate, npiv_fit, npiv_problem)
from .inversion import invert_bundles, invert_multinomial, invert_multiunit, recover_xi
from .model import ModelSpec, ProductMenu
from .radon import (DensityGrid, PhiEvaluator, Sinogram, SphereGrid, assemble_sinogram,
                    build_phi_blp, build_phi_bundle, build_phi_pcm, differentiate_offset,
                    fbp_invert, radon_forward)

__version__ = "0.1.0"
