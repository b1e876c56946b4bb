"""arbcheck: no-arbitrage and bubble classification for one-asset market models.

The library classifies regime-switching diffusions and stochastic-exponential
markets for the existence of strict martingale densities, equivalent (local)
martingale measures and financial bubbles by numerical boundary tests on
scale-type integrals, and cross-validates every verdict with Monte Carlo
simulation of the switching dynamics and their density processes.
"""

from .classify import (
    ArbitrageReport,
    Verdict,
    cev_closed_form,
    classify_exponential,
    classify_ito_market,
    classify_switching_market,
)
from .exprlang import DomainError, Expr, ExprSyntaxError, evaluate, parse, pretty
from .measure import chain_exponential, mlmm_kernel, tilt_qmatrix, verify_tilt_law
from .model import (
    ItoEnvelopeModel,
    MarketModel,
    QMatrix,
    RegimeSet,
    RegularityAttestation,
    StateInterval,
    SwitchingModel,
    localization_ladder,
    market_price_of_risk,
    validate,
)
from .quadtest import (
    Boundary,
    BoundaryVerdict,
    LadderConfig,
    ScaleIntegrand,
    Status,
    classify_boundary,
    feller_price_test,
    general_v_switching,
    reduced_const_u_test,
    v_value,
)
from .simkit import (
    DtPolicy,
    MCEstimate,
    RegimePath,
    explosion_probability,
    girsanov_tilt,
    martingale_defect_direct,
    sample_chain,
    simulate_switching_sde,
)

__version__ = "0.1.0"
