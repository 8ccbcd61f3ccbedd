"""Economic MPC of a dimensionless ethylene-oxide CSTR with kinetic parameters
estimated online by a DDPG actor."""

__version__ = "0.1.0"

from .model import DEFAULT_CONSTANTS, THETA_NOMINAL, U_S, X_S, ModelConstants, eval_rhs, steady_state  # noqa: E402,F401
