# didforge
# Difference-in-differences estimation, TWFE decomposition and balance diagnostics for panel data

__version__ = "1.0.0"
__author__ = "didforge developers"
__description__ = "Panel difference-in-differences engine with covariate-aware estimators and TWFE diagnostics"
