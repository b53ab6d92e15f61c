"""Gas price shocks, survey-based expectations and uncertainty: data, BVAR, identification and projections."""

__version__ = "0.1.0"
