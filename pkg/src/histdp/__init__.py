"""histdp: a desk-scale lab for the trade-off between user-history length,
differential-privacy budget, and classifier utility on timeline data."""

__version__ = "0.1.0"
