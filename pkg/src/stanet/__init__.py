"""Depression-vs-control classification from resting-state scans: group ICA,
template regression, multi-scale feature aggregation and an attention GRU stack."""

__version__ = "0.1.0"
