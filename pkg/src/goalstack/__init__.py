"""Goal-oriented driving pipeline on synthetic scenarios: tracking, mapping,
motion forecasting, occupancy prediction and planning connected by query
features, with the full evaluation-metric suite."""

__version__ = "0.1.0"
