"""Offline rendering of experiment-harness CSVs into figures.

Reads only the documented CSV contracts (training curves with
episode/mean_cum_reward columns; evaluation tables with
algorithm/travel_time_s/queue_length/throughput columns); no coupling
to the trainer's internals.
"""

__version__ = "0.1.0"

from .plots import MissingColumnError, plot_eval_table, plot_training_curves

__all__ = ["MissingColumnError", "plot_eval_table", "plot_training_curves"]
