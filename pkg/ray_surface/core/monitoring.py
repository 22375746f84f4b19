from typing import Dict

import numpy as np
import pandas as pd


class Monitor:
    def __init__(self, scalar_metrics: Dict, pair_metrics: Dict, **kwargs):

        self.scalar_metrics: Dict = scalar_metrics
        self.pair_metrics: Dict = pair_metrics

        self.scalar_results: Dict = None
        self.pair_results: Dict = None

    def reset(self):
        """Reset tracked results for all metrics."""

        self.scalar_results = {name: [] for name in self.scalar_metrics}
        self.pair_results = {name: [] for name in self.pair_metrics}

    def update(self, fitter):
        """Evaluate and update metrics given the fitter's latest step."""

        # evaluate scalar and per-pair metrics by passing the fitter
        scalar_updates = {
            name: metric(fitter) for name, metric in self.scalar_metrics.items()
        }
        pair_updates = {
            name: metric(fitter) for name, metric in self.pair_metrics.items()
        }

        # update results by appending the metrics' return values
        self.scalar_results = {
            name: self.scalar_results[name] + [scalar_updates[name]]
            for name in self.scalar_metrics
        }
        self.pair_results = {
            name: self.pair_results[name] + [pair_updates[name]]
            for name in self.pair_metrics
        }

    def load_results(self):
        """Outputs results of tracked metrics as data frames."""

        # load scalar results with index (step)
        scalar_results = pd.DataFrame(self.scalar_results)
        scalar_results.index.names = ["Step"]

        # load pair results with index (metric, pair; step)
        pair_results = {
            (metric, pair): [values.get(pair) for values in entries]
            for metric, entries in self.pair_results.items()
            for pair in set().union(*entries)
        }
        if not pair_results:
            return scalar_results, pd.DataFrame()

        pair_results = pd.DataFrame(pair_results).transpose()
        pair_results.index.names = ["Metric", "Pair"]
        # change data frame format to align the step axis along rows
        pair_results = pair_results.stack()
        pair_results.index.names = ["Metric", "Pair", "Step"]
        pair_results = pair_results.reorder_levels(["Step", "Pair", "Metric"])
        pair_results = pair_results.unstack()

        return scalar_results, pair_results

    def info(self):
        """Outputs the latest results as a dictionary."""

        # return empty infos if there are no scalar results
        if any(len(results) == 0 for results in self.scalar_results.values()):
            return {}

        scalar_info = {name: values[-1] for name, values in self.scalar_results.items()}
        pair_info = {name: values[-1] for name, values in self.pair_results.items()}

        return {**scalar_info, **pair_info}


def loss(fitter):
    """Total loss of the latest step."""
    return fitter.last_evaluation.value


def photometric(fitter):
    """Masked photometric part of the latest loss, summed over targets."""
    return fitter.last_evaluation.photometric


def valid_fraction(fitter):
    """Mean fraction of valid synthesized pixels over all pairs."""
    return float(np.mean(list(fitter.last_evaluation.valid_fractions.values())))


def automask_fraction(fitter):
    """Mean fraction of pixels kept by the static-pixel mask."""
    return float(np.mean(list(fitter.last_evaluation.keep_fractions.values())))


def temperature(fitter):
    return fitter.state.tau


def residual_weight(fitter):
    return fitter.state.lambda_r


def learning_rate(fitter):
    return fitter.optimizer.param_groups[0]["lr"]


def pair_valid_fraction(fitter):
    """Valid synthesized pixel fraction per (target, context) pair."""
    return dict(fitter.last_evaluation.valid_fractions)
