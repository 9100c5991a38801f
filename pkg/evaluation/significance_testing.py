import logging
from collections import OrderedDict
from typing import Optional

import pandas as pd
from deepsig import multi_aso

from arguments.training_arguments import AblationSetting
from evaluation.create_tables import display_names

logger = logging.getLogger(__name__)


def get_scores(df: pd.DataFrame, fraction: float, metric: str = "cider") -> "OrderedDict[str, list]":
    """Scores over random seeds per ablation setting"""
    scores = OrderedDict()
    fraction_df = df[(df.fraction.astype(float) - fraction).abs() < 1e-12]
    for setting in AblationSetting:
        setting_scores = fraction_df[fraction_df.setting == setting.value][metric].astype(float).tolist()
        if setting_scores:
            scores[display_names[setting]] = setting_scores
    return scores


def compute_significances(df: pd.DataFrame, fraction: float, metric: str = "cider",
                          seed: int = 42) -> Optional[pd.DataFrame]:
    """
    Almost stochastic order (ASO) between every pair of settings. Entry (i, j) is the minimal epsilon of
    setting i being stochastically dominant over setting j; values below 0.5 support the dominance.
    """
    scores = get_scores(df, fraction, metric)
    if len(scores) < 2 or min(len(values) for values in scores.values()) < 2:
        logger.warning("Significance testing needs at least two settings with two or more seeds each, skipping")
        return None
    eps_min = multi_aso(scores, confidence_level=0.05, return_df=True, seed=seed, show_progress=False)
    logger.info(f"Computed significances on {metric} (fraction {fraction})")
    return eps_min
