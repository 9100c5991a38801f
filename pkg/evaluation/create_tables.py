import json
import logging
from pathlib import Path
from typing import Dict, List, Union

import numpy as np
import pandas as pd

from arguments.training_arguments import AblationSetting
from evaluation.experiments import Experiment
from evaluation.result_cell import ResultCell

logger = logging.getLogger(__name__)

display_names = {
    AblationSetting.BASE: "Base",
    AblationSetting.A: "(a) visual prompts",
    AblationSetting.B: "(b) attribute prompts",
    AblationSetting.C: "(c) language prompts",
    AblationSetting.D: "(d) all prompts, no alignment",
    AblationSetting.MPL: "MPL",
    "bleu4": "BLEU-4",
    "rouge_l": "ROUGE-L",
    "cider": "CIDEr",
}


def fraction_name(fraction: float) -> str:
    return f"{'supervised' if fraction >= 1.0 else 'few-shot'} ({fraction:.0%})"


def get_cell(runs: pd.DataFrame, metric: str) -> ResultCell:
    """mean ± std over the random seeds of one setting"""
    if len(runs.index) == 0:
        return ResultCell(empty=True)
    scores = runs[metric].astype(float)
    return ResultCell(scores.mean(), scores.std(ddof=0), scores.min(), support=len(scores.index))


def fill_table(df: pd.DataFrame, experiment: Experiment) -> Dict[str, Dict[tuple, ResultCell]]:
    """Fills the table with the individual results"""
    table = {}
    for setting in experiment.settings:
        setting = AblationSetting(setting)
        setting_df = df[df.setting == setting.value]
        if len(setting_df.index) == 0:
            continue
        row = {}
        for fraction in experiment.fractions:
            fraction_df = setting_df[np.isclose(setting_df.fraction.astype(float), fraction)]
            for metric in experiment.metrics:
                cell = get_cell(fraction_df, metric)
                cell.show_min = experiment.show_min
                row[(fraction_name(fraction), display_names[metric])] = cell
        table[display_names[setting]] = row
    return table


def create_table(df: pd.DataFrame, experiment: Experiment) -> pd.DataFrame:
    """
    Creates the ablation table from one row per run (columns ``setting``, ``fraction``, ``seed`` and the metrics):
    one row per setting, a column group per training fraction with the three metrics.
    """
    table = fill_table(df, experiment)
    table_df = pd.DataFrame.from_dict(table, orient=experiment.orient)
    if len(table_df.columns):
        table_df.columns = pd.MultiIndex.from_tuples(table_df.columns)
    return table_df


def table_records(table_df: pd.DataFrame) -> List[dict]:
    records = []
    for row_name, row in table_df.iterrows():
        for (group, metric), cell in row.items():
            records.append({"setting": row_name, "group": group, "metric": metric, **cell.to_dict()})
    return records


def save_table(table_df: pd.DataFrame, experiment: Experiment, output_dir: Union[str, Path]) -> Dict[str, Path]:
    """Write the table as aligned text and, depending on the experiment, as LaTeX, CSV and JSON."""
    output_dir = Path(output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    base = output_dir / f"experiment_{experiment.name}"
    written = {"text": base.with_suffix(".txt")}
    written["text"].write_text(table_df.apply(lambda col: col.map(str)).to_string() + "\n", encoding="utf-8")
    if experiment.save_to_latex:
        written["latex"] = base.with_suffix(".tex")
        table_df.apply(lambda col: col.map(ResultCell.to_latex)).to_latex(
            written["latex"], multicolumn_format="c", escape=False)
    if experiment.save_to_csv:
        written["csv"] = base.with_suffix(".csv")
        pd.DataFrame(table_records(table_df)).to_csv(written["csv"], index=False)
    if experiment.save_to_json:
        written["json"] = base.with_suffix(".json")
        written["json"].write_text(json.dumps(table_records(table_df), indent=2), encoding="utf-8")
    logger.info(f"Wrote the {experiment.name} table to {base}.*")
    return written
