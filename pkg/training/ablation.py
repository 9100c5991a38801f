import logging
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

import numpy as np
import pandas as pd

from arguments.model_arguments import ModelArguments
from arguments.training_arguments import AblationSetting, Phase, TrainArguments
from data_synthesis.dataset_io import ProductDataset
from evaluation.create_tables import create_table, save_table
from evaluation.experiments import Experiment
from evaluation.significance_testing import compute_significances
from storage.reports import save_report
from training.pipeline import build_model_config, run_mpl
from utils.reporting import write_report_section

logger = logging.getLogger(__name__)

METRICS = ("bleu4", "rouge_l", "cider")


@dataclass
class AblationResult:
    runs: pd.DataFrame  # one row per (fraction, setting, seed)
    table: pd.DataFrame  # one row per setting, metric columns grouped by fraction
    experiment: Experiment

    def medians(self, fraction: float, metric: str = "cider") -> Dict[str, float]:
        runs = self.runs[np.isclose(self.runs.fraction, fraction)]
        return runs.groupby("setting")[metric].median().to_dict()

    def ordering_holds(self, fraction: float, metric: str = "cider") -> bool:
        """MPL > (d) > max(a, b, c) >= Base on median scores, over the settings that were run."""
        medians = self.medians(fraction, metric)
        single = [medians[s] for s in ("a", "b", "c") if s in medians]
        checks = []
        if "mpl" in medians and "d" in medians:
            checks.append(medians["mpl"] > medians["d"])
        if "d" in medians and single:
            checks.append(medians["d"] > max(single))
        if single and "base" in medians:
            checks.append(max(single) >= medians["base"])
        if "mpl" in medians and "base" in medians:
            checks.append(medians["mpl"] > medians["base"])
        return all(checks)

    def language_prompts_dominate(self, fraction: float, metric: str = "cider") -> Optional[bool]:
        medians = self.medians(fraction, metric)
        if not all(s in medians for s in ("a", "b", "c")):
            return None
        return medians["c"] >= medians["a"] and medians["c"] >= medians["b"]


def ablate(dataset: ProductDataset, model_args: ModelArguments, train_args: TrainArguments,
           settings: Optional[Sequence[AblationSetting]] = None, num_seeds: Optional[int] = None,
           fractions: Optional[Sequence[float]] = None, max_eval_samples: Optional[int] = None,
           max_predict_samples: Optional[int] = None) -> AblationResult:
    """Train and test every setting for every fraction over several seeds."""
    settings = [AblationSetting(s) for s in (settings or train_args.settings)]
    num_seeds = num_seeds or train_args.ablation_num_seeds
    fractions = list(fractions or train_args.fractions)
    config = build_model_config(model_args, dataset, train_args.num_beams)

    rows = []
    for fraction in fractions:
        for setting in settings:
            for seed_offset in range(num_seeds):
                args = replace(train_args, ablation_setting=setting, fewshot_fraction=fraction, phase=Phase.MPL,
                               seed=train_args.seed + seed_offset)
                report = run_mpl(args, model_args, dataset, max_eval_samples=max_eval_samples,
                                 max_predict_samples=max_predict_samples, config=config).report
                rows.append({"fraction": fraction, "setting": setting.value, "seed": args.seed,
                             "num_train_examples": report.num_fewshot_examples,
                             "best_validation_cider": report.best_validation_cider,
                             **{metric: (report.test_metrics or {}).get(metric, np.nan) for metric in METRICS}})
    runs = pd.DataFrame(rows)

    experiment = Experiment()
    experiment.name = "ablation"
    experiment.num_random_seeds = num_seeds
    experiment.settings = settings
    experiment.fractions = fractions
    return AblationResult(runs, create_table(runs, experiment), experiment)


def save_ablation(result: AblationResult, output_dir: Union[str, Path], resolved_config: dict) -> List[Path]:
    """Table in all formats, the raw runs, ASO significances per fraction and a plain-text report."""
    output_dir = Path(output_dir)
    written = list(save_table(result.table, result.experiment, output_dir).values())
    runs_path = output_dir / "ablation_runs.csv"
    result.runs.to_csv(runs_path, index=False)
    written.append(runs_path)

    with open(output_dir / "ablation_report.txt", "w", encoding="utf-8") as writer:
        write_report_section(writer, "Ablation", result.table.apply(lambda col: col.map(str)).to_string())
        for fraction in result.experiment.fractions:
            eps_min = compute_significances(result.runs, fraction, result.experiment.significance_metric)
            if eps_min is not None:
                write_report_section(writer, f"ASO min-epsilon on CIDEr (fraction {fraction})", eps_min.to_string())
                eps_min.to_csv(output_dir / f"significances_{fraction}.csv")
            write_report_section(writer, f"Median test CIDEr (fraction {fraction})",
                                 pd.Series(result.medians(fraction)).to_string())
    written.append(output_dir / "ablation_report.txt")
    written.append(save_report(output_dir / "ablation_config.yaml", resolved_config))
    return written
