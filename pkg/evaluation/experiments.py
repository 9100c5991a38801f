from arguments.training_arguments import AblationSetting


class Experiment:
    name = "experiment"
    num_random_seeds = 5
    settings = [setting for setting in AblationSetting]
    fractions = [0.01]
    metrics = ["bleu4", "rouge_l", "cider"]
    significance_metric = "cider"
    show_min = False
    orient = 'index'
    save_to_latex = True
    save_to_csv = True
    save_to_json = True
