import dataclasses
from enum import Enum
from pathlib import Path
from typing import Union

import yaml


def custom_asdict_factory(data):
    def convert_value(obj):
        if isinstance(obj, Enum):
            return obj.value
        return obj

    return dict((k, convert_value(v)) for k, v in data)


def args_to_dict(args) -> dict:
    return dataclasses.asdict(args, dict_factory=custom_asdict_factory)


def save_experiment_params(output_dir: Union[str, Path], **named_args) -> Path:
    """Save all params for better reproducibility"""
    experiment_params = {name: args_to_dict(args) for name, args in named_args.items()}
    Path(output_dir).mkdir(parents=True, exist_ok=True)
    path = Path(output_dir) / "experiment_params.yaml"
    with open(path, 'w') as file:
        yaml.safe_dump(experiment_params, file, default_flow_style=False)
    return path


def write_report_section(writer, title, content):
    writer.write(f"{title}\n")
    writer.write("=" * 75 + "\n\n")
    writer.write(content)
    writer.write("\n" * 3)
