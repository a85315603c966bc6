import copy
import json
from pathlib import Path

import pytest

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def _local_outputs(blob: dict) -> dict:
    blob = copy.deepcopy(blob)
    blob["output"] = {name: f"out/{Path(value).name}" for name, value in blob["output"].items()}
    return blob


@pytest.fixture
def synthetic_blob():
    return _local_outputs(json.loads((CONFIGS / "synthetic.json").read_text()))


@pytest.fixture
def ventilator_blob():
    return _local_outputs(json.loads((CONFIGS / "ventilator.json").read_text()))


@pytest.fixture
def write_config(tmp_path):
    """Write a config blob next to tmp_path/out and return its path."""
    def write(blob: dict, name: str = "config.json") -> Path:
        path = tmp_path / name
        path.write_text(json.dumps(blob))
        return path

    return write
