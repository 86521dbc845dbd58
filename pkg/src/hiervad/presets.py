"""Named architecture presets shipped as JSON config files.

``ped2``/``avenue``/``shanghaitech`` mirror the benchmark configurations
(one stack per stream; block mix and pattern totals per dataset). ``toy3``
is the three-stack appearance-stream layout used for tolerance-degree
experiments: degree 1 activates stack 0, degree 2 stacks 0-1, degree 3
stacks 0 and 2.
"""

from __future__ import annotations

import json
from importlib import resources
from pathlib import Path

from .config import ArchitectureSpec

PRESET_NAMES = ("ped2", "avenue", "shanghaitech", "toy3")


def preset(name: str) -> ArchitectureSpec:
    if name not in PRESET_NAMES:
        raise ValueError(f"unknown preset {name!r}; available: {PRESET_NAMES}")
    text = resources.files("hiervad").joinpath("configs", f"{name}.json").read_text()
    return ArchitectureSpec.from_dict(json.loads(text))


def load_spec(path: str | Path) -> ArchitectureSpec:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"architecture config not found: {path}")
    return ArchitectureSpec.from_dict(json.loads(path.read_text()))


def save_spec(spec: ArchitectureSpec, path: str | Path) -> None:
    Path(path).write_text(json.dumps(spec.to_dict(), indent=1, sort_keys=True))
