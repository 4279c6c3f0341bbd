"""Access to bundled data files (device specs, BOMs, CI table, demo pipeline).

The asset root defaults to the package's `assets/` directory and can be
overridden with the CO2METER_ASSETS environment variable, e.g. to swap in a
locally measured set of device specs without touching the install.
"""

from __future__ import annotations

import json
import os
from pathlib import Path

from .accounting import AppPipeline, CarbonIntensity, load_ci_table, load_pipeline_json
from .device_models import PeripheralModel, fit_by_name, load_samples_csv
from .embodied import SocBom, load_bom_json
from .errors import UserInputError
from .workload import DeviceSpec, LlmConfig, load_config_json, load_device_json

ASSETS_ENV_VAR = "CO2METER_ASSETS"

_DEFAULT_ROOT = Path(__file__).parent / "assets"


def asset_root() -> Path:
    override = os.environ.get(ASSETS_ENV_VAR)
    root = Path(override) if override else _DEFAULT_ROOT
    if not root.is_dir():
        raise UserInputError(f"asset root {root} is not a directory")
    return root


def _named_json(subdir: str, name: str) -> Path:
    path = asset_root() / subdir / f"{name}.json"
    if not path.is_file():
        have = sorted(p.stem for p in (asset_root() / subdir).glob("*.json"))
        raise UserInputError(f"no bundled {subdir} asset {name!r}; have {have}")
    return path


def list_assets(subdir: str) -> list[str]:
    return sorted(p.stem for p in (asset_root() / subdir).glob("*.json"))


def load_device(name: str) -> DeviceSpec:
    return load_device_json(_named_json("devices", name))


def load_bom(name: str) -> SocBom:
    return load_bom_json(_named_json("boms", name))


def load_llm_config(name: str) -> LlmConfig:
    return load_config_json(_named_json("llm_configs", name))


def load_carbon_intensities() -> dict[str, CarbonIntensity]:
    return load_ci_table(asset_root() / "ci_table.json")


def load_demo_pipeline(name: str = "voice_assistant") -> AppPipeline:
    return load_pipeline_json(
        _named_json("pipelines", name),
        config_resolver=load_llm_config,
        device_resolver=load_device,
    )


def measurement_csv(name: str) -> Path:
    path = asset_root() / "measurements" / f"{name}.csv"
    if not path.is_file():
        raise UserInputError(f"no bundled measurement file {name!r}")
    return path


def _flat_table(filename: str) -> dict[str, float]:
    path = asset_root() / filename
    try:
        doc = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise UserInputError(f"cannot read {path}: {exc}") from exc
    return {str(k): float(v) for k, v in doc.items()}


def load_peripheral_masses() -> dict[str, float]:
    """Embodied carbon (kg CO2e) of common off-board peripherals."""
    return _flat_table("peripherals.json")


def load_conversion_table() -> dict[str, float]:
    """Per-task energies (J) for the bundled format converters."""
    return _flat_table("conversion.json")


def demo_peripheral_models() -> dict[str, PeripheralModel]:
    """Fit every bundled measurement CSV and return the models by name.

    The bundled CSVs are noiseless, so the fits reproduce the generating
    parameters and the result is deterministic.
    """
    models: dict[str, PeripheralModel] = {}
    for name in ("net", "camera", "mic", "video", "speaker", "display"):
        samples = load_samples_csv(measurement_csv(name))
        models[name] = fit_by_name(name, samples).model
    return models
