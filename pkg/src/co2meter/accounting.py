"""Carbon accounting: operational energy -> kgCO2-eq, app pipelines, break-even.

Operational carbon converts joules to kilowatt-hours and scales by a regional
grid carbon intensity.  An application pipeline stitches the peripheral models
and an LLM energy source into a per-request energy breakdown over the stages
input / con / llm / output / sys.  Break-even answers how many requests per
day justify a board with more embodied carbon but lower per-request energy.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Mapping

from . import device_models as dm
from .embodied import SocBom, soc_embodied
from .errors import ConfigurationError, NoBreakEvenError, UserInputError
from .workload import (
    DeviceSpec,
    LlmConfig,
    Request,
    config_from_json,
    device_from_json,
)

JOULES_PER_KWH = 3.6e6
DAYS_PER_YEAR = 365.0
DEFAULT_LIFESPAN_YEARS = 5.0

BREAKDOWN_KEYS = ("input", "con", "llm", "output", "sys")


@dataclass(frozen=True)
class CarbonIntensity:
    """Grid carbon intensity in kgCO2-eq per kWh."""

    region: str
    kg_per_kwh: float

    def __post_init__(self) -> None:
        if self.kg_per_kwh <= 0:
            raise ValueError("carbon intensity must be positive")


@dataclass(frozen=True)
class UsageProfile:
    requests_per_day: float
    lifespan_years: float = DEFAULT_LIFESPAN_YEARS

    def __post_init__(self) -> None:
        if self.requests_per_day < 0:
            raise ValueError("requests_per_day must be >= 0")
        if self.lifespan_years <= 0:
            raise ValueError("lifespan_years must be positive")


def operational_carbon(energy_j: float, ci: CarbonIntensity) -> float:
    """kgCO2-eq of consuming `energy_j` joules on the given grid."""
    if energy_j < 0:
        raise ValueError("energy must be >= 0")
    return energy_j / JOULES_PER_KWH * ci.kg_per_kwh


# ---------------------------------------------------------------------------
# Application pipeline


@dataclass(frozen=True)
class MicInput:
    duration_s: float
    samples: float

    def __post_init__(self) -> None:
        if self.duration_s <= 0 or self.samples < 0:
            raise ValueError("mic input needs duration > 0 and samples >= 0")


@dataclass(frozen=True)
class CameraInput:
    duration_s: float
    frames: float

    def __post_init__(self) -> None:
        if self.duration_s <= 0 or self.frames < 0:
            raise ValueError("camera input needs duration > 0 and frames >= 0")


@dataclass(frozen=True)
class Conversion:
    task: str
    energy_j: float

    def __post_init__(self) -> None:
        if self.task not in dm.CONVERSION_TASKS:
            raise ValueError(f"unknown conversion task {self.task!r}")
        if self.energy_j < 0:
            raise ValueError("conversion energy must be >= 0")


@dataclass(frozen=True)
class LlmStage:
    config: LlmConfig
    request: Request
    device: DeviceSpec


@dataclass(frozen=True)
class DisplayOutput:
    duration_s: float
    grey: float
    pixels: float

    def __post_init__(self) -> None:
        if self.duration_s <= 0 or self.pixels < 0:
            raise ValueError("display output needs duration > 0 and pixels >= 0")


@dataclass(frozen=True)
class SpeakerOutput:
    duration_s: float
    volume: float

    def __post_init__(self) -> None:
        if self.duration_s <= 0:
            raise ValueError("speaker output needs duration > 0")


InputStage = MicInput | CameraInput
OutputStage = DisplayOutput | SpeakerOutput

LlmEnergyFn = Callable[[LlmStage], float]


@dataclass(frozen=True)
class AppPipeline:
    """One end-to-end assistant request on a device."""

    name: str
    input: InputStage
    conversion: Conversion
    llm: LlmStage
    output: OutputStage
    total_duration_s: float

    def __post_init__(self) -> None:
        longest = max(self.input.duration_s, self.output.duration_s)
        if self.total_duration_s < longest:
            raise ValueError(
                f"total duration {self.total_duration_s} shorter than the "
                f"longest stage ({longest})"
            )


@dataclass(frozen=True)
class PipelineBreakdown:
    """Per-stage energy in joules, keyed input/con/llm/output/sys."""

    stages: dict[str, float]
    total_j: float


def _require_model(models: Mapping[str, object], key: str) -> object:
    if key not in models:
        raise ConfigurationError(f"pipeline needs a fitted {key!r} model")
    return models[key]


def app_energy(
    pipeline: AppPipeline,
    models: Mapping[str, dm.PeripheralModel],
    llm_energy: LlmEnergyFn,
) -> PipelineBreakdown:
    """Evaluate every stage of a pipeline into joules.

    `models` maps peripheral names (mic/camera/display/video/speaker) to
    fitted models; `llm_energy` supplies the inference energy for the LLM
    stage (a trained predictor or the synthetic oracle).
    """
    if llm_energy is None:
        raise ConfigurationError("pipeline needs an LLM energy source")

    if isinstance(pipeline.input, MicInput):
        input_j = dm.mic_energy(
            _require_model(models, "mic"),
            pipeline.input.duration_s,
            pipeline.input.samples,
        )
    else:
        input_j = dm.camera_energy(
            _require_model(models, "camera"),
            pipeline.input.duration_s,
            pipeline.input.frames,
        )

    con_j = pipeline.conversion.energy_j

    llm_j = float(llm_energy(pipeline.llm))
    if llm_j <= 0:
        raise ValueError("LLM stage energy must be positive")

    if isinstance(pipeline.output, DisplayOutput):
        panel_w = dm.display_power(
            _require_model(models, "display"), pipeline.output.grey
        )
        video_w = dm.video_power(
            _require_model(models, "video"), pipeline.output.pixels
        )
        output_j = (panel_w + video_w) * pipeline.output.duration_s
    else:
        output_j = (
            dm.speaker_power(_require_model(models, "speaker"), pipeline.output.volume)
            * pipeline.output.duration_s
        )

    sys_j = dm.background_energy(
        pipeline.llm.device.idle_power, pipeline.total_duration_s
    )

    stages = {
        "input": input_j,
        "con": con_j,
        "llm": llm_j,
        "output": output_j,
        "sys": sys_j,
    }
    return PipelineBreakdown(stages=stages, total_j=sum(stages.values()))


# ---------------------------------------------------------------------------
# Break-even and lifetime footprint


def breakeven_requests(
    delta_embodied_kg: float,
    delta_energy_per_request_j: float,
    ci: CarbonIntensity,
    lifespan_years: float = DEFAULT_LIFESPAN_YEARS,
) -> float:
    """Requests/day at which extra embodied carbon equals operational savings."""
    if delta_embodied_kg <= 0:
        raise ValueError("embodied delta must be positive")
    if lifespan_years <= 0:
        raise ValueError("lifespan must be positive")
    if delta_energy_per_request_j <= 0:
        raise NoBreakEvenError(
            "per-request energy delta must be positive for a break-even to exist"
        )
    daily_saving_kg = operational_carbon(delta_energy_per_request_j, ci)
    return delta_embodied_kg / (daily_saving_kg * DAYS_PER_YEAR * lifespan_years)


@dataclass(frozen=True)
class FootprintReport:
    embodied_kg: float
    operational_kg: float
    total_kg: float


def total_footprint(
    bom: SocBom | float,
    usage: UsageProfile,
    energy_per_request_j: float,
    ci: CarbonIntensity,
) -> FootprintReport:
    """Lifetime footprint: embodied plus operational over the usage profile."""
    embodied_kg = bom if isinstance(bom, (int, float)) else soc_embodied(bom).total
    if energy_per_request_j < 0:
        raise ValueError("per-request energy must be >= 0")
    lifetime_requests = usage.requests_per_day * DAYS_PER_YEAR * usage.lifespan_years
    operational_kg = operational_carbon(energy_per_request_j * lifetime_requests, ci)
    return FootprintReport(
        embodied_kg=float(embodied_kg),
        operational_kg=operational_kg,
        total_kg=float(embodied_kg) + operational_kg,
    )


# ---------------------------------------------------------------------------
# JSON I/O


def load_ci_table(path: str | Path) -> dict[str, CarbonIntensity]:
    """Flat JSON mapping region -> kgCO2-eq per kWh."""
    try:
        doc = json.loads(Path(path).read_text())
        return {
            region: CarbonIntensity(region=region, kg_per_kwh=float(value))
            for region, value in doc.items()
        }
    except (OSError, json.JSONDecodeError, TypeError, ValueError) as exc:
        raise UserInputError(f"cannot read carbon-intensity table {path}: {exc}") from exc


def pipeline_from_json(
    doc: Mapping,
    config_resolver: Callable[[str], LlmConfig] | None = None,
    device_resolver: Callable[[str], DeviceSpec] | None = None,
) -> AppPipeline:
    """Build an AppPipeline from a JSON document.

    The llm stage's `config` and `device` entries are either inline objects or
    names handed to the resolvers (the bundled-asset loaders in practice).
    """

    def resolve(entry, resolver, inline, what):
        if isinstance(entry, str):
            if resolver is None:
                raise ConfigurationError(f"no resolver for {what} name {entry!r}")
            return resolver(entry)
        return inline(entry)

    try:
        inp = doc["input"]
        if inp["kind"] == "mic":
            input_stage: InputStage = MicInput(
                duration_s=float(inp["duration_s"]), samples=float(inp["samples"])
            )
        elif inp["kind"] == "camera":
            input_stage = CameraInput(
                duration_s=float(inp["duration_s"]), frames=float(inp["frames"])
            )
        else:
            raise ValueError(f"unknown input kind {inp['kind']!r}")

        con = doc["conversion"]
        conversion = Conversion(task=con["task"], energy_j=float(con["energy_j"]))

        llm = doc["llm"]
        stage = LlmStage(
            config=resolve(llm["config"], config_resolver, config_from_json, "config"),
            request=Request(
                prompt_len=int(llm["prompt_len"]), output_len=int(llm["output_len"])
            ),
            device=resolve(llm["device"], device_resolver, device_from_json, "device"),
        )

        out = doc["output"]
        if out["kind"] == "display":
            output_stage: OutputStage = DisplayOutput(
                duration_s=float(out["duration_s"]),
                grey=float(out["grey"]),
                pixels=float(out["pixels"]),
            )
        elif out["kind"] == "speaker":
            output_stage = SpeakerOutput(
                duration_s=float(out["duration_s"]), volume=float(out["volume"])
            )
        else:
            raise ValueError(f"unknown output kind {out['kind']!r}")

        return AppPipeline(
            name=doc.get("name", "pipeline"),
            input=input_stage,
            conversion=conversion,
            llm=stage,
            output=output_stage,
            total_duration_s=float(doc["total_duration_s"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise UserInputError(f"malformed pipeline: {exc}") from exc


def load_pipeline_json(
    path: str | Path,
    config_resolver: Callable[[str], LlmConfig] | None = None,
    device_resolver: Callable[[str], DeviceSpec] | None = None,
) -> AppPipeline:
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise UserInputError(f"cannot read pipeline {path}: {exc}") from exc
    return pipeline_from_json(doc, config_resolver, device_resolver)


def breakdown_to_json(b: PipelineBreakdown) -> dict:
    doc = {k: b.stages[k] for k in BREAKDOWN_KEYS}
    doc["total_j"] = b.total_j
    return doc
