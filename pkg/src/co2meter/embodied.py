"""Embodied carbon of a board from its bill of materials.

A board is modeled as a PCB, a die split into named accelerator units plus an
implicit remainder, a fixed DRAM contribution, and optional fixed-footprint
peripherals.  Area-based components are priced as area * carbon-per-area;
DRAM and peripherals carry fixed kgCO2-eq values.  What-if edits (scaling a
die unit, swapping the DRAM footprint, resizing the PCB) compose left to
right and return new BOMs.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .errors import UserInputError

_FRACTION_TOL = 1e-9

DIE_OTHER = "die:other"


@dataclass(frozen=True)
class DieUnit:
    """Named block on the die, as a fraction of the total die area."""

    name: str
    area_fraction: float

    def __post_init__(self) -> None:
        if not self.name:
            raise ValueError("die unit needs a name")
        if not 0.0 < self.area_fraction <= 1.0:
            raise ValueError("area_fraction must be in (0, 1]")


@dataclass(frozen=True)
class SocBom:
    """Bill of materials for one board."""

    name: str
    die_area_cm2: float
    cpa_die_kg_per_cm2: float
    units: tuple[DieUnit, ...]
    pcb_area_cm2: float
    cpa_pcb_kg_per_cm2: float
    dram_kg: float
    peripherals: tuple[tuple[str, float], ...] = ()

    def __post_init__(self) -> None:
        for field in ("die_area_cm2", "cpa_die_kg_per_cm2", "pcb_area_cm2",
                      "cpa_pcb_kg_per_cm2"):
            if getattr(self, field) <= 0:
                raise ValueError(f"{field} must be positive")
        if self.dram_kg < 0:
            raise ValueError("dram_kg must be >= 0")
        names = [u.name for u in self.units]
        if len(set(names)) != len(names):
            raise ValueError("die unit names must be unique")
        total = sum(u.area_fraction for u in self.units)
        if total > 1.0 + _FRACTION_TOL:
            raise ValueError(f"die unit fractions sum to {total} > 1")
        for name, kg in self.peripherals:
            if not name or kg < 0:
                raise ValueError("peripherals need a name and kg >= 0")

    def unit(self, name: str) -> DieUnit:
        for u in self.units:
            if u.name == name:
                return u
        raise UserInputError(f"BOM {self.name!r} has no die unit {name!r}")


@dataclass(frozen=True)
class EmbodiedReport:
    """Per-component embodied carbon (kgCO2-eq) and its total."""

    bom_name: str
    per_component: dict[str, float]
    total: float
    llm_fraction: float | None = None

    @property
    def die_total(self) -> float:
        return sum(v for k, v in self.per_component.items() if k.startswith("die:"))


def unit_embodied(area_cm2: float, cpa_kg_per_cm2: float) -> float:
    """Carbon of one area-priced component."""
    if area_cm2 < 0 or cpa_kg_per_cm2 < 0:
        raise ValueError("area and carbon-per-area must be >= 0")
    return area_cm2 * cpa_kg_per_cm2


def soc_embodied(bom: SocBom, attributable: Iterable[str] | None = None) -> EmbodiedReport:
    """Evaluate a BOM into per-component carbon values.

    Component keys are "pcb", "dram", "die:<unit>" per named unit,
    "die:other" for the remaining die area, and "periph:<name>".  When
    `attributable` component keys are given, the report also carries the
    percentage of the total they account for.
    """
    components: dict[str, float] = {
        "pcb": unit_embodied(bom.pcb_area_cm2, bom.cpa_pcb_kg_per_cm2)
    }
    fraction_used = 0.0
    for u in bom.units:
        components[f"die:{u.name}"] = unit_embodied(
            u.area_fraction * bom.die_area_cm2, bom.cpa_die_kg_per_cm2
        )
        fraction_used += u.area_fraction
    remainder = max(0.0, 1.0 - fraction_used)
    components[DIE_OTHER] = unit_embodied(
        remainder * bom.die_area_cm2, bom.cpa_die_kg_per_cm2
    )
    components["dram"] = bom.dram_kg
    for name, kg in bom.peripherals:
        components[f"periph:{name}"] = kg
    total = sum(components.values())
    report = EmbodiedReport(bom_name=bom.name, per_component=components, total=total)
    if attributable is not None:
        report = dataclasses.replace(
            report, llm_fraction=llm_fraction(report, attributable)
        )
    return report


def llm_fraction(report: EmbodiedReport, components: Iterable[str]) -> float:
    """Share (percent) of the total attributable to the given components."""
    keys = list(components)
    if not keys:
        raise UserInputError("no components given for attribution")
    missing = [k for k in keys if k not in report.per_component]
    if missing:
        raise UserInputError(f"unknown components for attribution: {missing}")
    if report.total <= 0:
        raise ValueError("report total must be positive")
    return 100.0 * sum(report.per_component[k] for k in keys) / report.total


def delta_embodied(a: EmbodiedReport, b: EmbodiedReport) -> float:
    """Total of b minus total of a (antisymmetric by construction)."""
    return b.total - a.total


# ---------------------------------------------------------------------------
# What-if edits


@dataclass(frozen=True)
class ScaleUnit:
    """Grow (or shrink) a die unit's area by `factor`; the die resizes with it."""

    unit: str
    factor: float

    def apply(self, bom: SocBom) -> SocBom:
        if self.factor <= 0:
            raise ValueError("scale factor must be positive")
        target = bom.unit(self.unit)
        unit_area = target.area_fraction * bom.die_area_cm2
        new_die_area = bom.die_area_cm2 + (self.factor - 1.0) * unit_area
        if new_die_area <= 0:
            raise ValueError("die area would become non-positive")
        units = []
        for u in bom.units:
            area = u.area_fraction * bom.die_area_cm2
            if u.name == self.unit:
                area *= self.factor
            units.append(DieUnit(u.name, area / new_die_area))
        return dataclasses.replace(
            bom, die_area_cm2=new_die_area, units=tuple(units)
        )


@dataclass(frozen=True)
class SetDram:
    """Replace the DRAM footprint with a fixed kgCO2-eq value."""

    dram_kg: float

    def apply(self, bom: SocBom) -> SocBom:
        if self.dram_kg < 0:
            raise ValueError("dram_kg must be >= 0")
        return dataclasses.replace(bom, dram_kg=self.dram_kg)


@dataclass(frozen=True)
class SetPcbArea:
    """Resize the PCB."""

    area_cm2: float

    def apply(self, bom: SocBom) -> SocBom:
        if self.area_cm2 <= 0:
            raise ValueError("PCB area must be positive")
        return dataclasses.replace(bom, pcb_area_cm2=self.area_cm2)


BomMod = ScaleUnit | SetDram | SetPcbArea


def whatif_bom(bom: SocBom, mods: Sequence[BomMod]) -> SocBom:
    """Apply edits left to right; each returns a fresh BOM."""
    for mod in mods:
        bom = mod.apply(bom)
    return bom


# ---------------------------------------------------------------------------
# JSON / CSV I/O


def bom_from_json(doc: Mapping) -> SocBom:
    try:
        return SocBom(
            name=doc["name"],
            die_area_cm2=float(doc["die_area_cm2"]),
            cpa_die_kg_per_cm2=float(doc["cpa_die_kg_per_cm2"]),
            units=tuple(
                DieUnit(u["name"], float(u["area_fraction"]))
                for u in doc.get("units", [])
            ),
            pcb_area_cm2=float(doc["pcb_area_cm2"]),
            cpa_pcb_kg_per_cm2=float(doc["cpa_pcb_kg_per_cm2"]),
            dram_kg=float(doc["dram_kg"]),
            peripherals=tuple(
                (str(name), float(kg)) for name, kg in doc.get("peripherals", [])
            ),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise UserInputError(f"malformed BOM: {exc}") from exc


def bom_to_json(bom: SocBom) -> dict:
    return {
        "name": bom.name,
        "die_area_cm2": bom.die_area_cm2,
        "cpa_die_kg_per_cm2": bom.cpa_die_kg_per_cm2,
        "units": [
            {"name": u.name, "area_fraction": u.area_fraction} for u in bom.units
        ],
        "pcb_area_cm2": bom.pcb_area_cm2,
        "cpa_pcb_kg_per_cm2": bom.cpa_pcb_kg_per_cm2,
        "dram_kg": bom.dram_kg,
        "peripherals": [[name, kg] for name, kg in bom.peripherals],
    }


def load_bom_json(path: str | Path) -> SocBom:
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise UserInputError(f"cannot read BOM {path}: {exc}") from exc
    return bom_from_json(doc)


def report_to_json(report: EmbodiedReport) -> dict:
    doc = {
        "bom": report.bom_name,
        "components": dict(sorted(report.per_component.items())),
        "total_kg": report.total,
    }
    if report.llm_fraction is not None:
        doc["llm_fraction_pct"] = report.llm_fraction
    return doc


def report_to_csv(report: EmbodiedReport) -> str:
    lines = ["component,kg_co2eq"]
    for key in sorted(report.per_component):
        lines.append(f"{key},{report.per_component[key]!r}")
    lines.append(f"total,{report.total!r}")
    return "\n".join(lines) + "\n"
