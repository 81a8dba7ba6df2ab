"""Fixed variable layout shared by every part of the emulator.

Inputs are 32 columns (8 atmospheric state variables followed by the 24
aerosol masses/numbers), outputs are 28 columns (24 tendencies of the
aerosol variables followed by 4 water contents predicted as full values).
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from enum import Enum
from types import MappingProxyType
from typing import Mapping, Optional


class SchemaError(ValueError):
    """Raised for unknown species, out-of-range indices or hash mismatches."""


class Species(str, Enum):
    SO4 = "SO4"
    BC = "BC"
    OC = "OC"
    DU = "DU"


STATE_NAMES = (
    "pressure",
    "temperature",
    "rel_humidity",
    "ionization_rate",
    "cloud_cover",
    "boundary_layer",
    "forest_fraction",
    "h2so4_prod_rate",
)
STATE_UNITS = ("Pa", "K", "1", "1", "1", "1", "1", "cm-3 s-1")

# aerosol variables: both inputs (full values) and outputs (tendencies)
AEROSOL_NAMES = (
    "h2so4_mass",
    "so4_ns", "so4_ks", "so4_as", "so4_cs",
    "bc_ks", "bc_as", "bc_cs", "bc_ki",
    "oc_ks", "oc_as", "oc_cs", "oc_ki",
    "du_as", "du_cs", "du_ai", "du_ci",
    "num_ns", "num_ks", "num_as", "num_cs", "num_ki", "num_ai", "num_ci",
)
AEROSOL_UNITS = (
    "so4 mass m-3",
    *(["so4 mass m-3"] * 4),
    *(["bc mass m-3"] * 4),
    *(["oc mass m-3"] * 4),
    *(["du mass m-3"] * 4),
    *(["cm-3"] * 7),
)
WATER_NAMES = ("water_ns", "water_ks", "water_as", "water_cs")

N_INPUTS = 32
N_OUTPUTS = 28
N_PAIRED = 24
PAIR_OFFSET = 8

# output group of every column, used to index the per-group positivity weights
GROUPS = ("SO4", "BC", "OC", "DU", "NUM", "WAT")


def _frozen(d):
    return MappingProxyType({k: frozenset(v) for k, v in d.items()})


@dataclass(frozen=True)
class VariableSchema:
    input_names: tuple
    output_names: tuple
    input_units: tuple
    output_units: tuple
    species_groups: Mapping[Species, frozenset]
    output_input_pairing: Mapping[int, Optional[int]]
    water_outputs: frozenset
    hash: str = field(init=False, default="")

    def __post_init__(self):
        object.__setattr__(self, "hash", _content_hash(self))

    @property
    def csv_header(self) -> list:
        return list(self.input_names) + list(self.output_names)

    def species_output_indices(self, species) -> frozenset:
        """Return the output columns whose tendencies must sum to zero for `species`."""
        try:
            key = Species(species)
        except ValueError:
            raise SchemaError(f"unknown species {species!r}; expected one of "
                              f"{[s.value for s in Species]}") from None
        return self.species_groups[key]

    def paired_input(self, output_index: int) -> Optional[int]:
        """Input column holding the full value of output `output_index` (None for water)."""
        if not isinstance(output_index, (int,)) or isinstance(output_index, bool):
            raise SchemaError(f"output index must be an int, got {output_index!r}")
        if not 0 <= output_index < N_OUTPUTS:
            raise SchemaError(f"output index {output_index} out of range 0..{N_OUTPUTS - 1}")
        return self.output_input_pairing[output_index]

    def group_of(self, output_index: int) -> str:
        for sp, idx in self.species_groups.items():
            if output_index in idx:
                return sp.value
        if output_index in self.water_outputs:
            return "WAT"
        return "NUM"

    def check_hash(self, other_hash: str, what: str = "file") -> None:
        if other_hash != self.hash:
            raise SchemaError(f"{what} schema hash {other_hash!r} does not match "
                              f"compiled schema {self.hash!r}")


def _content_hash(s: VariableSchema) -> str:
    doc = {
        "inputs": list(zip(s.input_names, s.input_units)),
        "outputs": list(zip(s.output_names, s.output_units)),
        "species": {k.value: sorted(v) for k, v in s.species_groups.items()},
        "pairing": [s.output_input_pairing[k] for k in range(len(s.output_names))],
        "water": sorted(s.water_outputs),
    }
    raw = json.dumps(doc, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(raw).hexdigest()[:16]


def _build() -> VariableSchema:
    inputs = STATE_NAMES + AEROSOL_NAMES
    outputs = tuple("d_" + n for n in AEROSOL_NAMES) + WATER_NAMES
    pairing = {k: (k + PAIR_OFFSET if k < N_PAIRED else None) for k in range(N_OUTPUTS)}
    groups = {
        Species.SO4: range(0, 5),
        Species.BC: range(5, 9),
        Species.OC: range(9, 13),
        Species.DU: range(13, 17),
    }
    return VariableSchema(
        input_names=inputs,
        output_names=outputs,
        input_units=STATE_UNITS + AEROSOL_UNITS,
        output_units=AEROSOL_UNITS + ("water mass m-3",) * 4,
        species_groups=_frozen(groups),
        output_input_pairing=MappingProxyType(pairing),
        water_outputs=frozenset(range(N_PAIRED, N_OUTPUTS)),
    )


SCHEMA = _build()

# index arrays derived once; handy for vectorised code
PAIRED_OUTPUTS = list(range(N_PAIRED))
PAIRED_INPUTS = [k + PAIR_OFFSET for k in range(N_PAIRED)]
SPECIES_INDICES = {sp: sorted(SCHEMA.species_groups[sp]) for sp in Species}
GROUP_INDEX = [GROUPS.index(SCHEMA.group_of(k)) for k in range(N_OUTPUTS)]


def species_output_indices(species) -> frozenset:
    return SCHEMA.species_output_indices(species)


def paired_input(output_index: int) -> Optional[int]:
    return SCHEMA.paired_input(output_index)
