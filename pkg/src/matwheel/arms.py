"""Training-set recipes ("arms") and the two scenarios that group them."""

from __future__ import annotations

from enum import Enum


class Scenario(str, Enum):
    FULL = "full"
    SEMI = "semi"


class ArmSpec(str, Enum):
    F = "F"
    GF = "GF"
    F_plus_GF = "F_plus_GF"
    S = "S"
    GS = "GS"
    S_plus_GS = "S_plus_GS"

    @property
    def label(self) -> str:
        return ARM_LABELS[self]

    @property
    def scenario(self) -> Scenario:
        return Scenario.FULL if self in SCENARIO_ARMS[Scenario.FULL] else Scenario.SEMI

    @property
    def uses_generator(self) -> bool:
        return self not in (ArmSpec.F, ArmSpec.S)


ARM_LABELS = {
    ArmSpec.F: "F",
    ArmSpec.GF: "G_F",
    ArmSpec.F_plus_GF: "F+G_F",
    ArmSpec.S: "S",
    ArmSpec.GS: "G_S",
    ArmSpec.S_plus_GS: "S+G_S",
}

SCENARIO_ARMS = {
    Scenario.FULL: (ArmSpec.F, ArmSpec.GF, ArmSpec.F_plus_GF),
    Scenario.SEMI: (ArmSpec.S, ArmSpec.GS, ArmSpec.S_plus_GS),
}
