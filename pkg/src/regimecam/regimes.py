"""The seven two-phase flow regimes and their stable integer codes."""
from enum import IntEnum


class FlowRegime(IntEnum):
    B = 0   # bubbly
    EB = 1  # elongated bubbly
    S = 2   # slug
    SS = 3  # stratified smooth
    SW = 4  # stratified wavy
    A = 5   # annular
    U = 6   # unstable

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        if isinstance(value, str):
            key = value.strip().upper()
            if key in cls.__members__:
                return cls[key]
            if key.isdigit():
                return cls(int(key))
            raise ValueError(f"unknown flow regime {value!r}")
        return cls(int(value))


N_CLASSES = len(FlowRegime)

LONG_NAMES = {
    FlowRegime.B: "bubbly",
    FlowRegime.EB: "elongated bubbly",
    FlowRegime.S: "slug",
    FlowRegime.SS: "stratified smooth",
    FlowRegime.SW: "stratified wavy",
    FlowRegime.A: "annular",
    FlowRegime.U: "unstable",
}
