"""Facial action-unit semantics and the PSPI pain score.

The pain score sums the brow lowerer with the stronger of the two eye
region units, the stronger of the two nose/lip units, and the eye-closure
bit, giving an integer scale 0..16. Everything here is a pure function.
"""

from __future__ import annotations

from dataclasses import dataclass

PSPI_MAX = 16
DEFAULT_N_CLASSES = PSPI_MAX + 1

AU_DESCRIPTORS = {
    4: "brow lowerer",
    6: "cheek raiser",
    7: "lid tightener",
    9: "nose wrinkler",
    10: "upper lip raise",
    43: "eyes closed",
}

_RANGED_AUS = ("au4", "au6", "au7", "au9", "au10")


class AUValidationError(ValueError):
    """An action-unit intensity is outside its legal range."""


@dataclass(frozen=True)
class ActionUnitVector:
    """Intensities of the six action units that drive the pain score.

    au4, au6, au7, au9, au10 are ordinal intensities 0..5; au43 (eyes
    closed) is binary. Fractional values are rejected.
    """

    au4: int = 0
    au6: int = 0
    au7: int = 0
    au9: int = 0
    au10: int = 0
    au43: int = 0

    def __post_init__(self) -> None:
        for name in _RANGED_AUS:
            value = getattr(self, name)
            if not isinstance(value, int) or isinstance(value, bool) or not 0 <= value <= 5:
                raise AUValidationError(f"{name}={value!r}: intensity must be an integer in 0..5")
        if not isinstance(self.au43, int) or isinstance(self.au43, bool) or self.au43 not in (0, 1):
            raise AUValidationError(f"au43={self.au43!r}: eye closure must be 0 or 1")


@dataclass(frozen=True)
class PainScore:
    """Integer pain intensity on the 0..16 scale."""

    value: int

    def __post_init__(self) -> None:
        if not isinstance(self.value, int) or isinstance(self.value, bool) or not 0 <= self.value <= PSPI_MAX:
            raise ValueError(f"pain score {self.value!r} outside 0..{PSPI_MAX}")


@dataclass(frozen=True)
class PainClass:
    """Class label obtained by binning a pain score into n_classes bins."""

    index: int
    n_classes: int

    def __post_init__(self) -> None:
        if self.n_classes < 2:
            raise ValueError(f"n_classes must be >= 2, got {self.n_classes}")
        if not 0 <= self.index < self.n_classes:
            raise ValueError(f"class index {self.index} outside 0..{self.n_classes - 1}")


def compute_pspi(au: ActionUnitVector) -> PainScore:
    """Pain score = au4 + max(au6, au7) + max(au9, au10) + au43.

    The paired units contribute through their maximum, which is what keeps
    the scale capped at 16.
    """
    return PainScore(au.au4 + max(au.au6, au.au7) + max(au.au9, au.au10) + au.au43)


def quantize_pspi(score: PainScore, n_classes: int = DEFAULT_N_CLASSES) -> PainClass:
    """Map a pain score to one of n_classes uniform bins over [0, 16].

    Bin edges sit at multiples of 17/n_classes, so n_classes=17 is the
    identity mapping and smaller counts collapse adjacent scores. Integer
    arithmetic keeps the edges exact.
    """
    if n_classes < 2:
        raise ValueError(f"n_classes must be >= 2, got {n_classes}")
    index = score.value * n_classes // (PSPI_MAX + 1)
    return PainClass(index=index, n_classes=n_classes)


def class_score_range(index: int, n_classes: int) -> tuple[int, int]:
    """Inclusive range of pain scores that quantize to the given class.

    Raises if the class is empty, which can only happen for n_classes > 17.
    """
    if not 0 <= index < n_classes:
        raise ValueError(f"class index {index} outside 0..{n_classes - 1}")
    lo = -(-index * (PSPI_MAX + 1) // n_classes)  # ceil division
    hi = -(-(index + 1) * (PSPI_MAX + 1) // n_classes) - 1
    hi = min(hi, PSPI_MAX)
    if lo > hi:
        raise ValueError(f"class {index} of {n_classes} contains no integer pain score")
    return lo, hi
