"""Seed passthrough followed by exhaustive grid search.

A cursor walks the cartesian product of the grid axes in lexicographic
order (first declared axis varies slowest). Each grid point is the seed
with the axis fields replaced. Points that fail validation or were
already emitted are skipped, so within one cursor no vector repeats.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from math import prod
from typing import Any, Callable, Iterable

from .core import ParameterError, ScenarioParams, SensorFuzzParams, SensorMeta, validate_params


class _Exhausted:
    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "Exhausted"

    def __bool__(self):
        return False


Exhausted = _Exhausted()


@dataclass(frozen=True)
class GridSpec:
    """Ordered parameter axes; each axis is ``(field name, values)``."""

    axes: tuple[tuple[str, tuple[Any, ...]], ...] = ()

    def __post_init__(self):
        axes = tuple((name, tuple(values)) for name, values in self.axes)
        for name, values in axes:
            if not values:
                raise ValueError(f"grid axis {name!r} is empty")
        object.__setattr__(self, "axes", axes)

    @classmethod
    def from_mapping(cls, mapping: dict[str, Iterable[Any]] | None) -> GridSpec:
        return cls(tuple((k, tuple(v)) for k, v in (mapping or {}).items()))

    @property
    def size(self) -> int:
        return prod(len(v) for _, v in self.axes)

    def point(self, index: int) -> dict[str, Any]:
        """Decode a mixed-radix index into ``{field: value}``."""
        out = {}
        for name, values in reversed(self.axes):
            index, digit = divmod(index, len(values))
            out[name] = values[digit]
        return out


@dataclass
class MutationCursor:
    seed: Any
    grid: GridSpec
    validator: Callable[[Any], Iterable[str]]
    index: int = 0
    emitted: list = field(default_factory=list)
    _seen: set = field(default_factory=set, repr=False)
    skipped_invalid: int = 0

    def mark(self, value) -> None:
        self.emitted.append(value)
        self._seen.add(value)

    def advance(self):
        while self.index < self.grid.size:
            candidate = dataclasses.replace(self.seed, **self.grid.point(self.index))
            self.index += 1
            if candidate in self._seen:
                continue
            if list(self.validator(candidate)):
                self.skipped_invalid += 1
                continue
            self.mark(candidate)
            return candidate
        return Exhausted


def _sensor_validator(meta: SensorMeta):
    return lambda p: validate_params(p, meta).violations


def valid_grid_points(seed, grid: GridSpec, validator) -> list:
    """Brute-force list of distinct valid grid points, in grid order."""
    out = []
    for i in range(grid.size):
        c = dataclasses.replace(seed, **grid.point(i))
        if c not in out and not list(validator(c)):
            out.append(c)
    return out


def init_from_seed(
    seed: SensorFuzzParams, grid: GridSpec | None = None, sensor_meta: SensorMeta | None = None
) -> tuple[SensorFuzzParams, MutationCursor]:
    """Return the seed unchanged as the first parameters, plus a cursor.

    Raises:
        ParameterError: the seed fails validation.
    """
    meta = sensor_meta or SensorMeta(seed.stream_id, perception_range=float("inf"))
    check = validate_params(seed, meta)
    if not check.ok:
        raise ParameterError(check.violations)
    cursor = MutationCursor(seed, grid or GridSpec(), _sensor_validator(meta))
    cursor.mark(seed)
    return seed, cursor


def next_params(cursor: MutationCursor):
    """Next unseen valid sensor vector, or ``Exhausted``."""
    return cursor.advance()


def init_scenario_cursor(
    seed: ScenarioParams, grid: GridSpec | None, validator: Callable[[ScenarioParams], Iterable[str]]
) -> tuple[ScenarioParams, MutationCursor]:
    """Scenario counterpart of :func:`init_from_seed`."""
    violations = list(validator(seed))
    if violations:
        raise ParameterError(violations)
    cursor = MutationCursor(seed, grid or GridSpec(), validator)
    cursor.mark(seed)
    return seed, cursor


def next_scenario(cursor: MutationCursor):
    return cursor.advance()
