"""Filter expressions over document fields.

Filters are the minimal Lucene-style subset the engine evaluates against
the inverted and numeric indexes: exact terms, numeric ranges with
per-bound inclusivity, and conjunctions of those.  Values that are still
parameter placeholders are represented by :class:`Param` and must be
bound before evaluation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Union

Scalar = Union[str, int, float]


class FilterError(ValueError):
    """Malformed or unbound filter."""


@dataclass(frozen=True)
class Param:
    """Named placeholder bound at execution time (e.g. ``START``)."""

    name: str

    def __str__(self) -> str:
        return self.name


Value = Union[Scalar, Param, None]


def normalize_value(value):
    """Coerce a raw field value to the stored scalar form.

    Booleans become the text tokens ``"true"``/``"false"`` and integral
    floats become ints so that ``5`` and ``5.0`` hash and compare alike.
    """
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        if math.isnan(value):
            raise FilterError("NaN is not a valid field value")
        if value.is_integer():
            return int(value)
        return value
    if isinstance(value, (int, str)):
        return value
    raise TypeError(f"unsupported field value type: {type(value).__name__}")


def is_numeric(value) -> bool:
    return isinstance(value, (int, float)) and not isinstance(value, bool)


def _fmt(value: Value) -> str:
    if value is None:
        return "*"
    if isinstance(value, Param):
        return value.name
    if isinstance(value, str):
        return value
    return repr(value)


@dataclass(frozen=True)
class Term:
    field: str
    value: Value

    def canonical(self) -> str:
        kind = "p" if isinstance(self.value, Param) else ("n" if is_numeric(self.value) else "s")
        return f"{self.field}={kind}:{_fmt(self.value)}"

    def render(self) -> str:
        return f"{self.field}:{_fmt(self.value)}"


@dataclass(frozen=True)
class Range:
    """Numeric interval; ``None`` means unbounded on that side."""

    field: str
    lo: Value = None
    hi: Value = None
    lo_inclusive: bool = False
    hi_inclusive: bool = False

    def canonical(self) -> str:
        # unbounded sides carry no inclusivity
        lo_b = "(" if self.lo is None or not self.lo_inclusive else "["
        hi_b = ")" if self.hi is None or not self.hi_inclusive else "]"
        return f"{self.field}{lo_b}{_fmt(self.lo)},{_fmt(self.hi)}{hi_b}"

    def render(self) -> str:
        lo_b = "[" if self.lo_inclusive else "{"
        hi_b = "]" if self.hi_inclusive else "}"
        return f"{self.field}:{lo_b}{_fmt(self.lo)} TO {_fmt(self.hi)}{hi_b}"

    def contains(self, value) -> bool:
        if not is_numeric(value):
            return False
        if self.lo is not None:
            if value < self.lo or (value == self.lo and not self.lo_inclusive):
                return False
        if self.hi is not None:
            if value > self.hi or (value == self.hi and not self.hi_inclusive):
                return False
        return True


Clause = Union[Term, Range]


@dataclass(frozen=True)
class Filter:
    """Conjunction of clauses.  An empty conjunction matches every document."""

    clauses: tuple[Clause, ...] = field(default_factory=tuple)

    @classmethod
    def of(cls, *clauses: Clause) -> "Filter":
        return cls(tuple(clauses))

    def __and__(self, other: "Filter") -> "Filter":
        seen = list(self.clauses)
        seen.extend(c for c in other.clauses if c not in seen)
        return Filter(tuple(seen))

    @property
    def is_match_all(self) -> bool:
        return not self.clauses

    def canonical(self) -> str:
        if not self.clauses:
            return "*"
        return " AND ".join(sorted({c.canonical() for c in self.clauses}))

    def render(self) -> str:
        return " AND ".join(c.render() for c in self.clauses)

    def params(self) -> set[str]:
        names = set()
        for c in self.clauses:
            for v in (c.value,) if isinstance(c, Term) else (c.lo, c.hi):
                if isinstance(v, Param):
                    names.add(v.name)
        return names

    def bind(self, params: Mapping[str, Scalar]) -> "Filter":
        def sub(v):
            if isinstance(v, Param):
                if v.name not in params:
                    raise FilterError(f"unbound parameter {v.name}")
                return normalize_value(params[v.name])
            return v

        out = []
        for c in self.clauses:
            if isinstance(c, Term):
                out.append(Term(c.field, sub(c.value)))
            else:
                out.append(Range(c.field, sub(c.lo), sub(c.hi), c.lo_inclusive, c.hi_inclusive))
        return Filter(tuple(out))

    def matches(self, doc: Mapping[str, object]) -> bool:
        """Reference evaluation against a raw document (used by oracles and tests)."""
        for c in self.clauses:
            raw = doc.get(c.field)
            if raw is None:
                return False
            values = raw if isinstance(raw, list) else [raw]
            values = [normalize_value(v) for v in values]
            if isinstance(c, Term):
                if isinstance(c.value, Param):
                    raise FilterError(f"unbound parameter {c.value.name}")
                if not any(v == c.value and is_numeric(v) == is_numeric(c.value) for v in values):
                    return False
            else:
                if not any(c.contains(v) for v in values):
                    return False
        return True


MATCH_ALL = Filter()
