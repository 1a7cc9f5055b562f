"""Normalized math answers and the equivalence relation over them.

A raw answer string normalizes to exactly one of four shapes: an arbitrary
precision integer, a rational in lowest terms, a decimal (kept exact as
scaled integer and exponent), or fallback symbolic text. Integers and
rationals are exact and compare exactly; a decimal is treated as an
approximation and compares under a symmetric relative/absolute tolerance.
All comparisons run in exact rational arithmetic, never floats.

The relation is reflexive and symmetric by construction. It is not claimed
transitive under tolerance, so consumers that need agreement across several
answers must check all pairs.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from decimal import Decimal, InvalidOperation
from fractions import Fraction
from math import gcd

from .format import BlockKind, Conversation, Role


@dataclass(frozen=True)
class IntegerAnswer:
    value: int


@dataclass(frozen=True)
class RationalAnswer:
    numerator: int
    denominator: int

    def __post_init__(self) -> None:
        if self.denominator == 0:
            raise ValueError("zero denominator")
        g = gcd(self.numerator, self.denominator)
        num, den = self.numerator // g, self.denominator // g
        if den < 0:
            num, den = -num, -den
        object.__setattr__(self, "numerator", num)
        object.__setattr__(self, "denominator", den)


@dataclass(frozen=True)
class DecimalAnswer:
    value: Decimal


@dataclass(frozen=True)
class SymbolicAnswer:
    text: str  # whitespace-collapsed, wrappers stripped


AnswerValue = IntegerAnswer | RationalAnswer | DecimalAnswer | SymbolicAnswer


@dataclass(frozen=True)
class EqConfig:
    rel_tol: float = 1e-4
    abs_tol: float = 1e-6

    def __post_init__(self) -> None:
        if self.rel_tol < 0 or self.abs_tol < 0:
            raise ValueError("tolerances must be non-negative")


def as_fraction(value: AnswerValue) -> Fraction | None:
    if isinstance(value, IntegerAnswer):
        return Fraction(value.value)
    if isinstance(value, RationalAnswer):
        return Fraction(value.numerator, value.denominator)
    if isinstance(value, DecimalAnswer):
        return Fraction(value.value)
    return None


def render_answer(value: AnswerValue) -> str:
    """Canonical string form; normalizing it again gives the same value."""
    if isinstance(value, IntegerAnswer):
        return str(value.value)
    if isinstance(value, RationalAnswer):
        return f"{value.numerator}/{value.denominator}"
    if isinstance(value, DecimalAnswer):
        return str(value.value)
    return value.text


# Trailing words dropped from otherwise numeric answers. Unknown trailing
# words make the whole string symbolic instead.
UNIT_WORDS = frozenset(
    {
        "cent",
        "cents",
        "cm",
        "cup",
        "cups",
        "day",
        "days",
        "degree",
        "degrees",
        "dollar",
        "dollars",
        "feet",
        "foot",
        "gallon",
        "gallons",
        "hour",
        "hours",
        "inch",
        "inches",
        "kg",
        "km",
        "liter",
        "liters",
        "meter",
        "meters",
        "mile",
        "miles",
        "minute",
        "minutes",
        "percent",
        "point",
        "points",
        "pound",
        "pounds",
        "second",
        "seconds",
        "square",
        "cubic",
        "step",
        "steps",
        "unit",
        "units",
        "week",
        "weeks",
        "year",
        "years",
    }
)

_CURRENCY = ("\\$", "$", "£", "€")
_FRAC_RE = re.compile(r"^\\[dt]?frac\{(-?\d+)\}\{(-?\d+)\}$")
_SLASH_RE = re.compile(r"^([+-]?\d+)\s*/\s*(-?\d+)$")
_INT_RE = re.compile(r"^[+-]?\d+$")
_DECIMAL_RE = re.compile(r"^[+-]?(?:\d+\.\d*|\.\d+|\d+)(?:[eE][+-]?\d+)?$")
_THOUSANDS_RE = re.compile(r"(?<=\d),(?=\d{3}(?:\D|$))")


def _unwrap(s: str) -> str:
    """Peel LaTeX wrappers (boxed, text, math delimiters) repeatedly."""
    while True:
        t = s.strip()
        for macro in ("\\boxed{", "\\text{", "\\mathrm{"):
            if t.startswith(macro) and t.endswith("}"):
                inner = t[len(macro) : -1]
                if _braces_balanced(inner):
                    t = inner
                    break
        else:
            for opener, closer in (("$", "$"), ("\\(", "\\)"), ("\\[", "\\]")):
                if (
                    t.startswith(opener)
                    and t.endswith(closer)
                    and len(t) > len(opener) + len(closer)
                ):
                    t = t[len(opener) : -len(closer)]
                    break
        if t == s:
            return t
        s = t


def _braces_balanced(s: str) -> bool:
    depth = 0
    for ch in s:
        if ch == "{":
            depth += 1
        elif ch == "}":
            depth -= 1
            if depth < 0:
                return False
    return depth == 0


def _strip_units(s: str) -> str:
    while True:
        t = s.rstrip()
        if t.endswith("\\%"):
            t = t[:-2]
        elif t.endswith("%"):
            t = t[:-1]
        else:
            parts = t.rsplit(None, 1)
            if len(parts) == 2 and parts[1].lower().rstrip(".,") in UNIT_WORDS:
                t = parts[0]
        if t == s:
            return t
        s = t


def normalize_answer(raw: str) -> AnswerValue:
    """Total normalization: every string maps to some answer value."""
    s = _unwrap(raw)
    for symbol in _CURRENCY:
        if s.startswith(symbol):
            s = s[len(symbol) :].lstrip()
            break
    s = _strip_units(s)
    s = _THOUSANDS_RE.sub("", s)
    s = s.strip().rstrip(".,;:!?").strip()

    m = _FRAC_RE.match(s)
    if m:
        num, den = int(m.group(1)), int(m.group(2))
        if den != 0:
            return _as_rational(num, den)
    m = _SLASH_RE.match(s)
    if m:
        num, den = int(m.group(1)), int(m.group(2))
        if den != 0:
            return _as_rational(num, den)
    if _INT_RE.match(s):
        return IntegerAnswer(int(s))
    if _DECIMAL_RE.match(s):
        try:
            return DecimalAnswer(Decimal(s))
        except InvalidOperation:  # pragma: no cover - regex should prevent this
            pass
    return SymbolicAnswer(re.sub(r"\s+", " ", _unwrap(raw)).strip())


def _as_rational(num: int, den: int) -> IntegerAnswer | RationalAnswer:
    r = RationalAnswer(num, den)
    if r.denominator == 1:
        return IntegerAnswer(r.numerator)
    return r


def answers_equivalent(a: AnswerValue, b: AnswerValue, cfg: EqConfig = EqConfig()) -> bool:
    """Decide whether two answers should be graded as the same.

    Exact values compare exactly; anything involving a decimal uses
    ``|a - b| <= max(abs_tol, rel_tol * max(|a|, |b|))`` in exact rational
    arithmetic. Symbolic answers compare as normalized strings, after one
    attempt to reparse them as numbers when the other side is numeric.
    """
    fa, fb = as_fraction(a), as_fraction(b)
    if fa is not None and fb is not None:
        exact = (IntegerAnswer, RationalAnswer)
        if isinstance(a, exact) and isinstance(b, exact):
            return fa == fb
        rel = Fraction(str(cfg.rel_tol))
        abs_ = Fraction(str(cfg.abs_tol))
        return abs(fa - fb) <= max(abs_, rel * max(abs(fa), abs(fb)))
    if isinstance(a, SymbolicAnswer) and isinstance(b, SymbolicAnswer):
        return a.text == b.text
    # Mixed numeric and symbolic: grade numerically when the symbolic side
    # reparses to a number, otherwise they differ.
    sym, other = (a, b) if isinstance(a, SymbolicAnswer) else (b, a)
    reparsed = normalize_answer(sym.text)
    if isinstance(reparsed, SymbolicAnswer):
        return False
    return answers_equivalent(reparsed, other, cfg)


_BOXED_START = re.compile(r"\\boxed\s*\{")
_NUMBER_TOKEN = re.compile(
    r"""
    \\[dt]?frac\{-?\d+\}\{-?\d+\}     # latex fraction
    | -?\d+\s*/\s*\d+                 # plain fraction
    | -?\d{1,3}(?:,\d{3})+(?:\.\d+)?  # comma-grouped number
    | -?\d+\.?\d*(?:[eE][+-]?\d+)?    # integer or decimal
    | -?\.\d+                         # bare decimal fraction
    """,
    re.VERBOSE,
)


def last_boxed(text: str) -> str | None:
    """Content of the last balanced ``\\boxed{...}`` in ``text``, if any."""
    last = None
    for m in _BOXED_START.finditer(text):
        depth = 1
        i = m.end()
        while i < len(text) and depth:
            if text[i] == "{":
                depth += 1
            elif text[i] == "}":
                depth -= 1
            i += 1
        if depth == 0:
            last = text[m.end() : i - 1]
    return last


def extract_final_answer(conv: Conversation) -> AnswerValue | None:
    """Pull the stated final answer out of a solution conversation.

    Looks at the last assistant text block only. A boxed expression wins;
    otherwise the last number-like token (fractions included) is taken.
    Returns None when neither appears.
    """
    text = _last_assistant_text(conv)
    if text is None:
        return None
    boxed = last_boxed(text)
    if boxed is not None:
        return normalize_answer(boxed)
    matches = list(_NUMBER_TOKEN.finditer(text))
    if matches:
        return normalize_answer(matches[-1].group())
    return None


def _last_assistant_text(conv: Conversation) -> str | None:
    for message in reversed(conv.messages):
        if message.role is not Role.ASSISTANT:
            continue
        for block in reversed(message.blocks):
            if block.kind is BlockKind.TEXT:
                return block.content
    return None
