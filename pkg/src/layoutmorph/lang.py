"""Closed-world English helpers: number words, plurals, articles.

The synthetic caption grammar emits only vocabulary these tables cover,
and the caption parser inverts them, so grammar and parser stay mutually
consistent by construction.
"""

from __future__ import annotations

from typing import Optional

_UNITS = [
    "zero", "one", "two", "three", "four", "five", "six", "seven", "eight",
    "nine", "ten", "eleven", "twelve", "thirteen", "fourteen", "fifteen",
    "sixteen", "seventeen", "eighteen", "nineteen",
]
_TENS = ["", "", "twenty", "thirty", "forty", "fifty", "sixty", "seventy", "eighty", "ninety"]


def number_word(n: int) -> str:
    """English cardinal for 0..99; compounds are hyphenated."""
    if not 0 <= n <= 99:
        raise ValueError(f"number word only defined for 0..99, got {n}")
    if n < 20:
        return _UNITS[n]
    tens, unit = divmod(n, 10)
    return _TENS[tens] if unit == 0 else f"{_TENS[tens]}-{_UNITS[unit]}"


# word -> value, covering plain and hyphenated cardinals 0..99
NUMBER_WORDS: dict[str, int] = {number_word(n): n for n in range(100)}


def word_to_num(token: str) -> Optional[int]:
    """Numeric value of a token: digit strings and cardinal words.

    'a'/'an' are handled by the caller (they read as count 1 only in a
    determiner position). Returns None for non-numeric tokens.
    """
    if token.isdigit():
        return int(token)
    return NUMBER_WORDS.get(token)


IRREGULAR_PLURALS = {
    "person": "people",
    "man": "men",
    "woman": "women",
    "child": "children",
    "foot": "feet",
    "tooth": "teeth",
    "goose": "geese",
    "mouse": "mice",
    "sheep": "sheep",
    "deer": "deer",
    "fish": "fish",
    "ox": "oxen",
    "die": "dice",
    "leaf": "leaves",
    "knife": "knives",
    "wolf": "wolves",
    "shelf": "shelves",
    "loaf": "loaves",
    "scarf": "scarves",
    "calf": "calves",
    "half": "halves",
}

_VOWELS = "aeiou"


def pluralize(noun: str) -> str:
    if noun in IRREGULAR_PLURALS:
        return IRREGULAR_PLURALS[noun]
    if noun.endswith(("s", "x", "z", "ch", "sh")):
        return noun + "es"
    if noun.endswith("y") and len(noun) > 1 and noun[-2] not in _VOWELS:
        return noun[:-1] + "ies"
    return noun + "s"


def article(noun: str) -> str:
    return "an" if noun[:1] in _VOWELS else "a"
