"""Loading of shipped prompt templates and fixture data."""

from __future__ import annotations

import json
import re
from functools import lru_cache
from importlib import resources
from typing import Any, Mapping

_SLOT_RE = re.compile(r"<([^<>\n]{1,40})>")

_NUMBER_WORDS = ("zero", "one", "two", "three", "four", "five", "six", "seven", "eight", "nine", "ten")


@lru_cache(maxsize=None)
def load_template(name: str) -> str:
    return resources.files("hopdebate").joinpath("data", "templates", f"{name}.txt").read_text(encoding="utf-8")


@lru_cache(maxsize=None)
def _load_json_text(name: str) -> str:
    return resources.files("hopdebate").joinpath("data", f"{name}.json").read_text(encoding="utf-8")


def load_json(name: str) -> Any:
    return json.loads(_load_json_text(name))


def render(template: str, values: Mapping[str, str]) -> str:
    """Fill ``<slot>`` markers in one pass.

    Slots without a value are left untouched, and text substituted into a
    slot is never rescanned, so debate content containing angle brackets is
    safe.
    """
    def sub(m: re.Match) -> str:
        key = m.group(1)
        return values[key] if key in values else m.group(0)

    return _SLOT_RE.sub(sub, template)


def number_word(n: int) -> str:
    return _NUMBER_WORDS[n] if 0 <= n < len(_NUMBER_WORDS) else str(n)


def ordinal(n: int) -> str:
    if 10 <= n % 100 <= 20:
        suffix = "th"
    else:
        suffix = {1: "st", 2: "nd", 3: "rd"}.get(n % 10, "th")
    return f"{n}{suffix}"
