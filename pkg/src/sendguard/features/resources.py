"""Loaders for the shipped word lists and pattern file."""
from __future__ import annotations

import json
import re
from functools import lru_cache
from importlib import resources


def _load(name: str) -> dict:
    return json.loads(resources.files(__package__).joinpath("data", name).read_text())


@lru_cache(maxsize=None)
def functional_words() -> tuple[str, ...]:
    return tuple(_load("functional_words.json")["words"])


@lru_cache(maxsize=None)
def default_context_words() -> tuple[str, ...]:
    return tuple(_load("context_words.json")["words"])


@lru_cache(maxsize=None)
def patterns() -> dict:
    return _load("patterns.json")


@lru_cache(maxsize=None)
def char_sets() -> tuple[tuple[str, frozenset], ...]:
    return tuple((c["name"], frozenset(c["chars"])) for c in patterns()["char_sets"])


def _compiled(group: str) -> tuple[tuple[str, tuple[re.Pattern, ...]], ...]:
    return tuple(
        (g["name"], tuple(re.compile(p) for p in g["patterns"])) for g in patterns()[group]
    )


@lru_cache(maxsize=None)
def special_word_patterns():
    return _compiled("special_words")


@lru_cache(maxsize=None)
def style_patterns():
    return _compiled("style_characteristics")
