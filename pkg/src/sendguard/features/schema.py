"""Feature schema: the ordered name/family/kind index shared by vectors and models."""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from ..context import OrgContext
from .resources import char_sets, functional_words, special_word_patterns, style_patterns
from .text import METRIC_KINDS, METRIC_NAMES

FAMILIES = ("char", "functional", "special", "style_char", "style_metric", "context_word",
            "message", "time", "url", "interaction")
WRITING_FAMILIES = frozenset(FAMILIES[:6])
KINDS = ("ratio", "count", "bool", "metric")
OTHER = "__other__"

MESSAGE_FEATURES = (
    ("has_signature", "bool"), ("has_url", "bool"), ("indented_lines", "bool"),
    ("quoted_lines", "bool"), ("original_attached", "bool"), ("has_attachment", "bool"),
    ("is_reply", "bool"), ("is_forwarded", "bool"), ("has_html", "bool"),
    ("n_recipients", "count"), ("n_cc", "count"),
)
INTERACTION_GROUPS = ("to_addr", "to_dom", "cc_addr", "cc_dom")


@dataclass(frozen=True)
class FeatureEntry:
    name: str
    family: str
    kind: str


@dataclass(frozen=True, eq=False)
class FeatureSchema:
    entries: tuple[FeatureEntry, ...]
    context_version: int
    sizes: tuple[int, int, int] = (0, 0, 0)
    n_context_words: int = 0
    _index: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        names = [e.name for e in self.entries]
        if len(set(names)) != len(names):
            dupes = sorted({n for n in names if names.count(n) > 1})
            raise ValueError(f"duplicate feature names: {dupes[:5]}")
        self._index.update((n, i) for i, n in enumerate(names))

    def __len__(self) -> int:
        return len(self.entries)

    def __eq__(self, other) -> bool:
        return isinstance(other, FeatureSchema) and self.hash == other.hash

    def __hash__(self) -> int:
        return hash(self.hash)

    def index(self, name: str) -> int:
        return self._index[name]

    @property
    def names(self) -> list[str]:
        return [e.name for e in self.entries]

    @cached_property
    def hash(self) -> str:
        payload = json.dumps([self.context_version, [(e.name, e.family, e.kind) for e in self.entries]])
        return hashlib.sha256(payload.encode()).hexdigest()

    @cached_property
    def families(self) -> np.ndarray:
        return np.array([e.family for e in self.entries])

    @cached_property
    def bool_mask(self) -> np.ndarray:
        return np.array([e.kind == "bool" for e in self.entries], dtype=bool)

    @cached_property
    def ratio_mask(self) -> np.ndarray:
        return np.array([e.kind == "ratio" for e in self.entries], dtype=bool)

    @cached_property
    def writing_mask(self) -> np.ndarray:
        return np.array([e.family in WRITING_FAMILIES for e in self.entries], dtype=bool)

    @cached_property
    def layout(self) -> dict[str, slice]:
        """Slices per family plus the four interaction groups."""
        spans: dict[str, list[int]] = {}
        for i, e in enumerate(self.entries):
            key = e.name.split(":", 1)[0] if e.family == "interaction" else e.family
            span = spans.setdefault(key, [i, i])
            span[1] = i
        return {k: slice(a, b + 1) for k, (a, b) in spans.items()}

    def group_slice(self, name: str) -> slice:
        """Slice of a family or interaction group (``to_addr``, ``to_dom``, ``cc_addr``, ``cc_dom``)."""
        return self.layout.get(name, slice(0, 0))

    def family_slice(self, family: str) -> slice:
        return self.group_slice(family)


def _writing_entries(context_words) -> list[FeatureEntry]:
    out = [FeatureEntry(f"char:{name}", "char", "ratio") for name, _ in char_sets()]
    seen = set()
    for w in functional_words():
        key = w.lower()
        if key in seen:
            continue
        seen.add(key)
        out.append(FeatureEntry(f"fw:{key}", "functional", "ratio"))
    out += [FeatureEntry(f"sw:{name}", "special", "ratio") for name, _ in special_word_patterns()]
    out += [FeatureEntry(f"style:{name}", "style_char", "ratio") for name, _ in style_patterns()]
    out += [FeatureEntry(f"metric:{n}", "style_metric", k) for n, k in zip(METRIC_NAMES, METRIC_KINDS)]
    seen = set()
    for w in context_words:
        key = w.lower()
        if key in seen:
            continue
        seen.add(key)
        out.append(FeatureEntry(f"ctx:{key}", "context_word", "ratio"))
    return out


def build_schema(ctx: OrgContext) -> FeatureSchema:
    entries = _writing_entries(ctx.context_words)
    n_ctx = sum(1 for e in entries if e.family == "context_word")
    entries += [FeatureEntry(f"msg:{n}", "message", k) for n, k in MESSAGE_FEATURES]
    entries += [FeatureEntry(f"time:day_{d}", "time", "bool") for d in range(7)]
    entries += [FeatureEntry(f"time:hour_{h}", "time", "bool") for h in range(24)]
    entries += [FeatureEntry(f"url:{d}", "url", "bool") for d in ctx.url_domains]
    entries.append(FeatureEntry(f"url:{OTHER}", "url", "bool"))
    for group in INTERACTION_GROUPS:
        items = ctx.contacted_addresses if group.endswith("addr") else ctx.contacted_domains
        entries += [FeatureEntry(f"{group}:{x}", "interaction", "bool") for x in items]
        entries.append(FeatureEntry(f"{group}:{OTHER}", "interaction", "bool"))
    return FeatureSchema(tuple(entries), ctx.version, ctx.sizes, n_ctx)


@dataclass(frozen=True, eq=False)
class FeatureVector:
    values: np.ndarray
    schema_hash: str

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def __len__(self) -> int:
        return len(self.values)

    def __eq__(self, other) -> bool:
        return (isinstance(other, FeatureVector) and self.schema_hash == other.schema_hash
                and self.values.tobytes() == other.values.tobytes())

    def __hash__(self) -> int:
        return hash((self.schema_hash, self.values.tobytes()))

    def digest(self) -> str:
        return hashlib.sha1(self.values.tobytes()).hexdigest()
