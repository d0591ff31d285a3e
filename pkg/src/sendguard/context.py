"""Organization-wide lists that size the variable feature families."""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable
from urllib.parse import urlsplit

from .email_model import Email

FORMAT_VERSION = 1


def url_domain(url: str) -> str | None:
    """Host of ``url`` without scheme, credentials, port or path; lower-cased."""
    if "://" not in url:
        url = "http://" + url
    try:
        host = urlsplit(url).hostname
    except ValueError:
        return None
    if not host:
        return None
    host = host.strip(".").lower()
    return host or None


@dataclass(frozen=True)
class OrgContext:
    """Append-only organization lists.

    ``history`` maps every version to the list sizes at that version, so a profile
    trained against an older version can be evaluated through :meth:`at_version`.
    """

    url_domains: tuple[str, ...] = ()
    contacted_addresses: tuple[str, ...] = ()
    contacted_domains: tuple[str, ...] = ()
    context_words: tuple[str, ...] = ()
    version: int = 1
    history: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.version not in self.history:
            self.history[self.version] = self.sizes

    @property
    def sizes(self) -> tuple[int, int, int]:
        return len(self.url_domains), len(self.contacted_addresses), len(self.contacted_domains)

    def at_version(self, version: int) -> "OrgContext":
        if version == self.version:
            return self
        if version not in self.history:
            raise KeyError(f"context has no version {version}")
        nu, na, nd = self.history[version]
        hist = {v: s for v, s in self.history.items() if v <= version}
        return OrgContext(self.url_domains[:nu], self.contacted_addresses[:na],
                          self.contacted_domains[:nd], self.context_words, version, hist)

    # -- persistence ----------------------------------------------------------

    def to_json(self) -> dict:
        return {
            "format": FORMAT_VERSION,
            "version": self.version,
            "url_domains": list(self.url_domains),
            "contacted_addresses": list(self.contacted_addresses),
            "contacted_domains": list(self.contacted_domains),
            "context_words": list(self.context_words),
            "history": {str(v): list(s) for v, s in sorted(self.history.items())},
        }

    @classmethod
    def from_json(cls, data: dict) -> "OrgContext":
        hist = {int(v): tuple(s) for v, s in data.get("history", {}).items()}
        return cls(tuple(data["url_domains"]), tuple(data["contacted_addresses"]),
                   tuple(data["contacted_domains"]), tuple(data["context_words"]),
                   int(data["version"]), hist)

    def save(self, path: str | os.PathLike) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=1))

    @classmethod
    def load(cls, path: str | os.PathLike) -> "OrgContext":
        return cls.from_json(json.loads(Path(path).read_text()))


class _OrderedSet:
    def __init__(self, items: Iterable[str] = ()):
        self._d = dict.fromkeys(items)

    def add(self, item: str) -> None:
        if item not in self._d:
            self._d[item] = None

    def __len__(self):
        return len(self._d)

    def tuple(self) -> tuple[str, ...]:
        return tuple(self._d)


def _absorb(emails: Iterable[Email], lu: _OrderedSet, la: _OrderedSet, ld: _OrderedSet) -> None:
    for em in emails:
        for url in em.urls:
            d = url_domain(url)
            if d:
                lu.add(d)
        for addr in (*em.recipients, *em.cc):
            la.add(addr.key)
            ld.add(addr.domain)


def build_context(corpus: Iterable[Email], context_words: Iterable[str] | None = None) -> OrgContext:
    """Collect URL domains, To:/Cc: addresses and their domains in first-seen order."""
    lu, la, ld = _OrderedSet(), _OrderedSet(), _OrderedSet()
    _absorb(corpus, lu, la, ld)
    if context_words is None:
        from .features.resources import default_context_words

        context_words = default_context_words()
    words = tuple(context_words)
    return OrgContext(lu.tuple(), la.tuple(), ld.tuple(), words, 1, {})


def extend_context(ctx: OrgContext, new: Iterable[Email]) -> OrgContext:
    lu = _OrderedSet(ctx.url_domains)
    la = _OrderedSet(ctx.contacted_addresses)
    ld = _OrderedSet(ctx.contacted_domains)
    _absorb(new, lu, la, ld)
    hist = dict(ctx.history)
    return OrgContext(lu.tuple(), la.tuple(), ld.tuple(), ctx.context_words, ctx.version + 1, hist)
