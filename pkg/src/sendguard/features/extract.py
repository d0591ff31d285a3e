"""Email -> feature vector."""
from __future__ import annotations

from typing import Iterable, Sequence

import numpy as np
from scipy import sparse

from ..context import OrgContext, url_domain
from ..email_model import Email, authored_text, _is_quoted, _original_start
from ..errors import SchemaMismatch
from .resources import char_sets, functional_words, special_word_patterns, style_patterns
from .schema import FeatureSchema, FeatureVector
from .text import PhraseCounter, char_occurrence, regex_ratio, style_metrics, tokenize


def _unquoted_text(body: str) -> str:
    lines = body.split("\n")
    lines = lines[: _original_start(lines)]
    return "\n".join(ln for ln in lines if not _is_quoted(ln))


def writing_features(email: Email, context_words: Sequence[str]) -> np.ndarray:
    """Writing-habit block (char, functional, special, style, metrics, context words).

    Everything is computed on the authored text, except the style characteristics,
    which also see the signature block (the signature is one of them).
    """
    text = authored_text(email.body)
    tokens = tokenize(text)
    phrases = PhraseCounter(tokens)
    out: list[float] = [char_occurrence(text, cs) for _, cs in char_sets()]
    seen = set()
    for w in functional_words():
        if w.lower() not in seen:
            seen.add(w.lower())
            out.append(phrases.ratio(w))
    out += [regex_ratio(pats, text, tokens) for _, pats in special_word_patterns()]
    styled = _unquoted_text(email.body)
    out += [regex_ratio(pats, styled, tokens) for _, pats in style_patterns()]
    out += style_metrics(text)
    seen = set()
    for w in context_words:
        if w.lower() not in seen:
            seen.add(w.lower())
            out.append(phrases.ratio(w))
    return np.asarray(out, dtype=np.float64)


def message_characteristics(email: Email) -> list[float]:
    return [
        float(email.has_signature),
        float(bool(email.urls)),
        float(email.indented_line_count > 0),
        float(email.quoted_line_count > 0),
        float(email.attached_original),
        float(email.has_attachment),
        float(email.is_reply),
        float(email.is_forwarded),
        float(email.has_html),
        float(len(email.recipients)),
        float(len(email.cc)),
    ]


def time_features(weekday: int, hour: int) -> list[float]:
    if not (0 <= weekday <= 6 and 0 <= hour <= 23):
        raise ValueError(f"invalid weekday/hour {weekday}/{hour}")
    out = [0.0] * 31
    out[weekday] = 1.0
    out[7 + hour] = 1.0
    return out


def _index_map(items: Sequence[str]) -> dict[str, int]:
    return {x: i for i, x in enumerate(items)}


class _ContextIndex:
    """Lookup tables for one context; rebuilt only when the context object changes."""

    def __init__(self, ctx: OrgContext):
        self.ctx = ctx
        self.url = _index_map(ctx.url_domains)
        self.addr = _index_map(ctx.contacted_addresses)
        self.dom = _index_map(ctx.contacted_domains)


_index_cache: dict[int, _ContextIndex] = {}


def _context_index(ctx: OrgContext) -> _ContextIndex:
    ix = _index_cache.get(id(ctx))
    if ix is None or ix.ctx is not ctx:
        if len(_index_cache) > 8:
            _index_cache.clear()
        ix = _ContextIndex(ctx)
        _index_cache[id(ctx)] = ix
    return ix


def url_active(email: Email, ctx: OrgContext) -> list[int]:
    """Active positions within the URL block (length ``|L_u| + 1``, last is other)."""
    ix = _context_index(ctx).url
    active = set()
    for url in email.urls:
        d = url_domain(url)
        if d is None:
            continue
        active.add(ix.get(d, len(ix)))
    return sorted(active)


def url_features(email: Email, ctx: OrgContext) -> list[float]:
    out = [0.0] * (len(ctx.url_domains) + 1)
    for i in url_active(email, ctx):
        out[i] = 1.0
    return out


def _group_active(keys: Iterable[str], table: dict[str, int]) -> list[int]:
    keys = list(keys)
    if not keys:
        return []
    hits = sorted({table[k] for k in keys if k in table})
    return hits if hits else [len(table)]


def interaction_active(email: Email, ctx: OrgContext) -> list[list[int]]:
    """Active positions for the to-address, to-domain, cc-address and cc-domain groups."""
    ix = _context_index(ctx)
    return [
        _group_active((a.key for a in email.recipients), ix.addr),
        _group_active((a.domain for a in email.recipients), ix.dom),
        _group_active((a.key for a in email.cc), ix.addr),
        _group_active((a.domain for a in email.cc), ix.dom),
    ]


def interaction_features(email: Email, ctx: OrgContext) -> list[list[float]]:
    sizes = [len(ctx.contacted_addresses), len(ctx.contacted_domains)] * 2
    groups = []
    for active, n in zip(interaction_active(email, ctx), sizes):
        g = [0.0] * (n + 1)
        for i in active:
            g[i] = 1.0
        groups.append(g)
    return groups


def _check(ctx: OrgContext, schema: FeatureSchema) -> None:
    if schema.context_version != ctx.version or schema.sizes != ctx.sizes:
        raise SchemaMismatch(
            f"schema built for context v{schema.context_version} {schema.sizes}, "
            f"got v{ctx.version} {ctx.sizes}"
        )


def _sparse_tail(email: Email, ctx: OrgContext, schema: FeatureSchema) -> list[int]:
    lay = schema.layout
    cols = [lay["url"].start + i for i in url_active(email, ctx)]
    for name, active in zip(("to_addr", "to_dom", "cc_addr", "cc_dom"), interaction_active(email, ctx)):
        cols += [lay[name].start + i for i in active]
    return cols


def _dense_head(email: Email, ctx: OrgContext) -> np.ndarray:
    return np.concatenate([
        writing_features(email, ctx.context_words),
        message_characteristics(email),
        time_features(email.weekday, email.hour),
    ])


def extract_features(email: Email, ctx: OrgContext, schema: FeatureSchema) -> FeatureVector:
    _check(ctx, schema)
    values = np.zeros(len(schema))
    head = _dense_head(email, ctx)
    values[: head.size] = head
    values[_sparse_tail(email, ctx, schema)] = 1.0
    return FeatureVector(values, schema.hash)


def extract_matrix(emails: Iterable[Email], ctx: OrgContext, schema: FeatureSchema) -> sparse.csr_matrix:
    """Row-per-email CSR matrix; same values as :func:`extract_features`."""
    _check(ctx, schema)
    data, indices, indptr = [], [], [0]
    for em in emails:
        head = _dense_head(em, ctx)
        nz = np.flatnonzero(head)
        tail = _sparse_tail(em, ctx, schema)
        indices.append(nz)
        indices.append(np.asarray(tail, dtype=np.int64))
        data.append(head[nz])
        data.append(np.ones(len(tail)))
        indptr.append(indptr[-1] + nz.size + len(tail))
    if len(indptr) == 1:
        return sparse.csr_matrix((0, len(schema)))
    return sparse.csr_matrix(
        (np.concatenate(data), np.concatenate(indices), np.asarray(indptr)),
        shape=(len(indptr) - 1, len(schema)),
    )
