"""Text-level writing-habit primitives: tokenizer, ratios and vocabulary-richness metrics."""
from __future__ import annotations

import math
import re
import string
from collections import Counter
from typing import Iterable, Sequence

_STRIP = string.punctuation + "\u201c\u201d\u2018\u2019\u00ab\u00bb\u2026\u2013\u2014"
_SENTENCE_END = re.compile(r"[.!?]+(?=\s|$)")
_PARAGRAPH_SPLIT = re.compile(r"\n[ \t]*\n")
_WORDCHAR = re.compile(r"\w")

LONG_LINE = 72
SHORT_LINE = 10
MAX_WORD_LENGTH = 20

METRIC_NAMES = (
    ["paragraphs", "sentences_per_paragraph", "unique_words", "words", "message_length",
     "long_lines", "short_lines"]
    + [f"word_length_{n}" for n in range(1, MAX_WORD_LENGTH + 1)]
    + ["hapax_legomena", "hapax_dislegomena", "sichel_s", "honore_r", "yule_k", "simpson_d"]
)
METRIC_KINDS = (
    ["count", "metric", "count", "count", "count", "count", "count"]
    + ["ratio"] * MAX_WORD_LENGTH
    + ["count", "count", "ratio", "metric", "metric", "ratio"]
)


def tokenize(text: str) -> list[str]:
    """Whitespace split, outer punctuation stripped, lower-cased; empty tokens dropped."""
    out = []
    for raw in text.replace("’", "'").split():
        tok = raw.strip(_STRIP).lower()
        if tok:
            out.append(tok)
    return out


def char_occurrence(text: str, charset: Iterable[str]) -> float:
    if not text:
        return 0.0
    cs = charset if isinstance(charset, (set, frozenset)) else set(charset)
    return sum(1 for ch in text if ch in cs) / len(text)


def _entry_tokens(word: str) -> tuple[tuple[str, ...], bool]:
    """(token sequence, suffix_match). Entries such as ``'re`` match token suffixes."""
    w = word.replace("’", "'").lower().strip()
    if w.startswith("'"):
        return (w,), True
    return tuple(w.split()), False


def count_phrase(word: str, tokens: Sequence[str]) -> int:
    seq, suffix = _entry_tokens(word)
    if suffix:
        return sum(1 for t in tokens if t.endswith(seq[0]) and t != seq[0])
    n = len(seq)
    if n == 0:
        return 0
    if n == 1:
        return sum(1 for t in tokens if t == seq[0])
    return sum(1 for i in range(len(tokens) - n + 1) if tuple(tokens[i:i + n]) == seq)


def token_ratio(word: str, tokens: Sequence[str]) -> float:
    if not tokens:
        return 0.0
    return count_phrase(word, tokens) / len(tokens)


class PhraseCounter:
    """Counts many word-list entries against one token list in a single pass per n-gram size."""

    def __init__(self, tokens: Sequence[str]):
        self.tokens = tokens
        self._grams: dict[int, Counter] = {}

    def count(self, word: str) -> int:
        seq, suffix = _entry_tokens(word)
        if suffix or not seq:
            return count_phrase(word, self.tokens)
        n = len(seq)
        grams = self._grams.get(n)
        if grams is None:
            toks = self.tokens
            grams = Counter(tuple(toks[i:i + n]) for i in range(len(toks) - n + 1))
            self._grams[n] = grams
        return grams.get(seq, 0)

    def ratio(self, word: str) -> float:
        if not self.tokens:
            return 0.0
        return self.count(word) / len(self.tokens)


def regex_matches(patterns: Iterable[re.Pattern], text: str) -> int:
    return sum(sum(1 for _ in p.finditer(text)) for p in patterns)


def regex_ratio(patterns: Iterable[re.Pattern], text: str, tokens: Sequence[str]) -> float:
    """Matches per token, clipped to 1 so the feature stays a ratio."""
    if not tokens:
        return 0.0
    return min(1.0, regex_matches(patterns, text) / len(tokens))


def _paragraphs(text: str) -> list[str]:
    return [p for p in _PARAGRAPH_SPLIT.split(text) if p.strip()]


def _sentences(text: str) -> int:
    return sum(1 for s in _SENTENCE_END.split(text) if _WORDCHAR.search(s))


def style_metrics(text: str) -> list[float]:
    """The 33 style metrics, in :data:`METRIC_NAMES` order."""
    tokens = tokenize(text)
    N = len(tokens)
    freq = Counter(tokens)
    V = len(freq)
    spectrum = Counter(freq.values())  # m -> V_m
    V1, V2 = spectrum.get(1, 0), spectrum.get(2, 0)

    paragraphs = _paragraphs(text)
    n_par = len(paragraphs)
    n_sent = sum(_sentences(p) for p in paragraphs)
    lines = text.split("\n") if text else []
    long_lines = sum(1 for ln in lines if len(ln) > LONG_LINE)
    short_lines = sum(1 for ln in lines if ln.strip() and len(ln) < SHORT_LINE)

    lengths = Counter(len(t) for t in tokens)
    length_freq = [lengths.get(n, 0) / N if N else 0.0 for n in range(1, MAX_WORD_LENGTH + 1)]

    sichel = V2 / V if V else 0.0
    honore = 100.0 * math.log(N) / (1.0 - V1 / V) if V and V1 != V else 0.0
    yule = 1e4 * (sum(m * m * vm for m, vm in spectrum.items()) - N) / (N * N) if N else 0.0
    simpson = sum(vm * m * (m - 1) for m, vm in spectrum.items()) / (N * (N - 1)) if N >= 2 else 0.0

    return [
        float(n_par),
        n_sent / n_par if n_par else 0.0,
        float(V),
        float(N),
        float(len(text)),
        float(long_lines),
        float(short_lines),
        *length_freq,
        float(V1),
        float(V2),
        sichel,
        honore,
        yule,
        simpson,
    ]
