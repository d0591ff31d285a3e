"""Experiment harness: cross-validation by history size, attack injection, evasion strategies."""
from __future__ import annotations

import csv
import io
import json
import logging
import re
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy import sparse

from .classifier import TrainingSet, train_smo
from .context import OrgContext, build_context
from .email_model import Address, CorpusStream, Email, with_sender
from .errors import InsufficientHistory, UnknownStrategy
from .features import FeatureSchema, build_schema, extract_matrix
from .profile import BehavioralProfile, NegativePools, TrainConfig, assemble_training_set, train_profile

log = logging.getLogger(__name__)

BUCKETS = (50, 100, 200, 500, 1000, 2000, 4000, 8000)
SHIPPED_STRATEGIES = ("C", "T", "T+C", "M10", "M20", "T+TC", "T+TC+M10", "T+TC+M20")
FAILURE, SUCCESS, NO_EFFECT = "failure", "success", "no_effect"


# -- corpus preparation -------------------------------------------------------------


@dataclass
class OrgData:
    """Feature matrices for one organization, extracted once and shared by every experiment.

    ``users`` rows are in chronological order, so ``users[u][:n]`` is the user's first
    ``n`` sent emails.
    """

    ctx: OrgContext
    schema: FeatureSchema
    users: dict[str, sparse.csr_matrix]
    addresses: dict[str, str]
    external: sparse.csr_matrix
    attacks: list[Email] = field(default_factory=list)
    extra_pools: dict[str, sparse.csr_matrix] = field(default_factory=dict)

    def pools(self) -> NegativePools:
        return NegativePools({**self.extra_pools, **self.users}, self.external)

    def history(self, user_id: str) -> int:
        return self.users[user_id].shape[0]

    @classmethod
    def from_stream(cls, stream: Iterable[tuple[str, str | None, Email]],
                    context_words: Sequence[str] | None = None,
                    ctx: OrgContext | None = None) -> "OrgData":
        """Split a corpus stream by role; the context is built from the legitimate
        organization emails unless one is given."""
        by_user: dict[str, list[Email]] = {}
        org: dict[str, list[Email]] = {}
        external: list[Email] = []
        attacks: list[Email] = []
        for role, user_id, em in stream:
            if role == "user_sent":
                by_user.setdefault(user_id, []).append(em)
            elif role == "org_sent":
                org.setdefault(user_id or em.sender.key, []).append(em)
            elif role == "external_legit":
                external.append(em)
            else:
                attacks.append(em)
        for emails in by_user.values():
            emails.sort(key=lambda e: e.sent_at)
        legit = [em for u in sorted(by_user) for em in by_user[u]] + [em for k in sorted(org) for em in org[k]]
        if ctx is None:
            ctx = build_context(legit, context_words)
        schema = build_schema(ctx)
        users = {u: extract_matrix(by_user[u], ctx, schema) for u in sorted(by_user)}
        addresses = {u: Counter(e.sender.key for e in by_user[u]).most_common(1)[0][0] for u in users}
        extra = {f"org:{k}": extract_matrix(org[k], ctx, schema) for k in sorted(org) if k not in users}
        return cls(ctx, schema, users, addresses, extract_matrix(external, ctx, schema), attacks, extra)

    @classmethod
    def from_corpus(cls, stream: CorpusStream, context_words: Sequence[str] | None = None,
                    ctx: OrgContext | None = None) -> "OrgData":
        return cls.from_stream(stream, context_words, ctx)

    def eligible_users(self, min_history: int) -> list[str]:
        return [u for u in sorted(self.users) if self.history(u) >= min_history]


# -- cross-validation -------------------------------------------------------------


def stratified_folds(n_pos: int, n_neg: int, k: int, seed) -> list[tuple[np.ndarray, np.ndarray]]:
    """``k`` (positive_idx, negative_idx) test folds; each index appears in exactly one."""
    rng = np.random.default_rng(seed)
    pos = np.array_split(rng.permutation(n_pos), k)
    neg = np.array_split(rng.permutation(n_neg), k)
    return list(zip(pos, neg))


def _rows_except(m, idx: np.ndarray):
    keep = np.ones(m.shape[0], dtype=bool)
    keep[idx] = False
    return m[keep]


def kfold_validate(data: OrgData, user_id: str, k: int = 10, features: str = "all", seed=0,
                   history: int | None = None, config: TrainConfig | None = None) -> tuple[float, float]:
    """Cross-validated (fp_rate, fn_rate) for one user.

    FP: the user's own email classified as someone else's. FN: a negative-pool email
    classified as the user's. ``history`` keeps only the user's first ``history`` emails.
    """
    if features not in ("all", "writing_only"):
        raise ValueError(f"features must be 'all' or 'writing_only', got {features!r}")
    config = config or TrainConfig()
    positives = data.users[user_id]
    if history is not None:
        positives = positives[:history]
    if positives.shape[0] < k or k < 2:
        raise InsufficientHistory(f"user {user_id!r} has {positives.shape[0]} emails, k={k}")
    pools = data.pools()
    ts = assemble_training_set(user_id, positives, pools.without(user_id), pools.external, seed, data.schema)
    P, N = sparse.csr_matrix(ts.positives), sparse.csr_matrix(ts.negatives)
    passthrough = data.schema.bool_mask
    if features == "writing_only":
        cols = np.flatnonzero(data.schema.writing_mask)
        P, N, passthrough = P[:, cols], N[:, cols], passthrough[cols]
    fp = fn = 0
    for f, (pi, ni) in enumerate(stratified_folds(P.shape[0], N.shape[0], k, seed)):
        train = TrainingSet(_rows_except(P, pi), _rows_except(N, ni), data.schema.hash, passthrough)
        model = train_smo(train, config.C, config.tol, config.max_passes, seed=seed + f)
        if pi.size:
            fp += int(np.sum(model.decision(P[pi]) <= 0))
        if ni.size:
            fn += int(np.sum(model.decision(N[ni]) > 0))
    return fp / P.shape[0], fn / N.shape[0]


@dataclass
class UserResult:
    user_id: str
    history_size: int
    fp_rate: float
    fn_rate: float


@dataclass
class BucketSummary:
    bucket: int
    n_users: int
    mean_fp: float
    mean_fn: float
    std_fp: float
    std_fn: float


@dataclass
class EvaluationReport:
    per_user: list[UserResult]
    buckets: list[BucketSummary]
    ablation: bool = False

    def bucket(self, size: int) -> BucketSummary | None:
        return next((b for b in self.buckets if b.bucket == size), None)

    def to_json(self) -> dict:
        return {"ablation": self.ablation,
                "buckets": [vars(b) for b in self.buckets],
                "per_user": [vars(r) for r in self.per_user]}


def bucket_for(history: int) -> int | None:
    """Largest bucket not exceeding ``history``."""
    fitting = [b for b in BUCKETS if b <= history]
    return fitting[-1] if fitting else None


def bucket_curves(results: Sequence[UserResult], ablation: bool = False) -> EvaluationReport:
    groups: dict[int, list[UserResult]] = {}
    for r in results:
        b = bucket_for(r.history_size)
        if b is not None:
            groups.setdefault(b, []).append(r)
    summaries = []
    for b in BUCKETS:
        rows = groups.get(b)
        if not rows:
            continue
        fp = np.array([r.fp_rate for r in rows])
        fn = np.array([r.fn_rate for r in rows])
        summaries.append(BucketSummary(b, len(rows), float(fp.mean()), float(fn.mean()),
                                       float(fp.std()), float(fn.std())))
    return EvaluationReport(list(results), summaries, ablation)


def history_sweep(data: OrgData, users: Sequence[str], histories: Sequence[int], k: int = 10,
                  features: str = "all", seed=0, config: TrainConfig | None = None) -> EvaluationReport:
    """Cross-validate every user at each truncated history size it can support."""
    results = []
    for u in users:
        for h in histories:
            if data.history(u) < h:
                continue
            fp, fn = kfold_validate(data, u, k, features, seed, h, config)
            results.append(UserResult(u, h, fp, fn))
            log.info("kfold %s h=%d fp=%.3f fn=%.3f", u, h, fp, fn)
    return bucket_curves(results, features == "writing_only")


# -- attacks ------------------------------------------------------------------------


def train_profiles(data: OrgData, users: Sequence[str], history: int | None = None, seed=0,
                   config: TrainConfig | None = None) -> dict[str, BehavioralProfile]:
    pools = data.pools()
    out = {}
    for u in users:
        pos = data.users[u] if history is None else data.users[u][:history]
        out[u] = train_profile(u, pos, pools, data.ctx, data.schema, seed, config, data.addresses.get(u, ""))
    return out


def attack_matrix(data: OrgData, attacks: Sequence[Email], user_id: str) -> sparse.csr_matrix:
    """Attack emails re-attributed to ``user_id`` (only the sender changes)."""
    sender = Address.parse(data.addresses.get(user_id, user_id))
    return extract_matrix([with_sender(a, sender) for a in attacks], data.ctx, data.schema)


def _challenged(profile: BehavioralProfile, X) -> np.ndarray:
    margins = profile.model.decision(X)
    dense = X.toarray() if sparse.issparse(X) else np.asarray(X, dtype=np.float64)
    replay = np.array([profile.has_vector(row) for row in dense], dtype=bool)
    return (margins <= 0) | replay


def inject_attacks(data: OrgData, attacks: Sequence[Email], users: Sequence[str],
                   profiles: Mapping[str, BehavioralProfile]) -> dict[str, float]:
    """Per-user true-positive rate: fraction of re-attributed attacks that get challenged."""
    if not attacks:
        return {u: float("nan") for u in users}
    return {u: float(_challenged(profiles[u], attack_matrix(data, attacks, u)).mean()) for u in users}


# -- evasion ------------------------------------------------------------------------


@dataclass
class VictimStats:
    """What an attacker can learn from the victim's own sent folder."""

    means: np.ndarray
    address_counts: dict[int, int]      # column in the to_addr group -> emails sent
    coworkers: list[int]                 # to_addr columns inside the victim's domain
    peak_day: int
    peak_hour: int
    word_ranking: list[int]              # functional + context-word columns by mean ratio

    @property
    def top_contact(self) -> int | None:
        if not self.address_counts:
            return None
        return min(self.address_counts, key=lambda c: (-self.address_counts[c], c))


def victim_stats(own_vectors, schema: FeatureSchema, own_address: str) -> VictimStats:
    X = own_vectors.toarray() if sparse.issparse(own_vectors) else np.asarray(own_vectors, dtype=np.float64)
    means = X.mean(axis=0)
    lay = schema.layout
    to_addr = lay["to_addr"]
    names = schema.names
    counts = {}
    other = to_addr.stop - 1
    for c in range(to_addr.start, other):
        n = int(np.count_nonzero(X[:, c]))
        if n:
            counts[c] = n
    domain = own_address.rsplit("@", 1)[-1].lower()
    coworkers = [c for c in counts if names[c].split(":", 1)[1].rsplit("@", 1)[-1] == domain]
    days = X[:, lay["time"].start:lay["time"].start + 7]
    hours = X[:, lay["time"].start + 7:lay["time"].stop]
    joint = days.T @ hours
    d, h = np.unravel_index(int(np.argmax(joint)), joint.shape)
    word_cols = np.concatenate([np.arange(lay["functional"].start, lay["functional"].stop),
                                np.arange(lay["context_word"].start, lay["context_word"].stop)])
    ranked = sorted((c for c in word_cols if means[c] > 0), key=lambda c: (-means[c], c))
    return VictimStats(means, counts, coworkers, int(d), int(h), [int(c) for c in ranked])


_ATOM = re.compile(r"^(C|T|TC|M(\d+))$")


def parse_strategy(strategy: str) -> list[str]:
    """``"T+TC+M20"``, ``"T_TC_M_20"`` -> ``["T", "TC", "M20"]``."""
    s = re.sub(r"M_(\d+)", r"M\1", strategy.strip().upper())
    atoms = [a for a in re.split(r"[+_\s]+", s) if a]
    if not atoms or any(not _ATOM.match(a) for a in atoms):
        raise UnknownStrategy(f"unknown evasion strategy {strategy!r}")
    return atoms


def _set_recipient(v: np.ndarray, addr_col: int, schema: FeatureSchema) -> None:
    lay = schema.layout
    v[lay["to_addr"]] = 0.0
    v[addr_col] = 1.0
    v[lay["to_dom"]] = 0.0
    dom = schema.names[addr_col].split(":", 1)[1].rsplit("@", 1)[-1]
    try:
        v[schema.index(f"to_dom:{dom}")] = 1.0
    except KeyError:
        v[lay["to_dom"].stop - 1] = 1.0
    v[schema.index("msg:n_recipients")] = 1.0


def apply_evasion(strategy: str, attack_vector, stats: VictimStats, schema: FeatureSchema,
                  seed=0) -> np.ndarray:
    """Return a modified copy of ``attack_vector``; components apply left to right."""
    atoms = parse_strategy(strategy)
    v = np.array(getattr(attack_vector, "values", attack_vector), dtype=np.float64)
    rng = np.random.default_rng(seed)
    lay = schema.layout
    for atom in atoms:
        if atom == "C":
            pool = stats.coworkers or sorted(stats.address_counts)
            if pool:
                _set_recipient(v, pool[int(rng.integers(len(pool)))], schema)
        elif atom == "TC":
            top = stats.top_contact
            if top is not None:
                _set_recipient(v, top, schema)
        elif atom == "T":
            t = lay["time"]
            v[t] = 0.0
            v[t.start + stats.peak_day] = 1.0
            v[t.start + 7 + stats.peak_hour] = 1.0
        else:
            n = int(atom[1:])
            cols = stats.word_ranking[:n]
            v[cols] = stats.means[cols]
    return v


@dataclass
class EvasionResult:
    strategy: str
    failure: int
    success: int
    no_effect: int
    avg_change: float
    per_user: dict[str, str]

    def to_json(self) -> dict:
        return vars(self).copy()


def evasion_matrix(data: OrgData, users: Sequence[str], attacks: Sequence[Email],
                   strategies: Sequence[str], profiles: Mapping[str, BehavioralProfile],
                   seed=0) -> list[EvasionResult]:
    """Compare evasion rates on unmodified vs. strategy-modified attack vectors per user."""
    for s in strategies:
        parse_strategy(s)
    if not strategies:
        return []
    base: dict[str, tuple[np.ndarray, float, VictimStats]] = {}
    for u in users:
        X = attack_matrix(data, attacks, u).toarray()
        own = profiles[u].positives
        stats = victim_stats(own, data.schema, data.addresses.get(u, u))
        rate = float((~_challenged(profiles[u], X)).mean()) if len(X) else 0.0
        base[u] = (X, rate, stats)
    results = []
    for s_i, s in enumerate(strategies):
        outcome: dict[str, str] = {}
        changes = []
        for u_i, u in enumerate(users):
            X, rate0, stats = base[u]
            rng = np.random.default_rng([seed, s_i, u_i])
            Xm = np.vstack([apply_evasion(s, row, stats, data.schema, rng.integers(2**32)) for row in X]) if len(X) else X
            rate = float((~_challenged(profiles[u], Xm)).mean()) if len(X) else 0.0
            changes.append(100.0 * (rate - rate0))
            outcome[u] = SUCCESS if rate > rate0 else FAILURE if rate < rate0 else NO_EFFECT
        c = Counter(outcome.values())
        results.append(EvasionResult(s, c[FAILURE], c[SUCCESS], c[NO_EFFECT],
                                     float(np.mean(changes)) if changes else 0.0, outcome))
    return results


# -- report writers -----------------------------------------------------------------


def per_user_csv(report: EvaluationReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["user_id", "history_size", "fp_rate", "fn_rate"])
    for r in report.per_user:
        w.writerow([r.user_id, r.history_size, f"{r.fp_rate:.6f}", f"{r.fn_rate:.6f}"])
    return buf.getvalue()


def plot_csv(rows: Iterable[tuple[int, float, float]], header=("history_size", "mean_rate", "stddev")) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for h, m, s in rows:
        w.writerow([h, f"{m:.6f}", f"{s:.6f}"])
    return buf.getvalue()


def to_json_text(obj) -> str:
    return json.dumps(obj, indent=1, sort_keys=True)
