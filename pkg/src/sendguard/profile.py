"""Per-user behavioral profiles: training-set assembly, training, persistence, batch updates."""
from __future__ import annotations

import base64
import hashlib
import json
import logging
import os
import re
import tempfile
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy import sparse

from .classifier import Scaler, SvmModel, TrainingSet, train_smo
from .context import OrgContext
from .email_model import Email
from .errors import (BelowMinimumHistory, DegenerateData, InsufficientNegatives, SchemaMismatch,
                     SendGuardError)
from .features import FeatureSchema, FeatureVector, build_schema, extract_matrix

log = logging.getLogger(__name__)

PROFILE_FORMAT = 1
EXTERNAL = "__external__"


@dataclass
class TrainConfig:
    C: float = 1.0
    tol: float = 1e-3
    max_passes: int = 500
    retrain_threshold: int = 50
    min_history: int = 50

    def __post_init__(self):
        if self.C <= 0 or self.tol <= 0 or self.max_passes <= 0:
            raise ValueError("SMO hyperparameters must be positive")
        if self.retrain_threshold <= 0 or self.min_history <= 0:
            raise ValueError("retrain_threshold and min_history must be positive")


# -- training-set assembly -----------------------------------------------------------


def _rows(pool) -> int:
    return 0 if pool is None else pool.shape[0]


def _stack(rows: list, like) -> sparse.csr_matrix | np.ndarray:
    if not rows:
        return like[:0]
    if sparse.issparse(like):
        return sparse.vstack(rows).tocsr()
    return np.vstack(rows)


def round_robin_draws(user_id: str, n_positives: int, pool_sizes: Mapping[str, int],
                      external_size: int, seed) -> list[tuple[str, int]]:
    """Pick one unused random row per positive, rotating over the other users and then
    the external pool; exhausted pools are skipped."""
    keys = sorted(k for k, n in pool_sizes.items() if k != user_id and n > 0)
    sizes = {k: pool_sizes[k] for k in keys}
    if external_size > 0:
        keys.append(EXTERNAL)
        sizes[EXTERNAL] = external_size
    available = sum(sizes.values())
    if available < n_positives:
        raise InsufficientNegatives(n_positives, available)
    rng = np.random.default_rng(seed)
    remaining = {k: list(range(n)) for k, n in sizes.items()}
    draws: list[tuple[str, int]] = []
    pos = 0
    while len(draws) < n_positives:
        k = keys[pos % len(keys)]
        pos += 1
        left = remaining[k]
        if not left:
            continue
        r = int(rng.integers(len(left)))
        draws.append((k, left[r]))
        left[r] = left[-1]
        left.pop()
    return draws


def assemble_training_set(user_id: str, user_vectors, org_pools: Mapping[str, object],
                          external_pool=None, seed=0, schema: FeatureSchema | None = None) -> TrainingSet:
    """Positives are ``user_vectors``; negatives are drawn round-robin from the other
    users' pools and the external pool, one per positive."""
    n_pos = _rows(user_vectors)
    if n_pos == 0:
        raise DegenerateData(f"user {user_id!r} has no vectors")
    sizes = {k: _rows(v) for k, v in org_pools.items()}
    draws = round_robin_draws(user_id, n_pos, sizes, _rows(external_pool), seed)
    rows = [(external_pool if k == EXTERNAL else org_pools[k])[i:i + 1] for k, i in draws]
    negatives = _stack(rows, user_vectors)
    ts = TrainingSet(user_vectors, negatives, schema.hash if schema else "",
                     schema.bool_mask if schema is not None else None)
    ts.sources = draws
    return ts


# -- profiles ----------------------------------------------------------------------


@dataclass
class BehavioralProfile:
    user_id: str
    model: SvmModel | None
    schema_hash: str
    context_version: int
    context_sizes: tuple[int, int, int]
    positives: sparse.csr_matrix
    positive_origins: list[str]
    negatives: sparse.csr_matrix
    pending: list[np.ndarray] = field(default_factory=list)
    trained_at: str = ""
    config: TrainConfig = field(default_factory=TrainConfig)
    address: str = ""
    _seen: set | None = field(default=None, repr=False)

    @property
    def sent_count(self) -> int:
        return self.positives.shape[0] + len(self.pending)

    @property
    def trained(self) -> bool:
        return self.model is not None

    @property
    def retrain_due(self) -> bool:
        return len(self.pending) >= self.config.retrain_threshold

    def _digests(self) -> set:
        if self._seen is None:
            seen = set()
            dense = self.positives.toarray()
            for row in dense:
                seen.add(hashlib.sha1(row.tobytes()).digest())
            for row in self.pending:
                seen.add(hashlib.sha1(row.tobytes()).digest())
            self._seen = seen
        return self._seen

    def has_vector(self, v: FeatureVector | np.ndarray) -> bool:
        """Exact (bitwise) match against every stored positive and pending vector."""
        values = np.asarray(getattr(v, "values", v), dtype=np.float64)
        return hashlib.sha1(values.tobytes()).digest() in self._digests()

    def queue_update(self, v: FeatureVector) -> "BehavioralProfile":
        if v.schema_hash != self.schema_hash:
            raise SchemaMismatch("vector schema differs from the profile schema")
        values = np.array(v.values, dtype=np.float64)
        self.pending.append(values)
        self._digests().add(hashlib.sha1(values.tobytes()).digest())
        return self

    def digest(self) -> str:
        """Content digest excluding the training timestamp."""
        h = hashlib.sha256()
        h.update(self.user_id.encode())
        h.update(self.schema_hash.encode())
        h.update((self.model.digest() if self.model else "untrained").encode())
        for m in (self.positives, self.negatives):
            h.update(m.data.tobytes())
            h.update(m.indices.astype(np.int64).tobytes())
            h.update(m.indptr.astype(np.int64).tobytes())
        for row in self.pending:
            h.update(row.tobytes())
        return h.hexdigest()

    # -- persistence ----------------------------------------------------------

    def to_json(self) -> dict:
        m = self.model
        model = None
        if m is not None:
            model = {
                "weights": _b64(m.weights), "bias": m.bias,
                "support_alphas": [list(p) for p in m.support_alphas],
                "C": m.C, "tol": m.tol, "max_passes": m.max_passes,
                "iterations": m.iterations, "converged": m.converged,
                "scaler": {"mean": _b64(m.scaler.mean), "scale": _b64(m.scaler.scale),
                           "passthrough": _b64(m.scaler.passthrough.astype(np.uint8))},
            }
        return {
            "format": PROFILE_FORMAT,
            "user_id": self.user_id,
            "address": self.address,
            "schema_hash": self.schema_hash,
            "context_version": self.context_version,
            "context_sizes": list(self.context_sizes),
            "trained_at": self.trained_at,
            "sent_count": self.sent_count,
            "config": vars(self.config),
            "model": model,
            "positives": _csr_json(self.positives),
            "positive_origins": self.positive_origins,
            "negatives": _csr_json(self.negatives),
            "pending": _csr_json(_pending_matrix(self.pending, self.positives.shape[1])),
        }

    @classmethod
    def from_json(cls, d: dict) -> "BehavioralProfile":
        if d.get("format") != PROFILE_FORMAT:
            raise SendGuardError(f"unsupported profile format {d.get('format')!r}")
        model = None
        if d["model"] is not None:
            md = d["model"]
            sc = md["scaler"]
            scaler = Scaler(_unb64(sc["mean"]), _unb64(sc["scale"]),
                            _unb64(sc["passthrough"], np.uint8).astype(bool))
            model = SvmModel(_unb64(md["weights"]), float(md["bias"]),
                             tuple((int(i), float(a)) for i, a in md["support_alphas"]),
                             md["C"], md["tol"], md["max_passes"], scaler, d["schema_hash"],
                             md["iterations"], md["converged"])
        pending = _csr_from_json(d["pending"])
        return cls(
            user_id=d["user_id"], model=model, schema_hash=d["schema_hash"],
            context_version=int(d["context_version"]), context_sizes=tuple(d["context_sizes"]),
            positives=_csr_from_json(d["positives"]), positive_origins=list(d["positive_origins"]),
            negatives=_csr_from_json(d["negatives"]),
            pending=[row for row in pending.toarray()],
            trained_at=d.get("trained_at", ""), config=TrainConfig(**d.get("config", {})),
            address=d.get("address", ""),
        )

    def save(self, path: str | os.PathLike) -> None:
        _atomic_write(Path(path), json.dumps(self.to_json()))

    @classmethod
    def load(cls, path: str | os.PathLike) -> "BehavioralProfile":
        return cls.from_json(json.loads(Path(path).read_text()))


def _b64(arr: np.ndarray) -> str:
    return base64.b64encode(np.ascontiguousarray(arr).astype(arr.dtype.newbyteorder("<")).tobytes()).decode()


def _unb64(s: str, dtype=np.float64) -> np.ndarray:
    return np.frombuffer(base64.b64decode(s), dtype=np.dtype(dtype).newbyteorder("<")).astype(dtype)


def _csr_json(m: sparse.csr_matrix) -> dict:
    m = sparse.csr_matrix(m)
    return {"shape": list(m.shape), "data": _b64(m.data.astype(np.float64)),
            "indices": _b64(m.indices.astype(np.int64)), "indptr": _b64(m.indptr.astype(np.int64))}


def _csr_from_json(d: dict) -> sparse.csr_matrix:
    return sparse.csr_matrix((_unb64(d["data"]), _unb64(d["indices"], np.int64), _unb64(d["indptr"], np.int64)),
                             shape=tuple(d["shape"]))


def _pending_matrix(pending: Sequence[np.ndarray], d: int) -> sparse.csr_matrix:
    if not pending:
        return sparse.csr_matrix((0, d))
    return sparse.csr_matrix(np.vstack(pending))


def _atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-", suffix=".json")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# -- negative pools ------------------------------------------------------------------


@dataclass
class NegativePools:
    """Feature matrices of the other users (keyed by user id) and of the external set."""

    org: dict[str, sparse.csr_matrix]
    external: sparse.csr_matrix | None = None

    def without(self, user_id: str) -> dict[str, sparse.csr_matrix]:
        return {k: v for k, v in self.org.items() if k != user_id}


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _fit(user_id: str, positives: sparse.csr_matrix, pools: NegativePools, schema: FeatureSchema,
         config: TrainConfig, seed) -> tuple[SvmModel, sparse.csr_matrix]:
    ts = assemble_training_set(user_id, positives, pools.without(user_id), pools.external, seed, schema)
    model = train_smo(ts, config.C, config.tol, config.max_passes, seed=seed)
    return model, sparse.csr_matrix(ts.negatives)


def train_profile(user_id: str, positives: sparse.csr_matrix, pools: NegativePools,
                  ctx: OrgContext, schema: FeatureSchema, seed=0,
                  config: TrainConfig | None = None, address: str = "") -> BehavioralProfile:
    """Train from precomputed feature rows (``positives`` in chronological order)."""
    config = config or TrainConfig()
    if positives.shape[0] < config.min_history:
        raise BelowMinimumHistory(user_id, positives.shape[0], config.min_history)
    model, negatives = _fit(user_id, positives, pools, schema, config, seed)
    return BehavioralProfile(user_id, model, schema.hash, ctx.version, ctx.sizes,
                             sparse.csr_matrix(positives), ["initial"] * positives.shape[0],
                             negatives, [], _now(), config, address)


def build_profile(user_id: str, sent_emails: Iterable[Email], ctx: OrgContext, pools: NegativePools,
                  seed=0, config: TrainConfig | None = None,
                  schema: FeatureSchema | None = None) -> BehavioralProfile:
    schema = schema or build_schema(ctx)
    emails = list(sent_emails)
    positives = extract_matrix(emails, ctx, schema)
    address = emails[0].sender.key if emails else ""
    return train_profile(user_id, positives, pools, ctx, schema, seed, config, address)


def queue_update(profile: BehavioralProfile, v: FeatureVector) -> BehavioralProfile:
    return profile.queue_update(v)


def retrain(profile: BehavioralProfile, pools: NegativePools, seed=0) -> BehavioralProfile:
    """Fold pending vectors into the positives and retrain on a freshly drawn negative set."""
    if not profile.pending:
        raise SendGuardError(f"profile {profile.user_id!r} has no pending updates")
    positives = sparse.vstack([profile.positives, _pending_matrix(profile.pending, profile.positives.shape[1])]).tocsr()
    origins = profile.positive_origins + ["verified"] * len(profile.pending)
    schema_stub = _SchemaStub(profile)
    model, negatives = _fit(profile.user_id, positives, pools, schema_stub, profile.config, seed)
    return BehavioralProfile(profile.user_id, model, profile.schema_hash, profile.context_version,
                             profile.context_sizes, positives, origins, negatives, [], _now(),
                             profile.config, profile.address)


class _SchemaStub:
    """Carries the hash and boolean mask of a profile's schema without rebuilding it."""

    def __init__(self, profile: BehavioralProfile):
        self.hash = profile.schema_hash
        if profile.model is not None:
            self.bool_mask = profile.model.scaler.passthrough
        else:
            self.bool_mask = None


# -- storage ---------------------------------------------------------------------


_SAFE = re.compile(r"[^A-Za-z0-9._-]")


class ProfileStore:
    """Profiles as ``<dir>/<user_id>.json``; writes are atomic replaces."""

    def __init__(self, root: str | os.PathLike):
        self.root = Path(root)

    def path(self, user_id: str) -> Path:
        return self.root / (_SAFE.sub("_", user_id) + ".json")

    def exists(self, user_id: str) -> bool:
        return self.path(user_id).exists()

    def load(self, user_id: str) -> BehavioralProfile | None:
        p = self.path(user_id)
        return BehavioralProfile.load(p) if p.exists() else None

    def save(self, profile: BehavioralProfile) -> Path:
        p = self.path(profile.user_id)
        profile.save(p)
        return p

    def find(self, key: str) -> BehavioralProfile | None:
        """Load by user id, falling back to the sender address recorded at training."""
        profile = self.load(key)
        if profile is not None or not self.root.exists():
            return profile
        for p in sorted(self.root.glob("*.json")):
            with open(p) as fh:
                head = fh.read(4096)
            if f'"address": {json.dumps(key.lower())}' in head:
                return BehavioralProfile.load(p)
        return None

    def users(self) -> list[str]:
        if not self.root.exists():
            return []
        return sorted(json.loads(p.read_text())["user_id"] for p in self.root.glob("*.json"))
