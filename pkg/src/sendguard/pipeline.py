"""Send-time check: extract, classify, challenge, verify, queue for the next retrain."""
from __future__ import annotations

import base64
import json
import logging
import os
import sys
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable, Protocol

import numpy as np

from .classifier import predict
from .context import OrgContext
from .email_model import Email
from .errors import SchemaMismatch, SendGuardError, UnknownEmailId
from .features import FeatureSchema, FeatureVector, build_schema, extract_features
from .profile import BehavioralProfile

log = logging.getLogger(__name__)

ACCEPTED, CHALLENGED = "accepted", "challenged"
CONFIRMED, FAILED, TIMEOUT = "confirmed", "failed", "timeout"
RELEASED, DISCARDED = "released", "discarded"

EXIT_ACCEPTED, EXIT_CHALLENGED, EXIT_ERROR = 0, 3, 4


@dataclass
class Decision:
    email_id: str
    verdict: str
    margin: float
    reasons: list[str] = field(default_factory=list)
    user_id: str = ""
    vector: FeatureVector | None = field(default=None, repr=False, compare=False)

    @property
    def exit_code(self) -> int:
        return EXIT_ACCEPTED if self.verdict == ACCEPTED else EXIT_CHALLENGED

    def to_json(self) -> dict:
        return {"email_id": self.email_id, "user_id": self.user_id, "verdict": self.verdict,
                "margin": self.margin, "reasons": list(self.reasons)}


@dataclass(frozen=True)
class VerificationOutcome:
    email_id: str
    result: str

    def __post_init__(self):
        if self.result not in (CONFIRMED, FAILED, TIMEOUT):
            raise ValueError(f"unknown verification result {self.result!r}")


_schema_cache: dict[tuple, FeatureSchema] = {}


def _schema_for(ctx: OrgContext) -> FeatureSchema:
    key = (ctx.version, ctx.url_domains, ctx.contacted_addresses, ctx.contacted_domains, ctx.context_words)
    schema = _schema_cache.get(key)
    if schema is None:
        schema = _schema_cache[key] = build_schema(ctx)
    return schema


def profile_view(profile: BehavioralProfile, ctx: OrgContext) -> OrgContext:
    """The context as it was when ``profile`` was trained."""
    if profile.context_version > ctx.version:
        raise SchemaMismatch(f"profile needs context v{profile.context_version}, have v{ctx.version}")
    try:
        view = ctx.at_version(profile.context_version)
    except KeyError:
        raise SchemaMismatch(f"context has no record of version {profile.context_version}") from None
    if view.sizes != tuple(profile.context_sizes):
        raise SchemaMismatch("context lists differ from those the profile was trained on")
    return view


def check_outgoing(email: Email, profile: BehavioralProfile | None, ctx: OrgContext,
                   held: "HeldQueue | None" = None) -> Decision:
    """Classify one outgoing email against its sender's profile.

    Accepted vectors are queued on the profile; challenged ones go to ``held``.
    A missing or untrained profile always challenges.
    """
    user_id = profile.user_id if profile is not None else email.sender.key
    if profile is None or not profile.trained:
        decision = Decision(email.message_id, CHALLENGED, 0.0, ["untrained"], user_id)
        if held is not None:
            held.add(decision, email)
        return decision

    view = profile_view(profile, ctx)
    schema = _schema_for(view)
    if schema.hash != profile.schema_hash:
        raise SchemaMismatch("schema hash differs from the profile's")
    v = extract_features(email, view, schema)
    _, margin = predict(profile.model, v)
    reasons = []
    if margin <= 0:
        reasons.append("anomalous")
    if profile.has_vector(v):
        reasons.append("replay")
    verdict = CHALLENGED if reasons else ACCEPTED
    decision = Decision(email.message_id, verdict, margin, reasons, user_id, v)
    log.info("%s %s margin=%.4f %s", user_id, verdict, margin, ",".join(reasons))
    if verdict == ACCEPTED:
        profile.queue_update(v)
    elif held is not None:
        held.add(decision, email)
    return decision


def resolve_verification(decision: Decision, outcome: VerificationOutcome,
                         profile: BehavioralProfile | None, held: "HeldQueue | None" = None,
                         alerts: "AlertLog | None" = None) -> str:
    """Apply a verification result: confirmed releases and queues, anything else discards."""
    if outcome.email_id != decision.email_id:
        raise UnknownEmailId(outcome.email_id)
    if decision.verdict != CHALLENGED:
        raise SendGuardError(f"email {decision.email_id!r} was not challenged")
    if held is not None and decision.email_id not in held:
        raise UnknownEmailId(decision.email_id)
    if outcome.result == CONFIRMED:
        if profile is not None and decision.vector is not None:
            profile.queue_update(decision.vector)
        action = RELEASED
    else:
        action = DISCARDED
        if alerts is not None:
            alerts.emit(decision, outcome)
    if held is not None:
        held.resolve(decision.email_id, action)
    return action


# -- persistence -------------------------------------------------------------------


def _append_jsonl(path: Path, record: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "a", encoding="utf-8") as fh:
        fh.write(json.dumps(record, sort_keys=True) + "\n")
        fh.flush()
        os.fsync(fh.fileno())


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


class HeldQueue:
    """Append-only JSONL log of held emails and their resolutions; state is replayed on open."""

    def __init__(self, path: str | os.PathLike):
        self.path = Path(path)
        self._open: dict[str, dict] = {}
        if self.path.exists():
            for line in self.path.read_text(encoding="utf-8").splitlines():
                if not line.strip():
                    continue
                rec = json.loads(line)
                if rec["event"] == "held":
                    self._open[rec["email_id"]] = rec
                else:
                    self._open.pop(rec["email_id"], None)

    def __contains__(self, email_id: str) -> bool:
        return email_id in self._open

    def __len__(self) -> int:
        return len(self._open)

    def pending(self) -> list[dict]:
        return list(self._open.values())

    def add(self, decision: Decision, email: Email) -> None:
        rec = {"event": "held", "at": _now(), **decision.to_json(), "email": email.to_json()}
        if decision.vector is not None:
            rec["vector"] = base64.b64encode(decision.vector.values.astype("<f8").tobytes()).decode()
            rec["schema_hash"] = decision.vector.schema_hash
        _append_jsonl(self.path, rec)
        self._open[decision.email_id] = rec

    def resolve(self, email_id: str, action: str) -> None:
        _append_jsonl(self.path, {"event": action, "at": _now(), "email_id": email_id})
        self._open.pop(email_id, None)

    def decision(self, email_id: str) -> Decision:
        """Rebuild a held decision (with its vector) after a restart."""
        rec = self._open.get(email_id)
        if rec is None:
            raise UnknownEmailId(email_id)
        vector = None
        if "vector" in rec:
            values = np.frombuffer(base64.b64decode(rec["vector"]), dtype="<f8").astype(np.float64)
            vector = FeatureVector(values, rec["schema_hash"])
        return Decision(rec["email_id"], rec["verdict"], rec["margin"], rec["reasons"],
                        rec["user_id"], vector)


class AlertLog:
    def __init__(self, path: str | os.PathLike):
        self.path = Path(path)

    def emit(self, decision: Decision, outcome: VerificationOutcome) -> None:
        _append_jsonl(self.path, {"at": _now(), "email_id": decision.email_id,
                                  "user_id": decision.user_id, "result": outcome.result,
                                  "margin": decision.margin, "reasons": decision.reasons})

    def records(self) -> list[dict]:
        if not self.path.exists():
            return []
        return [json.loads(ln) for ln in self.path.read_text(encoding="utf-8").splitlines() if ln.strip()]


# -- identity-verification responders ---------------------------------------------------


class Responder(Protocol):
    def __call__(self, decision: Decision) -> VerificationOutcome: ...


class AlwaysFail:
    def __call__(self, decision: Decision) -> VerificationOutcome:
        return VerificationOutcome(decision.email_id, FAILED)


class OracleResponder:
    """Scripted answers from a JSON object ``{email_id: result}``; unknown ids time out."""

    def __init__(self, answers: dict[str, str]):
        self.answers = dict(answers)

    @classmethod
    def from_file(cls, path: str | os.PathLike) -> "OracleResponder":
        return cls(json.loads(Path(path).read_text()))

    def __call__(self, decision: Decision) -> VerificationOutcome:
        return VerificationOutcome(decision.email_id, self.answers.get(decision.email_id, TIMEOUT))


class PromptResponder:
    """Simulated second-factor prompt on the terminal."""

    def __init__(self, ask: Callable[[str], str] = input, out=sys.stderr):
        self.ask = ask
        self.out = out

    def __call__(self, decision: Decision) -> VerificationOutcome:
        print(f"Outgoing email {decision.email_id} was flagged ({', '.join(decision.reasons)}).",
              file=self.out)
        try:
            answer = self.ask("Confirm you sent it? [y/N] ").strip().lower()
        except EOFError:
            return VerificationOutcome(decision.email_id, TIMEOUT)
        return VerificationOutcome(decision.email_id, CONFIRMED if answer in ("y", "yes") else FAILED)


def make_responder(kind: str) -> Responder:
    if kind == "prompt":
        return PromptResponder()
    if kind == "always_fail":
        return AlwaysFail()
    if kind.startswith("oracle:"):
        return OracleResponder.from_file(kind[len("oracle:"):])
    raise ValueError(f"unknown responder {kind!r}; use prompt, always_fail or oracle:<path>")
