"""Parsing raw messages into :class:`Email` records and streaming corpora by role."""
from __future__ import annotations

import email
import email.header
import email.utils
import hashlib
import html
import json
import logging
import mailbox
import os
import re
from collections import Counter
from dataclasses import dataclass, field, asdict
from datetime import datetime, timezone, tzinfo
from email.message import Message
from pathlib import Path
from typing import Iterable, Iterator

from .errors import MalformedMessage, MissingFile

log = logging.getLogger(__name__)

FORMATS = ("eml", "mbox", "jsonl")
ROLES = ("user_sent", "org_sent", "external_legit", "attack")

URL_RE = re.compile(r"""(?:\b(?:https?|ftp)://|\bwww\.)[^\s<>"']+""", re.IGNORECASE)
_URL_TRAIL = ".,;:!?)]}'\""
_ADDR_RE = re.compile(r"^[^@\s<>]+@[^@\s<>]+$")
_PHONE_LINE_RE = re.compile(r"(?:\+?\d[\d\s().-]{6,}\d)")
_NAME_LINE_RE = re.compile(r"^[A-Z][a-z]+(?:\s+[A-Z]\.?)?(?:\s+[A-Z][a-z'-]+){0,2}$")
_CLOSING_RE = re.compile(
    r"^(?:thanks|thank you|regards|best|best regards|kind regards|cheers|sincerely|"
    r"yours|take care|warm regards|many thanks)\b[\s,!.]*$",
    re.IGNORECASE,
)
_ORIGINAL_MARKERS = re.compile(
    r"^\s*(?:-{2,}\s*Original Message\s*-{2,}|-{2,}\s*Forwarded by\b|"
    r"-{2,}\s*Forwarded message\s*-{2,}|On .{4,80} wrote:\s*$)",
    re.IGNORECASE | re.MULTILINE,
)
_FORWARD_MARKERS = re.compile(
    r"^\s*-{2,}\s*(?:Forwarded by\b|Forwarded message)", re.IGNORECASE | re.MULTILINE
)
_INLINE_ATTACHMENT = re.compile(r"<<\s*[^<>\n]+\.[A-Za-z0-9]{2,5}\s*>>")
_REPLY_SUBJECT = re.compile(r"^\s*(?:re|aw)\s*(?:\[\d+\])?\s*:", re.IGNORECASE)
_FORWARD_SUBJECT = re.compile(r"^\s*(?:fw|fwd)\s*:", re.IGNORECASE)
_TAG_RE = re.compile(r"<[^>]+>")
_SCRIPT_RE = re.compile(r"<(script|style)\b.*?</\1\s*>", re.IGNORECASE | re.DOTALL)
_BREAK_RE = re.compile(r"<\s*(?:br|/p|/div|/tr|/li)\s*/?>", re.IGNORECASE)


@dataclass(frozen=True, order=True)
class Address:
    local: str
    domain: str

    def __post_init__(self):
        if not self.domain:
            raise ValueError("address domain must be non-empty")
        object.__setattr__(self, "domain", self.domain.lower())

    @classmethod
    def parse(cls, text: str) -> "Address":
        _, addr = email.utils.parseaddr(text.strip())
        addr = addr.strip().strip("<>'\"")
        if not _ADDR_RE.match(addr):
            raise ValueError(f"not an email address: {text!r}")
        local, _, domain = addr.rpartition("@")
        return cls(local, domain)

    def __str__(self) -> str:
        return f"{self.local}@{self.domain}"

    @property
    def key(self) -> str:
        """Lower-cased form used for organization lists."""
        return f"{self.local.lower()}@{self.domain}"


@dataclass(frozen=True)
class Email:
    message_id: str
    sender: Address
    recipients: tuple[Address, ...]
    cc: tuple[Address, ...]
    sent_at: datetime
    subject: str = ""
    body: str = ""
    urls: tuple[str, ...] = ()
    has_attachment: bool = False
    attached_original: bool = False
    is_reply: bool = False
    is_forwarded: bool = False
    has_html: bool = False
    quoted_line_count: int = 0
    indented_line_count: int = 0
    has_signature: bool = False

    @property
    def weekday(self) -> int:
        return self.sent_at.weekday()

    @property
    def hour(self) -> int:
        return self.sent_at.hour

    @property
    def authored_text(self) -> str:
        """Body with quoted lines, appended originals and the signature block removed."""
        return authored_text(self.body)

    def to_json(self) -> dict:
        d = asdict(self)
        d["sender"] = str(self.sender)
        d["recipients"] = [str(a) for a in self.recipients]
        d["cc"] = [str(a) for a in self.cc]
        d["sent_at"] = self.sent_at.isoformat()
        d["urls"] = list(self.urls)
        return d


@dataclass
class ParseOptions:
    """``timezone=None`` keeps the offset carried by the Date header (UTC when absent)."""

    timezone: tzinfo | None = None
    signature_regex: str | None = None


DEFAULT_OPTIONS = ParseOptions()


# -- body helpers ----------------------------------------------------------------


def extract_urls(text: str) -> list[str]:
    urls = []
    for m in URL_RE.finditer(text):
        u = m.group(0).rstrip(_URL_TRAIL)
        if u:
            urls.append(u)
    return urls


def strip_html(text: str) -> str:
    text = _SCRIPT_RE.sub(" ", text)
    text = _BREAK_RE.sub("\n", text)
    text = _TAG_RE.sub("", text)
    return html.unescape(text)


def _is_quoted(line: str) -> bool:
    return line.lstrip().startswith(">")


def _is_indented(line: str) -> bool:
    return bool(line.strip()) and line[:1] in (" ", "\t") and not _is_quoted(line)


def _original_start(lines: list[str]) -> int:
    for i, line in enumerate(lines):
        if _ORIGINAL_MARKERS.match(line):
            return i
    return len(lines)


def signature_start(lines: list[str], regex: str | None = None) -> int | None:
    """Index of the first signature line in ``lines`` or None.

    A ``-- `` delimiter wins; otherwise the last five non-quoted lines are scanned for
    a phone number or a name line following a closing phrase.
    """
    for i in range(len(lines) - 1, -1, -1):
        if lines[i].rstrip("\r") in ("-- ", "--"):
            return i
    if regex:
        pat = re.compile(regex, re.MULTILINE)
        for i, line in enumerate(lines):
            if pat.search(line):
                return i
    tail = [i for i, line in enumerate(lines) if line.strip() and not _is_quoted(line)][-5:]
    for pos, i in enumerate(tail):
        line = lines[i].strip()
        if _PHONE_LINE_RE.search(line) and sum(c.isdigit() for c in line) >= 7:
            # a phone line belongs to a block that starts at the nearest name line above
            for j in reversed(tail[:pos]):
                if _NAME_LINE_RE.match(lines[j].strip()):
                    return j
            return i
        if _NAME_LINE_RE.match(line) and pos > 0 and _CLOSING_RE.match(lines[tail[pos - 1]].strip()):
            return i
    return None


def authored_text(body: str, signature_regex: str | None = None) -> str:
    lines = body.split("\n")
    lines = lines[: _original_start(lines)]
    sig = signature_start(lines, signature_regex)
    if sig is not None:
        lines = lines[:sig]
    return "\n".join(line for line in lines if not _is_quoted(line)).strip("\n")


def _body_flags(body: str, signature_regex: str | None) -> dict:
    lines = body.split("\n")
    return {
        "quoted_line_count": sum(_is_quoted(line) for line in lines),
        "indented_line_count": sum(_is_indented(line) for line in lines),
        "has_signature": signature_start(lines[: _original_start(lines)], signature_regex) is not None,
        "attached_original": bool(_ORIGINAL_MARKERS.search(body)),
    }


# -- RFC 822 ---------------------------------------------------------------------


def _decode_header(value) -> str:
    if value is None:
        return ""
    try:
        parts = email.header.decode_header(str(value))
    except Exception:
        return str(value)
    out = []
    for chunk, charset in parts:
        if isinstance(chunk, bytes):
            out.append(chunk.decode(charset or "utf-8", errors="replace") if _known(charset) else chunk.decode("utf-8", errors="replace"))
        else:
            out.append(chunk)
    return "".join(out)


def _known(charset: str | None) -> bool:
    if not charset:
        return True
    try:
        "".encode(charset)
        return True
    except LookupError:
        return False


def _addresses(msg: Message, *names: str) -> tuple[Address, ...]:
    values = []
    for name in names:
        values.extend(msg.get_all(name) or [])
    out = []
    seen = set()
    for _, addr in email.utils.getaddresses([_decode_header(v) for v in values]):
        try:
            a = Address.parse(addr)
        except ValueError:
            continue
        if a.key not in seen:
            seen.add(a.key)
            out.append(a)
    return tuple(out)


def _part_text(part: Message) -> str:
    payload = part.get_payload(decode=True)
    if payload is None:
        payload = part.get_payload()
        return payload if isinstance(payload, str) else ""
    charset = part.get_content_charset() or "utf-8"
    if not _known(charset):
        charset = "utf-8"
    return payload.decode(charset, errors="replace")


def _walk_body(msg: Message) -> tuple[str, bool, bool, bool]:
    """Return (text, has_html, has_attachment, has_rfc822_part)."""
    plain, html_parts = [], []
    has_attachment = has_rfc822 = False
    for part in msg.walk():
        ctype = part.get_content_type()
        if ctype == "message/rfc822":
            has_rfc822 = True
            continue
        if part.is_multipart():
            continue
        disposition = (part.get("Content-Disposition") or "").lower()
        if "attachment" in disposition or (part.get_filename() and ctype not in ("text/plain", "text/html")):
            has_attachment = True
            continue
        if ctype == "text/plain":
            plain.append(_part_text(part))
        elif ctype == "text/html":
            html_parts.append(_part_text(part))
    has_html = bool(html_parts)
    if plain:
        text = "\n".join(plain)
    elif html_parts:
        text = strip_html("\n".join(html_parts))
    else:
        text = ""
    return text, has_html, has_attachment, has_rfc822


def _parse_date(raw: str | None, tz: tzinfo | None) -> datetime:
    if not raw:
        raise MalformedMessage("missing Date header")
    try:
        dt = email.utils.parsedate_to_datetime(raw.strip())
    except (TypeError, ValueError, IndexError) as exc:
        raise MalformedMessage(f"unparseable Date header {raw!r}") from exc
    if dt is None:
        raise MalformedMessage(f"unparseable Date header {raw!r}")
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    if tz is not None:
        dt = dt.astimezone(tz)
    return dt


def _normalize_newlines(text: str) -> str:
    return text.replace("\r\n", "\n").replace("\r", "\n")


def _from_message(msg: Message, raw: bytes, opts: ParseOptions) -> Email:
    senders = _addresses(msg, "From")
    if not senders:
        raise MalformedMessage("missing or unparseable From header")
    sent_at = _parse_date(msg.get("Date"), opts.timezone)
    subject = _decode_header(msg.get("Subject")).strip()
    text, has_html, has_attachment, has_rfc822 = _walk_body(msg)
    body = _normalize_newlines(text).strip("\n")
    flags = _body_flags(body, opts.signature_regex)
    message_id = (msg.get("Message-ID") or "").strip()
    if not message_id:
        message_id = "<sha1-" + hashlib.sha1(raw).hexdigest() + ">"
    return Email(
        message_id=message_id,
        sender=senders[0],
        recipients=_addresses(msg, "To"),
        cc=_addresses(msg, "Cc"),
        sent_at=sent_at,
        subject=subject,
        body=body,
        urls=tuple(extract_urls(body)),
        has_attachment=has_attachment or bool(_INLINE_ATTACHMENT.search(body)),
        attached_original=flags["attached_original"] or has_rfc822,
        is_reply=bool(_REPLY_SUBJECT.match(subject) or msg.get("In-Reply-To")),
        is_forwarded=bool(_FORWARD_SUBJECT.match(subject) or _FORWARD_MARKERS.search(body)),
        has_html=has_html,
        quoted_line_count=flags["quoted_line_count"],
        indented_line_count=flags["indented_line_count"],
        has_signature=flags["has_signature"],
    )


def _from_json(obj: dict, opts: ParseOptions) -> Email:
    try:
        sender = Address.parse(obj["sender"])
        sent_at = datetime.fromisoformat(obj["sent_at"])
    except (KeyError, ValueError, TypeError) as exc:
        raise MalformedMessage(f"bad JSON email record: {exc}") from exc
    if sent_at.tzinfo is None:
        sent_at = sent_at.replace(tzinfo=timezone.utc)
    if opts.timezone is not None:
        sent_at = sent_at.astimezone(opts.timezone)

    def addrs(key):
        out = []
        for a in obj.get(key) or []:
            try:
                out.append(Address.parse(a))
            except ValueError:
                log.debug("dropping bad address %r", a)
        return tuple(out)

    body = _normalize_newlines(obj.get("body", ""))
    derived = _body_flags(body, opts.signature_regex)
    subject = obj.get("subject", "")

    def flag(key, default):
        value = obj.get(key)
        return default if value is None else value

    message_id = obj.get("message_id") or "<sha1-" + hashlib.sha1(json.dumps(obj, sort_keys=True).encode()).hexdigest() + ">"
    return Email(
        message_id=message_id,
        sender=sender,
        recipients=addrs("recipients"),
        cc=addrs("cc"),
        sent_at=sent_at,
        subject=subject,
        body=body,
        urls=tuple(extract_urls(body)),
        has_attachment=bool(flag("has_attachment", False)),
        attached_original=bool(flag("attached_original", derived["attached_original"])),
        is_reply=bool(flag("is_reply", bool(_REPLY_SUBJECT.match(subject)))),
        is_forwarded=bool(flag("is_forwarded", bool(_FORWARD_SUBJECT.match(subject)))),
        has_html=bool(flag("has_html", False)),
        quoted_line_count=int(flag("quoted_line_count", derived["quoted_line_count"])),
        indented_line_count=int(flag("indented_line_count", derived["indented_line_count"])),
        has_signature=bool(flag("has_signature", derived["has_signature"])),
    )


def parse_email(raw: bytes | str, format: str = "eml", options: ParseOptions | None = None) -> Email:
    """Parse one message. ``format`` is ``eml``, ``mbox`` (one message, envelope line
    optional) or ``jsonl`` (one JSON object)."""
    opts = options or DEFAULT_OPTIONS
    if isinstance(raw, str):
        raw = raw.encode("utf-8", errors="replace")
    if format == "jsonl":
        try:
            obj = json.loads(raw.decode("utf-8", errors="replace"))
        except json.JSONDecodeError as exc:
            raise MalformedMessage(f"invalid JSON: {exc}") from exc
        if not isinstance(obj, dict):
            raise MalformedMessage("JSON email must be an object")
        return _from_json(obj, opts)
    if format not in ("eml", "mbox"):
        raise ValueError(f"unknown format {format!r}")
    if format == "mbox" and raw.startswith(b"From "):
        raw = raw.split(b"\n", 1)[1] if b"\n" in raw else b""
    try:
        msg = email.message_from_bytes(raw)
    except Exception as exc:  # the compat32 parser rarely raises; treat anything as malformed
        raise MalformedMessage(str(exc)) from exc
    return _from_message(msg, raw, opts)


def with_sender(em: Email, sender: Address) -> Email:
    """Copy of ``em`` re-attributed to ``sender`` (From: rewrite)."""
    from dataclasses import replace

    return replace(em, sender=sender)


# -- corpora ---------------------------------------------------------------------


@dataclass(frozen=True)
class ManifestEntry:
    path: str
    format: str
    role: str
    user_id: str | None = None

    def __post_init__(self):
        if self.format not in FORMATS:
            raise ValueError(f"unknown format {self.format!r}")
        if self.role not in ROLES:
            raise ValueError(f"unknown role {self.role!r}")
        if self.role == "user_sent" and not self.user_id:
            raise ValueError(f"user_sent entry {self.path!r} needs a user_id")


@dataclass
class CorpusManifest:
    entries: list[ManifestEntry] = field(default_factory=list)
    dedupe: bool = False

    @classmethod
    def load(cls, path: str | os.PathLike) -> "CorpusManifest":
        path = Path(path)
        if not path.exists():
            raise MissingFile(path)
        data = json.loads(path.read_text())
        base = path.parent
        entries = []
        for e in data.get("entries", []):
            p = Path(e["path"])
            if not p.is_absolute():
                p = base / p
            entries.append(ManifestEntry(str(p), e["format"], e["role"], e.get("user_id")))
        return cls(entries, bool(data.get("dedupe", False)))

    def save(self, path: str | os.PathLike) -> None:
        data = {"dedupe": self.dedupe, "entries": [asdict(e) for e in self.entries]}
        Path(path).write_text(json.dumps(data, indent=1))


def _natural_key(p: Path):
    return [int(t) if t.isdigit() else t for t in re.split(r"(\d+)", str(p))]


def _files(path: Path) -> list[Path]:
    if path.is_dir():
        return sorted((p for p in path.rglob("*") if p.is_file()), key=_natural_key)
    return [path]


def _raw_messages(entry: ManifestEntry) -> Iterator[tuple[str, bytes]]:
    for f in _files(Path(entry.path)):
        if entry.format == "eml":
            yield str(f), f.read_bytes()
        elif entry.format == "jsonl":
            with open(f, "rb") as fh:
                for n, line in enumerate(fh):
                    if line.strip():
                        yield f"{f}:{n + 1}", line
        else:
            box = mailbox.mbox(str(f), create=False)
            try:
                for n, key in enumerate(box.iterkeys()):
                    yield f"{f}#{n}", box.get_bytes(key)
            finally:
                box.close()


@dataclass
class CorpusStats:
    per_role: Counter = field(default_factory=Counter)
    skipped: int = 0
    duplicates: int = 0

    @property
    def total(self) -> int:
        return sum(self.per_role.values())


class CorpusStream:
    """Iterable over ``(role, user_id, Email)`` in manifest, file, then message order.

    Missing paths are reported when the stream is created; malformed messages are
    skipped and counted in :attr:`stats`.
    """

    def __init__(self, manifest: CorpusManifest, options: ParseOptions | None = None):
        for e in manifest.entries:
            if not Path(e.path).exists():
                raise MissingFile(e.path)
        self.manifest = manifest
        self.options = options or DEFAULT_OPTIONS
        self.stats = CorpusStats()

    def __iter__(self) -> Iterator[tuple[str, str | None, Email]]:
        self.stats = CorpusStats()
        seen: set[tuple] = set()
        for entry in self.manifest.entries:
            for where, raw in _raw_messages(entry):
                try:
                    em = parse_email(raw, entry.format, self.options)
                except MalformedMessage as exc:
                    self.stats.skipped += 1
                    log.warning("skipping malformed message %s: %s", where, exc)
                    continue
                if self.manifest.dedupe:
                    key = (entry.role, entry.user_id, em.sent_at, em.subject,
                           hashlib.sha1(em.body.encode()).digest())
                    if key in seen:
                        self.stats.duplicates += 1
                        continue
                    seen.add(key)
                self.stats.per_role[entry.role] += 1
                yield entry.role, entry.user_id, em
        log.info("corpus loaded: %s, skipped=%d, duplicates=%d",
                 dict(self.stats.per_role), self.stats.skipped, self.stats.duplicates)


def load_corpus(manifest: CorpusManifest, options: ParseOptions | None = None) -> CorpusStream:
    return CorpusStream(manifest, options)


ENRON_SENT_FOLDERS = ("sent", "sent_items", "_sent_mail")


def enron_manifest(maildir: str | os.PathLike, folders: Iterable[str] = ENRON_SENT_FOLDERS) -> CorpusManifest:
    """Manifest over an unpacked Enron ``maildir/``: one user per top-level directory,
    sent folders only, duplicates across folders collapsed."""
    root = Path(maildir)
    if not root.is_dir():
        raise MissingFile(root)
    entries = []
    for user_dir in sorted(p for p in root.iterdir() if p.is_dir()):
        for name in folders:
            folder = user_dir / name
            if folder.is_dir():
                entries.append(ManifestEntry(str(folder), "eml", "user_sent", user_dir.name))
    return CorpusManifest(entries, dedupe=True)


def write_jsonl(emails: Iterable[Email], path: str | os.PathLike) -> int:
    n = 0
    with open(path, "w") as fh:
        for em in emails:
            fh.write(json.dumps(em.to_json()) + "\n")
            n += 1
    return n


def to_rfc822(em: Email) -> bytes:
    """Render an Email back to RFC 822 bytes.

    The body goes out as text/plain; an HTML alternative and an attachment part are added
    when the flags call for them, so that parsing the output restores those flags.
    """
    headers = [
        f"Message-ID: {em.message_id}",
        f"Date: {email.utils.format_datetime(em.sent_at)}",
        f"From: {em.sender}",
    ]
    if em.recipients:
        headers.append("To: " + ", ".join(str(a) for a in em.recipients))
    if em.cc:
        headers.append("Cc: " + ", ".join(str(a) for a in em.cc))
    headers.append(f"Subject: {em.subject}")
    if not (em.has_html or em.has_attachment):
        headers.append("Content-Type: text/plain; charset=utf-8")
        return ("\n".join(headers) + "\n\n" + em.body + "\n").encode("utf-8")
    boundary = "=_" + hashlib.sha1(em.message_id.encode()).hexdigest()
    headers += ["MIME-Version: 1.0", f'Content-Type: multipart/mixed; boundary="{boundary}"']
    parts = ["Content-Type: text/plain; charset=utf-8\n\n" + em.body + "\n"]
    if em.has_html:
        parts.append("Content-Type: text/html; charset=utf-8\n\n<pre>" + html.escape(em.body) + "</pre>\n")
    if em.has_attachment:
        parts.append('Content-Type: application/octet-stream\n'
                     'Content-Disposition: attachment; filename="attachment.bin"\n\n\n')
    body = "".join(f"--{boundary}\n{part}" for part in parts) + f"--{boundary}--\n"
    return ("\n".join(headers) + "\n\n" + body).encode("utf-8")
