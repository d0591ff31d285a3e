"""Deterministic synthetic organization corpus for tests, demos and CI-scale experiments.

Each simulated employee gets a persona: vocabulary preferences, sentence length,
punctuation quirks, greeting/closing/signature habits, working hours and a
contact list with skewed frequencies. External senders and phishing-style attack
emails are generated from separate templates. Nothing here is fitted to the
detector; personas are sampled once from broad priors.
"""
from __future__ import annotations

import json
import os
from dataclasses import dataclass
from datetime import datetime, timedelta, timezone
from pathlib import Path

import numpy as np

from .email_model import CorpusManifest, Email, ManifestEntry, parse_email, to_rfc822
from .features.resources import default_context_words, functional_words

FIRST = ("alex", "blair", "casey", "dana", "ellis", "frankie", "gale", "harper", "indy", "jordan",
         "kai", "lee", "morgan", "noel", "oakley", "parker", "quinn", "reese", "sam", "taylor",
         "umi", "val", "wren", "xen", "yael", "zion", "arden", "bay", "cody", "drew")
LAST = ("adams", "baker", "clark", "diaz", "evans", "fisher", "garcia", "hill", "ito", "jones",
        "kim", "lopez", "moore", "nash", "owens", "patel", "reyes", "shaw", "tran", "underwood",
        "vance", "walsh", "young", "zhang")

CONTENT = (
    "contract meeting report budget forecast review schedule draft numbers gas power pipeline "
    "deal trade desk curve position volume price capacity transport storage counterparty credit "
    "legal memo agreement amendment invoice payment settlement quarter project team plan update "
    "presentation slides analysis model data spreadsheet call conference notes agenda summary "
    "issue question answer proposal terms rate index market region west east north south "
    "customer supplier vendor approval signature copy version file document weekend office "
    "travel flight hotel dinner lunch coffee interview candidate offer hire training policy "
    "system access database server outage release test change request ticket support "
    "risk exposure limit hedge option swap spread basis delivery point tariff filing hearing"
).split()

PHISH_OPENERS = (
    "Dear customer,", "Dear user,", "Attention:", "Hello,", "Dear account holder,",
    "Greetings,", "URGENT NOTICE", "Dear valued member,", "Good day,", "Dear Sir/Madam,",
)
PHISH_BODIES = (
    "Your {thing} has been {state} due to {reason}. To restore access please {action} at {url} within {n} hours.",
    "We detected unusual activity on your {thing}. Please {action} immediately using the secure link below.\n{url}",
    "Your mailbox has exceeded its storage limit. Click {url} to {action} or your {thing} will be {state}.",
    "A payment of ${amount} is pending on your {thing}. If you did not authorize this, {action} here: {url}",
    "Kindly review the attached invoice #{n}{amount} and confirm payment details at {url} before end of day.",
    "Your package could not be delivered. {action} at {url} to reschedule delivery.",
    "IT department: all staff must {action} for the new security policy. Go to {url} now!!",
    "Congratulations! You have been selected to receive a ${amount} reward. {action} at {url}.",
    "Please see the shared document regarding {reason}. Sign in at {url} to view it.",
    "Your password expires today. {action} to keep your {thing} active: {url}",
)
PHISH_FILL = {
    "thing": ("account", "mailbox", "card", "online banking", "email account", "profile", "subscription"),
    "state": ("suspended", "locked", "limited", "disabled", "closed", "frozen"),
    "reason": ("a security review", "suspicious login attempts", "a billing problem",
               "an incomplete verification", "a policy update", "the quarterly audit"),
    "action": ("verify your information", "confirm your identity", "update your details",
               "log in", "validate your credentials", "click the link"),
}
PHISH_DOMAINS = ("secure-verify-login.com", "account-update.net", "mail-support-center.org",
                 "billing-confirm.info", "docs-share.biz", "parcel-track.co", "it-helpdesk.site",
                 "rewards-center.top", "webmail-upgrade.xyz", "banking-secure.online")
PHISH_CLOSINGS = ("Thank you,\nSecurity Team", "Regards,\nCustomer Service", "IT Support",
                  "Sincerely,\nAccount Services", "Best regards,\nThe Admin Team", "")

GREETINGS = ("Hi {n},", "Hello {n},", "{n},", "Dear {n},", "Hey {n}", "{N} -", "")
CLOSINGS = ("Thanks,", "Best,", "Regards,", "Cheers,", "Thank you,", "Thanks!", "-", "")


@dataclass
class Persona:
    name: str
    address: str
    word_probs: np.ndarray
    vocab: tuple[str, ...]
    sent_len: float
    sents_per_par: float
    pars: float
    greeting: str
    closing: str
    signature: str
    lower_start: float
    exclaim: float
    emoticon: float
    ellipsis: float
    double_space: float
    bullets: float
    habit: float
    hour_mean: float
    hour_sd: float
    weekday_p: np.ndarray
    contacts: tuple[str, ...]
    contact_p: np.ndarray
    cc_rate: float
    url_rate: float
    url_domains: tuple[str, ...]
    reply_rate: float
    forward_rate: float
    attach_rate: float
    multi_rate: float


def _persona(rng: np.random.Generator, name: str, address: str, peers: list[str],
             externals: list[str], org_urls: list[str]) -> Persona:
    fw = [w for w in functional_words() if " " not in w and "'" not in w]
    ctx = list(default_context_words())
    vocab = tuple(fw + list(CONTENT) + ctx)
    # functional words keep a common base rate; personal preference tilts it
    base = np.concatenate([np.full(len(fw), 3.0), np.full(len(CONTENT), 1.0), np.full(len(ctx), 0.6)])
    probs = base * rng.gamma(2.0, 0.5, size=len(vocab))
    probs /= probs.sum()
    k = int(rng.integers(6, 25))
    pool = peers + externals
    contacts = tuple(rng.choice(pool, size=min(k, len(pool)), replace=False))
    cp = 1.0 / np.arange(1, len(contacts) + 1) ** rng.uniform(0.8, 1.6)
    first, _, last = name.partition(" ")
    sig_kind = int(rng.integers(4))
    signature = ("", first.capitalize(), f"-- \n{first.capitalize()} {last.capitalize()}",
                 f"{first.capitalize()} {last.capitalize()}\nPhone: 713-{rng.integers(100, 999)}-{rng.integers(1000, 9999)}")[sig_kind]
    wd = np.array([1.0, 1.0, 1.0, 1.0, 1.0, 0.08, 0.05]) * rng.uniform(0.5, 1.5, 7)
    return Persona(
        name=name, address=address, word_probs=probs, vocab=vocab,
        sent_len=float(rng.uniform(6, 20)), sents_per_par=float(rng.uniform(1, 4)),
        pars=float(rng.uniform(1, 3)),
        greeting=GREETINGS[int(rng.integers(len(GREETINGS)))],
        closing=CLOSINGS[int(rng.integers(len(CLOSINGS)))], signature=signature,
        lower_start=float(rng.beta(0.5, 4)), exclaim=float(rng.beta(0.7, 6)),
        emoticon=float(rng.beta(0.4, 8)), ellipsis=float(rng.beta(0.5, 6)),
        double_space=float(rng.beta(0.5, 2)), bullets=float(rng.beta(0.4, 8)),
        habit=float(rng.beta(3, 2)),
        hour_mean=float(rng.uniform(8, 17)), hour_sd=float(rng.uniform(1, 4)),
        weekday_p=wd / wd.sum(), contacts=contacts, contact_p=cp / cp.sum(),
        cc_rate=float(rng.beta(1, 5)), url_rate=float(rng.beta(1, 8)),
        url_domains=tuple(rng.choice(org_urls, size=3, replace=False)),
        reply_rate=float(rng.beta(2, 3)), forward_rate=float(rng.beta(1, 8)),
        attach_rate=float(rng.beta(1, 6)), multi_rate=float(rng.beta(1, 4)),
    )


def _sentence(rng, p: Persona) -> str:
    n = max(2, int(rng.normal(p.sent_len, p.sent_len / 3)))
    words = list(rng.choice(p.vocab, size=n, p=p.word_probs))
    if rng.random() < 0.15:
        words.insert(int(rng.integers(len(words))), str(int(rng.integers(2, 5000))))
    if rng.random() < 0.2 and n > 5:
        words[int(rng.integers(1, n - 1))] += ","
    s = " ".join(words)
    if rng.random() >= p.lower_start:
        s = s[0].upper() + s[1:]
    end = "."
    if rng.random() < p.exclaim:
        end = "!"
    elif rng.random() < 0.12:
        end = "?"
    elif rng.random() < p.ellipsis:
        end = "..."
    s += end
    if rng.random() < p.emoticon:
        s += " " + (":)", ";)", ":-)", ":D")[int(rng.integers(4))]
    return s


def _body(rng, p: Persona, to_name: str) -> str:
    parts = []
    if p.greeting and rng.random() < p.habit:
        parts.append(p.greeting.format(n=to_name.capitalize(), N=to_name.upper()))
    short = rng.random() < 0.3
    for _ in range(1 if short else max(1, int(rng.poisson(p.pars)))):
        k = 1 if short else max(1, int(rng.poisson(p.sents_per_par)))
        sep = "  " if rng.random() < p.double_space else " "
        if rng.random() < p.bullets:
            parts.append("\n".join("- " + _sentence(rng, p) for _ in range(k)))
        else:
            parts.append(sep.join(_sentence(rng, p) for _ in range(k)))
    tail = "\n".join(x for x in (p.closing, p.signature) if x and rng.random() < p.habit)
    if tail:
        parts.append(tail)
    return "\n\n".join(parts)


def _quoted(rng, p: Persona) -> str:
    lines = [_sentence(rng, p) for _ in range(int(rng.integers(1, 4)))]
    return "\n\n-----Original Message-----\n" + "\n".join("> " + ln for ln in lines)


def _when(rng, p: Persona, start: datetime, span_days: int) -> datetime:
    for _ in range(100):
        day = int(rng.integers(span_days))
        t = start + timedelta(days=day)
        if rng.random() < p.weekday_p[t.weekday()] * 7 / 1.2:
            break
    hour = int(np.clip(round(rng.normal(p.hour_mean, p.hour_sd)), 0, 23))
    return t.replace(hour=hour, minute=int(rng.integers(60)), second=int(rng.integers(60)))


def _persona_email(rng, p: Persona, idx: int, start: datetime, span: int) -> dict:
    n_to = 1 + (int(rng.geometric(0.5)) if rng.random() < p.multi_rate else 0)
    to = list(dict.fromkeys(rng.choice(p.contacts, size=min(n_to, len(p.contacts)), p=p.contact_p)))
    cc = []
    if rng.random() < p.cc_rate:
        cc = [str(c) for c in rng.choice(p.contacts, size=1) if c not in to]
    to_name = str(to[0]).split("@")[0].split(".")[0]
    body = _body(rng, p, to_name)
    if rng.random() < p.url_rate:
        d = p.url_domains[int(rng.integers(len(p.url_domains)))]
        body += f"\n\nSee http://www.{d}/{rng.choice(CONTENT)}"
    subject = " ".join(rng.choice(CONTENT, size=int(rng.integers(1, 5)))).capitalize()
    reply = rng.random() < p.reply_rate
    forward = not reply and rng.random() < p.forward_rate
    if reply:
        subject = "RE: " + subject
        body += _quoted(rng, p)
    elif forward:
        subject = "FW: " + subject
        body += "\n\n---------------------- Forwarded by " + p.name + " ----------------------\n" + _sentence(rng, p)
    if rng.random() < p.attach_rate:
        body += f"\n\n <<{rng.choice(CONTENT)}_{int(rng.integers(1, 99))}.xls>>"
    return {
        "message_id": f"<{idx}.{p.address}>",
        "sender": p.address,
        "recipients": [str(a) for a in to],
        "cc": cc,
        "sent_at": _when(rng, p, start, span).isoformat(),
        "subject": subject,
        "body": body,
        "has_attachment": "<<" in body,
    }


def _attack_email(rng, idx: int, start: datetime, span: int) -> dict:
    fill = {k: v[int(rng.integers(len(v)))] for k, v in PHISH_FILL.items()}
    domain = PHISH_DOMAINS[int(rng.integers(len(PHISH_DOMAINS)))]
    url = f"http://{domain}/{rng.choice(('login', 'verify', 'account', 'secure', 'update'))}?id={int(rng.integers(10**6))}"
    template = PHISH_BODIES[int(rng.integers(len(PHISH_BODIES)))]
    text = template.format(url=url, n=int(rng.integers(2, 72)), amount=f"{int(rng.integers(50, 5000))}.00", **fill)
    parts = [PHISH_OPENERS[int(rng.integers(len(PHISH_OPENERS)))], text]
    if rng.random() < 0.5:
        parts.append("Failure to do so will result in permanent suspension.")
    closing = PHISH_CLOSINGS[int(rng.integers(len(PHISH_CLOSINGS)))]
    if closing:
        parts.append(closing)
    t = start + timedelta(days=int(rng.integers(span)), hours=int(rng.integers(24)),
                          minutes=int(rng.integers(60)))
    victims = [f"{rng.choice(FIRST)}{int(rng.integers(100))}@{d}"
               for d in rng.choice(("mail.example", "webmail.example", "isp.example"), size=int(rng.integers(1, 4)))]
    return {
        "message_id": f"<attack-{idx}@{domain}>",
        "sender": f"noreply@{domain}",
        "recipients": victims,
        "cc": [],
        "sent_at": t.isoformat(),
        "subject": fill["thing"].capitalize() + " " + ("notice", "alert", "verification", "update")[int(rng.integers(4))],
        "body": "\n\n".join(parts),
        "has_html": bool(rng.random() < 0.4),
    }


@dataclass
class SyntheticOrg:
    users: dict[str, list[Email]]
    external: list[Email]
    attacks: list[Email]

    def stream(self):
        for u in sorted(self.users):
            for em in self.users[u]:
                yield "user_sent", u, em
        for em in self.external:
            yield "external_legit", None, em
        for em in self.attacks:
            yield "attack", None, em

    def write(self, root: str | os.PathLike, format: str = "jsonl") -> Path:
        """Write the corpus plus ``manifest.json`` under ``root``; returns the manifest path."""
        root = Path(root)
        root.mkdir(parents=True, exist_ok=True)
        entries = []

        def dump(emails: list[Email], rel: str) -> str:
            if format == "jsonl":
                path = root / f"{rel}.jsonl"
                path.write_text("".join(json.dumps(e.to_json()) + "\n" for e in emails))
            elif format == "mbox":
                path = root / f"{rel}.mbox"
                with open(path, "wb") as fh:
                    for e in emails:
                        fh.write(b"From " + str(e.sender).encode() + b" Thu Jan  1 00:00:00 2001\n")
                        fh.write(to_rfc822(e).replace(b"\nFrom ", b"\n>From ") + b"\n")
            else:
                path = root / rel
                path.mkdir(parents=True, exist_ok=True)
                for i, e in enumerate(emails):
                    (path / f"{i + 1}.eml").write_bytes(to_rfc822(e))
            return path.name

        for u in sorted(self.users):
            entries.append(ManifestEntry(dump(self.users[u], f"user_{u}"), format, "user_sent", u))
        entries.append(ManifestEntry(dump(self.external, "external"), format, "external_legit", None))
        entries.append(ManifestEntry(dump(self.attacks, "attacks"), format, "attack", None))
        manifest = root / "manifest.json"
        CorpusManifest(entries).save(manifest)
        return manifest


def generate_org(n_users: int = 10, emails_per_user: int | tuple[int, int] = 300, n_external: int = 300,
                 n_attacks: int = 100, seed: int = 0, domain: str = "corp.example") -> SyntheticOrg:
    rng = np.random.default_rng(seed)
    start = datetime(2001, 1, 1, tzinfo=timezone.utc)
    span = 700
    names = []
    while len(names) < n_users + 20:
        n = f"{rng.choice(FIRST)} {rng.choice(LAST)}"
        if n not in names:
            names.append(n)
    addresses = [n.replace(" ", ".") + "@" + domain for n in names]
    employees = addresses[:n_users]
    extra_staff = addresses[n_users:]
    partners = [f"{rng.choice(FIRST)}.{rng.choice(LAST)}@{d}"
                for d in rng.choice(("partner-a.example", "bank.example", "law.example",
                                     "energy-co.example", "consult.example"), size=40)]
    org_urls = ["corp.example", "intranet.corp.example", "news.example", "weather.example",
                "markets.example", "travel.example", "docs.example", "reports.example"]
    users = {}
    for i, addr in enumerate(employees):
        count = emails_per_user if isinstance(emails_per_user, int) else int(rng.integers(*emails_per_user))
        p = _persona(rng, names[i], addr, [a for a in employees + extra_staff if a != addr], partners, org_urls)
        user_id = addr.split("@")[0]
        users[user_id] = [parse_email(json.dumps(_persona_email(rng, p, j, start, span)), "jsonl")
                          for j in range(count)]
    ext_personas = [_persona(rng, f"{rng.choice(FIRST)} {rng.choice(LAST)}", partners[k], employees,
                             partners, org_urls) for k in range(8)]
    external = []
    for j in range(n_external):
        p = ext_personas[j % len(ext_personas)]
        external.append(parse_email(json.dumps(_persona_email(rng, p, j, start, span)), "jsonl"))
    attacks = [parse_email(json.dumps(_attack_email(rng, j, start, span)), "jsonl") for j in range(n_attacks)]
    return SyntheticOrg(users, external, attacks)
