"""Command-line entry point: ``sendguard <command> ...``.

Settings come from a JSON config (``--config`` or ``$SENDGUARD_CONFIG``); flags win.
Logs go to stderr, data to stdout and files.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from . import evaluation as ev
from .context import OrgContext, build_context
from .email_model import CorpusManifest, enron_manifest, load_corpus, parse_email
from .errors import MissingFile, SendGuardError
from .pipeline import (EXIT_ERROR, AlertLog, HeldQueue, check_outgoing, make_responder,
                       resolve_verification)
from .profile import NegativePools, ProfileStore, TrainConfig, retrain, train_profile

log = logging.getLogger("sendguard")

CONFIG_ENV = "SENDGUARD_CONFIG"
EXIT_OK, EXIT_USAGE = 0, 2


@dataclass
class Config:
    manifest: str = "manifest.json"
    context: str = "context.json"
    profiles_dir: str = "profiles"
    state_dir: str = "state"
    words_file: str | None = None
    C: float = 1.0
    tol: float = 1e-3
    max_passes: int = 500
    retrain_threshold: int = 50
    min_history: int = 50
    seed: int | None = None
    responder: str = "always_fail"

    def __post_init__(self):
        for name in ("C", "tol", "max_passes", "retrain_threshold", "min_history"):
            if getattr(self, name) <= 0:
                raise ValueError(f"config value {name} must be positive")
        if self.seed is not None and self.seed < 0:
            raise ValueError("seed must be non-negative")

    @property
    def train(self) -> TrainConfig:
        return TrainConfig(self.C, self.tol, self.max_passes, self.retrain_threshold, self.min_history)

    @classmethod
    def resolve(cls, args: argparse.Namespace) -> "Config":
        values: dict = {}
        path = args.config or os.environ.get(CONFIG_ENV)
        if path:
            if not Path(path).exists():
                raise MissingFile(path)
            values.update(json.loads(Path(path).read_text()))
        known = {f.name for f in fields(cls)}
        unknown = set(values) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        for name in known:
            flag = getattr(args, name, None)
            if flag is not None:
                values[name] = flag
        return cls(**values)


# -- helpers -----------------------------------------------------------------------


def _words(cfg: Config):
    if not cfg.words_file:
        return None
    p = Path(cfg.words_file)
    if not p.exists():
        raise MissingFile(p)
    text = p.read_text()
    if p.suffix == ".json":
        data = json.loads(text)
        return data["words"] if isinstance(data, dict) else data
    return [ln.strip() for ln in text.splitlines() if ln.strip()]


def _stream(cfg: Config):
    return load_corpus(CorpusManifest.load(cfg.manifest))


def _context(cfg: Config) -> OrgContext:
    if not Path(cfg.context).exists():
        raise MissingFile(cfg.context)
    return OrgContext.load(cfg.context)


def _need_seed(cfg: Config) -> int:
    if cfg.seed is None:
        raise ValueError("experiment commands require --seed (or 'seed' in the config)")
    return cfg.seed


def _users(data: ev.OrgData, args, minimum: int) -> list[str]:
    if getattr(args, "users", None):
        wanted = [u.strip() for u in args.users.split(",") if u.strip()]
        missing = [u for u in wanted if u not in data.users]
        if missing:
            raise ValueError(f"unknown users: {missing}")
        return wanted
    users = data.eligible_users(minimum)
    limit = getattr(args, "max_users", None)
    return users[:limit] if limit else users


def _ints(text: str | None) -> list[int]:
    return [int(x) for x in text.split(",")] if text else []


def _write(out_dir: Path | None, name: str, text: str) -> None:
    if out_dir is None:
        return
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / name).write_text(text)


# -- commands ----------------------------------------------------------------------


def cmd_build_context(cfg: Config, args) -> int:
    stream = _stream(cfg)
    legit = (em for role, _, em in stream if role in ("user_sent", "org_sent"))
    ctx = build_context(legit, _words(cfg))
    Path(cfg.context).parent.mkdir(parents=True, exist_ok=True)
    ctx.save(cfg.context)
    nu, na, nd = ctx.sizes
    print(f"url_domains={nu} contacted_addresses={na} contacted_domains={nd}")
    return EXIT_OK


def _org_data(cfg: Config, ctx: OrgContext | None = None) -> ev.OrgData:
    return ev.OrgData.from_corpus(_stream(cfg), _words(cfg), ctx)


def cmd_train(cfg: Config, args) -> int:
    ctx = _context(cfg)
    data = _org_data(cfg, ctx)
    store = ProfileStore(cfg.profiles_dir)
    seed = cfg.seed or 0
    if args.all:
        users = sorted(data.users)
    elif args.user:
        if args.user not in data.users:
            raise ValueError(f"user {args.user!r} not in the corpus")
        users = [args.user]
    else:
        raise ValueError("train needs a user id or --all")
    status = EXIT_OK
    for u in users:
        try:
            p = train_profile(u, data.users[u], data.pools(), ctx, data.schema, seed, cfg.train,
                              data.addresses[u])
        except SendGuardError as exc:
            log.warning("skipping %s: %s", u, exc)
            if not args.all:
                raise
            continue
        path = store.save(p)
        print(json.dumps({"user_id": u, "positives": p.positives.shape[0], "iterations": p.model.iterations,
                          "converged": p.model.converged, "path": str(path)}))
    return status


def cmd_check(cfg: Config, args) -> int:
    path = Path(args.email_file)
    if not path.exists():
        raise MissingFile(path)
    email = parse_email(path.read_bytes(), args.format)
    store = ProfileStore(cfg.profiles_dir)
    user_id = args.user or email.sender.key
    profile = store.find(user_id)
    held = HeldQueue(Path(cfg.state_dir) / "held.jsonl")
    ctx = _context(cfg) if profile is not None and profile.trained else OrgContext()
    decision = check_outgoing(email, profile, ctx, held)
    out = decision.to_json()
    if decision.verdict == "challenged" and args.verify:
        outcome = make_responder(cfg.responder)(decision)
        out["verification"] = outcome.result
        out["action"] = resolve_verification(decision, outcome, profile, held,
                                             AlertLog(Path(cfg.state_dir) / "alerts.jsonl"))
    if profile is not None and (decision.verdict == "accepted" or out.get("action") == "released"):
        store.save(profile)
    print(json.dumps(out))
    return decision.exit_code


def cmd_verify(cfg: Config, args) -> int:
    """Resolve every held email through the configured responder."""
    held = HeldQueue(Path(cfg.state_dir) / "held.jsonl")
    alerts = AlertLog(Path(cfg.state_dir) / "alerts.jsonl")
    store = ProfileStore(cfg.profiles_dir)
    responder = make_responder(cfg.responder)
    for rec in held.pending():
        decision = held.decision(rec["email_id"])
        profile = store.find(decision.user_id)
        outcome = responder(decision)
        action = resolve_verification(decision, outcome, profile, held, alerts)
        if action == "released" and profile is not None:
            store.save(profile)
        print(json.dumps({"email_id": decision.email_id, "result": outcome.result, "action": action}))
    return EXIT_OK


def cmd_retrain(cfg: Config, args) -> int:
    store = ProfileStore(cfg.profiles_dir)
    users = store.users() if args.all else [args.user]
    data = None
    for u in users:
        p = store.load(u)
        if p is None:
            raise MissingFile(store.path(u))
        if not p.pending or not (p.retrain_due or args.force):
            log.info("%s: %d pending, not due", u, len(p.pending))
            continue
        if data is None:
            data = _org_data(cfg, _context(cfg))
        ctx_view = data.ctx.at_version(p.context_version)
        if ctx_view.sizes != data.ctx.sizes:
            raise SendGuardError("retraining across context versions needs re-extracted pools")
        new = retrain(p, NegativePools(data.pools().org, data.external), cfg.seed or 0)
        store.save(new)
        print(json.dumps({"user_id": u, "positives": new.positives.shape[0]}))
    return EXIT_OK


def _kfold(data, users, args, seed, cfg):
    histories = _ints(args.history) or [None]
    results = []
    for u in users:
        for h in histories:
            if h is not None and data.history(u) < h:
                continue
            fp, fn = ev.kfold_validate(data, u, args.k, args.features, seed, h, cfg.train)
            results.append(ev.UserResult(u, h or data.history(u), fp, fn))
    return ev.bucket_curves(results, args.features == "writing_only")


def _inject(data, users, args, seed, cfg):
    rows = []
    for h in _ints(args.history) or [None]:
        eligible = [u for u in users if h is None or data.history(u) >= h]
        profiles = ev.train_profiles(data, eligible, h, seed, cfg.train)
        tp = ev.inject_attacks(data, data.attacks, eligible, profiles)
        for u in eligible:
            rows.append({"user_id": u, "history_size": h or data.history(u), "tp_rate": tp[u]})
    return rows


def _evade(data, users, args, seed, cfg):
    strategies = [s for s in (args.strategies or ",".join(ev.SHIPPED_STRATEGIES)).split(",") if s]
    h = _ints(args.history)[0] if args.history else None
    users = [u for u in users if h is None or data.history(u) >= h]
    profiles = ev.train_profiles(data, users, h, seed, cfg.train)
    return ev.evasion_matrix(data, users, data.attacks, strategies, profiles, seed)


def _tp_summary(rows):
    by: dict[int, list[float]] = {}
    for r in rows:
        by.setdefault(ev.bucket_for(r["history_size"]) or r["history_size"], []).append(r["tp_rate"])
    return [(b, float(np.mean(v)), float(np.std(v))) for b, v in sorted(by.items())]


def cmd_evaluate(cfg: Config, args) -> int:
    seed = _need_seed(cfg)
    data = _org_data(cfg)
    users = _users(data, args, cfg.min_history)
    out = Path(args.out) if args.out else None
    if args.experiment == "kfold":
        report = _kfold(data, users, args, seed, cfg)
        result = report.to_json()
        _write(out, "kfold_per_user.csv", ev.per_user_csv(report))
        _write(out, "kfold_fp_plot.csv", ev.plot_csv((b.bucket, b.mean_fp, b.std_fp) for b in report.buckets))
        _write(out, "kfold_fn_plot.csv", ev.plot_csv((b.bucket, b.mean_fn, b.std_fn) for b in report.buckets))
    elif args.experiment == "inject":
        rows = _inject(data, users, args, seed, cfg)
        result = {"per_user": rows, "buckets": [{"bucket": b, "mean_tp": m, "stddev": s}
                                                for b, m, s in _tp_summary(rows)]}
        _write(out, "inject_tp_plot.csv", ev.plot_csv(_tp_summary(rows)))
    else:
        result = {"evasion": [r.to_json() for r in _evade(data, users, args, seed, cfg)]}
    text = ev.to_json_text(result)
    _write(out, f"{args.experiment}.json", text + "\n")
    print(text)
    return EXIT_OK


def cmd_report(cfg: Config, args) -> int:
    """Run every experiment and write all report files into ``out_dir``."""
    seed = _need_seed(cfg)
    data = _org_data(cfg)
    users = _users(data, args, cfg.min_history)
    out = Path(args.out_dir)
    histories = args.history or ",".join(str(b) for b in ev.BUCKETS)
    ns = argparse.Namespace(history=histories, k=args.k, features="all", strategies=args.strategies)
    full = _kfold(data, users, ns, seed, cfg)
    ns.features = "writing_only"
    writing = _kfold(data, users, ns, seed, cfg)
    ns.history = args.inject_history or histories
    tp_rows = _inject(data, users, ns, seed, cfg)
    ns.history = args.evade_history
    evasion = _evade(data, users, ns, seed, cfg)
    _write(out, "kfold_per_user.csv", ev.per_user_csv(full))
    _write(out, "kfold_writing_only_per_user.csv", ev.per_user_csv(writing))
    _write(out, "kfold_fp_plot.csv", ev.plot_csv((b.bucket, b.mean_fp, b.std_fp) for b in full.buckets))
    _write(out, "kfold_fn_plot.csv", ev.plot_csv((b.bucket, b.mean_fn, b.std_fn) for b in full.buckets))
    _write(out, "inject_tp_plot.csv", ev.plot_csv(_tp_summary(tp_rows)))
    summary = {
        "seed": seed,
        "users": users,
        "kfold": {"all": [asdict(b) for b in full.buckets], "writing_only": [asdict(b) for b in writing.buckets]},
        "inject": [{"bucket": b, "mean_tp": m, "stddev": s} for b, m, s in _tp_summary(tp_rows)],
        "evasion": [r.to_json() for r in evasion],
    }
    _write(out, "summary.json", ev.to_json_text(summary) + "\n")
    print(str(out))
    return EXIT_OK


def cmd_enron_manifest(cfg: Config, args) -> int:
    m = enron_manifest(args.maildir)
    m.save(args.out)
    print(f"{len(m.entries)} entries, {len({e.user_id for e in m.entries})} users")
    return EXIT_OK


def cmd_synth(cfg: Config, args) -> int:
    from .synth import generate_org

    org = generate_org(args.users, args.emails, args.external, args.attacks, cfg.seed or 0)
    print(org.write(args.out_dir, args.format))
    return EXIT_OK


# -- parser ----------------------------------------------------------------------


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help=f"JSON config file (default: ${CONFIG_ENV})")
    p.add_argument("--manifest", help="corpus manifest JSON")
    p.add_argument("--context", help="organization context JSON")
    p.add_argument("--profiles-dir", dest="profiles_dir")
    p.add_argument("--state-dir", dest="state_dir", help="held-email queue and alert log directory")
    p.add_argument("--words-file", dest="words_file", help="context words (JSON list or one per line)")
    p.add_argument("--C", dest="C", type=float)
    p.add_argument("--tol", type=float)
    p.add_argument("--max-passes", dest="max_passes", type=int)
    p.add_argument("--retrain-threshold", dest="retrain_threshold", type=int)
    p.add_argument("--min-history", dest="min_history", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--responder", help="prompt | always_fail | oracle:<path>")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sendguard", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build-context", help="collect URL domains, contacted addresses and domains")
    _common(p)
    p.set_defaults(func=cmd_build_context)

    p = sub.add_parser("train", help="train behavioral profiles")
    _common(p)
    p.add_argument("user", nargs="?")
    p.add_argument("--all", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("check", help="check one outgoing email (exit 0 accepted, 3 challenged, 4 error)")
    _common(p)
    p.add_argument("email_file")
    p.add_argument("--user", help="profile to check against (default: the From: address)")
    p.add_argument("--format", default="eml", choices=("eml", "mbox", "jsonl"))
    p.add_argument("--verify", action="store_true", help="run the responder on a challenge")
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("verify", help="resolve held emails with the responder")
    _common(p)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("retrain", help="fold pending vectors into profiles")
    _common(p)
    p.add_argument("user", nargs="?")
    p.add_argument("--all", action="store_true")
    p.add_argument("--force", action="store_true", help="retrain even below the pending threshold")
    p.set_defaults(func=cmd_retrain)

    p = sub.add_parser("evaluate", help="run one experiment")
    _common(p)
    p.add_argument("experiment", choices=("kfold", "inject", "evade"))
    p.add_argument("--users", help="comma-separated user ids (default: all eligible)")
    p.add_argument("--max-users", dest="max_users", type=int)
    p.add_argument("--history", help="comma-separated history sizes")
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--features", choices=("all", "writing_only"), default="all")
    p.add_argument("--strategies", help="comma-separated, e.g. C,T,T+TC+M20")
    p.add_argument("--out", help="directory for CSV/JSON files")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("report", help="run all experiments and write reports")
    _common(p)
    p.add_argument("out_dir")
    p.add_argument("--users")
    p.add_argument("--max-users", dest="max_users", type=int)
    p.add_argument("--history", help="cross-validation history sizes")
    p.add_argument("--inject-history", dest="inject_history")
    p.add_argument("--evade-history", dest="evade_history")
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--strategies")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("enron-manifest", help="write a manifest for an unpacked Enron maildir")
    _common(p)
    p.add_argument("maildir")
    p.add_argument("--out", default="manifest.json")
    p.set_defaults(func=cmd_enron_manifest)

    p = sub.add_parser("synth", help="write a synthetic organization corpus")
    _common(p)
    p.add_argument("out_dir")
    p.add_argument("--users", type=int, default=10)
    p.add_argument("--emails", type=int, default=300)
    p.add_argument("--external", type=int, default=300)
    p.add_argument("--attacks", type=int, default=100)
    p.add_argument("--format", default="jsonl", choices=("eml", "mbox", "jsonl"))
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = Config.resolve(args)
        return args.func(cfg, args)
    except MissingFile as exc:
        print(f"error: missing file: {exc.path}", file=sys.stderr)
        return EXIT_USAGE
    except (ValueError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SendGuardError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except Exception as exc:  # internal failure: keep the exit-code contract
        log.exception("internal error")
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
