import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import sparse

from sendguard.errors import InsufficientHistory, UnknownStrategy
from sendguard.evaluation import (BUCKETS, FAILURE, NO_EFFECT, SHIPPED_STRATEGIES, SUCCESS, UserResult,
                                  VictimStats, apply_evasion, bucket_curves, bucket_for, evasion_matrix,
                                  history_sweep, inject_attacks, kfold_validate, parse_strategy, per_user_csv,
                                  plot_csv, stratified_folds, to_json_text, train_profiles, victim_stats)


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 60), st.integers(1, 60), st.integers(2, 10), st.integers(0, 999))
def test_folds_partition(n_pos, n_neg, k, seed):
    folds = stratified_folds(n_pos, n_neg, k, seed)
    assert len(folds) == k
    assert sorted(np.concatenate([p for p, _ in folds]).tolist()) == list(range(n_pos))
    assert sorted(np.concatenate([n for _, n in folds]).tolist()) == list(range(n_neg))
    sizes = [len(p) for p, _ in folds]
    assert max(sizes) - min(sizes) <= 1


def test_bucket_assignment():
    assert [bucket_for(h) for h in (210, 1050, 8100)] == [200, 1000, 8000]
    assert bucket_for(49) is None and bucket_for(50) == 50
    assert BUCKETS == (50, 100, 200, 500, 1000, 2000, 4000, 8000)


def test_monotone_inputs_give_monotone_means():
    rows = [UserResult(f"u{i}", h, 0.5 / (1 + i), 0.4 / (1 + i)) for i, h in enumerate(BUCKETS)]
    rep = bucket_curves(rows)
    fps = [b.mean_fp for b in rep.buckets]
    assert [b.bucket for b in rep.buckets] == list(BUCKETS)
    assert fps == sorted(fps, reverse=True)


@pytest.fixture(scope="module")
def user(small_data):
    return sorted(small_data.users)[0]


def test_kfold_rates(small_data, user):
    fp, fn = kfold_validate(small_data, user, k=5, seed=0, history=100)
    assert 0 <= fp <= 1 and 0 <= fn <= 1
    assert (fp, fn) == kfold_validate(small_data, user, k=5, seed=0, history=100)


def test_kfold_two_emails(small_data, user):
    fp, fn = kfold_validate(small_data, user, k=2, history=2)
    assert 0 <= fp <= 1 and 0 <= fn <= 1


def test_kfold_errors(small_data, user):
    with pytest.raises(InsufficientHistory):
        kfold_validate(small_data, user, k=10, history=5)
    with pytest.raises(ValueError):
        kfold_validate(small_data, user, features="some")


def test_ablation_uses_writing_columns(small_data, user):
    mask = small_data.schema.writing_mask
    names = np.array(small_data.schema.names)
    assert mask.sum() == 488 + len(small_data.ctx.context_words)
    assert not any(n.startswith(("time:", "to_addr:", "msg:", "url:")) for n in names[mask])
    fp, fn = kfold_validate(small_data, user, k=5, features="writing_only", history=100)
    assert 0 <= fp <= 1 and 0 <= fn <= 1


def test_history_sweep_report(small_data):
    users = sorted(small_data.users)[:2]
    rep = history_sweep(small_data, users, [50, 100], k=3)
    assert {(r.user_id, r.history_size) for r in rep.per_user} == {(u, h) for u in users for h in (50, 100)}
    assert [b.bucket for b in rep.buckets] == [50, 100] and all(b.n_users == 2 for b in rep.buckets)
    text = per_user_csv(rep)
    assert text.splitlines()[0].startswith("user_id") and len(text.splitlines()) == 5
    assert json.loads(to_json_text(rep.to_json()))["ablation"] is False
    assert plot_csv([(50, 0.1, 0.0)]).splitlines() == ["history_size,mean_rate,stddev", "50,0.100000,0.000000"]


@pytest.fixture(scope="module")
def profiles(small_data):
    return train_profiles(small_data, sorted(small_data.users), history=100)


def test_inject_attacks(small_data, profiles):
    tp = inject_attacks(small_data, small_data.attacks, sorted(small_data.users), profiles)
    assert all(0 <= r <= 1 for r in tp.values()) and np.mean(list(tp.values())) > 0.5
    assert all(np.isnan(r) for r in inject_attacks(small_data, [], list(tp), profiles).values())


def test_replayed_attack_is_caught(small_org, small_data, user, profiles):
    own = sorted(small_org.users[user], key=lambda e: e.sent_at)[:5]
    assert inject_attacks(small_data, own, [user], profiles)[user] == 1.0


# -- evasion -----------------------------------------------------------------------


def _stats(schema, **kw):
    base = dict(means=np.zeros(len(schema.names)), address_counts={}, coworkers=[], peak_day=0,
                peak_hour=0, word_ranking=[])
    base.update(kw)
    return VictimStats(**base)


def test_time_evasion(small_data):
    schema = small_data.schema
    t = schema.layout["time"]
    v = np.zeros(len(schema.names))
    v[t.start + 3] = v[t.start + 7 + 2] = 1.0
    out = apply_evasion("T", v, _stats(schema, peak_day=1, peak_hour=14), schema)
    assert np.flatnonzero(out[t]).tolist() == [1, 7 + 14]
    assert np.array_equal(np.delete(out, np.r_[t]), np.delete(v, np.r_[t]))


def test_mimicry_sets_victim_means(small_data):
    schema = small_data.schema
    the = schema.index("fw:the")
    own = np.zeros((4, len(schema.names)))
    own[:, the] = 0.07
    own[:, schema.index("fw:of")] = 0.01
    stats = victim_stats(own, schema, "v@corp.example")
    assert stats.word_ranking[0] == the
    out = apply_evasion("M10", np.zeros(len(schema.names)), stats, schema)
    assert out[the] == pytest.approx(0.07)


def test_mimicry_on_fixture_victim(small_data, user):
    stats = victim_stats(small_data.users[user][:100], small_data.schema, small_data.addresses[user])
    top = stats.word_ranking[0]
    assert small_data.schema.names[top] == "fw:regards"
    out = apply_evasion("M10", np.zeros(len(small_data.schema.names)), stats, small_data.schema)
    assert out[top] == pytest.approx(0.02344463008464245, abs=1e-15)
    assert np.count_nonzero(out) == 10


def test_single_coworker_is_deterministic(small_data):
    schema = small_data.schema
    col = next(i for i, n in enumerate(schema.names) if n.startswith("to_addr:") and "@corp.example" in n)
    stats = _stats(schema, address_counts={col: 3}, coworkers=[col])
    v = np.zeros(len(schema.names))
    v[schema.layout["to_addr"].stop - 1] = 1.0
    outs = [apply_evasion("C", v, stats, schema, seed=s) for s in range(5)]
    assert all(o[col] == 1.0 for o in outs)
    assert np.flatnonzero(outs[0][schema.layout["to_addr"]]).size == 1
    assert outs[0][schema.index("to_dom:corp.example")] == 1.0


def test_strategy_parsing():
    assert parse_strategy("T+TC+M20") == ["T", "TC", "M20"]
    assert parse_strategy("T_TC_M_10") == ["T", "TC", "M10"]
    assert parse_strategy("T_C") == ["T", "C"]
    for bad in ("", "X", "M", "T+Q"):
        with pytest.raises(UnknownStrategy):
            parse_strategy(bad)


def _touched_groups(strategy, schema):
    lay = schema.layout
    groups = []
    for atom in parse_strategy(strategy):
        if atom == "T":
            groups.append(lay["time"])
        elif atom in ("C", "TC"):
            groups += [lay["to_addr"], lay["to_dom"], slice(schema.index("msg:n_recipients"),
                                                            schema.index("msg:n_recipients") + 1)]
        else:
            groups += [lay["functional"], lay["context_word"]]
    return groups


@settings(max_examples=40, deadline=None)
@given(st.sampled_from(SHIPPED_STRATEGIES), st.integers(0, 39), st.integers(0, 2**16))
def test_evasion_touches_only_its_features(small_data, strategy, row, seed):
    schema = small_data.schema
    u = sorted(small_data.users)[1]
    stats = victim_stats(small_data.users[u], schema, small_data.addresses[u])
    from sendguard.evaluation import attack_matrix

    v = attack_matrix(small_data, small_data.attacks[row:row + 1], u).toarray()[0]
    out = apply_evasion(strategy, v, stats, schema, seed)
    free = np.ones(len(v), dtype=bool)
    for g in _touched_groups(strategy, schema):
        free[g] = False
    assert np.array_equal(out[free], v[free])
    assert np.array_equal(out, apply_evasion(strategy, v, stats, schema, seed))


def test_evasion_matrix_bookkeeping(small_data, profiles):
    users = sorted(small_data.users)
    res = evasion_matrix(small_data, users, small_data.attacks, ["T", "TC", "M20"], profiles, seed=3)
    assert [r.strategy for r in res] == ["T", "TC", "M20"]
    for r in res:
        assert r.failure + r.success + r.no_effect == len(users)
        assert set(r.per_user.values()) <= {FAILURE, SUCCESS, NO_EFFECT}
        assert -100 <= r.avg_change <= 100
    again = evasion_matrix(small_data, users, small_data.attacks, ["T", "TC", "M20"], profiles, seed=3)
    assert [r.to_json() for r in res] == [r.to_json() for r in again]
    assert evasion_matrix(small_data, users, small_data.attacks, [], profiles) == []
    with pytest.raises(UnknownStrategy):
        evasion_matrix(small_data, users, small_data.attacks, ["Z"], profiles)


def test_org_data_pools(small_data):
    pools = small_data.pools()
    assert set(pools.org) == set(small_data.users)
    assert isinstance(pools.external, sparse.csr_matrix) and pools.external.shape[0] == 150
    assert small_data.eligible_users(121) == []
    assert len(small_data.eligible_users(120)) == 5
