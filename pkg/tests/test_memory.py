import json
import math

import pytest
from hypothesis import given, strategies as st

from conftest import make_state
from richelieu.domain import LONG_TERM_GOAL, Commitment, CommitmentType, NegotiationMessage, SubGoal
from richelieu.llm import FailingBackend, ScriptedBackend, json_block
from richelieu.memory import (
    ALPHA,
    DIVERSITY_THRESHOLD,
    GAMMA0,
    CredibilityTable,
    MemoryInputError,
    MemoryLoadError,
    MemoryRecord,
    MemoryStore,
    MigrationError,
    _planning_sim,
    commitment_honored,
    credibility_closed_form,
    evaluate_subgoal,
    load,
    log_turn,
    merge_shards,
    persist,
    retrieve_negotiation,
    retrieve_planning,
    update_credibility,
    update_truthfulness,
)
from richelieu.orders import parse_order
from richelieu.state import initial_state

TAKE_MUN = SubGoal("take Munich with support", frozenset({"GERMANY"}), frozenset({"MUN"}))
TAKE_SPA = SubGoal("take Spain and Portugal", frozenset(), frozenset({"SPA", "POR"}))


def record(state=None, subgoal=TAKE_MUN, owner="FRANCE", game="g0", turn=0, messages=()):
    state = state or initial_state()
    return MemoryRecord(game_id=game, turn=turn, owner=owner, state=state.digest(), subgoal=subgoal,
                        messages=tuple(messages), actions={owner: ["A PAR H"]})


def with_centres(extra: dict):
    return make_state({"FRANCE": ["A PAR"]}, ownership=extra)


# ---------------------------------------------------------------- credibility

@given(st.integers(0, 60), st.floats(0, 1), st.floats(0.01, 0.99))
def test_ema_matches_closed_form(n, gamma0, alpha):
    table = CredibilityTable(alpha=alpha, initial=gamma0)
    table.reset(["ENGLAND"])
    for _ in range(n):
        update_credibility(table, "ENGLAND", 0)
    assert math.isclose(table.get("ENGLAND"), (1 - alpha) ** n * gamma0, rel_tol=1e-9, abs_tol=1e-12)
    assert math.isclose(table.get("ENGLAND"), credibility_closed_form(n, gamma0, alpha), rel_tol=1e-9, abs_tol=1e-12)


def test_honest_streak_approaches_one():
    table = CredibilityTable()
    table.reset(["ITALY"])
    for _ in range(40):
        update_credibility(table, "ITALY", 1)
    assert table.get("ITALY") == pytest.approx(credibility_closed_form(40, GAMMA0, ALPHA, tau=1))
    assert 0.999 < table.get("ITALY") <= 1.0
    assert len(table.history["ITALY"]) == 41


def test_unknown_truthfulness_leaves_credibility():
    table = CredibilityTable()
    table.reset(["ITALY"])
    assert update_credibility(table, "ITALY", None) == GAMMA0
    with pytest.raises(ValueError):
        update_credibility(table, "ITALY", 2)


# ---------------------------------------------------------------- store & IO

def test_log_turn_assigns_increasing_ids():
    store = MemoryStore()
    assert [log_turn(store, record()) for _ in range(3)] == [1, 2, 3]
    with pytest.raises(MemoryInputError):
        log_turn(store, store.get(1))
    bad = record()
    bad.actions = {}
    with pytest.raises(MemoryInputError):
        log_turn(store, bad)


def test_persist_load_round_trip(tmp_path):
    store = MemoryStore()
    msg = NegotiationMessage("ENGLAND", "FRANCE", "peace", (Commitment(CommitmentType.CEASEFIRE, power="FRANCE"),))
    log_turn(store, record(messages=[msg]))
    store.get(1).truthfulness["ENGLAND"] = 0
    path = tmp_path / "mem.jsonl"
    persist(store, path)
    back = load(path)
    assert [r.to_dict() for r in back.records()] == [r.to_dict() for r in store.records()]
    assert back.next_id == 2
    assert json.loads(path.read_text().splitlines()[0])["format"] == "richelieu-memory"


def test_load_reports_corrupt_line(tmp_path):
    store = MemoryStore()
    log_turn(store, record())
    log_turn(store, record())
    path = tmp_path / "mem.jsonl"
    persist(store, path)
    lines = path.read_text().splitlines()
    lines[2] = lines[2][:20]
    path.write_text("\n".join(lines))
    with pytest.raises(MemoryLoadError) as info:
        load(path)
    assert info.value.line == 3


def test_load_rejects_foreign_and_old_files(tmp_path):
    p = tmp_path / "x"
    p.write_text('{"format": "other"}\n')
    with pytest.raises(MemoryLoadError):
        load(p)
    p.write_text('{"format": "richelieu-memory", "version": 0}\n')
    with pytest.raises(MigrationError):
        load(p)
    with pytest.raises(MemoryLoadError):
        load(tmp_path / "missing")


def test_merge_shards_renumbers_in_order():
    base = MemoryStore()
    log_turn(base, record(game="base"))
    shards = [base.overlay(), base.overlay()]
    log_turn(shards[0], record(game="a"))
    log_turn(shards[1], record(game="b"))
    log_turn(shards[1], record(game="b"))
    assert [r.id for r in shards[1].own_records] == [2, 3]
    assert merge_shards(base, shards) == 3
    assert [(r.id, r.game_id) for r in base.records()] == [(1, "base"), (2, "a"), (3, "b"), (4, "b")]


def test_overlay_sees_base_but_persists_own(tmp_path):
    base = MemoryStore()
    log_turn(base, record())
    top = base.overlay()
    log_turn(top, record())
    assert len(top) == 2 and top.get(1) is base.get(1)
    persist(top, tmp_path / "t")
    assert len(load(tmp_path / "t")) == 1


# ---------------------------------------------------------------- evaluation

def test_objective_only_evaluation():
    store = MemoryStore()
    rid = log_turn(store, record())
    later = with_centres({"SPA": "FRANCE", "POR": "FRANCE"})
    assert evaluate_subgoal(store, rid, LONG_TERM_GOAL, [later]) == 7.0


def test_judge_is_averaged_with_objective():
    store = MemoryStore()
    rid = log_turn(store, record())
    judge = ScriptedBackend(responder=lambda m, c: json_block({"score": 9}))
    assert evaluate_subgoal(store, rid, LONG_TERM_GOAL, [initial_state()], backend=judge) == 7.0


def test_failed_judge_degrades_to_objective():
    store = MemoryStore()
    rid = log_turn(store, record())
    assert evaluate_subgoal(store, rid, LONG_TERM_GOAL, [initial_state()], backend=FailingBackend()) == 5.0


def test_lambda_freezes_when_goal_changes_and_survives_reload(tmp_path):
    store = MemoryStore()
    rid = log_turn(store, record())
    first = evaluate_subgoal(store, rid, LONG_TERM_GOAL, [initial_state()], current_subgoal=TAKE_MUN)
    assert not store.get(rid).frozen
    again = evaluate_subgoal(store, rid, LONG_TERM_GOAL, [with_centres({"SPA": "FRANCE"})], current_subgoal=TAKE_SPA)
    assert again == first and store.get(rid).frozen
    path = tmp_path / "m"
    persist(store, path)
    back = load(path)
    assert back.get(rid).frozen
    rich = with_centres({"SPA": "FRANCE", "POR": "FRANCE", "BEL": "FRANCE"})
    assert evaluate_subgoal(back, rid, LONG_TERM_GOAL, [rich], current_subgoal=TAKE_MUN) == first


def test_unfrozen_lambda_tracks_trajectory():
    store = MemoryStore()
    rid = log_turn(store, record())
    assert evaluate_subgoal(store, rid, LONG_TERM_GOAL, [initial_state()]) == 5.0
    assert evaluate_subgoal(store, rid, LONG_TERM_GOAL, [with_centres({"SPA": "FRANCE"})]) == 6.0


def test_fundamental_difference_rule():
    assert TAKE_MUN.fundamentally_differs(TAKE_SPA)
    assert not TAKE_MUN.fundamentally_differs(SubGoal("hold Munich", frozenset(), frozenset({"MUN"})))
    assert not SubGoal("x").fundamentally_differs(SubGoal("x"))


# -------------------------------------------------------------- truthfulness

def _turn_with(message):
    store = MemoryStore()
    return store, log_turn(store, record(messages=[message]))


def test_broken_ceasefire_scores_zero():
    msg = NegotiationMessage("GERMANY", "FRANCE", "peace", (Commitment(CommitmentType.CEASEFIRE, power="FRANCE"),))
    store, rid = _turn_with(msg)
    before = make_state({"FRANCE": ["A BUR"], "GERMANY": ["A MUN", "F KIE"]})
    assert update_truthfulness(store, rid, "GERMANY", before, before, ["A MUN - RUH"], msg) == 1
    tau = update_truthfulness(store, rid, "GERMANY", before, before, ["A MUN - BUR", "F KIE H"], msg)
    assert tau == 0
    assert store.get(rid).truthfulness["GERMANY"] == 0


def test_kept_non_aggression_scores_one():
    msg = NegotiationMessage("GERMANY", "FRANCE", "no Burgundy",
                             (Commitment(CommitmentType.NON_AGGRESSION, provinces=frozenset({"BUR"})),))
    store, rid = _turn_with(msg)
    before = initial_state()
    assert update_truthfulness(store, rid, "GERMANY", before, before, ["A MUN - RUH"], msg) == 1


def test_several_messages_take_the_minimum():
    keep = NegotiationMessage("GERMANY", "FRANCE", "a", (Commitment(CommitmentType.NON_AGGRESSION,
                                                                    provinces=frozenset({"PIC"})),))
    lie = NegotiationMessage("GERMANY", "FRANCE", "b", (Commitment(CommitmentType.NON_AGGRESSION,
                                                                   provinces=frozenset({"BUR"})),))
    store, rid = _turn_with(keep)
    s = initial_state()
    update_truthfulness(store, rid, "GERMANY", s, s, ["A MUN - BUR"], keep)
    update_truthfulness(store, rid, "GERMANY", s, s, ["A MUN - BUR"], lie)
    assert store.get(rid).truthfulness["GERMANY"] == 0


def test_free_text_needs_judge():
    msg = NegotiationMessage("GERMANY", "FRANCE", "I mean well")
    store, rid = _turn_with(msg)
    s = initial_state()
    assert update_truthfulness(store, rid, "GERMANY", s, s, ["A MUN H"], msg) is None
    judge = ScriptedBackend(responder=lambda m, c: json_block({"honest": True}))
    assert update_truthfulness(store, rid, "GERMANY", s, s, ["A MUN H"], msg, backend=judge) == 1


def test_commitment_kinds():
    before = initial_state().digest()
    support = Commitment(CommitmentType.SUPPORT_ORDER, order="A MUN S A PAR - BUR")
    assert commitment_honored(support, [parse_order("A MUN S A PAR - BUR", "GERMANY")], before, "FRANCE")
    assert not commitment_honored(support, [parse_order("A MUN H", "GERMANY")], before, "FRANCE")
    joint = Commitment(CommitmentType.JOINT_ATTACK, power="RUSSIA")
    assert commitment_honored(joint, [parse_order("A BER - PRU", "GERMANY")], before, "FRANCE") is False
    assert commitment_honored(joint, [parse_order("A MUN - SIL", "GERMANY"),
                                      parse_order("A BER S A MUN - WAR", "GERMANY")], before, "FRANCE")


# ------------------------------------------------------------------ retrieval

def planted_store():
    """Clusters of near-identical turns plus a few distinct ones."""
    store = MemoryStore()
    for _ in range(4):
        log_turn(store, record(with_centres({"SPA": "FRANCE"}), TAKE_SPA))
    for _ in range(3):
        log_turn(store, record(initial_state(), TAKE_MUN))
    log_turn(store, record(with_centres({"BEL": "FRANCE", "HOL": "FRANCE"}), SubGoal("push into the low countries")))
    log_turn(store, record(with_centres({"TUN": "ITALY"}), SubGoal("watch Italy"), owner="ITALY"))
    return store


def test_retrieval_is_diverse_and_ordered():
    store = planted_store()
    hits = retrieve_planning(store, initial_state(), TAKE_MUN, m=5)
    sims = [h.similarity for h in hits]
    assert sims == sorted(sims, reverse=True)
    for a in hits:
        for b in hits:
            if a is not b:
                assert _planning_sim(store.features(a.record.id), store.features(b.record.id)) <= DIVERSITY_THRESHOLD
    assert hits[0].record.id == 7  # newest of the identical cluster
    assert len({h.record.subgoal.text for h in hits}) == len(hits)


def test_retrieval_limits_and_owner_filter():
    store = planted_store()
    assert retrieve_planning(store, initial_state(), TAKE_MUN, m=0) == []
    assert len(retrieve_planning(store, initial_state(), TAKE_MUN, m=2)) == 2
    only_italy = retrieve_planning(store, initial_state(), TAKE_MUN, m=5, owner="ITALY")
    assert [h.record.owner for h in only_italy] == ["ITALY"]
    with pytest.raises(ValueError):
        retrieve_planning(store, initial_state(), TAKE_MUN, m=-1)


@given(st.lists(st.sampled_from(["SPA", "POR", "BEL", "HOL", "DEN", "TUN"]), max_size=4), st.integers(1, 6))
def test_retrieval_invariants_hold_for_any_query(extra, m):
    store = planted_store()
    hits = retrieve_planning(store, with_centres({c: "FRANCE" for c in extra}), TAKE_SPA, m=m)
    assert len(hits) <= m
    assert len({h.record.id for h in hits}) == len(hits)
    sims = [h.similarity for h in hits]
    assert sims == sorted(sims, reverse=True)


def test_negotiation_retrieval_carries_truthfulness():
    store = MemoryStore()
    old = NegotiationMessage("ENGLAND", "FRANCE", "let us both attack Germany",
                             (Commitment(CommitmentType.JOINT_ATTACK, power="GERMANY"),))
    rid = log_turn(store, record(messages=[old]))
    store.get(rid).truthfulness["ENGLAND"] = 0
    log_turn(store, record(messages=[NegotiationMessage("ITALY", "FRANCE", "hello")]))
    new = NegotiationMessage("ENGLAND", "FRANCE", "attack Germany together",
                             (Commitment(CommitmentType.JOINT_ATTACK, power="GERMANY"),))
    hits = retrieve_negotiation(store, initial_state(), new, k=3)
    assert [(h.record.id, h.truthfulness) for h in hits] == [(rid, 0)]
