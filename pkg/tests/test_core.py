import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from m2cmab.core import (
    BudgetVector, CostVector, ObservationRecord, RunLedger, TaskContext, Trace, TraceError,
    validate_trace_row,
)


def _row(n_actions=5, latency=1.0):
    return {
        "context": {"embedding": [0.1, 0.2]},
        "actions": [{"action_id": a, "reward": float(a), "latency": latency, "money": 0.01}
                    for a in range(n_actions)],
    }


def test_complete_row_accepted():
    row = validate_trace_row(_row(), 5)
    assert row.rewards.shape == (5,)
    assert row.costs.shape == (5, 2)
    np.testing.assert_array_equal(row.rewards, np.arange(5.0))


def test_missing_action_rejected():
    raw = _row()
    raw["actions"] = [e for e in raw["actions"] if e["action_id"] != 3]
    with pytest.raises(TraceError) as err:
        validate_trace_row(raw, 5)
    assert err.value.kind == "missing-action-entry"


def test_negative_latency_rejected():
    with pytest.raises(TraceError) as err:
        validate_trace_row(_row(latency=-0.1), 5)
    assert err.value.kind == "negative-cost"


@pytest.mark.parametrize("mutate", [
    lambda r: r.pop("context"),
    lambda r: r["actions"][0].pop("money"),
    lambda r: r["actions"][1].__setitem__("reward", "high"),
    lambda r: r["actions"][2].__setitem__("action_id", 0),
    lambda r: r.__setitem__("context", {"other": 1}),
])
def test_malformed_rows(mutate):
    raw = _row()
    mutate(raw)
    with pytest.raises(TraceError) as err:
        validate_trace_row(raw, 5)
    assert err.value.kind == "malformed-field"


def test_budget_vector_positive():
    with pytest.raises(ValueError):
        BudgetVector(np.array([1.0, 0.0]))
    b = BudgetVector(np.array([10.0, 20.0]))
    assert b.phi_min() == 10.0
    assert b.phi_min(literal=True) == 0.1


def test_modalities_need_shared_width():
    with pytest.raises(TraceError):
        TaskContext(0, modality_features={"text": np.ones((2, 3)), "vision": np.ones((1, 4))})


finite = st.floats(-1e6, 1e6, allow_nan=False)
nonneg = st.floats(0.0, 1e6, allow_nan=False)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(finite, nonneg, nonneg), min_size=1, max_size=40))
def test_ledger_accounting_exact(entries):
    ledger = RunLedger(2)
    for t, (r, lat, money) in enumerate(entries):
        ledger.commit(t, 0, r, np.array([lat, money]))
    assert ledger.rounds_executed == len(entries)
    expected = np.array([sum(e[1] for e in entries), sum(e[2] for e in entries)])
    np.testing.assert_allclose(ledger.consumed, expected, rtol=1e-9)
    ledger.check()
    assert ledger.avg_reward == ledger.reward_sum / ledger.rounds_executed


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(finite, nonneg, nonneg), min_size=0, max_size=10))
def test_ledger_round_trip(entries):
    ledger = RunLedger(2)
    for t, (r, lat, money) in enumerate(entries):
        ledger.commit(t, t % 3, r, np.array([lat, money]))
    back = RunLedger.from_dict(json.loads(json.dumps(ledger.to_dict())))
    assert back.decision_log == ledger.decision_log
    np.testing.assert_array_equal(back.consumed, ledger.consumed)
    assert back.reward_sum == ledger.reward_sum


@settings(max_examples=50, deadline=None)
@given(finite, st.lists(nonneg, min_size=2, max_size=2), st.lists(finite, min_size=1, max_size=6))
def test_observation_round_trip(reward, cost, emb):
    rec = ObservationRecord(reward, CostVector(cost), 1, TaskContext(0, pooled_embedding=emb))
    back = ObservationRecord.from_dict(json.loads(json.dumps(rec.to_dict())))
    assert back.reward == rec.reward
    np.testing.assert_array_equal(back.cost.values, rec.cost.values)
    np.testing.assert_array_equal(back.context.pooled_embedding, rec.context.pooled_embedding)


def test_trace_round_trip(linear_trace, tmp_path):
    path = tmp_path / "t.jsonl"
    linear_trace.save(path)
    back = Trace.load(path)
    np.testing.assert_array_equal(back.reward_matrix(), linear_trace.reward_matrix())
    np.testing.assert_array_equal(back.cost_tensor(True), linear_trace.cost_tensor(True))
    assert back.dumps() == linear_trace.dumps()


def test_modality_trace_round_trip():
    ctx = TaskContext(0, modality_features={"text": [[1.0, 2.0]], "vision": [[3.0, 4.0], [5.0, 6.0]]},
                      attention=[[1.0, 0.5, 0.0]])
    back = TaskContext.from_dict(json.loads(json.dumps(ctx.to_dict())))
    for k in ctx.modality_features:
        np.testing.assert_array_equal(back.modality_features[k], ctx.modality_features[k])
    np.testing.assert_array_equal(back.attention, ctx.attention)
