import numpy as np
import pytest

from asgdlab.models import Batch, ModelSpec, init_params
from asgdlab.pserver import PushRecord
from asgdlab.schedules import TrainSchedule
from asgdlab.sim import CostModel, EventLog, SimConfig, group_duration, run_sim, staleness_stats, wps

LIN = ModelSpec.linear(3)
GRU = ModelSpec.gru_lm(8, 4, 4)


def lin_batches(seed, k, size=4):
    rng = np.random.default_rng(seed)
    return [Batch([(rng.normal(size=3), float(rng.normal())) for _ in range(size)]) for _ in range(k)]


def gru_batches(seed, k, tokens=2500, length=10):
    rng = np.random.default_rng(seed)
    return [Batch([rng.integers(0, 8, size=length) for _ in range(tokens // length)]) for _ in range(k)]


def config(streams, spec=LIN, **kw):
    kw.setdefault("schedule", TrainSchedule(0.01))
    return SimConfig(spec=spec, params=init_params(spec, 0), streams=[iter(s) for s in streams], **kw)


def test_group_duration_examples():
    cm = CostModel(10000.0, 0.05, 0.0)
    assert group_duration(cm, 2500) == pytest.approx(0.30, rel=1e-15)
    assert group_duration(cm, 5000) == pytest.approx(0.55, rel=1e-15)
    assert 5000 / group_duration(cm, 5000) == pytest.approx(9090.909090909, rel=1e-9)
    assert 5000 / (2 * group_duration(cm, 2500)) == pytest.approx(8333.333333333, rel=1e-9)
    assert group_duration(cm, 2500, 3, 4) == group_duration(cm, 2500, 3, 4)
    with pytest.raises(ValueError):
        group_duration(cm, 0)


def test_jitter_is_seeded_and_bounded():
    cm = CostModel(1000.0, 0.0, 0.6)
    a = [group_duration(cm, 1000, 7, s, w) for s in range(50) for w in range(3)]
    b = [group_duration(cm, 1000, 7, s, w) for s in range(50) for w in range(3)]
    assert a == b and len(set(a)) > 1
    assert min(a) >= 0.5 and max(a) <= 2.0
    with pytest.raises(ValueError):
        CostModel(jitter=1.0)
    with pytest.raises(ValueError):
        CostModel(tokens_per_sec=0)


def test_single_worker_in_order():
    bs = lin_batches(0, 6, size=5)
    res = run_sim(config([bs]))
    assert [r.staleness for r in res.log] == [0] * 6
    assert [r.tokens for r in res.log] == [5] * 6
    assert [r.sim_time for r in res.log] == sorted(r.sim_time for r in res.log)


def test_round_robin_staleness():
    streams = [lin_batches(w, 10) for w in range(4)]
    res = run_sim(config(streams))
    stale = [r.staleness for r in res.log]
    assert stale[:4] == [0, 1, 2, 3]
    assert stale[4:] == [3] * 36
    assert [r.worker for r in res.log] == [0, 1, 2, 3] * 10
    mean, mx, hist = staleness_stats(res.log[4:])
    assert (mean, mx) == (3.0, 3) and hist == {3: 36}


def test_staleness_equals_n_minus_one():
    for n in (2, 3, 6):
        res = run_sim(config([lin_batches(w, 5) for w in range(n)]))
        assert {r.staleness for r in res.log[n:]} == {n - 1}


def test_determinism_bit_identical():
    def once():
        streams = [gru_batches(w, 4, tokens=60, length=6) for w in range(3)]
        return run_sim(config(streams, spec=GRU, tau=2, cost=CostModel(1000.0, 0.01, 0.3), seed=5,
                              schedule=TrainSchedule(0.01, local_opt_window=3)))
    a, b = once(), once()
    assert a.log.to_csv() == b.log.to_csv()
    assert np.array_equal(a.store.params.values, b.store.params.values)


def test_jitter_gives_nonuniform_staleness():
    streams = [lin_batches(w, 30) for w in range(4)]
    res = run_sim(config(streams, cost=CostModel(100.0, 0.01, 0.6), seed=1))
    assert len(staleness_stats(res.log)[2]) > 1


def test_staleness_stats():
    zero = [PushRecord(i, 0, i, i, float(i), 10) for i in range(4)]
    assert staleness_stats(zero)[:2] == (0.0, 0)
    res = run_sim(config([lin_batches(w, 7) for w in range(4)]))
    assert sum(staleness_stats(res.log)[2].values()) == len(res.log)
    with pytest.raises(ValueError):
        staleness_stats([])


def test_wps():
    assert wps([PushRecord(0, 0, 0, 0, 1.0, 3000)], 1.0) == 3000
    assert wps([PushRecord(0, 0, 0, 0, 1.5, 3000)], 1.0) == 0
    with pytest.raises(ValueError):
        wps([], 0.0)


def _wps_for(tau, overhead=0.05, groups=4):
    bs = gru_batches(0, tau * groups)
    res = run_sim(config([bs], spec=GRU, tau=tau, cost=CostModel(10000.0, overhead, 0.0),
                         schedule=TrainSchedule(0.001)))
    return wps(res.log, res.sim_time)


def test_wps_trend_and_overhead():
    w1, w2 = _wps_for(1), _wps_for(2)
    assert w1 == pytest.approx(2500 / 0.3, rel=1e-12)
    assert w2 == pytest.approx(5000 / 0.55, rel=1e-12)
    assert w2 > w1
    assert _wps_for(1, overhead=0.1) < w1


def test_stream_exhaustion_drops_partial_group():
    res = run_sim(config([lin_batches(0, 5)], tau=2))
    assert len(res.log) == 2


def test_max_updates_and_callback_stop():
    res = run_sim(config([lin_batches(w, 20) for w in range(2)], max_updates=7))
    assert res.store.u == 7
    seen = []

    def cb(rep, t, store):
        seen.append((rep.u_new, t, store.u))
        return rep.u_new == 3

    res = run_sim(config([lin_batches(w, 20) for w in range(2)]), on_push=cb)
    assert res.store.u == 3 and [s[0] for s in seen] == [1, 2, 3]
    assert all(s[0] == s[2] for s in seen)


def test_event_log_csv():
    res = run_sim(config([lin_batches(0, 2)]))
    lines = res.log.to_csv().strip().split("\n")
    assert lines[0] == "push_index,worker,sim_time,u_pull,u_apply,staleness,tokens"
    assert len(lines) == 3 and lines[1].startswith("0,0,")


def test_concurrent_single_worker_matches_deterministic():
    def once(mode):
        return run_sim(config([gru_batches(0, 6, tokens=40, length=5)], spec=GRU, tau=2, mode=mode,
                              schedule=TrainSchedule(0.01, local_opt_window=4)))
    a, b = once("deterministic"), once("concurrent")
    assert a.log.to_csv() == b.log.to_csv()
    assert np.array_equal(a.store.params.values, b.store.params.values)


def test_concurrent_invariants():
    streams = [gru_batches(w, 12, tokens=40, length=5) for w in range(4)]
    res = run_sim(config(streams, spec=GRU, tau=2, mode="concurrent",
                         schedule=TrainSchedule(0.01, local_opt_window=6)))
    assert res.store.u == len(res.log) == 24
    assert {s.t for s in res.store.shard_states} == {24}
    assert all(r.staleness >= 0 for r in res.log)
    assert np.all(np.isfinite(res.store.params.values))


def test_concurrent_errors_surface():
    bad = [Batch([[1, 2, 9]])]  # token out of vocabulary range
    with pytest.raises(IndexError):
        run_sim(config([bad], spec=GRU, mode="concurrent"))


def test_sync_step_duration_is_max():
    streams = [gru_batches(0, 2, tokens=100, length=10), gru_batches(1, 2, tokens=300, length=10)]
    res = run_sim(config(streams, spec=GRU, sync=True, cost=CostModel(1000.0, 0.0)))
    assert [r.sim_time for r in res.log] == pytest.approx([0.3, 0.6])
    assert [r.tokens for r in res.log] == [400, 400]
    assert all(r.staleness == 0 for r in res.log)


def test_run_sim_validation():
    with pytest.raises(ValueError):
        run_sim(config([lin_batches(0, 2)], tau=0))
    with pytest.raises(ValueError):
        run_sim(config([lin_batches(0, 2)], mode="quantum"))


def test_event_log_total_tokens():
    assert EventLog([PushRecord(0, 0, 0, 0, 0.0, 4), PushRecord(1, 0, 1, 1, 1.0, 6)]).total_tokens == 10
