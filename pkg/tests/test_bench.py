import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from swingguard.bench import BenchConfig, BenchError, make_fleet, run_area, run_bench, run_direct, run_global, thread_cap
from swingguard.equivalence import Fleet, identity_error


@given(st.integers(1, 8), st.integers(1, 60), st.integers(0, 1000), st.floats(0.0, 1.0))
@settings(max_examples=40)
def test_fleet_shape(p, extra, seed, split):
    n = p + extra
    fleet = make_fleet(n, p, seed, split)
    ids = [r.machine_id for r in fleet.records]
    assert len(ids) == len(set(ids)) == n
    sizes = [len(v) for v in fleet.areas.values()]
    assert max(sizes) - min(sizes) <= 1
    deg = [math.degrees(r.delta) for r in fleet.records]
    assert any(d > 0 for d in deg) and any(d < 0 for d in deg)


@given(st.integers(2, 6), st.integers(0, 40), st.integers(0, 500))
@settings(max_examples=30)
def test_two_layer_matches_direct(p, extra, seed):
    fleet = make_fleet(p + extra, p, seed)
    cois = [c for a, recs in fleet.areas.items() for c in run_area(recs, fleet.inertia, fleet.delta0, a)]
    two = run_global(cois)
    direct = run_direct(fleet.records, fleet.inertia, fleet.delta0)
    assert two.cms == direct.cms
    err = identity_error(two, direct, Fleet.from_records(fleet.records, fleet.inertia, fleet.delta0))
    assert max(err.values()) <= 1e-12
    assert p <= len(cois) <= 2 * p


def test_fleet_rejects_bad_sizes():
    with pytest.raises(BenchError):
        make_fleet(3, 5)


def test_config_validation():
    with pytest.raises(BenchError, match="repetitions"):
        BenchConfig(repetitions=5)
    with pytest.raises(BenchError, match="below the area count"):
        BenchConfig(sizes=(10,), areas=20)


def test_thread_cap_env(monkeypatch):
    monkeypatch.setenv("SWINGGUARD_THREADS", "3")
    assert thread_cap() == 3
    monkeypatch.setenv("SWINGGUARD_THREADS", "zero")
    with pytest.raises(BenchError):
        thread_cap()


def test_small_bench_reports_rows(tmp_path):
    res = run_bench(BenchConfig(sizes=(20, 60), areas=20, repetitions=10, warmup=1), workers=1)
    r20, r60 = res.row(20), res.row(60)
    # one machine per area: the two-layer path has no data reduction
    assert r20.msgs_twolayer == 20
    assert 20 <= r60.msgs_twolayer <= 40 and r60.msgs_direct == 60
    for r in res.rows:
        assert r.speedup > 0 and r.identity_max_err <= 1e-12
    res.to_csv(tmp_path / "b.csv")
    res.write_json(tmp_path / "b.json")
    assert (tmp_path / "b.csv").read_text().count("\n") == 3
