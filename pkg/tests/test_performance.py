from mpt.utils.performance import Stopwatch, collect_performance_snapshot


def test_performance_endpoint(client):
    response = client.get("/mpt/v1/performance")

    assert response.status_code == 200

    data = response.get_json()

    assert "memory" in data
    assert "threads" in data
    assert "time" in data
    assert "episodesRun" in data

    assert isinstance(data["threads"], int)
    assert isinstance(data["episodesRun"], int)
    assert "MB" in data["memory"]


def test_response_time_header(client):
    response = client.get("/mpt/v1/performance")
    assert float(response.headers["X-Response-Time-Ms"]) >= 0.0


def test_snapshot_reports_episode_count():
    snapshot = collect_performance_snapshot(1.5, episodes_run=3)
    assert snapshot["episodesRun"] == 3
    assert snapshot["time"] == "1.5000 ms"


def test_stopwatch_is_monotonic():
    watch = Stopwatch()
    first = watch.elapsed_ms()
    assert 0.0 <= first <= watch.elapsed_ms()
