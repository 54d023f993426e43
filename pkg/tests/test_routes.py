import pytest

from mpt.routes.bench import MAX_EPISODE_STEPS, MAX_ROLLOUTS

TABULATE = "/mpt/v1/bounds:tabulate"
EPISODE = "/mpt/v1/episodes:run"


def test_tabulate_bounds(client):
    response = client.post(TABULATE, json={"K": [10], "eta": [0.01], "eps": [0.05], "alpha": 0.5})
    assert response.status_code == 200
    data = response.get_json()
    assert data["count"] == 1
    assert data["rows"][0]["bound"] == pytest.approx(0.32)


def test_tabulate_bounds_grid_size(client):
    response = client.post(TABULATE, json={"K": [5, 10], "eta": [0.0, 0.01], "eps": [0.0, 0.05, 0.1]})
    assert response.status_code == 200
    assert response.get_json()["count"] == 12


def test_tabulate_missing_field(client):
    response = client.post(TABULATE, json={"K": [10], "eta": [0.01]})
    assert response.status_code == 422
    assert "eps" in response.get_json()["error"]


def test_tabulate_invalid_rate(client):
    response = client.post(TABULATE, json={"K": [10], "eta": [0.01], "eps": [0.0], "alpha": 1.0})
    assert response.status_code == 422


def test_tabulate_without_json_body(client):
    response = client.post(TABULATE, data="not json", content_type="text/plain")
    assert response.status_code == 400


def test_run_episode(client):
    body = {
        "planner": "mpt",
        "seed": 4,
        "episodeSteps": 3,
        "search": {"L": 20, "K": 4},
        "includeSteps": True,
    }
    response = client.post(EPISODE, json=body)
    assert response.status_code == 200
    data = response.get_json()
    assert data["rollouts"] == 60
    assert data["rngSeed"] == 4
    assert data["steps"] == 3
    assert len(data["trajectory"]) == 3
    assert data["trajectory"][0]["reusedN"] == 0


def test_run_episode_counts_towards_performance(client):
    before = client.get("/mpt/v1/performance").get_json()["episodesRun"]
    client.post(EPISODE, json={"planner": "uct", "episodeSteps": 1, "search": {"L": 10, "K": 3}})
    after = client.get("/mpt/v1/performance").get_json()["episodesRun"]
    assert after == before + 1


def test_run_episode_unknown_planner(client):
    response = client.post(EPISODE, json={"planner": "mppi"})
    assert response.status_code == 422
    assert "mppi" in response.get_json()["error"]


def test_run_episode_missing_planner(client):
    response = client.post(EPISODE, json={"seed": 1})
    assert response.status_code == 422


def test_run_episode_rejects_large_jobs(client):
    too_long = client.post(EPISODE, json={"planner": "mpt", "episodeSteps": MAX_EPISODE_STEPS + 1})
    assert too_long.status_code == 422
    too_wide = client.post(EPISODE, json={"planner": "mpt", "search": {"L": MAX_ROLLOUTS + 1}})
    assert too_wide.status_code == 422


def test_run_episode_bad_seed(client):
    response = client.post(EPISODE, json={"planner": "mpt", "seed": "abc"})
    assert response.status_code == 422


def test_unknown_route(client):
    assert client.get("/mpt/v1/nothing").status_code == 404


def test_wrong_method(client):
    assert client.get(TABULATE).status_code == 405
