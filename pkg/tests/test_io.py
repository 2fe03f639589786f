import json

import numpy as np

from wellescape.dynamics import GridTrajectory, TimeGrid
from wellescape.io import ArtifactStore, dumps, file_digest, fmt, read_trajectory, versions


def test_sidecar_records_digest_hash_seed_and_versions(tmp_path):
    store = ArtifactStore(tmp_path, "abc123", 7)
    p = store.write_table("t.csv", ["a", "b"], [[1.0, 2.0], ["x", "y"]], meta={"n": 2})
    assert p.read_text() == "a,b\n1,x\n2,y\n"
    side = store.read_sidecar("t.csv")
    assert side["sha256"] == file_digest(p)
    assert (side["config_hash"], side["seed"], side["metadata"]) == ("abc123", 7, {"n": 2})
    assert set(side["versions"]) >= {"python", "numpy", "scipy", "scikit-learn"}
    assert "time" not in json.dumps(side).lower()
    assert store.written == ["t.csv"]


def test_float_text_round_trips_exactly():
    vals = [0.1, 1 / 3, -2.5e-17, 1e300]
    assert [float(fmt(v)) for v in vals] == vals


def test_json_writer_handles_numpy_and_nonfinite(tmp_path):
    store = ArtifactStore(tmp_path)
    store.write_json("d.json", {"a": np.float64(1.5), "b": np.arange(3), "c": float("nan")})
    assert store.read_json("d.json") == {"a": 1.5, "b": [0, 1, 2], "c": None}
    assert dumps({"b": 1, "a": 2}).index('"a"') < dumps({"b": 1, "a": 2}).index('"b"')


def test_trajectory_round_trip(tmp_path):
    g = TimeGrid(-1.0, 1.0, 21)
    traj = GridTrajectory(g, np.column_stack([np.sin(g.times), np.cos(g.times)]))
    store = ArtifactStore(tmp_path)
    p = store.write_trajectory("x.csv", traj)
    back = read_trajectory(p, g.to_dict())
    assert np.array_equal(back.states, traj.states)
    assert np.array_equal(back.times, traj.times)
    assert read_trajectory(p).grid.n == 21


def test_versions_lists_this_package():
    assert "artifact" in versions()
