"""Data-efficiency sweep: grid shape, CSV schema, round-trip, aggregation."""

import pytest

from deskgrasp.errors import ConfigurationError, InputError
from deskgrasp.sweep import (
    CSV_HEADER,
    SweepConfig,
    mean_success,
    parse_sweep_csv,
    render_sweep_csv,
    run_sweep,
)


def _tiny_config(**overrides):
    base = dict(ns=[4], seeds=[0], test_episodes=4, train_steps=4,
                batch_size=2, height=32, width=32, base_channels=8,
                patch=2, spike_steps=2, scene_scale=10.0)
    base.update(overrides)
    return SweepConfig(**base)


@pytest.fixture(scope="module")
def tiny_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("sweep") / "curve.csv"
    rows = run_sweep(_tiny_config(), str(out))
    return rows, out


def test_one_n_one_seed_gives_exactly_two_data_rows(tiny_run):
    rows, out = tiny_run
    assert len(rows) == 2
    assert {r["model"] for r in rows} == {"rasnet", "cnn"}
    text = out.read_text()
    assert text.splitlines()[0] == ",".join(CSV_HEADER)
    assert len(text.splitlines()) == 3


def test_csv_round_trip_equals_emitted_records(tiny_run):
    rows, out = tiny_run
    parsed = parse_sweep_csv(str(out), from_path=True)
    assert len(parsed) == len(rows)
    for a, b in zip(parsed, rows):
        assert a["model"] == b["model"]
        assert a["n"] == b["n"] and a["seed"] == b["seed"]
        assert a["success_rate"] == pytest.approx(b["success_rate"], abs=0)
        assert a["mean_err"] == pytest.approx(b["mean_err"], abs=0)


def test_rows_carry_sane_values(tiny_run):
    rows, _ = tiny_run
    for row in rows:
        assert 0.0 <= row["success_rate"] <= 1.0
        assert row["mean_err"] >= 0.0
        assert row["wall_seconds"] > 0.0


def test_header_schema_validated():
    with pytest.raises(InputError, match="header"):
        parse_sweep_csv("model,n,seed\nrasnet,1,0\n")
    good = render_sweep_csv([{ "model": "cnn", "n": 10, "seed": 1,
                               "success_rate": 0.5, "mean_err": 0.1,
                               "wall_seconds": 2.0}])
    assert parse_sweep_csv(good)[0]["n"] == 10


def test_missing_fields_rejected():
    text = ",".join(CSV_HEADER) + "\ncnn,10,0,0.5,,2.0\n"
    with pytest.raises(InputError, match="missing"):
        parse_sweep_csv(text)


def test_mean_success_aggregates_per_model_and_n():
    rows = [
        {"model": "rasnet", "n": 40, "seed": 0, "success_rate": 0.6},
        {"model": "rasnet", "n": 40, "seed": 1, "success_rate": 0.8},
        {"model": "cnn", "n": 40, "seed": 0, "success_rate": 0.2},
    ]
    assert mean_success(rows, "rasnet", 40) == pytest.approx(0.7)
    assert mean_success(rows, "cnn", 40) == pytest.approx(0.2)
    with pytest.raises(InputError):
        mean_success(rows, "cnn", 10)


def test_config_validation():
    with pytest.raises(ConfigurationError, match="ascending"):
        SweepConfig(ns=[20, 10]).validate()
    with pytest.raises(ConfigurationError, match="seed"):
        SweepConfig(seeds=[]).validate()
    with pytest.raises(ConfigurationError, match="unknown sweep model"):
        SweepConfig(models=("rasnet", "transformer")).validate()


def test_default_grid_shape():
    cfg = SweepConfig()
    assert cfg.ns == [10, 20, 40, 100, 200]
    assert cfg.seeds == [0, 1, 2]
    assert cfg.models == ("rasnet", "cnn")
