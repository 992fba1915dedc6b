import dataclasses
import json
import os

import numpy as np
import pytest

from taaclab.cli import main
from taaclab.config import (
    ConfigError,
    RunConfig,
    build_config,
    config_to_dict,
    echo_config,
    parse_config,
)


def write_json(path, data):
    with open(path, "w") as fh:
        json.dump(data, fh)
    return str(path)


# ---------------------------------------------------------------------------
# config parsing


def test_empty_object_gives_all_defaults(tmp_path):
    path = write_json(tmp_path / "cfg.json", {"out_dir": str(tmp_path / "out")})
    cfg = parse_config(path)
    defaults = RunConfig()
    assert cfg.env == defaults.env
    assert cfg.learner == defaults.learner
    assert cfg.seed == defaults.seed


def test_gamma_out_of_bounds_rejected_by_name(tmp_path):
    path = write_json(tmp_path / "cfg.json", {"learner": {"gamma": 1.5}})
    with pytest.raises(ConfigError, match="gamma"):
        parse_config(path)


def test_unknown_key_rejected_with_path():
    with pytest.raises(ConfigError, match="learner.gamm"):
        build_config({"learner": {"gamm": 0.9}})
    with pytest.raises(ConfigError, match="unknown key"):
        build_config({"lerner": {}})


def test_type_mismatch_rejected_with_path():
    with pytest.raises(ConfigError, match="env.pitch_length"):
        build_config({"env": {"pitch_length": "wide"}})
    with pytest.raises(ConfigError, match="seed"):
        build_config({"seed": 1.5})
    with pytest.raises(ConfigError, match="league.kinds"):
        build_config({"league": {"kinds": [3]}})


def test_round_trip_parse_echo_parse_is_identical(tmp_path):
    out = tmp_path / "out"
    path = write_json(tmp_path / "cfg.json", {
        "env": {"steps_per_game": 123, "theta_exp": 0.02},
        "learner": {"gamma": 0.9, "games_per_update": 3},
        "curriculum": {"stage_games": [1, 2, 3, 4]},
        "league": {"kinds": ["random", "ppo"]},
        "seed": 17,
        "out_dir": str(out),
    })
    cfg = parse_config(path)
    echo_path = out / "config_echo.json"
    assert echo_path.exists()
    cfg2 = parse_config(str(echo_path))
    assert cfg == cfg2
    assert config_to_dict(cfg) == config_to_dict(cfg2)


def test_missing_config_file_rejected():
    with pytest.raises(ConfigError, match="not found"):
        parse_config("/nonexistent/config.json")


def test_invalid_json_rejected(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text("{not json")
    with pytest.raises(ConfigError, match="JSON"):
        parse_config(str(path))


def test_env_var_overrides_out_dir(tmp_path, monkeypatch):
    override = tmp_path / "elsewhere"
    monkeypatch.setenv("TAACLAB_OUT_DIR", str(override))
    path = write_json(tmp_path / "cfg.json", {"out_dir": str(tmp_path / "ignored")})
    cfg = parse_config(path)
    assert cfg.out_dir == str(override)


def test_seed_override(tmp_path):
    path = write_json(tmp_path / "cfg.json", {"seed": 5, "out_dir": str(tmp_path / "o")})
    cfg = parse_config(path, override_seed=42)
    assert cfg.seed == 42


def test_policy_kind_validated(tmp_path):
    with pytest.raises(ConfigError, match="kind"):
        build_config({"policy": {"kind": "dqn"}})


# ---------------------------------------------------------------------------
# CLI


def tiny_config(tmp_path, **extra):
    data = {
        "env": {"steps_per_game": 40},
        "net": {"d_model": 16, "actor_heads": 2, "critic_heads": 2,
                "embed_hidden": 16, "post_hidden": 16},
        "learner": {"snapshot_interval": 5},
        "curriculum": {"stage_games": [1, 0, 0, 0]},
        "league": {"n_games": 4, "teams_per_kind": 1, "kinds": ["random", "taac"]},
        "seed": 11,
        "out_dir": str(tmp_path / "out"),
    }
    data.update(extra)
    return write_json(tmp_path / "cfg.json", data)


def test_cli_unknown_subcommand_is_usage_error(capsys):
    assert main(["frobnicate"]) == 1
    assert main([]) == 1


def test_cli_missing_required_argument_is_usage_error():
    assert main(["train"]) == 1


def test_cli_bad_config_is_validation_error(tmp_path):
    path = write_json(tmp_path / "bad.json", {"learner": {"gamma": 2.0}})
    assert main(["train", "--config", path]) == 2


def test_cli_train_league_eval_replay_pipeline(tmp_path, capsys):
    cfg_path = tiny_config(tmp_path)
    assert main(["train", "--config", cfg_path]) == 0
    out = tmp_path / "out"
    assert (out / "training_log.jsonl").exists()
    snapshots = sorted(os.listdir(out / "snapshots"))
    assert snapshots

    assert main(["league", "--config", cfg_path]) == 0
    assert (out / "league" / "league_report.json").exists()
    assert (out / "league" / "matches.csv").exists()

    snap = str(out / "snapshots" / snapshots[-1])
    report_a = tmp_path / "eval_a.json"
    report_b = tmp_path / "eval_b.json"
    assert main(["eval", "--a", snap, "--b", snap, "--games", "2",
                 "--config", cfg_path, "--out", str(report_a)]) == 0
    assert main(["eval", "--a", snap, "--b", snap, "--games", "2",
                 "--config", cfg_path, "--out", str(report_b)]) == 0
    assert report_a.read_bytes() == report_b.read_bytes()

    # produce a replay via a quick match, then export per-frame metrics
    from taaclab.baselines import RandomTeamPolicy
    from taaclab.env import EnvConfig
    from taaclab.evaluation import play_match, write_replay

    rec = play_match(RandomTeamPolicy(), RandomTeamPolicy(),
                     EnvConfig(steps_per_game=30), seed=3)
    replay_path = tmp_path / "replay.jsonl"
    write_replay(rec.frames, replay_path)
    csv_path = tmp_path / "frames.csv"
    assert main(["replay", "--match", str(replay_path), "--out", str(csv_path)]) == 0
    lines = csv_path.read_text().strip().splitlines()
    assert len(lines) == 31  # header + one row per frame
    header = lines[0].split(",")
    for column in ("t", "pairdist_0", "pairdist_1", "conn_0", "conn_1",
                   "swaps_0", "swaps_1"):
        assert column in header


def test_cli_train_zero_games_snapshot_equals_initialization(tmp_path):
    cfg_path = tiny_config(tmp_path, curriculum={"stage_games": [0, 0, 0, 0]})
    assert main(["train", "--config", cfg_path]) == 0
    from taaclab.baselines import build_policy
    from taaclab.config import parse_config as pc
    from taaclab.nets import load_snapshot

    cfg = pc(cfg_path, echo=False)
    snap_dir = tmp_path / "out" / "snapshots"
    snap = load_snapshot(snap_dir / sorted(os.listdir(snap_dir))[-1])
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0]))
    reference = build_policy("taac", cfg.net, rng)
    for key, arr in reference.to_snapshot(0).params.items():
        np.testing.assert_array_equal(snap.params[key], arr)


def test_cli_gradcheck_small_run_exits_zero(capsys):
    assert main(["gradcheck", "--seeds", "1"]) == 0
    out = capsys.readouterr().out
    assert "worst max_rel_err" in out
    assert "FAIL" not in out


def test_cli_league_from_snapshot_directory(tmp_path):
    cfg_path = tiny_config(tmp_path, learner={"snapshot_interval": 1},
                           curriculum={"stage_games": [2, 0, 0, 0]})
    assert main(["train", "--config", cfg_path]) == 0
    snap_dir = str(tmp_path / "out" / "snapshots")
    assert main(["league", "--config", cfg_path, "--teams", snap_dir,
                 "--threads", "2"]) == 0
    report_path = tmp_path / "out" / "league" / "league_report.json"
    with open(report_path) as fh:
        report = json.load(fh)
    # one team per snapshot file, named after the file
    assert len(report["teams"]) == len(os.listdir(snap_dir))
    assert all(name.startswith("snapshot_v") for name in report["teams"])


def test_cli_eval_rejects_missing_snapshot(tmp_path):
    code = main(["eval", "--a", str(tmp_path / "none.json"),
                 "--b", str(tmp_path / "none.json"), "--games", "1"])
    assert code == 2


def test_cli_numeric_failure_maps_to_exit_3(tmp_path, monkeypatch):
    from taaclab import learner

    def explode(cfg, resume=True):
        raise learner.NumericFailure("non-finite gradient in actor_update")

    monkeypatch.setattr(learner, "run_curriculum", explode)
    cfg_path = tiny_config(tmp_path)
    assert main(["train", "--config", cfg_path]) == 3
