import csv
import json
from pathlib import Path

import numpy as np
import pytest
import yaml
from hypothesis import given, settings
from hypothesis import strategies as st

import distgame
from distgame.experiments import (
    ExperimentConfig,
    TournamentResult,
    compute_metrics,
    config_hash,
    export_plotdata,
    load_config,
    metric_records,
    run_tournament,
)
from distgame.experiments.cli import main
from distgame.games import PursuitConfig, PursuitEvasionGame
from distgame.policy import RandomTeamPolicy
from oracles import brute_force_metrics

SMOKE = Path(distgame.__file__).parent / "configs" / "smoke_pursuit.yaml"


# -- metrics ---------------------------------------------------------------------------


def test_static_agents_average_distance():
    K = 10
    p = np.tile([[[0.0, 0.0]]], (K, 1, 1))
    e = np.tile([[[0.3, 0.4]]], (K, 1, 1))
    m = compute_metrics(p, e, np.zeros((K, 2)))
    assert m.avg_min_distance == pytest.approx(0.5) and m.catches == 0


def test_seven_steps_in_range_count_seven_catches():
    K = 12
    p = np.zeros((K, 1, 2))
    e = np.full((K, 1, 2), 1.0)
    e[2:9] = [[0.1, 0.0]]
    assert compute_metrics(p, e, np.zeros((K, 2))).catches == 7


@pytest.mark.parametrize("d, caught", [(0.1249, 1), (0.125, 1), (0.1251, 0)])
def test_catch_threshold_boundary(d, caught):
    p = np.zeros((1, 1, 2))
    e = np.array([[[d, 0.0]]])
    assert compute_metrics(p, e, np.zeros((1, 2))).catches == caught


def test_metrics_match_brute_force_on_random_episodes():
    rng = np.random.default_rng(0)
    for _ in range(20):
        K, P, E = rng.integers(5, 40), rng.integers(1, 4), rng.integers(1, 4)
        p = rng.uniform(-1, 1, size=(K, P, 2))
        e = p[:, rng.integers(0, P, size=E)] + rng.choice([0.0, 0.125, 0.3], size=(K, E, 1)) * [1.0, 0.0]
        r = rng.normal(size=(K, 2))
        m = compute_metrics(p, e, r)
        avg, catches, cum = brute_force_metrics(p.tolist(), e.tolist(), r.tolist())
        assert m.catches == catches
        assert m.avg_min_distance == pytest.approx(avg, abs=1e-12)
        np.testing.assert_allclose(m.cumulative_reward, cum, atol=1e-12)


def test_records_are_prefix_sums():
    rng = np.random.default_rng(1)
    p, e, r = rng.uniform(-1, 1, (15, 2, 2)), rng.uniform(-1, 1, (15, 2, 2)), rng.normal(size=(15, 2))
    recs = metric_records(0, p, e, r)
    assert len(recs) == 15
    np.testing.assert_allclose([x.cumulative_reward for x in recs], np.cumsum(r, axis=0))
    assert [x.cumulative_catches for x in recs] == list(np.cumsum([x.catches for x in recs]))
    assert recs[-1].cumulative_catches == compute_metrics(p, e, r).catches


def test_tournament_self_play_symmetry():
    env = PursuitEvasionGame(PursuitConfig(n_pursuers=2, n_evaders=2, horizon=30))
    make = lambda: PursuitEvasionGame(env.config)
    rp = RandomTeamPolicy(0, env.spec, env.action_low, env.action_high)
    re = RandomTeamPolicy(1, env.spec, env.action_low, env.action_high)
    tour, _, _ = run_tournament(make, [("a", rp), ("b", rp)], [("a", re), ("b", re)], 40, seed=0)
    mean, std = tour.matrix("min_distance")
    assert abs(mean[0, 1] - mean[1, 0]) <= 3 * max(std[0, 1], 1e-12) / np.sqrt(40)


def test_zero_episode_tournament_is_empty():
    env = PursuitEvasionGame(PursuitConfig(n_pursuers=1, n_evaders=1))
    rp = RandomTeamPolicy(0, env.spec, env.action_low, env.action_high)
    re = RandomTeamPolicy(1, env.spec, env.action_low, env.action_high)
    tour, recs, _ = run_tournament(lambda: PursuitEvasionGame(env.config), [("r", rp)], [("r", re)], 0, 0)
    assert tour.empty and recs == {} and np.isnan(tour.matrix("catches")[0][0, 0])


# -- config -----------------------------------------------------------------------------


def test_unknown_keys_rejected():
    with pytest.raises(ValueError):
        ExperimentConfig.model_validate({"experiment": "lqr", "bogus": 1})
    with pytest.raises(ValueError):
        ExperimentConfig.model_validate({"experiment": "lqr", "env": {"n_team": 5}})
    with pytest.raises(ValueError):
        ExperimentConfig.model_validate({"experiment": "lqr", "train": {"gamma": 1.0}})
    with pytest.raises(ValueError):
        ExperimentConfig.model_validate({"experiment": "pursuit", "teams": {5: {"kind": "random"}}})


def test_five_team_lqr_setting_from_config():
    cfg = ExperimentConfig.model_validate({"experiment": "lqr", "env": {"n_teams": 5, "agents_per_team": 1, "horizon": 30}})
    env = cfg.make_env()
    assert env.spec.agents_per_team == (1,) * 5 and env.horizon == 30


@settings(max_examples=40, deadline=None)
@given(
    field=st.sampled_from(["seed", "env.horizon", "policy.cov_width", "train.epochs", "eval.episodes"]),
    delta=st.integers(1, 5),
)
def test_config_hash_changes_iff_field_changes(field, delta):
    base = load_config(SMOKE)
    data = base.model_dump(mode="json")
    same = ExperimentConfig.model_validate(json.loads(json.dumps(data)))
    assert config_hash(same) == config_hash(base)
    section, _, key = field.partition(".")
    target = data if not key else data[section]
    key = key or section
    target[key] = (target.get(key) or 1) + delta
    assert config_hash(ExperimentConfig.model_validate(data)) != config_hash(base)


# -- CLI ---------------------------------------------------------------------------------


def write_cfg(path, data):
    path.write_text(yaml.safe_dump(data))
    return str(path)


def test_cli_smoke_train_eval_export(tmp_path, capsys):
    run = tmp_path / "run"
    assert main(["train", str(SMOKE), "--out", str(run)]) == 0
    rows = (run / "metrics.jsonl").read_text().splitlines()
    assert len(rows) == 1
    man = json.loads((run / "manifest.json").read_text())
    assert man["config_hash"] == config_hash(load_config(SMOKE)) and man["seed"] == 3
    assert (run / "policy_team1.npz").exists() and not (run / "policy_team0.npz").exists()

    ev = tmp_path / "eval"
    assert main(["eval", str(SMOKE), "--checkpoints", str(run / "policy_team1.npz"), "--out", str(ev), "--trajectories"]) == 0
    tour = json.loads((ev / "tournament.json").read_text())
    assert tour["pursuers"] == ["random", "untrained"]
    assert tour["evaders"] == ["policy_team1:team1", "random", "untrained"]
    episodes = [json.loads(l) for l in (ev / "episodes.jsonl").read_text().splitlines()]
    assert len(episodes) == 2 * 3 * 3
    # every table entry is recomputable from the persisted per-episode rows
    for i, pn in enumerate(tour["pursuers"]):
        for j, en in enumerate(tour["evaders"]):
            eps = [r for r in episodes if r["pursuer"] == pn and r["evader"] == en]
            assert tour["tables"]["catches"]["mean"][i][j] == pytest.approx(np.mean([r["catches"] for r in eps]))
            assert tour["tables"]["min_distance"]["std"][i][j] == pytest.approx(np.std([r["avg_min_distance"] for r in eps]))
            assert tour["tables"]["evader_reward"]["mean"][i][j] == pytest.approx(
                np.mean([r["cumulative_reward"][1] for r in eps])
            )
    traj = (ev / "trajectories.jsonl").read_text().splitlines()
    assert len(traj) == 6 * 3 * 20 * 4
    assert set(json.loads(traj[0])) >= {"step", "agent", "state", "action", "cost"}

    assert main(["export", str(run)]) == 0
    with open(run / "plotdata.csv") as fh:
        table = list(csv.reader(fh))
    assert table[0] == ["series", "x", "y", "std"]
    assert len(table) - 1 == len(rows) * 2
    assert main(["export", str(ev), "--out", str(tmp_path / "curves.csv")]) == 0
    with open(tmp_path / "curves.csv") as fh:
        curve_rows = list(csv.DictReader(fh))
    assert len({r["series"] for r in curve_rows}) == 6 * 2
    assert len(curve_rows) == len((ev / "curves.jsonl").read_text().splitlines()) * 2


def test_cli_train_and_eval_deterministic(tmp_path):
    for name in ("a", "b"):
        assert main(["train", str(SMOKE), "--out", str(tmp_path / name)]) == 0
        ck = str(tmp_path / name / "checkpoint_last.npz")
        assert main(["eval", str(SMOKE), "--checkpoints", ck, "--out", str(tmp_path / f"{name}_eval")]) == 0
    for f in ("metrics.jsonl",):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
    for f in ("tournament.json", "episodes.jsonl", "records.jsonl", "curves.jsonl"):
        assert (tmp_path / "a_eval" / f).read_bytes() == (tmp_path / "b_eval" / f).read_bytes()


def test_cli_invalid_config_exit_2(tmp_path, capsys):
    bad = write_cfg(tmp_path / "bad.yaml", {"experiment": "lqr", "train": {"itrations": 3}})
    assert main(["train", bad, "--out", str(tmp_path / "x")]) == 2
    assert "itrations" in capsys.readouterr().err
    assert main(["train", str(tmp_path / "missing.yaml")]) == 2
    assert main(["eval", write_cfg(tmp_path / "b2.yaml", {"experiment": "chess"})]) == 2


def test_cli_export_missing_logs_exit_1(tmp_path):
    assert main(["export", str(tmp_path)]) == 1


def test_export_empty_log_is_header_only(tmp_path):
    (tmp_path / "metrics.jsonl").write_text("")
    path = export_plotdata(tmp_path)
    assert path.read_text().strip() == "series,x,y,std"


def test_cli_zero_episode_eval_exit_0(tmp_path, capsys):
    assert main(["eval", str(SMOKE), "--episodes", "0", "--out", str(tmp_path / "e")]) == 0
    cfg = write_cfg(tmp_path / "lqr.yaml", {"experiment": "lqr", "env": {"n_teams": 2}})
    assert main(["eval", cfg, "--episodes", "0", "--out", str(tmp_path / "l")]) == 0
    assert json.loads((tmp_path / "l" / "eval.json").read_text())["episodes"] == 0


def test_cli_eval_rejects_mismatched_checkpoint(tmp_path, capsys):
    run = tmp_path / "run"
    assert main(["train", str(SMOKE), "--out", str(run)]) == 0
    cfg = write_cfg(tmp_path / "nav.yaml", {"experiment": "navigation"})
    assert main(["eval", cfg, "--checkpoints", str(run / "policy_team1.npz"), "--episodes", "1", "--out", str(tmp_path / "n")]) == 1
    assert "eval failed" in capsys.readouterr().err


def test_lqr_eval_reports_ratio_to_riccati(tmp_path):
    cfg = write_cfg(
        tmp_path / "lqr.yaml",
        {"experiment": "lqr", "env": {"n_teams": 2}, "policy": {"widths": [8]}, "train": {"iterations": 1, "episodes_per_iteration": 2}},
    )
    assert main(["train", cfg, "--out", str(tmp_path / "r")]) == 0
    cks = [str(tmp_path / "r" / f"policy_team{t}.npz") for t in (0, 1)]
    assert main(["eval", cfg, "--checkpoints", *cks, "--episodes", "5", "--out", str(tmp_path / "e"), "--trajectories"]) == 0
    summary = json.loads((tmp_path / "e" / "eval.json").read_text())
    assert summary["ratio_to_riccati"] == pytest.approx(summary["true_cost_mean"] / summary["riccati_cost_mean"])
    assert len((tmp_path / "e" / "trajectories.jsonl").read_text().splitlines()) == 5 * 30 * 2


def test_output_root_env_var(tmp_path, monkeypatch):
    monkeypatch.setenv("DISTGAME_OUTPUT_ROOT", str(tmp_path))
    assert main(["train", str(SMOKE), "--out", "rel"]) == 0
    assert (tmp_path / "rel" / "metrics.jsonl").exists()


def test_help_documents_flags(capsys):
    for sub in ("train", "eval", "export"):
        with pytest.raises(SystemExit):
            main([sub, "--help"])
    out = capsys.readouterr().out
    for flag in ("--seed", "--out", "--threads", "--checkpoints", "--episodes", "--resume"):
        assert flag in out
