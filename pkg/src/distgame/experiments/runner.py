"""Training runs, evaluation tournaments and plot-data export."""

from __future__ import annotations

import csv
import json
import logging
import os
import platform
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import pydantic
import yaml

from .. import __version__
from ..baselines import episode_seeds, riccati_finite
from ..checkpoint import CheckpointError, load_arrays
from ..evaluation import lqr_riccati_cost, navigation_summary, play_episodes
from ..games.pursuit import EVADERS, PURSUERS
from ..policy import AttentionTeamPolicy, PolicyParams, RandomTeamPolicy
from ..trainer import TrainResult, train
from .config import ExperimentConfig, build_policies, config_hash
from .metrics import TournamentResult, compute_metrics, metric_records

log = logging.getLogger(__name__)

OUTPUT_ROOT_ENV = "DISTGAME_OUTPUT_ROOT"
PLOT_COLUMNS = ("series", "x", "y", "std")


def resolve_output_dir(cfg: ExperimentConfig, out: str | None = None, suffix: str = "") -> Path:
    """--out, else the config's output_dir, else runs/<name>; relative paths sit under $DISTGAME_OUTPUT_ROOT."""
    path = Path(out or cfg.output_dir or os.path.join("runs", cfg.run_name + suffix))
    if not path.is_absolute():
        path = Path(os.environ.get(OUTPUT_ROOT_ENV, ".")) / path
    return path


def manifest(cfg: ExperimentConfig, seed: int) -> dict:
    return {
        "experiment": cfg.experiment,
        "name": cfg.run_name,
        "config_hash": config_hash(cfg),
        "seed": seed,
        "versions": {
            "distgame": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
            "pydantic": pydantic.__version__,
            "pyyaml": yaml.__version__,
        },
    }


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def run_train(
    cfg: ExperimentConfig,
    out_dir: Path,
    seed: int | None = None,
    iterations: int | None = None,
    resume: str | None = None,
) -> TrainResult:
    """Train every non-frozen attention team and write the run directory.

    Contents: config.json, manifest.json, metrics.jsonl (one row per
    iteration), timing.jsonl, checkpoint_*.npz and one policy_team<i>.npz
    per attention team.
    """
    seed = cfg.seed if seed is None else seed
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    _write_json(out_dir / "config.json", cfg.model_dump(mode="json"))
    _write_json(out_dir / "manifest.json", manifest(cfg, seed))
    tcfg = cfg.train_config(seed)
    if iterations is not None:
        tcfg.iterations = iterations
    make_env = cfg.env_factory()
    env = make_env()
    policies = build_policies(cfg, env.spec, env, seed)
    result = train(make_env, policies, tcfg, out_dir=str(out_dir), resume_from=resume)
    for t, pol in policies.items():
        if isinstance(pol, AttentionTeamPolicy):
            pol.save(out_dir / f"policy_team{t}.npz", {"config_hash": config_hash(cfg), "seed": seed})
    return result


# -- checkpoints --------------------------------------------------------------


def load_team_policies(path, spec) -> dict:
    """Policies found in a checkpoint file, keyed by team.

    Accepts a single-team policy file or a full trainer checkpoint.
    """
    arrays, meta = load_arrays(path)
    kind = meta.get("kind")
    if kind == "attention_team_policy":
        return {int(meta["team"]): AttentionTeamPolicy.load(path, spec)}
    if kind == "trainer":
        out = {}
        for t_str, info in meta["policies"].items():
            t = int(t_str)
            params = {}
            for r_str, hyper in info["hyper"].items():
                _check_dims(path, hyper, spec)
                params[int(r_str)] = PolicyParams(
                    hyper["state_dim"], hyper["action_dim"], hyper["n_teams"], hyper["widths"],
                    hyper["cov_width"], feature_scale=hyper["feature_scale"],
                    attention_axis=hyper.get("attention_axis", "features"), rng=0,
                )
            pol = AttentionTeamPolicy(t, spec, params, info["roles"])
            pol.load_arrays(arrays, prefix="policy/")
            out[t] = pol
        return out
    raise CheckpointError(f"{path}: unrecognized checkpoint kind {kind!r}")


def _check_dims(path, hyper, spec):
    if hyper["state_dim"] != spec.state_dim or hyper["action_dim"] != spec.action_dim:
        raise CheckpointError(
            f"{path}: policy dims (X={hyper['state_dim']}, U={hyper['action_dim']}) "
            f"do not match the game (X={spec.state_dim}, U={spec.action_dim})"
        )


# -- evaluation ---------------------------------------------------------------


@dataclass
class EvalResult:
    experiment: str
    episodes: int
    summary: dict = field(default_factory=dict)
    tournament: TournamentResult | None = None


def _pairing(make_env, pursuer, evader, seeds, rng_seed, catch_radius, trajectories=False):
    logs = play_episodes(make_env, {PURSUERS: pursuer, EVADERS: evader}, seeds, rng_seed)
    env = make_env()
    p_idx, e_idx = env.pursuer_index, env.evader_index
    metrics, records, traj = [], [], []
    for n, lg in enumerate(logs):
        pos = lg.positions[:-1]
        rewards = -lg.costs
        metrics.append(compute_metrics(pos[:, p_idx], pos[:, e_idx], rewards, catch_radius))
        records.extend(metric_records(n, pos[:, p_idx], pos[:, e_idx], rewards, catch_radius))
        if trajectories:
            traj.extend(lg.trajectory_records(n, env.team_of))
    return metrics, records, traj


def run_tournament(
    make_env,
    pursuers: Sequence[tuple[str, object]],
    evaders: Sequence[tuple[str, object]],
    episodes: int,
    seed: int,
    threads: int = 1,
    catch_radius: float = 0.125,
    trajectories: bool = False,
):
    """Round robin of every pursuer policy against every evader policy.

    Every pairing replays the same episode seeds. Returns the tournament,
    the per-step metric records keyed by pairing and, when requested, the
    per-agent trajectory records keyed by pairing.
    """
    result = TournamentResult([n for n, _ in pursuers], [n for n, _ in evaders], n_episodes=episodes)
    records, traj = {}, {}
    if episodes == 0:
        return result, records, traj
    seeds = episode_seeds(seed, episodes)
    jobs = [(i, j) for i in range(len(pursuers)) for j in range(len(evaders))]

    def job(ij):
        i, j = ij
        return _pairing(make_env, pursuers[i][1], evaders[j][1], seeds, seed, catch_radius, trajectories)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            outs = list(pool.map(job, jobs))
    else:
        outs = [job(ij) for ij in jobs]
    for ij, (metrics, recs, tr) in zip(jobs, outs):
        result.episodes[ij] = metrics
        records[ij] = recs
        traj[ij] = tr
    return result, records, traj


def _candidates(cfg, spec, env, checkpoints):
    pursuers, evaders = [], []
    for path in checkpoints:
        stem = Path(path).stem
        for t, pol in sorted(load_team_policies(path, spec).items()):
            (pursuers if t == PURSUERS else evaders).append((f"{stem}:team{t}", pol))
    for name in cfg.eval.opponents:
        if name == "random":
            pursuers.append(("random", RandomTeamPolicy(PURSUERS, spec, env.action_low, env.action_high)))
            evaders.append(("random", RandomTeamPolicy(EVADERS, spec, env.action_low, env.action_high)))
        else:
            fresh = build_policies(cfg, spec, env)
            pursuers.append(("untrained", fresh[PURSUERS]))
            evaders.append(("untrained", fresh[EVADERS]))
    return pursuers, evaders


def run_eval(
    cfg: ExperimentConfig,
    checkpoints: Sequence[str],
    out_dir: Path | None = None,
    episodes: int | None = None,
    seed: int | None = None,
    threads: int = 1,
    trajectories: bool = False,
) -> EvalResult:
    """Evaluate checkpoints with deterministic policies on fixed episode seeds.

    With ``trajectories`` the run directory also gets trajectories.jsonl,
    one (step, agent, state, action, cost) record per agent and step.
    """
    episodes = cfg.eval.episodes if episodes is None else episodes
    seed = cfg.eval.seed if seed is None else seed
    make_env = cfg.env_factory()
    env = make_env()
    spec = env.spec
    result = EvalResult(cfg.experiment, episodes)
    if cfg.experiment == "pursuit":
        pursuers, evaders = _candidates(cfg, spec, env, checkpoints)
        tour, records, traj = run_tournament(
            make_env, pursuers, evaders, episodes, seed, threads, env.config.catch_radius, trajectories
        )
        result.tournament = tour
        result.summary = tour.to_dict()
        if out_dir is not None:
            _write_tournament(Path(out_dir), tour, records)
            if trajectories:
                rows = [
                    {"pursuer": tour.pursuers[i], "evader": tour.evaders[j], **r}
                    for (i, j), recs in sorted(traj.items())
                    for r in recs
                ]
                _write_jsonl(Path(out_dir) / "trajectories.jsonl", rows)
        return result

    policies = {}
    for path in checkpoints:
        policies.update(load_team_policies(path, spec))
    for t in range(spec.n_teams):
        if t not in policies:
            if cfg.team(t).kind == "random":
                policies[t] = RandomTeamPolicy(t, spec, env.action_low, env.action_high)
            elif episodes > 0:
                raise CheckpointError(f"no checkpoint provides a policy for team {t}")
    logs = play_episodes(make_env, policies, episode_seeds(seed, episodes), seed) if episodes else []
    costs = np.array([lg.total_cost() for lg in logs]).reshape(len(logs), spec.n_teams)
    summary = {
        "episodes": episodes,
        "team_cost_mean": costs.mean(axis=0).tolist() if logs else [],
        "team_cost_std": costs.std(axis=0).tolist() if logs else [],
    }
    rows = [{"episode": n, "seed": lg.seed, "team_cost": lg.total_cost().tolist()} for n, lg in enumerate(logs)]
    if cfg.experiment == "lqr" and logs:
        true = np.array([sum(i["true_cost"] for i in lg.infos) for lg in logs])
        ric = lqr_riccati_cost(env, riccati_finite(_system(env), env.M, env.R, env.horizon), episodes, seed)
        summary.update(
            true_cost_mean=float(true.mean()),
            true_cost_std=float(true.std()),
            riccati_cost_mean=float(ric.mean()),
            ratio_to_riccati=float(true.mean() / ric.mean()),
        )
        for row, c, r in zip(rows, true, ric):
            row.update(true_cost=float(c), riccati_cost=float(r))
    if cfg.experiment == "navigation" and logs:
        nav = navigation_summary(logs, cfg.eval.goal_tolerance)
        summary.update(
            success_rate=nav.success_rate,
            proximity_active_fraction=nav.proximity_active_fraction,
        )
        for row, err in zip(rows, nav.final_errors):
            row["final_goal_error"] = err.tolist()
    result.summary = summary
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        _write_json(out_dir / "eval.json", summary)
        _write_jsonl(out_dir / "episodes.jsonl", rows)
        if trajectories:
            _write_jsonl(
                out_dir / "trajectories.jsonl",
                [r for n, lg in enumerate(logs) for r in lg.trajectory_records(n, spec.team_of)],
            )
    return result


def _system(env):
    from ..baselines import LinearSystem

    return LinearSystem(env.A, env.B, env.config.noise_bound)


def _write_jsonl(path: Path, rows) -> None:
    with open(path, "w") as fh:
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True) + "\n")


def _write_tournament(out_dir: Path, tour: TournamentResult, records: dict) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    _write_json(out_dir / "tournament.json", tour.to_dict())
    _write_jsonl(out_dir / "episodes.jsonl", tour.episode_rows())
    rows, curves = [], []
    for (i, j), recs in sorted(records.items()):
        tag = {"pursuer": tour.pursuers[i], "evader": tour.evaders[j]}
        rows.extend({**tag, **asdict(r)} for r in recs)
        if not recs:
            continue
        steps = max(r.step for r in recs) + 1
        cum = np.zeros((tour.n_episodes, steps, len(recs[0].reward)))
        for r in recs:
            cum[r.episode, r.step] = r.cumulative_reward
        for k in range(steps):
            curves.append(
                {**tag, "step": k, "mean": cum[:, k].mean(axis=0).tolist(), "std": cum[:, k].std(axis=0).tolist()}
            )
    _write_jsonl(out_dir / "records.jsonl", rows)
    _write_jsonl(out_dir / "curves.jsonl", curves)


# -- export -------------------------------------------------------------------


def read_jsonl(path) -> list[dict]:
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]


def plot_rows(metric_rows: Sequence[dict] = (), curve_rows: Sequence[dict] = ()) -> list[tuple]:
    """Tidy (series, x, y, std) rows.

    Training rows give one row per (iteration record, team), series
    ``team<i>_cost`` against environment steps. Tournament curves give
    ``<pursuer>_vs_<evader>/team<i>_cumulative_reward`` against the step.
    """
    out = []
    for row in metric_rows:
        for t, (m, s) in enumerate(zip(row["team_cost_mean"], row["team_cost_std"])):
            out.append((f"team{t}_cost", row["env_steps"], m, s))
    for row in curve_rows:
        for t, (m, s) in enumerate(zip(row["mean"], row["std"])):
            out.append((f"{row['pursuer']}_vs_{row['evader']}/team{t}_cumulative_reward", row["step"], m, s))
    return out


def export_plotdata(run_dir, out_path=None) -> Path:
    """Write plotdata.csv for a training and/or tournament directory."""
    run_dir = Path(run_dir)
    metrics_path, curves_path = run_dir / "metrics.jsonl", run_dir / "curves.jsonl"
    if not metrics_path.exists() and not curves_path.exists():
        raise FileNotFoundError(f"{run_dir}: no metrics.jsonl or curves.jsonl to export")
    metric_rows = read_jsonl(metrics_path) if metrics_path.exists() else []
    curve_rows = read_jsonl(curves_path) if curves_path.exists() else []
    out_path = Path(out_path) if out_path else run_dir / "plotdata.csv"
    with open(out_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(PLOT_COLUMNS)
        writer.writerows(plot_rows(metric_rows, curve_rows))
    return out_path
