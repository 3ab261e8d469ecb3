"""Evaluation protocol: n test episodes per (scenario, perturbation) cell,
collision-free rate and mean episode return, table/CSV emitters."""

import json
from dataclasses import dataclass, field

import numpy as np

from ..marl.trainer import NeuralTeamPolicy, load_checkpoint, restore_agents
from ..marl.encode import Encoder
from ..perturb import (
    identity_schedule,
    make_ptb_over_time,
    make_ptb_target_vehicles,
    make_rand,
)
from . import episode as ep
from . import scenario as scen

PTB_KINDS = ("none", "rand", "time", "veh")


@dataclass
class EvalReport:
    scenario: str
    ptb: str
    n_episodes: int
    collision_free_rate: float
    mean_episode_return: float
    episodes: list = field(default_factory=list)  # (seed, return, collisions)

    def to_dict(self):
        return {
            "scenario": self.scenario,
            "ptb": self.ptb,
            "n_episodes": self.n_episodes,
            "collision_free_rate": self.collision_free_rate,
            "mean_episode_return": self.mean_episode_return,
            "episodes": [
                {"seed": s, "return": r, "collisions": c}
                for s, r, c in self.episodes
            ],
        }


def build_schedule(kind, seed, cfg, spec):
    if kind == "none":
        return identity_schedule()
    if kind == "rand":
        return make_rand(seed, epsilon_bound=cfg.harness.ptb_epsilon_bound)
    if kind == "time":
        return make_ptb_over_time(
            seed, cfg.harness.ptb_window,
            epsilon_bound=cfg.harness.ptb_epsilon_bound,
        )
    if kind == "veh":
        targets = cfg.harness.ptb_targets or spec.ucv_ids
        return make_ptb_target_vehicles(
            seed, targets, epsilon_bound=cfg.harness.ptb_epsilon_bound,
        )
    raise ValueError(f"unknown perturbation kind {kind!r}")


def evaluate(checkpoint_path, ptb="none", n_episodes=50, seed=0, cfg=None,
             shield_mode=None, save_logs_dir=None):
    """Run the test protocol for one checkpoint under one perturbation."""
    from .config import Config

    if n_episodes <= 0:
        raise ValueError("n_episodes must be positive")
    cfg = cfg or Config()
    header, params = load_checkpoint(checkpoint_path)
    agents, enc_spec = restore_agents(header, params)
    spec = scen.build_scenario(header["scenario"], mode="test", cfg=cfg)
    encoder = Encoder(enc_spec, spec.road.lanes.keys())
    shield_mode = shield_mode or header.get("shield_mode", ep.SHIELD_ROBUST)

    episodes = []
    for i in range(n_episodes):
        sub = int(np.random.SeedSequence([seed, 0xEE, i]).generate_state(1)[0])
        schedule = build_schedule(ptb, sub, cfg, spec)
        policy = NeuralTeamPolicy(
            agents, encoder, spec.agent_ids, eps_explore=0.0, record=False
        )
        log = ep.run_episode(
            spec, cfg, policy, schedule=schedule, seed=sub,
            shield_mode=shield_mode, collect_obs=save_logs_dir is not None,
        )
        ret = float(np.mean(list(log.returns().values())))
        cols = log.collision_count()
        episodes.append((sub, ret, cols))
        if save_logs_dir is not None:
            log.save(f"{save_logs_dir}/episode_{i:03d}.jsonl")
    free = sum(1 for _, _, c in episodes if c == 0) / len(episodes)
    mean_ret = float(np.mean([r for _, r, _ in episodes]))
    return EvalReport(
        scenario=spec.name, ptb=ptb, n_episodes=n_episodes,
        collision_free_rate=free, mean_episode_return=mean_ret,
        episodes=episodes,
    )


def format_table(reports):
    """Plain-text matrix: scenario rows x perturbation columns, each cell
    (collision-free rate; mean episode return)."""
    cells = {(r.scenario, r.ptb): r for r in reports}
    scenarios = sorted({r.scenario for r in reports})
    ptbs = [p for p in ("rand", "time", "veh", "none") if any(r.ptb == p for r in reports)]
    width = 22
    header = "scenario".ljust(14) + "".join(p.ljust(width) for p in ptbs)
    lines = [header, "-" * len(header)]
    for sc in scenarios:
        row = sc.ljust(14)
        for p in ptbs:
            rep = cells.get((sc, p))
            if rep is None:
                row += "-".ljust(width)
            else:
                row += f"{rep.collision_free_rate:.0%}; {rep.mean_episode_return:.1f}".ljust(width)
        lines.append(row)
    return "\n".join(lines)


def table_csv(reports):
    lines = ["scenario,ptb,collision_free_rate,mean_episode_return,n_episodes"]
    for r in sorted(reports, key=lambda r: (r.scenario, r.ptb)):
        lines.append(
            f"{r.scenario},{r.ptb},{r.collision_free_rate},"
            f"{r.mean_episode_return},{r.n_episodes}"
        )
    return "\n".join(lines) + "\n"


def scatter_csv(report):
    """Per-episode scatter data (return-plot export)."""
    lines = ["episode,seed,return,collisions"]
    for i, (s, r, c) in enumerate(report.episodes):
        lines.append(f"{i},{s},{r},{c}")
    return "\n".join(lines) + "\n"


def save_report(path, report):
    with open(path, "w") as fh:
        json.dump(report.to_dict(), fh, indent=2, sort_keys=True)


def load_report(path):
    with open(path) as fh:
        doc = json.load(fh)
    return EvalReport(
        scenario=doc["scenario"], ptb=doc["ptb"], n_episodes=doc["n_episodes"],
        collision_free_rate=doc["collision_free_rate"],
        mean_episode_return=doc["mean_episode_return"],
        episodes=[(e["seed"], e["return"], e["collisions"]) for e in doc["episodes"]],
    )
