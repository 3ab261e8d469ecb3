"""Run configuration: every constant named in the design lives here and in
the YAML config file.

Top-level YAML keys mirror the dataclass fields:

    world:    comm_range, lane_width, vehicle_length, vehicle_width
    dynamics: dt, accel_min, accel_max, steer_min, steer_max, k_lat,
              k_head, lookahead, brake_value, wheelbase_frac
    shield:   c1, c2, c3, gamma_cbf, epsilon, lipschitz_sum (null = audit
              at startup), horizon, conflict_radius, v_max, p_col, p_sas
    marl:     hidden, lr, clip_eps, gamma, kappa_wst, kappa_reg, n_adv,
              eps_explore_start, eps_explore_end, ppo_epochs,
              critic_epochs, worst_q_sync, reward_scale, epsilon_ball,
              n_cav_slots, n_ucv_slots, max_lanes
    harness:  episode_len, train_episodes, test_episodes,
              quick_train_episodes, quick_test_episodes, action_k,
              ptb_window, ptb_epsilon_bound, ptb_targets
"""

import dataclasses
import math
from dataclasses import dataclass, field

import yaml

from ..dynamics import DynamicsParams
from ..shield import ShieldConfig


@dataclass
class WorldConfig:
    comm_range: float = 200.0
    lane_width: float = 3.5
    vehicle_length: float = 4.5
    vehicle_width: float = 2.0


@dataclass
class MarlConfig:
    hidden: tuple = (64, 64)
    lr: float = 3e-4
    lr_critic: float = 1e-3
    clip_eps: float = 0.2
    gamma: float = 0.99
    kappa_wst: float = 0.1
    kappa_reg: float = 0.05
    n_adv: int = 8
    eps_explore_start: float = 0.3
    eps_explore_end: float = 0.05
    ppo_epochs: int = 6
    critic_epochs: int = 10
    worst_q_sync: int = 1
    # Internal optimization scale for raw rewards; metrics stay raw.
    reward_scale: float = 1e-3
    # Radius of the regularizer's perturbation ball (raw meters / m/s).
    epsilon_ball: float = 2.0
    n_cav_slots: int = 2
    n_ucv_slots: int = 3
    max_lanes: int = 4


@dataclass
class HarnessConfig:
    episode_len: int = 200
    train_episodes: int = 200
    test_episodes: int = 50
    quick_train_episodes: int = 20
    quick_test_episodes: int = 10
    action_k: int = 3
    ptb_window: tuple = (50, 150)
    ptb_epsilon_bound: float = math.inf
    # Target set for the target-vehicles strategy; None = every UCV.
    ptb_targets: tuple = None


@dataclass
class Config:
    world: WorldConfig = field(default_factory=WorldConfig)
    dynamics: DynamicsParams = field(default_factory=DynamicsParams)
    shield: ShieldConfig = field(default_factory=lambda: ShieldConfig(epsilon=2.0))
    marl: MarlConfig = field(default_factory=MarlConfig)
    harness: HarnessConfig = field(default_factory=HarnessConfig)

    def to_dict(self):
        doc = dataclasses.asdict(self)
        return _tuples_to_lists(doc)

    def to_yaml(self):
        return yaml.safe_dump(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, doc):
        doc = dict(doc or {})
        return cls(
            world=_build(WorldConfig, doc.get("world")),
            dynamics=_build(DynamicsParams, doc.get("dynamics")),
            shield=_build(ShieldConfig, doc.get("shield")),
            marl=_build(MarlConfig, doc.get("marl")),
            harness=_build(HarnessConfig, doc.get("harness")),
        )

    @classmethod
    def from_yaml(cls, text):
        return cls.from_dict(yaml.safe_load(text) or {})

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_yaml(fh.read())


def _build(cls, doc):
    doc = dict(doc or {})
    fields = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in doc.items():
        if key not in fields:
            raise KeyError(f"unknown {cls.__name__} key {key!r}")
        if isinstance(value, list):
            value = tuple(value)
        kwargs[key] = value
    return cls(**kwargs)


def _tuples_to_lists(obj):
    if isinstance(obj, dict):
        return {k: _tuples_to_lists(v) for k, v in obj.items()}
    if isinstance(obj, tuple):
        return [_tuples_to_lists(v) for v in obj]
    if isinstance(obj, list):
        return [_tuples_to_lists(v) for v in obj]
    return obj
