"""Scenario definitions: Highway and Intersection builders plus a YAML
geometry file interface.

Geometry file keys: name, episode_len, mode, lane_width, lanes (id,
waypoints, signal), adjacency (lane -> {left, right}), spawns (id, lane,
s, speed range, connected), behaviors (per UCV: kind, brake_window,
brake_speed), destinations (id -> [x, y]).
"""

from dataclasses import dataclass, field
from typing import Optional

import yaml

from ..world import Path, RoadMap, VehicleState, World

BEHAVIOR_CONSTANT = "constant"
BEHAVIOR_SUDDEN_BRAKE = "sudden_brake"
BEHAVIOR_CROSSING = "crossing"


@dataclass
class SpawnSpec:
    vehicle_id: str
    lane: str
    s: float
    speed: tuple  # (lo, hi) sampled per episode
    connected: bool


@dataclass
class UcvBehavior:
    kind: str = BEHAVIOR_CONSTANT
    brake_window: tuple = (40, 80)  # step at which braking starts
    brake_speed: tuple = (3.0, 4.0)  # post-brake reference speed


@dataclass
class ScenarioSpec:
    name: str
    road: RoadMap
    cav_spawns: list
    ucv_spawns: list
    behaviors: dict  # ucv id -> UcvBehavior
    destinations: dict  # vehicle id -> (x, y)
    episode_len: int = 200
    mode: str = "train"
    vehicle_length: float = 4.5
    vehicle_width: float = 2.0

    @property
    def agent_ids(self):
        return [s.vehicle_id for s in self.cav_spawns]

    @property
    def ucv_ids(self):
        return [s.vehicle_id for s in self.ucv_spawns]


@dataclass
class UcvPlan:
    """Per-episode sampled script for one UCV."""

    v_ref: float
    brake_step: Optional[int] = None
    brake_speed: Optional[float] = None
    lane: str = ""

    def reference_speed(self, t):
        if self.brake_step is not None and t >= self.brake_step:
            return self.brake_speed
        return self.v_ref


@dataclass
class EpisodeSetup:
    world: World
    plans: dict = field(default_factory=dict)  # ucv id -> UcvPlan


def materialize(spec, rng, dt=0.05):
    """Sample one episode instance: spawn speeds and UCV scripts."""
    vehicles = []
    plans = {}
    for spawn in spec.cav_spawns + spec.ucv_spawns:
        path = spec.road.path(spawn.lane)
        x, y = path.point_at(spawn.s)
        psi = path.heading_at(spawn.s)
        lo, hi = spawn.speed
        v = float(rng.uniform(lo, hi))
        vehicles.append(
            VehicleState(
                id=spawn.vehicle_id, x=x, y=y, v=v, psi=psi,
                length=spec.vehicle_length, width=spec.vehicle_width,
                connected=spawn.connected,
            )
        )
        if not spawn.connected:
            beh = spec.behaviors.get(spawn.vehicle_id, UcvBehavior())
            plan = UcvPlan(v_ref=v, lane=spawn.lane)
            if beh.kind == BEHAVIOR_SUDDEN_BRAKE:
                w0, w1 = beh.brake_window
                plan.brake_step = int(rng.integers(w0, w1 + 1))
                plan.brake_speed = float(rng.uniform(*beh.brake_speed))
            plans[spawn.vehicle_id] = plan
    world = World(spec.road, vehicles, dt=dt)
    return EpisodeSetup(world=world, plans=plans)


def _straight(p0, p1):
    return [list(p0), list(p1)]


def build_highway(mode="train", cfg=None):
    """Three straight lanes; three CAVs spawned behind three UCVs.

    In test mode the middle UCV mimics a broken-down vehicle by suddenly
    braking to a low random speed.
    """
    from .config import Config

    cfg = cfg or Config()
    w = cfg.world.lane_width
    lanes = {}
    adjacency = {}
    names = ["hwy0", "hwy1", "hwy2"]
    for i, name in enumerate(names):
        lanes[name] = Path(_straight((-50.0, i * w), (600.0, i * w)),
                           lane_id=name, signal="green")
    adjacency["hwy0"] = {"left": "hwy1", "right": None}
    adjacency["hwy1"] = {"left": "hwy2", "right": "hwy0"}
    adjacency["hwy2"] = {"left": None, "right": "hwy1"}
    road = RoadMap(lanes, adjacency, lane_width=w)

    cav_spawns = [
        SpawnSpec(f"cav{i}", names[i], 60.0, (8.0, 10.0), True) for i in range(3)
    ]
    ucv_spawns = [
        SpawnSpec(f"ucv{i}", names[i], 100.0, (8.0, 10.0), False) for i in range(3)
    ]
    behaviors = {s.vehicle_id: UcvBehavior(BEHAVIOR_CONSTANT) for s in ucv_spawns}
    if mode == "test":
        behaviors["ucv1"] = UcvBehavior(
            BEHAVIOR_SUDDEN_BRAKE, brake_window=(40, 80), brake_speed=(3.0, 4.0)
        )
    destinations = {}
    for spawn in cav_spawns + ucv_spawns:
        path = road.path(spawn.lane)
        destinations[spawn.vehicle_id] = tuple(path.point_at(460.0))
    return ScenarioSpec(
        name="highway", road=road, cav_spawns=cav_spawns, ucv_spawns=ucv_spawns,
        behaviors=behaviors, destinations=destinations,
        episode_len=cfg.harness.episode_len, mode=mode,
        vehicle_length=cfg.world.vehicle_length,
        vehicle_width=cfg.world.vehicle_width,
    )


def build_intersection(mode="train", cfg=None):
    """Two perpendicular 2-lane roads; three CAVs pass on green while two
    UCVs cross against the red from both sides."""
    from .config import Config

    cfg = cfg or Config()
    w = cfg.world.lane_width
    lanes = {
        # Eastbound CAV road (green).
        "ew0": Path(_straight((-120.0, 0.0), (250.0, 0.0)), "ew0", signal="green"),
        "ew1": Path(_straight((-120.0, w), (250.0, w)), "ew1", signal="green"),
        # Crossing road (red): one lane southbound, one northbound.
        "ns0": Path(_straight((w, 150.0), (w, -150.0)), "ns0", signal="red"),
        "ns1": Path(_straight((2.0 * w, -150.0), (2.0 * w, 150.0)), "ns1", signal="red"),
    }
    adjacency = {
        "ew0": {"left": "ew1", "right": None},
        "ew1": {"left": None, "right": "ew0"},
        "ns0": {"left": None, "right": None},
        "ns1": {"left": None, "right": None},
    }
    road = RoadMap(lanes, adjacency, lane_width=w)

    cav_spawns = [
        SpawnSpec("cav0", "ew0", 55.0, (8.0, 10.0), True),
        SpawnSpec("cav1", "ew1", 45.0, (8.0, 10.0), True),
        SpawnSpec("cav2", "ew0", 30.0, (8.0, 10.0), True),
    ]
    cross_speed = (9.0, 11.0) if mode == "train" else (7.5, 12.5)
    ucv_spawns = [
        SpawnSpec("ucv0", "ns0", 95.0, cross_speed, False),
        SpawnSpec("ucv1", "ns1", 105.0, cross_speed, False),
    ]
    behaviors = {s.vehicle_id: UcvBehavior(BEHAVIOR_CROSSING) for s in ucv_spawns}
    destinations = {
        "cav0": tuple(road.path("ew0").point_at(320.0)),
        "cav1": tuple(road.path("ew1").point_at(320.0)),
        "cav2": tuple(road.path("ew0").point_at(320.0)),
        "ucv0": tuple(road.path("ns0").point_at(290.0)),
        "ucv1": tuple(road.path("ns1").point_at(290.0)),
    }
    return ScenarioSpec(
        name="intersection", road=road, cav_spawns=cav_spawns,
        ucv_spawns=ucv_spawns, behaviors=behaviors, destinations=destinations,
        episode_len=cfg.harness.episode_len, mode=mode,
        vehicle_length=cfg.world.vehicle_length,
        vehicle_width=cfg.world.vehicle_width,
    )


_BUILDERS = {"highway": build_highway, "intersection": build_intersection}


def build_scenario(name, mode="train", cfg=None):
    try:
        builder = _BUILDERS[name]
    except KeyError:
        raise ValueError(f"unknown scenario {name!r}") from None
    return builder(mode=mode, cfg=cfg)


def dump_scenario(spec):
    """Serialize a scenario to the YAML geometry format."""
    doc = {
        "name": spec.name,
        "episode_len": spec.episode_len,
        "mode": spec.mode,
        "lane_width": spec.road.lane_width,
        "vehicle_length": spec.vehicle_length,
        "vehicle_width": spec.vehicle_width,
        "lanes": [
            {
                "id": lane_id,
                "waypoints": [[float(x), float(y)] for x, y in path.waypoints],
                "signal": path.signal,
            }
            for lane_id, path in sorted(spec.road.lanes.items())
        ],
        "adjacency": {
            lane: {k: v for k, v in sides.items()}
            for lane, sides in sorted(spec.road.adjacency.items())
        },
        "spawns": [
            {
                "id": s.vehicle_id,
                "lane": s.lane,
                "s": s.s,
                "speed": list(s.speed),
                "connected": s.connected,
            }
            for s in spec.cav_spawns + spec.ucv_spawns
        ],
        "behaviors": {
            vid: {
                "kind": b.kind,
                "brake_window": list(b.brake_window),
                "brake_speed": list(b.brake_speed),
            }
            for vid, b in sorted(spec.behaviors.items())
        },
        "destinations": {
            vid: [float(x), float(y)]
            for vid, (x, y) in sorted(spec.destinations.items())
        },
    }
    return yaml.safe_dump(doc, sort_keys=True)


def load_scenario(text_or_path):
    """Parse the YAML geometry format (path or literal text)."""
    text = text_or_path
    if "\n" not in str(text_or_path):
        with open(text_or_path) as fh:
            text = fh.read()
    doc = yaml.safe_load(text)
    lanes = {
        entry["id"]: Path(entry["waypoints"], lane_id=entry["id"],
                          signal=entry.get("signal"))
        for entry in doc["lanes"]
    }
    road = RoadMap(lanes, doc.get("adjacency", {}),
                   lane_width=doc.get("lane_width", 3.5))
    cav_spawns = []
    ucv_spawns = []
    for entry in doc["spawns"]:
        spawn = SpawnSpec(
            vehicle_id=entry["id"], lane=entry["lane"], s=float(entry["s"]),
            speed=tuple(entry["speed"]), connected=bool(entry["connected"]),
        )
        (cav_spawns if spawn.connected else ucv_spawns).append(spawn)
    behaviors = {
        vid: UcvBehavior(
            kind=b.get("kind", BEHAVIOR_CONSTANT),
            brake_window=tuple(b.get("brake_window", (40, 80))),
            brake_speed=tuple(b.get("brake_speed", (3.0, 4.0))),
        )
        for vid, b in (doc.get("behaviors") or {}).items()
    }
    destinations = {
        vid: tuple(xy) for vid, xy in (doc.get("destinations") or {}).items()
    }
    return ScenarioSpec(
        name=doc["name"], road=road, cav_spawns=cav_spawns,
        ucv_spawns=ucv_spawns, behaviors=behaviors, destinations=destinations,
        episode_len=int(doc.get("episode_len", 200)),
        mode=doc.get("mode", "train"),
        vehicle_length=float(doc.get("vehicle_length", 4.5)),
        vehicle_width=float(doc.get("vehicle_width", 2.0)),
    )
