"""Fixed-length feature encoding of an agent's local state.

Layout: ego block, then nearest-first neighbor-CAV slots, then
nearest-first UCV slots; absent slots are zero with a presence flag.
Positions/speeds are the raw travel-frame observation values, scaled, so
a measurement error (e_l, e_v) moves exactly two known features per
observed vehicle.  That mapping is what the regularizer's epsilon-ball
perturbs.
"""

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class EncoderSpec:
    n_cav_slots: int = 2
    n_ucv_slots: int = 3
    max_lanes: int = 4
    pos_scale: float = 100.0
    speed_scale: float = 10.0
    accel_scale: float = 4.0

    @property
    def ego_dim(self):
        return 5 + self.max_lanes

    @property
    def cav_dim(self):
        return 6 + self.max_lanes

    @property
    def ucv_dim(self):
        return 5

    @property
    def dim(self):
        return (
            self.ego_dim
            + self.n_cav_slots * self.cav_dim
            + self.n_ucv_slots * self.ucv_dim
        )

    @property
    def n_slots(self):
        return self.n_cav_slots + self.n_ucv_slots

    def slot_feature_indices(self, slot):
        """(lx index, vx index) of a perturbable slot (CAV slots first)."""
        if slot < self.n_cav_slots:
            base = self.ego_dim + slot * self.cav_dim
        else:
            base = (
                self.ego_dim
                + self.n_cav_slots * self.cav_dim
                + (slot - self.n_cav_slots) * self.ucv_dim
            )
        return base, base + 2


class Encoder:
    def __init__(self, spec, lane_ids):
        lane_ids = sorted(lane_ids, key=str)
        if len(lane_ids) > spec.max_lanes:
            raise ValueError(
                f"{len(lane_ids)} lanes exceed max_lanes={spec.max_lanes}"
            )
        self.spec = spec
        self.lane_index = {lid: i for i, lid in enumerate(lane_ids)}

    def _lane_onehot(self, lane_id):
        oh = np.zeros(self.spec.max_lanes)
        idx = self.lane_index.get(lane_id)
        if idx is not None:
            oh[idx] = 1.0
        return oh

    def _vehicle_block(self, obs, with_cav_fields):
        sp = self.spec
        base = [
            obs.lx / sp.pos_scale,
            obs.ly / sp.pos_scale,
            obs.vx / sp.speed_scale,
            obs.vy / sp.speed_scale,
        ]
        if with_cav_fields:
            alpha = 0.0 if obs.alpha is None else obs.alpha
            base.append(alpha / sp.accel_scale)
            base.extend(self._lane_onehot(obs.lane_detect))
        return base

    def encode_view(self, view):
        """(feature vector, present-slot mask) for one agent."""
        sp = self.spec
        ego = view.self_obs
        parts = list(self._vehicle_block(ego, with_cav_fields=True))
        present = np.zeros(sp.n_slots, dtype=bool)

        ego_pos = ego.world_position()

        def by_distance(obs_map):
            return sorted(
                obs_map.values(),
                key=lambda o: (math.dist(ego_pos, o.world_position()), str(o.target_id)),
            )

        cavs = by_distance(view.cav_obs)[: sp.n_cav_slots]
        for i in range(sp.n_cav_slots):
            if i < len(cavs):
                parts.extend(self._vehicle_block(cavs[i], with_cav_fields=True))
                parts.append(1.0)
                present[i] = True
            else:
                parts.extend([0.0] * (sp.cav_dim - 1))
                parts.append(0.0)

        ucvs = by_distance(view.ucv_obs)[: sp.n_ucv_slots]
        for i in range(sp.n_ucv_slots):
            if i < len(ucvs):
                parts.extend(self._vehicle_block(ucvs[i], with_cav_fields=False))
                parts.append(1.0)
                present[sp.n_cav_slots + i] = True
            else:
                parts.extend([0.0] * (sp.ucv_dim - 1))
                parts.append(0.0)

        vec = np.array(parts, dtype=float)
        if vec.shape != (sp.dim,):
            raise AssertionError("encoder layout mismatch")
        return vec, present

    def encode_joint(self, joint, agent_order):
        """Per-agent vectors, masks, and the centralized concatenation."""
        vecs = {}
        masks = {}
        for aid in agent_order:
            vecs[aid], masks[aid] = self.encode_view(joint.views[aid])
        central = np.concatenate([vecs[aid] for aid in agent_order])
        return vecs, masks, central


def perturb_features(spec, vec, present, e_pairs):
    """Apply raw-unit errors (e_l, e_v) per present slot to a feature copy."""
    out = vec.copy()
    for slot, (e_l, e_v) in zip(range(spec.n_slots), e_pairs):
        if not present[slot]:
            continue
        i_l, i_v = spec.slot_feature_indices(slot)
        out[i_l] += e_l / spec.pos_scale
        out[i_v] += e_v / spec.speed_scale
    return out


def perturbation_samples(spec, vec, present, epsilon, n_random, rng):
    """Candidate perturbed states for the inner KL maximization.

    Random draws perturb every present slot within the epsilon 2-norm
    ball; the axis-extreme corners move one perturbable feature by
    +/- epsilon at a time.  The candidate count is fixed at
    n_random + 4 * n_slots (absent-slot corners degenerate to copies) so
    batches stack rectangularly.
    """
    samples = []
    for _ in range(n_random):
        pairs = []
        for _ in range(spec.n_slots):
            ang = rng.uniform(0.0, 2.0 * math.pi)
            r = epsilon * math.sqrt(rng.uniform(0.0, 1.0))
            pairs.append((r * math.cos(ang), r * math.sin(ang)))
        samples.append(perturb_features(spec, vec, present, pairs))
    for slot in range(spec.n_slots):
        for e_l, e_v in ((epsilon, 0.0), (-epsilon, 0.0), (0.0, epsilon), (0.0, -epsilon)):
            pairs = [(0.0, 0.0)] * spec.n_slots
            pairs[slot] = (e_l, e_v)
            samples.append(perturb_features(spec, vec, present, pairs))
    if not samples:
        samples.append(vec.copy())
    return np.stack(samples)
