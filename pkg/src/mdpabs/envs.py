"""Toy driving environments with scripted reference controllers.

AccEnv is the precisely specified kernel: a follower controls longitudinal
acceleration to keep a positive gap to a lead car whose speed follows a
seeded piecewise profile. LkaEnv and IcaEnv are small documented variants
sharing the same step interface (features dict in, reward/labels out).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

DT = 0.1


@dataclass
class AccEnv:
    """Longitudinal car following.

    v_ego' = clamp(v_ego + a * DT, 0, v_max); gap' = gap + (v_lead - v_ego') * DT
    with the lead speed read from the episode profile at the current step.
    Reward is max(0, 1 - |v_ego' - v_target| / v_tol) per step: a tent peaked
    at the target speed, so the same reward level is earned on both sides of
    the peak. The episode ends on crash (gap <= 0) or at the horizon.
    """

    horizon: int = 51
    v_max: float = 40.0
    gap_max: float = 200.0
    accel_low: float = -8.0
    accel_high: float = 3.0
    start_gap: float = 30.0
    start_v_ego: float = 25.0
    start_v_lead: float = 25.0
    near_gap: float = 25.0
    v_target: float = 24.0
    v_tol: float = 12.0

    feature_names = ("gap", "v_ego", "v_lead")
    label_names = ("isCrashed", "nearLead")
    action_dim = 1

    def reset(self, seed: int) -> dict:
        rng = np.random.default_rng(seed)
        # piecewise-constant lead targets, chased with bounded acceleration
        targets = rng.uniform(10.0, 30.0, size=self.horizon // 10 + 2)
        profile = np.empty(self.horizon + 1)
        v = self.start_v_lead
        for i in range(self.horizon + 1):
            profile[i] = v
            tgt = targets[i // 10]
            v += float(np.clip(tgt - v, -2.0 * DT, 2.0 * DT))
        self._lead = profile
        self.gap = self.start_gap
        self.v_ego = self.start_v_ego
        self.t = 0
        self.crashed = False
        return self._obs()

    def _obs(self) -> dict:
        return {"gap": self.gap, "v_ego": self.v_ego,
                "v_lead": float(self._lead[self.t])}

    def labels(self) -> dict:
        return {"isCrashed": self.crashed,
                "nearLead": self.gap <= self.near_gap}

    def step(self, action) -> tuple[dict, float, bool]:
        a = float(np.clip(np.asarray(action, dtype=float).reshape(-1)[0],
                          self.accel_low, self.accel_high))
        v_lead = float(self._lead[self.t])
        self.v_ego = float(np.clip(self.v_ego + a * DT, 0.0, self.v_max))
        self.gap = min(self.gap + (v_lead - self.v_ego) * DT, self.gap_max)
        self.t += 1
        self.crashed = self.gap <= 0.0
        reward = 0.05 * self.v_ego
        done = self.crashed or self.t >= self.horizon
        return self._obs(), reward, done


def cruise_controller(gap: float, v_ego: float, headway: float = 0.8,
                      margin: float = 5.0, k_gap: float = 0.3) -> float:
    """Scripted follower: proportional control on the headway gap error.

    Reads only (gap, v_ego), so the action is a function of the recorded
    semantic coordinates alone; the lead's speed enters through the gap."""
    desired = margin + headway * v_ego
    return float(np.clip(k_gap * (gap - desired), -8.0, 3.0))


@dataclass
class LkaEnv:
    """Lane keeping: lateral offset d and heading angle.

    d' = d + v * sin(heading) * DT, heading' = heading + steer * DT. The
    default reward is 1 - d^2 - cos(heading)^2 as configured upstream; the
    sin2 toggle swaps the angle term for sin^2, which peaks at zero heading
    instead. Episode ends when |d| exceeds the half lane width.
    """

    horizon: int = 60
    v: float = 10.0
    lane_half_width: float = 2.0
    steer_low: float = -0.5
    steer_high: float = 0.5
    sin2: bool = False

    feature_names = ("d", "heading")
    label_names = ("isOutOfLane",)
    action_dim = 1

    def reset(self, seed: int) -> dict:
        rng = np.random.default_rng(seed)
        self.d = float(rng.uniform(-0.5, 0.5))
        self.heading = float(rng.uniform(-0.1, 0.1))
        self.t = 0
        return self._obs()

    def _obs(self) -> dict:
        return {"d": self.d, "heading": self.heading}

    def labels(self) -> dict:
        return {"isOutOfLane": abs(self.d) > self.lane_half_width}

    def step(self, action) -> tuple[dict, float, bool]:
        steer = float(np.clip(np.asarray(action, dtype=float).reshape(-1)[0],
                              self.steer_low, self.steer_high))
        self.d += self.v * math.sin(self.heading) * DT
        self.heading += steer * DT
        self.t += 1
        angle = math.sin(self.heading) if self.sin2 else math.cos(self.heading)
        reward = 1.0 - self.d ** 2 - angle ** 2
        done = abs(self.d) > self.lane_half_width or self.t >= self.horizon
        return self._obs(), reward, done


@dataclass
class IcaEnv:
    """Intersection crossing on a 5x5 grid.

    The ego drives along x through the center cell; one cross car drives
    along y on a seeded schedule. Reward 0.05 * v - 0.0005 * d_g with d_g the
    remaining distance to the far edge; crash when both cars occupy the
    center within half a cell.
    """

    horizon: int = 40
    size: float = 5.0
    v_low: float = 0.0
    v_high: float = 2.0

    feature_names = ("x", "cross_y", "v")
    label_names = ("isCrashed",)
    action_dim = 1

    def reset(self, seed: int) -> dict:
        rng = np.random.default_rng(seed)
        self.x = 0.0
        self.v = 0.0
        self.cross_y = float(rng.uniform(-3.0, 0.0))
        self.cross_v = float(rng.uniform(0.8, 1.6))
        self.t = 0
        self.crashed = False
        return self._obs()

    def _obs(self) -> dict:
        return {"x": self.x, "cross_y": self.cross_y, "v": self.v}

    def labels(self) -> dict:
        return {"isCrashed": self.crashed}

    def step(self, action) -> tuple[dict, float, bool]:
        self.v = float(np.clip(np.asarray(action, dtype=float).reshape(-1)[0],
                               self.v_low, self.v_high))
        self.x = min(self.x + self.v * DT * 5.0, self.size - 1.0)
        self.cross_y += self.cross_v * DT * 5.0
        self.t += 1
        center = (self.size - 1.0) / 2.0
        self.crashed = (abs(self.x - center) < 0.5
                        and abs(self.cross_y - center) < 0.5)
        d_g = (self.size - 1.0) - self.x
        reward = 0.05 * self.v - 0.0005 * d_g
        done = self.crashed or self.t >= self.horizon
        return self._obs(), reward, done
