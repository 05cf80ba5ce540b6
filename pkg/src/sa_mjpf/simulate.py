"""Synthetic two-vehicle datasets for the four evaluation scenarios.

The course is a rounded rectangle traversed counterclockwise. Channels are
kinematically consistent: velocity is the per-step displacement over dt,
steering follows the actual path curvature, and power is a function of
velocity, longitudinal acceleration and steering effort. Emergency stops
freeze the vehicle between two samples (an emergency brake at sample
resolution) and inject a short oscillatory braking transient into the
power channel; pedestrian avoidance inserts a sharp constant-speed S-dodge
around a point on the path. Pedestrians appear only through their effect
on the trajectories, which is how they enter the recorded channels.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ScenarioSpecError

SCENARIOS = ("pmt", "es1", "es2", "ped_avoid")

#: Relative power-surge profile injected at a stop (brake/regen transient).
BRAKE_SURGE_PROFILE = (1.0, 0.12, 0.55, 0.08, 0.28, 0.04)

# one part in 2500 of each channel's dynamic range, so a single filter
# noise configuration serves every modality in normalized units
DEFAULT_NOISE = {
    "x": 0.015,
    "y": 0.013,
    "steering": 0.00026,
    "velocity": 0.0001,
    "power": 0.00016,
}


@dataclass(frozen=True)
class ScenarioSpec:
    """Everything needed to generate one dataset deterministically."""

    kind: str
    laps: int = 4
    samples_per_lap: int = 800
    course_width: float = 38.0
    course_height: float = 33.0
    corner_radius: float = 2.0
    cruise_speed: float = 1.5
    corner_speed_factor: float = 0.85
    speed_ramp_length: float = 2.5
    noise_sigma: dict[str, float] = field(default_factory=lambda: dict(DEFAULT_NOISE))
    event_times: tuple[float, ...] | None = None
    stop_dwell: float = 8.0
    follower_gap: float = 5.0
    reaction_delay: float = 0.5
    catchup_factor: float = 1.25
    detour_offset: float = 1.8
    detour_length: float = 3.6
    wheelbase: float = 1.5
    power_coeffs: tuple[float, float, float] = (1.0, 1.2, 0.005)
    accel_saturation: float = 0.6
    brake_surge: float = 3.0
    seed: int = 0

    def __post_init__(self):
        if self.kind not in SCENARIOS:
            raise ScenarioSpecError(
                f"unknown scenario {self.kind!r}; expected one of {SCENARIOS}"
            )
        if self.laps < 1:
            raise ScenarioSpecError("laps must be >= 1")
        if self.samples_per_lap < 100:
            raise ScenarioSpecError("samples_per_lap must be >= 100")
        if any(v < 0 for v in self.noise_sigma.values()):
            raise ScenarioSpecError("noise_sigma entries must be >= 0")
        if self.corner_radius * 2 >= min(self.course_width, self.course_height):
            raise ScenarioSpecError("corner radius too large for the course")

    @property
    def perimeter(self) -> float:
        w, h, r = self.course_width, self.course_height, self.corner_radius
        return 2 * (w - 2 * r) + 2 * (h - 2 * r) + 2 * math.pi * r

    @property
    def dt(self) -> float:
        # sampling tied to the course and the lap sample budget
        return self.perimeter / (self.cruise_speed * self.samples_per_lap)

    @property
    def lap_duration(self) -> float:
        return self.samples_per_lap * self.dt

    @property
    def duration(self) -> float:
        return self.laps * self.lap_duration

    @property
    def n_samples(self) -> int:
        return self.laps * self.samples_per_lap

    @property
    def n_agents(self) -> int:
        return 1 if self.kind == "ped_avoid" else 2


@dataclass(frozen=True)
class TruthWindow:
    agent: int
    t_start: float
    t_end: float
    cause: str

    def contains(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        return (t >= self.t_start) & (t < self.t_end)


@dataclass(frozen=True)
class AgentTrace:
    agent_id: str
    t: np.ndarray
    channels: dict[str, np.ndarray]
    arc: np.ndarray  # clean path position, kept for self-checks

    def write_csv(self, path) -> None:
        names = ["x", "y", "steering", "velocity", "power"]
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["t", *names])
            for i, ti in enumerate(self.t):
                writer.writerow(
                    [f"{ti:.6f}"] + [f"{self.channels[n][i]:.9g}" for n in names]
                )


@dataclass(frozen=True)
class ScenarioDataset:
    spec: ScenarioSpec
    agents: list[AgentTrace]
    truth_windows: list[TruthWindow]

    def write(self, out_dir) -> list[Path]:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        written = []
        for agent in self.agents:
            p = out_dir / f"{agent.agent_id}.csv"
            agent.write_csv(p)
            written.append(p)
        tw = out_dir / "truth_windows.json"
        tw.write_text(
            json.dumps(
                [
                    {
                        "agent": w.agent,
                        "t_start": round(w.t_start, 6),
                        "t_end": round(w.t_end, 6),
                        "cause": w.cause,
                    }
                    for w in self.truth_windows
                ],
                indent=1,
            )
            + "\n",
            encoding="utf-8",
        )
        written.append(tw)
        return written


def load_truth_windows(path) -> list[TruthWindow]:
    payload = json.loads(Path(path).read_text(encoding="utf-8"))
    return [
        TruthWindow(int(w["agent"]), float(w["t_start"]), float(w["t_end"]), w["cause"])
        for w in payload
    ]


class _Course:
    """Arc-length parameterization of the rounded rectangle, counterclockwise."""

    def __init__(self, spec: ScenarioSpec):
        w, h, r = spec.course_width, spec.course_height, spec.corner_radius
        sw, sh = w - 2 * r, h - 2 * r
        arc = math.pi * r / 2
        # segment: (length, kind, anchor); kind 0..3 straights E,N,W,S; 4..7 corners
        self.segments = []
        self.corner_arcs = []
        pos = 0.0
        defs = [
            (sw, "E", (r, 0.0)),
            (arc, "C", (w - r, r, -0.5 * math.pi)),
            (sh, "N", (w, r)),
            (arc, "C", (w - r, h - r, 0.0)),
            (sw, "W", (w - r, h)),
            (arc, "C", (r, h - r, 0.5 * math.pi)),
            (sh, "S", (0.0, h - r)),
            (arc, "C", (r, r, math.pi)),
        ]
        for length, kind, anchor in defs:
            self.segments.append((pos, length, kind, anchor))
            if kind == "C":
                self.corner_arcs.append((pos, pos + length))
            pos += length
        self.perimeter = pos
        self.radius = r

    def point(self, s: float) -> tuple[float, float]:
        s = s % self.perimeter
        for start, length, kind, anchor in self.segments:
            if s < start or s - start > length:
                continue
            u = s - start
            if kind == "E":
                return (anchor[0] + u, anchor[1])
            if kind == "N":
                return (anchor[0], anchor[1] + u)
            if kind == "W":
                return (anchor[0] - u, anchor[1])
            if kind == "S":
                return (anchor[0], anchor[1] - u)
            cx, cy, a0 = anchor
            a = a0 + u / self.radius
            return (cx + self.radius * math.cos(a), cy + self.radius * math.sin(a))
        raise AssertionError(f"arc position {s} not covered by any segment")

    def left_normal(self, s: float) -> tuple[float, float]:
        eps = 1e-4
        x0, y0 = self.point(s - eps)
        x1, y1 = self.point(s + eps)
        dx, dy = x1 - x0, y1 - y0
        n = math.hypot(dx, dy)
        return (-dy / n, dx / n)

    def distance_into_corner_zone(self, s: float, ramp: float) -> float:
        """Blend factor in [0, 1]: 1 inside corners, ramping linearly over
        ``ramp`` meters before and after each corner."""
        s = s % self.perimeter
        blend = 0.0
        for a, b in self.corner_arcs:
            for aa, bb in ((a, b), (a + self.perimeter, b + self.perimeter),
                           (a - self.perimeter, b - self.perimeter)):
                if aa <= s < bb:
                    return 1.0
                if aa - ramp <= s < aa:
                    blend = max(blend, 1.0 - (aa - s) / ramp)
                elif bb <= s < bb + ramp:
                    blend = max(blend, 1.0 - (s - bb) / ramp)
        return blend


def _pick_stop_window(spec: ScenarioSpec, rng: np.random.Generator) -> tuple[float, float]:
    if spec.event_times:
        t_e = float(spec.event_times[0])
    else:
        lap = 1 if spec.laps >= 2 else 0
        t_e = (lap + 0.15 + 0.6 * rng.random()) * spec.lap_duration
    t_e = round(t_e / spec.dt) * spec.dt
    t_end = t_e + spec.stop_dwell
    if t_e <= spec.dt or t_end >= spec.duration - max(2.0, 2 * spec.reaction_delay):
        raise ScenarioSpecError(
            f"stop event at t={t_e:.2f}s does not fit inside the {spec.duration:.2f}s trace"
        )
    return (t_e, t_end)


def _pick_detours(spec: ScenarioSpec, course: _Course, rng: np.random.Generator):
    """Two detour arc ranges (absolute arc, traversed once each)."""
    straights = [seg for seg in course.segments if seg[2] != "C"]
    if spec.event_times and len(spec.event_times) >= 2:
        # explicit times are converted to arc via the cruise approximation
        arcs = [t * spec.cruise_speed for t in spec.event_times[:2]]
        for s0 in arcs:
            if s0 + spec.detour_length >= spec.laps * course.perimeter:
                raise ScenarioSpecError("detour event lies outside the trace")
        return [(s0, s0 + spec.detour_length) for s0 in arcs]
    laps = [1, min(2, spec.laps - 1)] if spec.laps >= 2 else [0, 0]
    picks = rng.choice(len(straights), size=2, replace=False)
    ranges = []
    for lap, si in zip(laps, picks):
        start, length, _, _ = straights[si]
        margin = 3.0
        lo = start + margin
        hi = start + length - margin - spec.detour_length
        s0 = lap * course.perimeter + lo + (hi - lo) * rng.random()
        ranges.append((s0, s0 + spec.detour_length))
    return ranges


def generate(spec: ScenarioSpec) -> ScenarioDataset:
    """Generate one dataset. Same spec + seed gives identical bytes."""
    rng = np.random.default_rng(spec.seed)
    course = _Course(spec)
    dt = spec.dt
    n = spec.n_samples
    t_grid = dt * np.arange(n)

    stop_leader: tuple[float, float] | None = None
    stop_follower: tuple[float, float] | None = None
    detours: list[tuple[float, float]] = []
    truth: list[TruthWindow] = []

    if spec.kind == "es1":
        stop_leader = _pick_stop_window(spec, rng)
        stop_follower = (
            stop_leader[0] + spec.reaction_delay,
            stop_leader[1] + spec.reaction_delay,
        )
        truth.append(TruthWindow(0, *stop_leader, cause="emergency_stop"))
        truth.append(TruthWindow(1, *stop_follower, cause="emergency_stop"))
    elif spec.kind == "es2":
        stop_follower = _pick_stop_window(spec, rng)
        truth.append(TruthWindow(1, *stop_follower, cause="emergency_stop"))
    elif spec.kind == "ped_avoid":
        detours = _pick_detours(spec, course, rng)

    def nominal_speed(arc_mod: float) -> float:
        blend = course.distance_into_corner_zone(arc_mod, spec.speed_ramp_length)
        return spec.cruise_speed * (1.0 - (1.0 - spec.corner_speed_factor) * blend)

    def detour_profile(arc_abs: float) -> tuple[float, float]:
        """(lateral offset, d offset / d arc) at absolute arc position."""
        for s0, s1 in detours:
            if s0 <= arc_abs < s1:
                length = s1 - s0
                u = (arc_abs - s0) / length
                off = spec.detour_offset * math.sin(math.pi * u) ** 2
                slope = (
                    spec.detour_offset * math.pi / length * math.sin(2 * math.pi * u)
                )
                return off, slope
        return 0.0, 0.0

    def integrate_agent(
        arc0: float,
        stop: tuple[float, float] | None,
        leader_arc: np.ndarray | None,
    ) -> np.ndarray:
        arc = np.empty(n)
        arc[0] = arc0
        for i in range(1, n):
            ti = t_grid[i]
            if stop is not None and stop[0] <= ti < stop[1]:
                arc[i] = arc[i - 1]
                continue
            v = nominal_speed(arc[i - 1] % course.perimeter)
            if leader_arc is not None:
                deficit = (leader_arc[i] - spec.follower_gap) - arc[i - 1]
                if deficit > 0.05:
                    v = min(
                        spec.catchup_factor * spec.cruise_speed,
                        v + deficit / dt,
                    )
            _, slope = detour_profile(arc[i - 1])
            stretch = math.hypot(1.0, slope)
            arc[i] = arc[i - 1] + v * dt / stretch
        return arc

    leader_arc = integrate_agent(2.0, stop_leader, None)
    arcs = [leader_arc]
    if spec.n_agents == 2:
        follower_arc = integrate_agent(
            leader_arc[0] - spec.follower_gap, stop_follower, leader_arc
        )
        arcs.append(follower_arc)

    agents = []
    for a_idx, arc in enumerate(arcs):
        # clean positions including the lateral detour offset
        xy = np.empty((n, 2))
        for i in range(n):
            x, y = course.point(arc[i])
            off, _ = detour_profile(arc[i])
            if off != 0.0:
                nx, ny = course.left_normal(arc[i])
                x, y = x + off * nx, y + off * ny
            xy[i] = (x, y)

        # velocity from displacement: kinematically consistent by construction
        disp = np.linalg.norm(np.diff(xy, axis=0), axis=1)
        v = np.empty(n)
        v[1:] = disp / dt
        v[0] = v[1]

        # steering from the actual path curvature; frozen while stopped
        heading = np.arctan2(np.diff(xy[:, 1]), np.diff(xy[:, 0]))
        steer = np.zeros(n)
        last = 0.0
        for i in range(1, n - 1):
            ds = disp[i]
            if ds > 1e-9 and disp[i - 1] > 1e-9:
                dpsi = math.remainder(heading[i] - heading[i - 1], 2 * math.pi)
                last = math.atan(spec.wheelbase * dpsi / ds)
            steer[i] = last
        steer[0] = steer[1]
        steer[n - 1] = steer[n - 2]

        # power: speed + saturated longitudinal acceleration + steering effort
        c1, c2, c3 = spec.power_coeffs
        accel = np.abs(np.diff(v, prepend=v[0])) / dt
        accel = np.minimum(accel, spec.accel_saturation)
        power = c1 * v + c2 * accel + c3 * np.abs(steer) * v

        # stop windows: the motor is off; a short oscillatory braking
        # transient (regenerative surge) marks the beginning of the stop
        stop = stop_leader if a_idx == 0 else stop_follower
        if stop is not None:
            inside = (t_grid >= stop[0]) & (t_grid < stop[1])
            power[inside] = 0.0
            first = int(np.argmax(inside))
            for k, rel in enumerate(BRAKE_SURGE_PROFILE):
                if first + k < n and inside[first + k]:
                    power[first + k] = spec.brake_surge * rel

        channels = {
            "x": xy[:, 0] + rng.normal(0, spec.noise_sigma["x"], n),
            "y": xy[:, 1] + rng.normal(0, spec.noise_sigma["y"], n),
            "steering": steer + rng.normal(0, spec.noise_sigma["steering"], n),
            "velocity": v + rng.normal(0, spec.noise_sigma["velocity"], n),
            "power": power + rng.normal(0, spec.noise_sigma["power"], n),
        }
        agents.append(
            AgentTrace(
                agent_id=f"agent{a_idx + 1}",
                t=t_grid,
                channels=channels,
                arc=arc,
            )
        )

    if spec.kind == "ped_avoid":
        # windows from the actual traversal times of the detour ranges
        for s0, s1 in detours:
            inside = (leader_arc >= s0) & (leader_arc < s1)
            if not inside.any():
                raise ScenarioSpecError("detour range was never traversed")
            idx = np.nonzero(inside)[0]
            truth.append(
                TruthWindow(
                    0,
                    float(t_grid[idx[0]]),
                    float(t_grid[min(idx[-1] + 1, n - 1)]),
                    cause="pedestrian_detour",
                )
            )

    return ScenarioDataset(spec=spec, agents=agents, truth_windows=truth)


@dataclass
class SelfCheckReport:
    violations: list[str]

    @property
    def ok(self) -> bool:
        return not self.violations


def self_check(dataset: ScenarioDataset) -> SelfCheckReport:
    """Verify kinematic consistency, counterclockwise orientation and
    leader/follower gap bounds. Returns the violations found."""
    spec = dataset.spec
    dt = spec.dt
    violations = []

    in_any_window = []
    for a_idx, agent in enumerate(dataset.agents):
        mask = np.zeros(len(agent.t), dtype=bool)
        for w in dataset.truth_windows:
            if w.agent == a_idx:
                # include the post-event recovery while the follower catches up
                recovery = (
                    (w.t_end - w.t_start)
                    * spec.cruise_speed
                    / max((spec.catchup_factor - 1.0) * spec.cruise_speed, 1e-9)
                )
                mask |= (agent.t >= w.t_start - 2 * dt) & (
                    agent.t < w.t_end + recovery + 2 * dt
                )
        in_any_window.append(mask)

    for a_idx, agent in enumerate(dataset.agents):
        x, y, v = agent.channels["x"], agent.channels["y"], agent.channels["velocity"]
        speed = np.hypot(np.diff(x), np.diff(y)) / dt
        sigma = (
            math.sqrt(2)
            * math.hypot(spec.noise_sigma["x"], spec.noise_sigma["y"])
            / dt
            + spec.noise_sigma["velocity"]
        )
        err = np.abs(speed - v[1:])
        bad = err > max(6 * sigma, 0.05 * spec.cruise_speed)
        # the two samples flanking a stop edge mix moving and stopped states
        edges = np.zeros_like(bad)
        for w in dataset.truth_windows:
            if w.agent == a_idx:
                edges |= (np.abs(agent.t[1:] - w.t_start) < 2 * dt) | (
                    np.abs(agent.t[1:] - w.t_end) < 2 * dt
                )
        if np.any(bad & ~edges):
            violations.append(
                f"{agent.agent_id}: velocity channel inconsistent with displacement "
                f"on {int(np.sum(bad & ~edges))} samples"
            )

        # orientation per completed lap, from the clean arc positions
        perimeter = _Course(spec).perimeter
        full_laps = int((agent.arc[-1] - agent.arc[0]) // perimeter)
        for lap in range(full_laps):
            lo = agent.arc[0] + lap * perimeter
            sel = (agent.arc >= lo) & (agent.arc < lo + perimeter)
            xs, ys = x[sel], y[sel]
            area = 0.5 * float(
                np.sum(xs * np.roll(ys, -1) - np.roll(xs, -1) * ys)
            )
            if area <= 0:
                violations.append(
                    f"{agent.agent_id}: lap {lap} traversed clockwise (area {area:.1f})"
                )

        margin = 3 * max(spec.noise_sigma["x"], spec.noise_sigma["y"]) + spec.detour_offset
        if (
            x.min() < -margin
            or x.max() > spec.course_width + margin
            or y.min() < -margin
            or y.max() > spec.course_height + margin
        ):
            violations.append(f"{agent.agent_id}: positions leave the course bounds")

        if len(dataset.agents) == 2 and a_idx == 1:
            gap = dataset.agents[0].arc - agent.arc
            calm = ~(in_any_window[0] | in_any_window[1])
            bad_gap = np.abs(gap - spec.follower_gap) > 1.0
            if np.any(bad_gap & calm):
                violations.append(
                    f"platooning gap out of bounds on {int(np.sum(bad_gap & calm))} samples"
                )

    stops = [w for w in dataset.truth_windows if w.cause == "emergency_stop"]
    for w in stops:
        agent = dataset.agents[w.agent]
        inside = w.contains(agent.t)
        v = agent.channels["velocity"]
        if inside.any() and np.max(v[inside]) >= 0.05 * spec.cruise_speed:
            violations.append(f"agent {w.agent}: not stationary inside stop window")
        outside = ~np.any(
            [ww.contains(agent.t) for ww in stops if ww.agent == w.agent], axis=0
        )
        outside &= ~in_any_window[w.agent]
        if np.any(v[outside] < 0.8 * spec.cruise_speed - 6 * spec.noise_sigma["velocity"]):
            low = float(np.min(v[outside]))
            violations.append(
                f"agent {w.agent}: velocity {low:.2f} below 0.8 cruise outside windows"
            )

    return SelfCheckReport(violations=violations)
