"""Synthetic urban-search-and-rescue missions for a three-player team.

The map is an abstract corridor grid with rooms hanging off horizontal corridor
segments, three treatment areas and a staging area. Each player is driven by
three nested layers:

* strategy: a mode (``sweep``/``scout``/``hold``) held for about a minute and
  mostly advancing through that cycle, plus a map sector whose rooms are ordered
  into a visit plan. The mode sets the label mix (long room searches, corridor
  runs with door peeks, long corridor waits) but not the walking speed;
* task: per-role routines (search, triage, clear rubble, signal, mark, haul,
  assist with critical victims, escort), written as generators;
* kinematics: movement along waypoints with a slowly drifting speed factor.

A generator yields once per 100 ms tick after writing its per-tick state. Features
(proximities, velocity, location) and ground-truth labels are derived from the
recorded trajectories afterwards.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field

import networkx as nx
import numpy as np

from .data import (
    ATTRS,
    ITEMS,
    LABEL_NAMES,
    LOCATIONS,
    MOVING,
    PROXIMITY_CAP,
    ROLES,
    TOOLS,
    FeatureSeries,
    SemanticLabel,
)

DT = 0.1
BASE_SPEED = 4.3  # blocks/s
ROLE_SPEED = {"medic": 1.0, "engineer": 0.9, "transporter": 1.25}
MODES = ("sweep", "scout", "hold")
# strategy layer: modes mostly advance sweep -> scout -> hold -> sweep
MODE_TICKS = {"sweep": (300, 451), "scout": (600, 801), "hold": (250, 351)}
MODE_CYCLE_PROB = 0.8
MODE_PROBS = {
    "medic": (0.55, 0.2, 0.25),
    "engineer": (0.35, 0.4, 0.25),
    "transporter": (0.25, 0.55, 0.2),
}
SEARCH_TICKS = {"sweep": (200, 350), "scout": (10, 25), "hold": (30, 60)}
PAUSE = {"sweep": (0.1, 20, 60), "scout": (0.0, 10, 30), "hold": (1.0, 200, 350)}

TRIAGE_TICKS = {"regular": 75, "critical": 150}
ROOM_DEPTH = 9.0
ROOM_HALF_WIDTH = 4.0
ZONE_RADIUS = 3.0

_LOC = {n: i for i, n in enumerate(LOCATIONS)}
_ITEM = {n: i for i, n in enumerate(ITEMS)}
_TOOL = {n: i for i, n in enumerate(TOOLS)}

# task-layer state machine; "plan" is the strategy layer choosing the next task
TASKS = (
    "start", "plan", "navigate", "pause", "search", "triage", "clear_rubble", "signal",
    "mark", "unmark", "haul", "assist", "wait_help", "escort",
)
TASK_EDGES = {
    "start": {"plan"},
    "plan": {"navigate", "pause", "assist", "haul", "plan"},
    "navigate": {"search", "clear_rubble", "signal", "plan", "pause", "unmark", "haul", "assist", "navigate"},
    "pause": {"plan", "navigate"},
    "search": {"triage", "wait_help", "plan", "haul", "unmark", "navigate"},
    "triage": {"triage", "haul", "search", "plan", "wait_help", "navigate", "escort"},
    "clear_rubble": {"search", "plan", "navigate"},
    "signal": {"mark", "unmark", "plan", "navigate", "pause"},
    "mark": {"plan", "navigate", "pause"},
    "unmark": {"plan", "navigate", "pause"},
    "haul": {"plan", "navigate", "pause"},
    "assist": {"plan", "navigate", "pause", "haul"},
    "wait_help": {"triage", "plan", "navigate", "search"},
    "escort": {"plan", "navigate", "pause"},
}
_TASK = {n: i for i, n in enumerate(TASKS)}


class ConfigError(ValueError):
    pass


@dataclass
class MissionConfig:
    seed: int = 0
    team: int = 0
    mission: int = 0
    mission_s: int = 900
    sampling_ms: int = 100
    nx: int = 6
    ny: int = 4
    spacing: float = 24.0
    n_regular: int = 20
    n_critical: int = 15
    rubble_fraction: float = 0.3
    role_speed: dict = field(default_factory=lambda: dict(ROLE_SPEED))
    audio_prob: float = 0.1
    blocked_edges: tuple = ()

    def validate(self) -> None:
        if self.mission_s * 1000 % self.sampling_ms or self.sampling_ms % 100:
            raise ConfigError("mission length must be divisible by the sampling period (a multiple of 100 ms)")
        if self.nx < 2 or self.ny < 1:
            raise ConfigError("map needs at least 2x1 corridor junctions")
        if self.n_regular < 0 or self.n_critical < 0:
            raise ConfigError("victim counts must be >= 0")
        if set(self.role_speed) != set(ROLES) or min(self.role_speed.values()) <= 0:
            raise ConfigError("role_speed must give a positive multiplier for every role")


# ---------------------------------------------------------------- map


@dataclass
class Room:
    rid: int
    anchor: tuple  # corridor graph node at the door
    cx: float
    ay: float  # corridor line y
    side: int  # -1 below the corridor, +1 above
    rubble: bool = False

    @property
    def door(self) -> tuple[float, float]:
        return (self.cx, self.ay + self.side * 1.0)

    @property
    def center(self) -> tuple[float, float]:
        return (self.cx, self.ay + self.side * (1.0 + ROOM_DEPTH / 2))

    def random_point(self, rng) -> tuple[float, float]:
        return (
            self.cx + rng.uniform(-ROOM_HALF_WIDTH + 0.8, ROOM_HALF_WIDTH - 0.8),
            self.ay + self.side * rng.uniform(2.0, ROOM_DEPTH + 0.2),
        )


@dataclass
class Victim:
    vid: int
    kind: str  # "A" | "B" | "C"
    room: int
    pos: tuple[float, float]
    triaged_at: int = -1
    picked_at: int = -1
    saved_at: int = -1
    claimed: bool = False

    @property
    def critical(self) -> bool:
        return self.kind == "C"


class MissionMap:
    def __init__(self, cfg: MissionConfig, rng: np.random.Generator):
        s = cfg.spacing
        self.cfg = cfg
        G = nx.Graph()
        pos = {}
        for i in range(cfg.nx):
            for j in range(cfg.ny):
                pos[("J", i, j)] = (i * s, j * s)
        blocked = {tuple(map(tuple, e)) for e in cfg.blocked_edges}
        for i in range(cfg.nx):
            for j in range(cfg.ny):
                if i + 1 < cfg.nx:
                    a = ("H", i, j)
                    pos[a] = (i * s + s / 2, j * s)
                    if ((i, j), (i + 1, j)) not in blocked:
                        G.add_edge(("J", i, j), a, weight=s / 2)
                        G.add_edge(a, ("J", i + 1, j), weight=s / 2)
                    else:
                        G.add_node(a)
                if j + 1 < cfg.ny:
                    v = ("V", i, j)
                    pos[v] = (i * s, j * s + s / 2)
                    if ((i, j), (i, j + 1)) not in blocked:
                        G.add_edge(("J", i, j), v, weight=s / 2)
                        G.add_edge(v, ("J", i, j + 1), weight=s / 2)
                    else:
                        G.add_node(v)
        self.graph = G
        self.pos = pos

        rooms = []
        for j in range(cfg.ny):
            sides = [-1] + ([1] if j == cfg.ny - 1 else [])
            for side in sides:
                for i in range(cfg.nx - 1):
                    rooms.append(Room(len(rooms), ("H", i, j), i * s + s / 2, j * s, side))
        self.rooms = rooms
        n_rubble = int(round(cfg.rubble_fraction * len(rooms)))
        for r in rng.choice(len(rooms), size=n_rubble, replace=False):
            rooms[int(r)].rubble = True

        # staging and treatment areas sit just off vertical corridor midpoints
        vl = [("V", 0, j) for j in range(cfg.ny - 1)] or [("H", 0, 0)]
        vr = [("V", cfg.nx - 1, j) for j in range(cfg.ny - 1)] or [("H", cfg.nx - 2, 0)]
        pick = lambda lst, k: lst[min(k, len(lst) - 1)]
        self.zones = {
            "A": (pick(vl, 0), -1),
            "staging": (pick(vl, 1), -1),
            "B": (pick(vl, 2), -1),
            "C": (pick(vr, 1), +1),
        }
        self.zone_center = {}
        for name, (node, d) in self.zones.items():
            x, y = pos[node]
            self.zone_center[name] = (x + d * 4.0, y) if node[0] == "V" else (x, y - 4.0)

        for room in rooms:
            if room.anchor not in G or not any(True for _ in G.neighbors(room.anchor)):
                raise ConfigError(f"room {room.rid} is not reachable")
        key_nodes = [r.anchor for r in rooms] + [z[0] for z in self.zones.values()]
        comp = nx.node_connected_component(G, self.zones["staging"][0]) if self.zones["staging"][0] in G else set()
        for node in key_nodes:
            if node not in comp:
                raise ConfigError(f"map node {node} is unreachable from the staging area")
        self._paths = dict(nx.all_pairs_dijkstra_path(G))

        self.door_points = np.array([r.door for r in rooms])
        self.ta_points = np.array([self.zone_center[k] for k in ("A", "B", "C")])

    def corridor_path(self, a, b) -> list[tuple[float, float]]:
        return [self.pos[n] for n in self._paths[a][b]]

    def nearest_node(self, p) -> tuple:
        best, bd = None, math.inf
        for n, q in self.pos.items():
            if n in self.graph:
                d = math.hypot(p[0] - q[0], p[1] - q[1])
                if d < bd:
                    best, bd = n, d
        return best

    def classify(self, xy: np.ndarray) -> np.ndarray:
        """Location code per position (vectorised)."""
        x, y = xy[:, 0], xy[:, 1]
        loc = np.full(len(xy), _LOC["corridor"], dtype=np.int64)
        for name, c in self.zone_center.items():
            inside = np.hypot(x - c[0], y - c[1]) < ZONE_RADIUS
            loc[inside] = _LOC["other"] if name == "staging" else _LOC["treatment-area"]
        for r in self.rooms:
            off = (y - r.ay) * r.side
            inside = (np.abs(x - r.cx) <= ROOM_HALF_WIDTH) & (off > 1.0) & (off <= ROOM_DEPTH + 1.0)
            loc[inside] = _LOC["room"]
        return loc

    def sectors(self) -> list[list[int]]:
        thirds = np.array_split(np.arange(self.cfg.nx - 1), 3)
        out = []
        for cols in thirds:
            xs = {float(c * self.cfg.spacing + self.cfg.spacing / 2) for c in cols}
            out.append([r.rid for r in self.rooms if r.cx in xs])
        return [s for s in out if s]


# ---------------------------------------------------------------- agents


@dataclass
class HelpRequest:
    victim: Victim
    medic: "Agent"
    helper: "Agent | None" = None
    status: str = "open"  # open -> accepted -> arrived -> triaged -> carrying -> saved | cancelled


class Agent:
    def __init__(self, role: str, world: "World", rng: np.random.Generator):
        self.role = role
        self.world = world
        self.rng = rng
        self.x, self.y = world.map.zone_center["staging"]
        self.x += rng.uniform(-1.5, 1.5)
        self.y += rng.uniform(-1.5, 1.5)
        self.speed = BASE_SPEED * world.cfg.role_speed[role]
        self.item = "none"
        self.tool = "none"
        self.ra = False
        self.marker_event = 0
        self.audio_left = 0
        self.task = "start"
        self.counts = {"rt": 0, "ct": 0, "rs": 0, "cs": 0}
        self.mode = "sweep"
        self.plan: deque[int] = deque()
        self.visited: set[int] = set()
        self.next_replan = 0
        self.mode_count = 0
        self.drift = 0.0
        self.node = world.map.zones["staging"][0]
        self.trail: deque = deque()
        self.request: HelpRequest | None = None

    # -- small helpers -----------------------------------------------------
    @property
    def p(self) -> tuple[float, float]:
        return (self.x, self.y)

    def set_task(self, name: str) -> None:
        if name != self.task:
            if name not in TASK_EDGES[self.task]:
                raise RuntimeError(f"illegal task transition {self.task} -> {name}")
            if self.rng.random() < self.world.cfg.audio_prob:
                self.audio_left = int(self.rng.integers(5, 16))
            self.task = name

    def equip(self, item: str):
        if self.item != item:
            self.item = item
            yield

    def use_tool(self, tool: str, ticks: int, ra: bool):
        for k in range(ticks):
            self.tool = tool
            yield
        self.tool = "none"
        if ra:
            self.ra = True

    def stand(self, ticks: int):
        for _ in range(ticks):
            yield

    def step_towards(self, tx: float, ty: float, speed: float) -> bool:
        """Advance toward a point; True once reached."""
        d = math.hypot(tx - self.x, ty - self.y)
        reach = speed * DT
        if d <= reach:
            self.x, self.y = tx, ty
            return True
        self.x += (tx - self.x) / d * reach
        self.y += (ty - self.y) / d * reach
        return False

    def current_speed(self, factor: float = 1.0) -> float:
        # slowly wandering speed factor (kinematic layer)
        self.drift = 0.97 * self.drift + 0.03 * self.rng.normal(0.0, 0.5)
        return self.speed * factor * (1.0 + 0.15 * math.tanh(self.drift))

    def walk(self, points, factor: float = 1.0):
        for tx, ty in points:
            while not self.step_towards(tx, ty, self.current_speed(factor)):
                yield
        yield

    def goto_node(self, node, factor: float = 1.0):
        yield from self.walk(self.world.map.corridor_path(self.node, node), factor)
        self.node = node

    def enter_room(self, room: Room):
        yield from self.walk([room.door, room.center], 0.8)

    def leave_room(self, room: Room):
        yield from self.walk([room.door, self.world.map.pos[room.anchor]], 0.9)
        self.node = room.anchor

    def goto_zone(self, name: str, factor: float = 1.0):
        node, _ = self.world.map.zones[name]
        yield from self.goto_node(node, factor)
        yield from self.walk([self.world.map.zone_center[name]], factor)

    def leave_zone(self, name: str):
        node, _ = self.world.map.zones[name]
        yield from self.walk([self.world.map.pos[node]])
        self.node = node

    # -- strategy layer ----------------------------------------------------
    def replan(self, switch_mode: bool = True) -> None:
        w = self.world
        if switch_mode:
            if self.mode_count == 0 or self.rng.random() >= MODE_CYCLE_PROB:
                probs = MODE_PROBS[self.role]
                self.mode = MODES[int(self.rng.choice(3, p=probs))]
            else:
                self.mode = MODES[(MODES.index(self.mode) + 1) % len(MODES)]
            self.mode_count += 1
            self.next_replan = w.tick + int(self.rng.integers(*MODE_TICKS[self.mode]))
        sectors = w.map.sectors()
        sector = sectors[int(self.rng.integers(len(sectors)))]
        todo = [r for r in sector if r not in self.visited]
        if not todo:
            self.visited -= set(sector)
            todo = list(sector)
        # greedy nearest-neighbour tour over the sector's rooms
        plan, cur = [], self.p
        rooms = {r: w.map.rooms[r] for r in todo}
        while rooms:
            rid = min(rooms, key=lambda r: math.hypot(rooms[r].door[0] - cur[0], rooms[r].door[1] - cur[1]))
            plan.append(rid)
            cur = rooms.pop(rid).door
        self.plan = deque(plan)

    def search_ticks(self) -> int:
        lo, hi = SEARCH_TICKS[self.mode]
        return int(self.rng.integers(lo, hi + 1))

    def pause_ticks(self) -> int:
        p, lo, hi = PAUSE[self.mode]
        if self.rng.random() < p:
            return int(self.rng.integers(lo, hi + 1))
        return 0

    # -- shared routines ---------------------------------------------------
    def wander(self, room: Room, ticks: int):
        end = self.world.tick + ticks
        while self.world.tick < end:
            tx, ty = room.random_point(self.rng)
            while self.world.tick < end and not self.step_towards(tx, ty, self.current_speed(0.35)):
                yield
            for _ in range(int(self.rng.integers(3, 12))):
                if self.world.tick >= end:
                    break
                yield

    def haul(self, victim: Victim, escort: "Agent | None" = None):
        """Carry a triaged victim from its room to the matching treatment area."""
        w = self.world
        room = w.map.rooms[victim.room]
        self.set_task("haul")
        yield from self.walk([victim.pos], 0.6)
        yield from self.equip("stretcher")
        self.tool = "stretcher"
        victim.picked_at = w.tick
        yield
        self.tool = "none"
        factor = 0.8 if victim.critical else 0.95
        yield from self.leave_room(room)
        yield from self.goto_zone(victim.kind, factor)
        while escort is not None and math.hypot(escort.x - self.x, escort.y - self.y) > 1.8:
            yield
        self.tool = "stretcher"
        victim.saved_at = w.tick
        self.counts["cs" if victim.critical else "rs"] += 1
        yield
        self.tool = "none"
        yield from self.equip("none")
        yield from self.leave_zone(victim.kind)

    def assist_loop(self):
        """Answer an open critical-victim request, then carry the victim out."""
        w = self.world
        req = w.take_request(self)
        if req is None:
            return False
        self.set_task("assist")
        room = w.map.rooms[req.victim.room]
        yield from self.goto_node(room.anchor)
        if req.status == "cancelled":
            return True
        yield from self.enter_room(room)
        vx, vy = req.victim.pos
        yield from self.walk([(vx + (1.0 if vx < room.cx else -1.0), vy)], 0.6)
        if req.status == "cancelled":
            yield from self.leave_room(room)
            return True
        req.status = "arrived"
        while req.status == "arrived":
            yield
        if req.status == "triaged":
            req.status = "carrying"
            yield from self.haul(req.victim, escort=req.medic)
            req.status = "saved"
        else:
            yield from self.leave_room(room)
        return True

    def visit_prologue(self, rid: int):
        """Walk to a room's door, with the occasional corridor pause."""
        room = self.world.map.rooms[rid]
        self.set_task("navigate")
        yield from self.goto_node(room.anchor)
        self.visited.add(rid)
        return room

    def pause(self):
        n = self.pause_ticks()
        if n:
            self.set_task("pause")
            yield from self.stand(n)

    # -- role routines -----------------------------------------------------
    def behaviour(self):
        self.task = "start"
        yield from self.stand(int(self.rng.integers(30, 90)))
        yield from self.leave_zone("staging")
        self.set_task("plan")
        routine = {"medic": self.medic_room, "engineer": self.engineer_room, "transporter": self.transporter_room}[self.role]
        while True:
            self.set_task("plan")
            if self.world.tick >= self.next_replan:
                self.replan()
            elif not self.plan:
                self.replan(switch_mode=False)
            if self.role != "medic":
                handled = yield from self.assist_loop()
                if handled:
                    continue
            if self.role == "transporter" and self.mode == "sweep":
                victim = self.world.take_triaged(self)
                if victim is not None:
                    room = self.world.map.rooms[victim.room]
                    self.set_task("navigate")
                    yield from self.goto_node(room.anchor)
                    yield from self.enter_room(room)
                    yield from self.haul(victim)
                    continue
            yield from self.pause()
            rid = self.plan.popleft()
            yield from routine(rid)
            yield

    def medic_room(self, rid: int):
        w = self.world
        room = w.map.rooms[rid]
        if room.rubble:
            return
        room = yield from self.visit_prologue(rid)
        if self.mode == "scout":
            return
        self.set_task("search")
        yield from self.enter_room(room)
        yield from self.wander(room, self.search_ticks())
        for victim in [v for v in w.victims if v.room == rid and v.triaged_at < 0 and not v.claimed]:
            if victim.critical:
                req = w.open_request(victim, self)
                self.set_task("wait_help")
                yield from self.walk([victim.pos], 0.5)
                waited = 0
                while req.status in ("open", "accepted") and waited < 250:
                    waited += 1
                    yield
                if req.status != "arrived":
                    req.status = "cancelled"
                    victim.claimed = False
                    continue
                self.set_task("triage")
                yield from self.equip("medkit")
                yield from self.use_tool("medkit", TRIAGE_TICKS["critical"], ra=True)
                victim.triaged_at = w.tick
                self.counts["ct"] += 1
                req.status = "triaged"
                yield
                self.set_task("escort")
                yield from self.follow(req)
                return
            self.set_task("triage")
            victim.claimed = True
            yield from self.walk([victim.pos], 0.5)
            yield from self.equip("medkit")
            yield from self.use_tool("medkit", TRIAGE_TICKS["regular"], ra=True)
            victim.triaged_at = w.tick
            self.counts["rt"] += 1
            yield
            if self.rng.random() < 0.2:
                yield from self.haul(victim)
                return
            w.triaged.append(victim)
        self.set_task("navigate")
        yield from self.leave_room(room)

    def follow(self, req: HelpRequest):
        """Walk the carrier's breadcrumb trail, staying about a block behind."""
        carrier = req.helper
        carrier.trail.clear()
        while req.status not in ("saved", "cancelled"):
            reach = self.speed * 1.1 * DT
            while reach > 0 and carrier.trail and math.hypot(carrier.x - self.x, carrier.y - self.y) > 1.2:
                tx, ty = carrier.trail[0]
                d = math.hypot(tx - self.x, ty - self.y)
                if d <= reach:
                    self.x, self.y = tx, ty
                    reach -= d
                    carrier.trail.popleft()
                else:
                    self.x += (tx - self.x) / d * reach
                    self.y += (ty - self.y) / d * reach
                    reach = 0.0
            yield
        self.node = carrier.node

    def engineer_room(self, rid: int):
        room = yield from self.visit_prologue(rid)
        if room.rubble:
            self.set_task("clear_rubble")
            yield from self.equip("hammer")
            yield from self.use_tool("hammer", int(self.rng.integers(40, 90)), ra=True)
            room.rubble = False
            yield
        if self.mode != "sweep":
            return
        self.set_task("search")
        yield from self.enter_room(room)
        yield from self.wander(room, self.search_ticks())
        self.set_task("navigate")
        yield from self.leave_room(room)

    def transporter_room(self, rid: int):
        w = self.world
        room = yield from self.visit_prologue(rid)
        if self.mode == "sweep":
            self.set_task("search")
            yield from self.enter_room(room)
            yield from self.wander(room, self.search_ticks())
            self.set_task("navigate")
            yield from self.leave_room(room)
        self.set_task("signal")
        yield from self.equip("signal")
        yield from self.use_tool("signal", int(self.rng.integers(5, 11)), ra=True)
        yield
        here = [v for v in w.victims if v.room == rid and v.saved_at < 0]
        marker = w.marker_at(room)
        if here and marker is None and self.rng.random() < 0.6:
            self.set_task("mark")
            yield from self.equip("marker")
            yield from self.stand(int(self.rng.integers(3, 8)))
            w.place_marker(self)
            self.marker_event = 1
            yield
        elif not here and marker is not None and self.rng.random() < 0.7:
            self.set_task("unmark")
            yield from self.walk([marker[0]], 0.5)
            w.remove_marker(marker)
            self.marker_event = 2
            yield


class World:
    def __init__(self, cfg: MissionConfig):
        cfg.validate()
        self.cfg = cfg
        ss = np.random.SeedSequence([cfg.seed, cfg.team, cfg.mission])
        map_rng = np.random.Generator(np.random.Philox(ss.spawn(1)[0]))
        self.map = MissionMap(cfg, map_rng)
        self.tick = 0
        self.victims = self._place_victims(map_rng)
        self.requests: list[HelpRequest] = []
        self.triaged: list[Victim] = []
        self.markers: list = []  # [pos, placed_tick, removed_tick]
        agent_seeds = np.random.SeedSequence([cfg.seed, cfg.team, cfg.mission, 1]).spawn(len(ROLES))
        self.agents = [Agent(r, self, np.random.Generator(np.random.Philox(s))) for r, s in zip(ROLES, agent_seeds)]

    def _place_victims(self, rng) -> list[Victim]:
        kinds = ["A"] * (self.cfg.n_regular // 2) + ["B"] * (self.cfg.n_regular - self.cfg.n_regular // 2)
        kinds += ["C"] * self.cfg.n_critical
        out = []
        for vid, kind in enumerate(kinds):
            room = self.map.rooms[int(rng.integers(len(self.map.rooms)))]
            out.append(Victim(vid, kind, room.rid, room.random_point(rng)))
        return out

    # -- coordination ------------------------------------------------------
    def open_request(self, victim: Victim, medic: Agent) -> HelpRequest:
        victim.claimed = True
        req = HelpRequest(victim, medic)
        self.requests.append(req)
        return req

    def take_request(self, agent: Agent) -> HelpRequest | None:
        for req in self.requests:
            if req.status == "open":
                req.status = "accepted"
                req.helper = agent
                return req
        return None

    def take_triaged(self, agent: Agent) -> Victim | None:
        if self.triaged:
            return self.triaged.pop(0)
        return None

    def marker_at(self, room: Room):
        for m in self.markers:
            if m[2] < 0 and math.hypot(m[0][0] - room.cx, m[0][1] - room.ay) < 2.5:
                return m
        return None

    def place_marker(self, agent: Agent) -> None:
        self.markers.append([agent.p, self.tick, -1])

    def remove_marker(self, marker) -> None:
        marker[2] = self.tick


@dataclass
class AgentTrace:
    role: str
    xy: np.ndarray
    item: np.ndarray
    tool: np.ndarray
    ra: np.ndarray
    marker_event: np.ndarray
    audio: np.ndarray
    task: np.ndarray
    counts: np.ndarray  # (n, 4): regular triaged, critical triaged, regular saved, critical saved
    mode: np.ndarray  # strategy mode index into MODES


def run_world(world: World) -> list[AgentTrace]:
    n = world.cfg.mission_s * 10
    agents = world.agents
    gens = [a.behaviour() for a in agents]
    buf = {
        k: [np.zeros(s, dtype=d) for _ in agents]
        for k, s, d in (
            ("xy", (n, 2), np.float64),
            ("item", n, np.int64),
            ("tool", n, np.int64),
            ("ra", n, bool),
            ("mk", n, np.int8),
            ("audio", n, bool),
            ("task", n, np.int64),
            ("counts", (n, 4), np.float64),
            ("mode", n, np.int8),
        )
    }
    for t in range(n):
        world.tick = t
        for k, (a, g) in enumerate(zip(agents, gens)):
            a.ra = False
            a.marker_event = 0
            next(g)
            a.trail.append(a.p)
            if len(a.trail) > 400:
                a.trail.popleft()
            buf["xy"][k][t] = a.p
            buf["item"][k][t] = _ITEM[a.item]
            buf["tool"][k][t] = _TOOL[a.tool]
            buf["ra"][k][t] = a.ra
            buf["mk"][k][t] = a.marker_event
            buf["audio"][k][t] = a.audio_left > 0
            a.audio_left = max(0, a.audio_left - 1)
            buf["task"][k][t] = _TASK[a.task]
            buf["mode"][k][t] = MODES.index(a.mode)
            c = a.counts
            buf["counts"][k][t] = (c["rt"], c["ct"], c["rs"], c["cs"])
    return [
        AgentTrace(a.role, buf["xy"][k], buf["item"][k], buf["tool"][k], buf["ra"][k], buf["mk"][k],
                   buf["audio"][k], buf["task"][k], buf["counts"][k], buf["mode"][k])
        for k, a in enumerate(agents)
    ]


# ---------------------------------------------------------------- features


def _nearest(xy: np.ndarray, pts: np.ndarray, alive: np.ndarray | None = None) -> np.ndarray:
    if len(pts) == 0:
        return np.full(len(xy), PROXIMITY_CAP)
    d = np.hypot(xy[:, None, 0] - pts[None, :, 0], xy[:, None, 1] - pts[None, :, 1])
    if alive is not None:
        d = np.where(alive, d, np.inf)
    return np.minimum(d.min(axis=1), PROXIMITY_CAP)


def _ground_truth(tr: AgentTrace, loc: np.ndarray, vel: np.ndarray) -> np.ndarray:
    n = len(loc)
    lab = np.full(n, int(SemanticLabel.ST), dtype=np.int64)
    moving = vel > MOVING
    lab[moving] = SemanticLabel.NV
    lab[loc == _LOC["room"]] = SemanticLabel.SR
    lab[(tr.item == _ITEM["stretcher"]) & moving] = SemanticLabel.TV
    crossed = np.zeros(n, dtype=bool)
    crossed[1:] = (loc[1:] != loc[:-1]) & ((loc[1:] == _LOC["room"]) | (loc[:-1] == _LOC["room"]))
    lab[crossed] = SemanticLabel.OD
    lab[tr.marker_event == 2] = SemanticLabel.RM
    lab[tr.marker_event == 1] = SemanticLabel.PM
    equip = np.zeros(n, dtype=bool)
    equip[1:] = tr.item[1:] != tr.item[:-1]
    lab[equip] = SemanticLabel.IE
    lab[tr.tool != _TOOL["none"]] = SemanticLabel.TU
    lab[tr.ra] = SemanticLabel.RA
    lab[tr.audio] = SemanticLabel.AC
    return lab


def _series_from_traces(world: World, traces: list[AgentTrace]) -> list[FeatureSeries]:
    cfg = world.cfg
    m = world.map
    n = len(traces[0].xy)
    t = np.arange(n)
    reg = [v for v in world.victims if not v.critical]
    crit = [v for v in world.victims if v.critical]

    def alive(vs):
        gone = np.array([v.picked_at if v.picked_at >= 0 else n for v in vs])
        return t[:, None] < gone[None, :] if vs else None

    reg_pts = np.array([v.pos for v in reg]).reshape(-1, 2)
    crit_pts = np.array([v.pos for v in crit]).reshape(-1, 2)
    reg_alive, crit_alive = alive(reg), alive(crit)
    if world.markers:
        mk_pts = np.array([mk[0] for mk in world.markers])
        placed = np.array([mk[1] for mk in world.markers])
        removed = np.array([mk[2] if mk[2] >= 0 else n for mk in world.markers])
        mk_alive = (t[:, None] >= placed[None, :]) & (t[:, None] < removed[None, :])
    else:
        mk_pts, mk_alive = np.zeros((0, 2)), None
    by_role = {tr.role: tr.xy for tr in traces}

    out = []
    mission_id = f"t{cfg.team:03d}-m{cfg.mission}"
    for tr in traces:
        xy = tr.xy
        step = np.zeros(n)
        step[1:] = np.hypot(np.diff(xy[:, 0]), np.diff(xy[:, 1]))
        vel = step / DT
        loc = m.classify(xy)
        cols = {
            "current_location": loc,
            "current_velocity": vel,
            "critical_victims_triaged": tr.counts[:, 1].copy(),
            "critical_victims_saved": tr.counts[:, 3].copy(),
            "distance_traveled": np.cumsum(step),
            "item_equipped": tr.item.copy(),
            "mission_time": t * DT,
            "player_role": np.full(n, ROLES.index(tr.role), dtype=np.int64),
            "proximity_to_nearest_door": _nearest(xy, m.door_points),
            "proximity_to_nearest_treatment_area": _nearest(xy, m.ta_points),
            "proximity_to_medic": np.minimum(np.hypot(*(xy - by_role["medic"]).T), PROXIMITY_CAP),
            "proximity_to_engineer": np.minimum(np.hypot(*(xy - by_role["engineer"]).T), PROXIMITY_CAP),
            "proximity_to_transporter": np.minimum(np.hypot(*(xy - by_role["transporter"]).T), PROXIMITY_CAP),
            "proximity_to_nearest_regular": _nearest(xy, reg_pts, reg_alive),
            "proximity_to_nearest_critical": _nearest(xy, crit_pts, crit_alive),
            "proximity_to_nearest_marker": _nearest(xy, mk_pts, mk_alive),
            "regular_victims_triaged": tr.counts[:, 0].copy(),
            "regular_victims_saved": tr.counts[:, 2].copy(),
            "tool_used": tr.tool.copy(),
        }
        assert set(cols) == set(ATTRS)
        out.append(
            FeatureSeries(
                player_id=f"{mission_id}-{tr.role}",
                mission_id=mission_id,
                role=tr.role,
                columns=cols,
                sampling_ms=100,
                team_id=f"t{cfg.team:03d}",
                labels=_ground_truth(tr, loc, vel),
                audio=tr.audio.copy(),
            )
        )
    return out


@dataclass
class MissionResult:
    series: list[FeatureSeries]
    world: World
    traces: list[AgentTrace]


def run_mission(config: MissionConfig) -> MissionResult:
    world = World(config)
    traces = run_world(world)
    series = _series_from_traces(world, traces)
    factor = config.sampling_ms // 100
    series = [s.downsample(factor) for s in series]
    return MissionResult(series, world, traces)


def simulate(config: MissionConfig) -> list[tuple[FeatureSeries, np.ndarray]]:
    """Three ``(series, ground-truth labels)`` pairs, one per role."""
    return [(s, s.labels) for s in run_mission(config).series]


def generate_corpus(n_teams: int, base_seed: int = 0, sampling_ms: int = 100, **overrides) -> list[FeatureSeries]:
    """``n_teams`` x 2 missions x 3 players; seeds derive from ``base_seed``."""
    if n_teams < 1:
        raise ValueError("n_teams must be >= 1")
    out = []
    for team in range(n_teams):
        for mission in range(2):
            cfg = MissionConfig(seed=base_seed, team=team, mission=mission, sampling_ms=sampling_ms, **overrides)
            out.extend(s for s, _ in simulate(cfg))
    return out


def label_histogram(series: list[FeatureSeries]) -> dict[str, int]:
    counts = np.zeros(len(LABEL_NAMES), dtype=np.int64)
    for s in series:
        counts += np.bincount(s.labels, minlength=len(LABEL_NAMES))
    return {name: int(c) for name, c in zip(LABEL_NAMES, counts)}


def format_histogram(hist: dict[str, int]) -> tuple[str, str]:
    """Aligned text table and CSV for a label histogram."""
    total = sum(hist.values()) or 1
    lines = [f"{'label':<6}{'count':>10}{'share':>9}"]
    csv = ["label,count,share"]
    for name, c in hist.items():
        lines.append(f"{name:<6}{c:>10d}{100.0 * c / total:>8.2f}%")
        csv.append(f"{name},{c},{c / total:.6f}")
    return "\n".join(lines) + "\n", "\n".join(csv) + "\n"
