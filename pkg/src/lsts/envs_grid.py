"""Deterministic gridworlds: DoorKey with two keys, and Search-and-Rescue.

Layouts are ASCII grids, one row per line::

    #  wall          .  floor        L  lava        D  door
    G  goal          1  key 1        2  key 2       K  key (search-and-rescue)
    X  extinguisher  F  fire         S  survivor    A  agent start

plus one line ``A@<dir>`` (``dir`` in N/E/S/W) giving the agent's initial
facing.  Blank lines and lines starting with ``;`` are ignored.  Survivors are
numbered in reading order.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from . import kernels as K
from .errors import InvalidLayoutError

DIRS = "ESWN"  # facing index 0..3; +1 is a clockwise turn
DOORKEY_ATOMS = ("k1", "k2", "d", "g", "l")
RESCUE_ATOMS = ("k", "d", "x", "f", "s1", "s2", "g")
DOORKEY_ACTIONS = ("forward", "left", "right", "pickup", "drop", "toggle")
RESCUE_ACTIONS = DOORKEY_ACTIONS + ("use",)

_CELL_CHARS = {
    "#": K.CELL_WALL, ".": K.CELL_FLOOR, "L": K.CELL_LAVA, "D": K.CELL_DOOR,
    "G": K.CELL_GOAL, "F": K.CELL_FIRE, "A": K.CELL_FLOOR,
}
_ITEM_CHARS = {"1": "key1", "2": "key2", "K": "key", "X": "extinguisher"}


@dataclass(frozen=True)
class GridLayout:
    width: int
    height: int
    cells: tuple[int, ...]  # row-major cell types
    items: tuple[tuple[str, int], ...]  # (name, cell index)
    agent: int
    facing: int

    def xy(self, cell: int) -> tuple[int, int]:
        return cell % self.width, cell // self.width

    def cell(self, x: int, y: int) -> int:
        return y * self.width + x

    def item_cell(self, name: str) -> int:
        for n, c in self.items:
            if n == name:
                return c
        raise KeyError(name)

    def cells_of(self, kind: int) -> list[int]:
        return [i for i, c in enumerate(self.cells) if c == kind]


@dataclass(frozen=True)
class GridState:
    agent_x: int
    agent_y: int
    facing: str
    inventory: str | None
    door_open: bool
    item_cells: tuple[int | None, ...]  # None while carried
    fire_out: bool = False
    rescued: tuple[bool, bool] = (False, False)


def parse_layout(text: str) -> GridLayout:
    rows, facing = [], None
    for raw in text.splitlines():
        line = raw.rstrip()
        if not line or line.startswith(";"):
            continue
        if line.startswith("A@"):
            d = line[2:].strip().upper()
            if d not in DIRS or len(d) != 1:
                raise InvalidLayoutError(f"bad facing {line!r}")
            facing = DIRS.index(d)
            continue
        rows.append(line)
    if not rows:
        raise InvalidLayoutError("empty layout")
    width, height = len(rows[0]), len(rows)
    if any(len(r) != width for r in rows):
        raise InvalidLayoutError("rows have different lengths")
    cells, items, agent = [], [], []
    survivors = 0
    for y, row in enumerate(rows):
        for x, ch in enumerate(row):
            idx = y * width + x
            if ch in _ITEM_CHARS:
                items.append((_ITEM_CHARS[ch], idx))
                cells.append(K.CELL_FLOOR)
            elif ch == "S":
                if survivors == 2:
                    raise InvalidLayoutError("at most two survivors are supported")
                cells.append(K.CELL_SURV1 + survivors)
                survivors += 1
            elif ch in _CELL_CHARS:
                cells.append(_CELL_CHARS[ch])
                if ch == "A":
                    agent.append(idx)
            else:
                raise InvalidLayoutError(f"unknown cell character {ch!r} at ({x},{y})")
    if len(agent) != 1:
        raise InvalidLayoutError("layout needs exactly one agent start")
    if facing is None:
        raise InvalidLayoutError("missing A@<dir> line")
    names = [n for n, _ in items]
    if len(set(names)) != len(names):
        raise InvalidLayoutError("duplicate item")
    layout = GridLayout(width, height, tuple(cells), tuple(sorted(items)), agent[0], facing)
    _validate(layout)
    return layout


def _validate(lay: GridLayout) -> None:
    w, h = lay.width, lay.height
    for i, c in enumerate(lay.cells):
        x, y = lay.xy(i)
        if (x in (0, w - 1) or y in (0, h - 1)) and c != K.CELL_WALL:
            raise InvalidLayoutError(f"border cell ({x},{y}) is not a wall")
    if len(lay.cells_of(K.CELL_GOAL)) != 1:
        raise InvalidLayoutError("layout needs exactly one goal")
    doors = lay.cells_of(K.CELL_DOOR)
    if len(doors) > 1:
        raise InvalidLayoutError("at most one door is supported")
    for d in doors:
        wall = lambda c: lay.cells[c] == K.CELL_WALL
        if not ((wall(d - 1) and wall(d + 1)) or (wall(d - w) and wall(d + w))):
            raise InvalidLayoutError("door must sit in a gap of a wall")
    if len(lay.cells_of(K.CELL_FIRE)) > 1:
        raise InvalidLayoutError("at most one fire is supported")
    # connectivity with the door open and every obstacle cleared
    open_cells = {i for i, c in enumerate(lay.cells) if c != K.CELL_WALL}
    seen, queue = {lay.agent}, deque([lay.agent])
    while queue:
        v = queue.popleft()
        for n in (v + 1, v - 1, v + w, v - w):
            if n in open_cells and n not in seen:
                seen.add(n)
                queue.append(n)
    if seen != open_cells:
        raise InvalidLayoutError("layout is not connected when the door is open")


def format_layout(lay: GridLayout) -> str:
    rev = {v: k for k, v in _CELL_CHARS.items() if k != "A"}
    chars = [rev.get(c, "S") for c in lay.cells]
    for name, c in lay.items:
        chars[c] = {v: k for k, v in _ITEM_CHARS.items()}[name]
    chars[lay.agent] = "A"
    rows = ["".join(chars[y * lay.width:(y + 1) * lay.width]) for y in range(lay.height)]
    return "\n".join(rows) + f"\nA@{DIRS[lay.facing]}\n"


class GridEnv:
    """Labeled MDP over integer state codes.

    ``reset`` returns the start code; ``step`` returns ``(code, terminal,
    reason)`` with reason one of ``None``, ``"lava"``, ``"goal"``.
    """

    def __init__(self, layout: GridLayout, atoms, actions, item_kinds, item_atoms, feat_atoms,
                 max_episode_steps: int | None = None, name: str = "grid"):
        self.layout = layout
        self.name = name
        self.atoms = tuple(atoms)
        self.actions = tuple(actions)
        self.action_count = len(actions)
        self.max_episode_steps = max_episode_steps or 4 * layout.width * layout.height
        self.item_names = tuple(n for n, _ in layout.items)
        bit = {a: i for i, a in enumerate(self.atoms)}
        cells = np.array(layout.cells, dtype=np.int8)
        kinds = np.array([item_kinds[n] for n in self.item_names], dtype=np.int8)
        ibits = np.array([bit.get(item_atoms.get(n), -1) for n in self.item_names], dtype=np.int64)
        fbits = np.array([bit.get(a, -1) if a else -1 for a in feat_atoms], dtype=np.int64)
        self.kernel_env = (cells, kinds, ibits, fbits, layout.width, len(layout.cells), self.action_count)
        self.n_cells = len(layout.cells)
        self.start_code = self.encode(GridState(
            *layout.xy(layout.agent), DIRS[layout.facing], None, False,
            tuple(c for _, c in layout.items),
        ))
        self._state = None
        self._terminal = False

    # -- codes <-> structured states

    def encode(self, s: GridState) -> int:
        locs = np.array([self.n_cells if c is None else c for c in s.item_cells] or [0], dtype=np.int64)
        flags = (K.FLAG_DOOR * s.door_open | K.FLAG_FIRE * s.fire_out
                 | K.FLAG_SURV1 * s.rescued[0] | K.FLAG_SURV2 * s.rescued[1])
        pos = self.layout.cell(s.agent_x, s.agent_y)
        return int(K.encode(pos, DIRS.index(s.facing), locs, flags, self.n_cells, len(self.item_names)))

    def decode(self, code: int) -> GridState:
        n = len(self.item_names)
        locs = np.empty(max(n, 1), dtype=np.int64)
        pos, facing, flags = K.decode(int(code), self.n_cells, n, locs)
        item_cells = tuple(None if locs[i] == self.n_cells else int(locs[i]) for i in range(n))
        held = [self.item_names[i] for i in range(n) if item_cells[i] is None]
        x, y = self.layout.xy(int(pos))
        return GridState(
            x, y, DIRS[int(facing)], held[0] if held else None, bool(flags & K.FLAG_DOOR),
            item_cells, bool(flags & K.FLAG_FIRE),
            (bool(flags & K.FLAG_SURV1), bool(flags & K.FLAG_SURV2)),
        )

    # -- LabeledMdp interface

    def reset(self, seed=None) -> int:
        # the start state is fixed by the layout; the seed is accepted for interface parity
        self._state = self.start_code
        self._terminal = False
        return self._state

    def step(self, action: int):
        if self._state is None:
            raise RuntimeError("step() before reset()")
        if self._terminal:
            raise RuntimeError("step() after a terminal transition")
        if not 0 <= action < self.action_count:
            raise ValueError(f"action {action} out of range")
        code, reason = self.transition(self._state, action)
        self._state = code
        self._terminal = reason is not None
        return code, self._terminal, reason

    def transition(self, code: int, action: int):
        nxt, reason = K.grid_step(self.kernel_env, int(code), int(action))
        return int(nxt), (None, "lava", "goal")[int(reason)]

    def label_mask(self, code: int) -> int:
        return int(K.grid_labels(self.kernel_env, int(code)))

    def labels(self, code: int) -> frozenset[str]:
        m = self.label_mask(code)
        return frozenset(a for i, a in enumerate(self.atoms) if m >> i & 1)

    def mask_to_labels(self, m: int) -> frozenset[str]:
        return frozenset(a for i, a in enumerate(self.atoms) if m >> i & 1)

    def render(self, code: int) -> str:
        s = self.decode(code)
        lay = self.layout
        rev = {v: k for k, v in _CELL_CHARS.items() if k != "A"}
        chars = [rev.get(c, "S") for c in lay.cells]
        if s.door_open:
            chars[lay.cells_of(K.CELL_DOOR)[0]] = "d"
        if s.fire_out:
            chars[lay.cells_of(K.CELL_FIRE)[0]] = "f"
        item_char = {v: k for k, v in _ITEM_CHARS.items()}
        for name, c in zip(self.item_names, s.item_cells):
            if c is not None:
                chars[c] = item_char[name]
        chars[lay.cell(s.agent_x, s.agent_y)] = ">v<^"[DIRS.index(s.facing)]
        rows = ["".join(chars[y * lay.width:(y + 1) * lay.width]) for y in range(lay.height)]
        return "\n".join(rows) + f"\ninventory: {s.inventory}\n"


def state_key(env: GridEnv, s: GridState) -> int:
    """Injective integer key of a structured state (the tabular index)."""
    return env.encode(s)


def doorkey_env(layout: GridLayout, max_episode_steps: int | None = None) -> GridEnv:
    names = {n for n, _ in layout.items}
    if names != {"key1", "key2"}:
        raise InvalidLayoutError("DoorKey layouts need exactly keys 1 and 2 and no other items")
    if len(layout.cells_of(K.CELL_DOOR)) != 1:
        raise InvalidLayoutError("DoorKey layouts need exactly one door")
    if layout.cells_of(K.CELL_FIRE) or layout.cells_of(K.CELL_SURV1):
        raise InvalidLayoutError("fire and survivors are not part of DoorKey")
    return GridEnv(
        layout, DOORKEY_ATOMS, DOORKEY_ACTIONS,
        item_kinds={"key1": K.ITEM_KEY, "key2": K.ITEM_KEY},
        item_atoms={"key1": "k1", "key2": "k2"},
        feat_atoms=("d", "g", "l", None, None, None),
        max_episode_steps=max_episode_steps, name="doorkey",
    )


def search_rescue_env(layout: GridLayout, max_episode_steps: int | None = None) -> GridEnv:
    names = {n for n, _ in layout.items}
    if names != {"key", "extinguisher"}:
        raise InvalidLayoutError("search-and-rescue layouts need one key (K) and one extinguisher (X)")
    if len(layout.cells_of(K.CELL_DOOR)) != 1 or len(layout.cells_of(K.CELL_FIRE)) != 1:
        raise InvalidLayoutError("search-and-rescue layouts need one door and one fire")
    if not layout.cells_of(K.CELL_SURV2):
        raise InvalidLayoutError("search-and-rescue layouts need two survivors")
    return GridEnv(
        layout, RESCUE_ATOMS, RESCUE_ACTIONS,
        item_kinds={"key": K.ITEM_KEY, "extinguisher": K.ITEM_EXTINGUISHER},
        item_atoms={"key": "k", "extinguisher": "x"},
        feat_atoms=("d", "g", None, "f", "s1", "s2"),
        max_episode_steps=max_episode_steps, name="search_rescue",
    )


ENV_FACTORIES = {"doorkey": doorkey_env, "search_rescue": search_rescue_env}


def data_path(name: str) -> Path:
    return Path(str(resources.files("lsts") / "data" / name))


def load_layout(path_or_name: str | Path) -> GridLayout:
    p = Path(path_or_name)
    if not p.exists():
        p = data_path(str(path_or_name))
    return parse_layout(p.read_text())


def make_env(name: str, layout: str | Path | GridLayout | None = None, max_episode_steps=None) -> GridEnv:
    if name not in ENV_FACTORIES:
        raise ValueError(f"unknown environment {name!r}")
    if layout is None:
        layout = f"{name}.layout"
    if not isinstance(layout, GridLayout):
        layout = load_layout(layout)
    return ENV_FACTORIES[name](layout, max_episode_steps)


def reachable_states(env: GridEnv, limit: int = 5_000_000) -> set[int]:
    """Breadth-first enumeration of the states reachable from the start.

    Terminal states are included but not expanded.
    """
    start = env.start_code
    seen, queue = {start}, deque([start])
    while queue:
        s = queue.popleft()
        for a in range(env.action_count):
            t, reason = env.transition(s, a)
            if t not in seen:
                seen.add(t)
                if len(seen) > limit:
                    raise RuntimeError("state space exceeds limit")
                if reason is None:
                    queue.append(t)
    return seen
