"""Hot loops: grid dynamics, Q-table storage, and episode drivers.

Everything here is numba-compatible Python operating on numpy arrays and
scalars; see :mod:`lsts._jit` for the fallback switch.  Randomness comes from
a combined multiplicative congruential generator held in an ``int64[2]``
array, so JIT and plain-Python runs draw identical streams.

Environment tuple ``env`` = (cells, item_kind, item_bit, feat_bit, width,
n_cells, n_actions):

* ``cells``     int8[n_cells]  static cell types (see ``CELL_*``)
* ``item_kind`` int8[n_items]  ``ITEM_KEY`` or ``ITEM_EXTINGUISHER``
* ``item_bit``  int64[n_items] label bit set while the item is carried (-1: none)
* ``feat_bit``  int64[6]       label bits for door-open, goal, lava, fire-out,
                               survivor-1, survivor-2 (-1: unused)

State codes pack (agent cell, facing, item locations, flag bits); an item
location equal to ``n_cells`` means "carried".
"""
import numpy as np

from ._jit import njit

CELL_FLOOR, CELL_WALL, CELL_LAVA, CELL_DOOR, CELL_GOAL, CELL_FIRE, CELL_SURV1, CELL_SURV2 = range(8)
ITEM_KEY, ITEM_EXTINGUISHER = 0, 1
FLAG_DOOR, FLAG_FIRE, FLAG_SURV1, FLAG_SURV2 = 1, 2, 4, 8
FEAT_DOOR, FEAT_GOAL, FEAT_LAVA, FEAT_FIRE, FEAT_SURV1, FEAT_SURV2 = range(6)
ACT_FORWARD, ACT_LEFT, ACT_RIGHT, ACT_PICKUP, ACT_DROP, ACT_TOGGLE, ACT_USE = range(7)
REASON_NONE, REASON_LAVA, REASON_GOAL = 0, 1, 2
EMPTY = -1

_M1, _M2 = 2147483563, 2147483399
_HASH_P = 2147483647


# ---------------------------------------------------------------- random


@njit
def rng_uniform(rng):
    s1 = (40014 * rng[0]) % _M1
    s2 = (40692 * rng[1]) % _M2
    rng[0] = s1
    rng[1] = s2
    z = s1 - s2
    if z < 1:
        z += _M1 - 1
    return z * 4.656613057391769e-10


@njit
def rng_below(rng, n):
    k = int(rng_uniform(rng) * n)
    return k if k < n else n - 1


def rng_state(seed_words):
    """Map two nonnegative integers to a valid generator state."""
    a, b = int(seed_words[0]), int(seed_words[1])
    return np.array([a % (_M1 - 1) + 1, b % (_M2 - 1) + 1], dtype=np.int64)


# ---------------------------------------------------------------- Q storage


@njit
def ht_find(keys, code):
    """Slot holding ``code``, or -1."""
    mask = keys.shape[0] - 1
    i = ((code % _HASH_P) * 48271) % _HASH_P & mask
    while True:
        k = keys[i]
        if k == code:
            return i
        if k == EMPTY:
            return -1
        i = (i + 1) & mask


@njit
def ht_insert(keys, fill, code):
    mask = keys.shape[0] - 1
    i = ((code % _HASH_P) * 48271) % _HASH_P & mask
    while True:
        k = keys[i]
        if k == code:
            return i
        if k == EMPTY:
            keys[i] = code
            fill[0] += 1
            return i
        i = (i + 1) & mask


@njit
def ht_rehash(old_keys, old_q, new_keys, new_q, fill):
    fill[0] = 0
    for i in range(old_keys.shape[0]):
        if old_keys[i] != EMPTY:
            j = ht_insert(new_keys, fill, old_keys[i])
            for a in range(old_q.shape[1]):
                new_q[j, a] = old_q[i, a]


@njit
def greedy_action(q, row):
    if row < 0:
        return 0
    best = 0
    for a in range(1, q.shape[1]):
        if q[row, a] > q[row, best]:
            best = a
    return best


@njit
def explore_action(q, row, eps, rng):
    """Epsilon-greedy with uniform tie-breaking among maximal actions."""
    n = q.shape[1]
    if rng_uniform(rng) < eps:
        return rng_below(rng, n)
    best = q[row, 0]
    ties = 1
    for a in range(1, n):
        v = q[row, a]
        if v > best:
            best = v
            ties = 1
        elif v == best:
            ties += 1
    pick = rng_below(rng, ties)
    for a in range(n):
        if q[row, a] == best:
            if pick == 0:
                return a
            pick -= 1
    return n - 1


@njit
def row_max(q, row):
    if row < 0:
        return 0.0
    best = q[row, 0]
    for a in range(1, q.shape[1]):
        if q[row, a] > best:
            best = q[row, a]
    return best


# ---------------------------------------------------------------- grid dynamics


@njit
def decode(code, n_cells, n_items, locs):
    pos = code % n_cells
    code //= n_cells
    facing = code % 4
    code //= 4
    for i in range(n_items):
        locs[i] = code % (n_cells + 1)
        code //= n_cells + 1
    return pos, facing, code


@njit
def encode(pos, facing, locs, flags, n_cells, n_items):
    code = flags
    for i in range(n_items - 1, -1, -1):
        code = code * (n_cells + 1) + locs[i]
    return (code * 4 + facing) * n_cells + pos


@njit
def _front(pos, facing, width):
    if facing == 0:
        return pos + 1
    if facing == 1:
        return pos + width
    if facing == 2:
        return pos - 1
    return pos - width


@njit
def _item_at(locs, n_items, cell):
    for i in range(n_items):
        if locs[i] == cell:
            return i
    return -1


@njit
def grid_step(env, code, action):
    """Apply ``action``; return (next_code, terminal_reason)."""
    cells, item_kind, item_bit, feat_bit, width, n_cells, n_actions = env
    n_items = item_kind.shape[0]
    locs = np.empty(max(n_items, 1), dtype=np.int64)
    pos, facing, flags = decode(code, n_cells, n_items, locs)
    front = _front(pos, facing, width)
    held = _item_at(locs, n_items, n_cells)
    if action == ACT_LEFT:
        facing = (facing + 3) % 4
    elif action == ACT_RIGHT:
        facing = (facing + 1) % 4
    elif action == ACT_FORWARD:
        c = cells[front]
        ok = c == CELL_FLOOR or c == CELL_LAVA or c == CELL_GOAL
        if c == CELL_DOOR and flags & FLAG_DOOR:
            ok = True
        if c == CELL_FIRE and flags & FLAG_FIRE:
            ok = True
        if ok and _item_at(locs, n_items, front) < 0:
            pos = front
    elif action == ACT_PICKUP:
        i = _item_at(locs, n_items, front)
        if held < 0 and i >= 0:
            locs[i] = n_cells
    elif action == ACT_DROP:
        if held >= 0 and cells[front] == CELL_FLOOR and _item_at(locs, n_items, front) < 0:
            locs[held] = front
    elif action == ACT_TOGGLE:
        if cells[front] == CELL_DOOR and held >= 0 and item_kind[held] == ITEM_KEY:
            flags ^= FLAG_DOOR
    elif action == ACT_USE:
        c = cells[front]
        if c == CELL_FIRE and held >= 0 and item_kind[held] == ITEM_EXTINGUISHER:
            flags |= FLAG_FIRE
        elif c == CELL_SURV1:
            flags |= FLAG_SURV1
        elif c == CELL_SURV2:
            flags |= FLAG_SURV2
    reason = REASON_NONE
    if cells[pos] == CELL_LAVA:
        reason = REASON_LAVA
    elif cells[pos] == CELL_GOAL:
        reason = REASON_GOAL
    return encode(pos, facing, locs, flags, n_cells, n_items), reason


@njit
def grid_labels(env, code):
    cells, item_kind, item_bit, feat_bit, width, n_cells, n_actions = env
    n_items = item_kind.shape[0]
    locs = np.empty(max(n_items, 1), dtype=np.int64)
    pos, facing, flags = decode(code, n_cells, n_items, locs)
    m = 0
    for i in range(n_items):
        if locs[i] == n_cells and item_bit[i] >= 0:
            m |= 1 << item_bit[i]
    if flags & FLAG_DOOR and feat_bit[FEAT_DOOR] >= 0:
        m |= 1 << feat_bit[FEAT_DOOR]
    if flags & FLAG_FIRE and feat_bit[FEAT_FIRE] >= 0:
        m |= 1 << feat_bit[FEAT_FIRE]
    if flags & FLAG_SURV1 and feat_bit[FEAT_SURV1] >= 0:
        m |= 1 << feat_bit[FEAT_SURV1]
    if flags & FLAG_SURV2 and feat_bit[FEAT_SURV2] >= 0:
        m |= 1 << feat_bit[FEAT_SURV2]
    if cells[pos] == CELL_GOAL and feat_bit[FEAT_GOAL] >= 0:
        m |= 1 << feat_bit[FEAT_GOAL]
    if cells[pos] == CELL_LAVA and feat_bit[FEAT_LAVA] >= 0:
        m |= 1 << feat_bit[FEAT_LAVA]
    return m


# ---------------------------------------------------------------- sub-task episodes

OUT_CONTINUE, OUT_SUCCESS, OUT_FAIL = 0, 1, 2


@njit
def subtask_episode(env, outcome, keys, q, fill, start, check_start, budget, cap,
                    lr, gamma, eps, train, rng, trace):
    """One reach-avoid episode from ``start``.

    ``outcome[mask]`` classifies a label mask as continue / success / fail.
    With ``train`` the policy acts epsilon-greedily and applies one-step
    Q-learning; otherwise it acts greedily and never writes to the table.
    The reward scale uses ``budget``; ``cap`` (<= budget) truncates the episode
    early when the caller's interaction allowance runs out.  ``trace``
    (length 0 to skip) receives the start label followed by one label per
    step.  Returns (end_code, steps, success, return).
    """
    s = start
    lab = grid_labels(env, s)
    if trace.shape[0] > 0:
        trace[0] = lab
    if check_start:
        o = outcome[lab]
        if o == OUT_SUCCESS:
            return s, 0, True, 1.0
        if o == OUT_FAIL:
            return s, 0, False, 0.0
    row = ht_insert(keys, fill, s) if train else ht_find(keys, s)
    steps = 0
    ret = 0.0
    status = OUT_CONTINUE
    while steps < cap:
        a = explore_action(q, row, eps, rng) if train else greedy_action(q, row)
        s2, reason = grid_step(env, s, a)
        steps += 1
        lab = grid_labels(env, s2)
        if trace.shape[0] > steps:
            trace[steps] = lab
        status = outcome[lab]
        if status == OUT_CONTINUE and reason != REASON_NONE:
            status = OUT_FAIL
        r = (budget - 0.9 * steps) / budget if status == OUT_SUCCESS else 0.0
        if train:
            row2 = ht_insert(keys, fill, s2)
            target = r
            if status == OUT_CONTINUE:
                target += gamma * row_max(q, row2)
            q[row, a] += lr * (target - q[row, a])
            row = row2
        else:
            row = ht_find(keys, s2)
        s = s2
        ret = r
        if status != OUT_CONTINUE:
            break
    return s, steps, status == OUT_SUCCESS, ret


# ---------------------------------------------------------------- DAG helpers


@njit
def track_node(node, lab, out_start, e_dst, guard_tab):
    """Deterministic tracker move: first firing out-edge (lowest dst) wins."""
    for j in range(out_start[node], out_start[node + 1]):
        if guard_tab[j, lab]:
            return e_dst[j]
    return node


@njit
def nfa_reset(pending, waiting, hit, q0):
    pending[:] = False
    waiting[:] = False
    hit[:] = False
    pending[q0] = True


@njit
def nfa_step(lab, pending, waiting, hit, nxt, e_src, e_dst, guard_tab, safe_tab, is_final):
    """Advance the subset automaton one step; True iff a final node is reached."""
    nxt[:] = False
    for j in range(e_src.shape[0]):
        ok = safe_tab[j, lab]
        fresh = waiting[j] or pending[e_src[j]]
        h = ok and (hit[j] or (fresh and guard_tab[j, lab]))
        hit[j] = h
        waiting[j] = ok and fresh and not h
        if h:
            nxt[e_dst[j]] = True
    accepted = False
    for v in range(pending.shape[0]):
        pending[v] = nxt[v]
        if nxt[v] and is_final[v]:
            accepted = True
    return accepted


# ---------------------------------------------------------------- whole-task episodes


@njit
def lfs_episode(env, dag, keys, q, fill, start, horizon, cap, lr, gamma, eps, train, rng, trace, scratch):
    """Single flat policy; reward only when the trace satisfies the spec."""
    out_start, e_src, e_dst, guard_tab, safe_tab, is_final, bonus, q0 = dag
    pending, waiting, hit, nxt = scratch
    nfa_reset(pending, waiting, hit, q0)
    s = start
    lab = grid_labels(env, s)
    if trace.shape[0] > 0:
        trace[0] = lab
    if nfa_step(lab, pending, waiting, hit, nxt, e_src, e_dst, guard_tab, safe_tab, is_final):
        return 0, True, 1.0
    row = ht_insert(keys, fill, s) if train else ht_find(keys, s)
    steps = 0
    while steps < cap:
        a = explore_action(q, row, eps, rng) if train else greedy_action(q, row)
        s2, reason = grid_step(env, s, a)
        steps += 1
        lab = grid_labels(env, s2)
        if trace.shape[0] > steps:
            trace[steps] = lab
        sat = nfa_step(lab, pending, waiting, hit, nxt, e_src, e_dst, guard_tab, safe_tab, is_final)
        r = (horizon - 0.9 * steps) / horizon if sat else 0.0
        done = sat or reason != REASON_NONE
        if train:
            row2 = ht_insert(keys, fill, s2)
            target = r
            if not done:
                target += gamma * row_max(q, row2)
            q[row, a] += lr * (target - q[row, a])
            row = row2
        else:
            row = ht_find(keys, s2)
        s = s2
        if done:
            return steps, sat, r
    return steps, False, 0.0


@njit
def gsrs_episode(env, dag, keys, q, fill, start, horizon, cap, lr, gamma, eps, train, rng, trace):
    """Flat policy over (state, tracker node) with distance-shaped progress bonus."""
    out_start, e_src, e_dst, guard_tab, safe_tab, is_final, bonus, q0 = dag
    n_nodes = is_final.shape[0]
    s = start
    lab = grid_labels(env, s)
    if trace.shape[0] > 0:
        trace[0] = lab
    u = track_node(q0, lab, out_start, e_dst, guard_tab)
    if is_final[u]:
        return 0, True, bonus[u]
    row = ht_insert(keys, fill, s * n_nodes + u) if train else ht_find(keys, s * n_nodes + u)
    steps = 0
    total = 0.0
    while steps < cap:
        a = explore_action(q, row, eps, rng) if train else greedy_action(q, row)
        s2, reason = grid_step(env, s, a)
        steps += 1
        lab = grid_labels(env, s2)
        if trace.shape[0] > steps:
            trace[steps] = lab
        u2 = track_node(u, lab, out_start, e_dst, guard_tab)
        r = bonus[u2] if u2 != u else 0.0
        total += r
        done = is_final[u2] or reason != REASON_NONE
        k2 = s2 * n_nodes + u2
        if train:
            row2 = ht_insert(keys, fill, k2)
            target = r
            if not done:
                target += gamma * row_max(q, row2)
            q[row, a] += lr * (target - q[row, a])
            row = row2
        else:
            row = ht_find(keys, k2)
        s = s2
        u = u2
        if done:
            return steps, is_final[u2], total
    return steps, False, total


@njit
def qrm_episode(env, dag, keys, q, fill, start, horizon, cap, lr, gamma, eps, train, rng, trace):
    """One Q-function per DAG node, all updated from every transition."""
    out_start, e_src, e_dst, guard_tab, safe_tab, is_final, bonus, q0 = dag
    n_nodes = is_final.shape[0]
    s = start
    lab = grid_labels(env, s)
    if trace.shape[0] > 0:
        trace[0] = lab
    u = track_node(q0, lab, out_start, e_dst, guard_tab)
    if is_final[u]:
        return 0, True, 1.0
    steps = 0
    total = 0.0
    while steps < cap:
        row = ht_insert(keys, fill, s * n_nodes + u) if train else ht_find(keys, s * n_nodes + u)
        a = explore_action(q, row, eps, rng) if train else greedy_action(q, row)
        s2, reason = grid_step(env, s, a)
        steps += 1
        lab = grid_labels(env, s2)
        if trace.shape[0] > steps:
            trace[steps] = lab
        if train:
            for v in range(n_nodes):
                if is_final[v]:
                    continue
                v2 = track_node(v, lab, out_start, e_dst, guard_tab)
                r = 1.0 if v2 != v else 0.0
                rv = ht_insert(keys, fill, s * n_nodes + v)
                r2 = ht_insert(keys, fill, s2 * n_nodes + v2)
                target = r
                if not is_final[v2] and reason == REASON_NONE:
                    target += gamma * row_max(q, r2)
                q[rv, a] += lr * (target - q[rv, a])
        u2 = track_node(u, lab, out_start, e_dst, guard_tab)
        if u2 != u:
            total += 1.0
        s = s2
        u = u2
        if is_final[u] or reason != REASON_NONE:
            return steps, is_final[u], total
    return steps, False, total
