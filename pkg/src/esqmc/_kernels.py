"""Numba kernels for the boundary-modified operator-string sampler.

Encodings shared by every kernel:

- ``ops[p]``: -1 for an identity slot, else ``2*bond + type`` with type 0
  diagonal and type 1 off-diagonal.
- vertex legs: ``4*p + {0,1,2,3}`` = (bottom i, bottom j, top i, top j);
  bottom faces imaginary time 0 (the ket edge), top faces beta (the bra
  edge).
- ``X[leg]``: linked-list partner of a leg. Negative entries are edge
  sentinels on region-A worldlines: ``-(2s+2)`` is the ket edge of site s,
  ``-(2s+1)`` the bra edge.
- ``wrapflag[leg]``: set on both partners of a periodic (environment)
  link, i.e. the one crossing imaginary time 0.
- ``rule_flip[b]``: XOR applied to a leg index to get the deterministic
  exit leg on bond b: 1 (same time side, other site) on antiferromagnetic
  bonds, 3 (other time side, other site) on ferromagnetic ones. Both keep
  every touched vertex inside the equal-weight allowed set, so loops are
  flipped with probability 1/2 and no accept ratio.

The random stream is an explicit xoshiro256** state carried as a
uint64[4] array, so runs are reproducible bit for bit across machines and
survive checkpointing.
"""

from __future__ import annotations

import numpy as np
from numba import njit

jkwargs = dict(nogil=True, cache=True)

STAT_SWEEPS = 0
STAT_LOOPS = 1
STAT_STEPS = 2
STAT_INS_TRY = 3
STAT_INS = 4
STAT_REM_TRY = 5
STAT_REM = 6
STAT_BAD_SNAP = 7
STAT_MAX_N = 8
STAT_EDGE_LOOPS = 9
STAT_SIZE = 10

_MASK64 = (1 << 64) - 1
_DOUBLE_SCALE = 1.0 / 9007199254740992.0  # 2**-53


def seed_state(seed: int) -> np.ndarray:
    """Expand an integer seed into a nonzero xoshiro256** state (splitmix64)."""
    state = np.empty(4, np.uint64)
    z = seed & _MASK64
    for i in range(4):
        z = (z + 0x9E3779B97F4A7C15) & _MASK64
        w = z
        w = ((w ^ (w >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
        w = ((w ^ (w >> 27)) * 0x94D049BB133111EB) & _MASK64
        state[i] = np.uint64(w ^ (w >> 31))
    if not state.any():
        state[0] = np.uint64(0x9E3779B97F4A7C15)
    return state


@njit(inline="always")
def _rotl(x, k):
    return (x << k) | (x >> (np.uint64(64) - k))


@njit(inline="always")
def _rng_u64(state):
    result = _rotl(state[1] * np.uint64(5), np.uint64(7)) * np.uint64(9)
    t = state[1] << np.uint64(17)
    state[2] ^= state[0]
    state[3] ^= state[1]
    state[1] ^= state[2]
    state[0] ^= state[3]
    state[2] ^= t
    state[3] = _rotl(state[3], np.uint64(45))
    return result


@njit(inline="always")
def _rng_uniform(state):
    return (_rng_u64(state) >> np.uint64(11)) * _DOUBLE_SCALE


@njit(inline="always")
def _popcount64(x):
    x = x - ((x >> 1) & 0x5555555555555555)
    x = (x & 0x3333333333333333) + ((x >> 2) & 0x3333333333333333)
    x = (x + (x >> 4)) & 0x0F0F0F0F0F0F0F0F
    return (x * 0x0101010101010101) >> 56


@njit(**jkwargs)
def _diagonal_update(spins, work, ops, n, beta_w, bond_i, bond_j, need_anti, rng, stats):
    nb = bond_i.size
    n_slots = ops.size
    for s in range(spins.size):
        work[s] = spins[s]
    for p in range(n_slots):
        op = ops[p]
        if op < 0:
            b = int(_rng_uniform(rng) * nb)
            anti = work[bond_i[b]] != work[bond_j[b]]
            if anti == (need_anti[b] == 1):
                stats[STAT_INS_TRY] += 1
                if _rng_uniform(rng) * (n_slots - n) < beta_w[b]:
                    ops[p] = 2 * b
                    n += 1
                    stats[STAT_INS] += 1
        elif op & 1:
            b = op >> 1
            work[bond_i[b]] ^= 1
            work[bond_j[b]] ^= 1
        else:
            b = op >> 1
            stats[STAT_REM_TRY] += 1
            if _rng_uniform(rng) * beta_w[b] < (n_slots - n + 1):
                ops[p] = -1
                n -= 1
                stats[STAT_REM] += 1
    if n > stats[STAT_MAX_N]:
        stats[STAT_MAX_N] = n
    return n


@njit(**jkwargs)
def _build_links(ops, bond_i, bond_j, in_a, X, wrapflag, vfirst, vlast):
    n_slots = ops.size
    for v in range(4 * n_slots):
        wrapflag[v] = 0
    for s in range(vfirst.size):
        vfirst[s] = -1
        vlast[s] = -1
    for p in range(n_slots):
        op = ops[p]
        if op < 0:
            continue
        b = op >> 1
        v0 = 4 * p
        si = bond_i[b]
        sj = bond_j[b]
        if vlast[si] >= 0:
            X[vlast[si]] = v0
            X[v0] = vlast[si]
        else:
            vfirst[si] = v0
        vlast[si] = v0 + 2
        if vlast[sj] >= 0:
            X[vlast[sj]] = v0 + 1
            X[v0 + 1] = vlast[sj]
        else:
            vfirst[sj] = v0 + 1
        vlast[sj] = v0 + 3
    for s in range(vfirst.size):
        f = vfirst[s]
        if f < 0:
            continue
        l = vlast[s]
        if in_a[s] == 1:
            X[f] = -(2 * s + 2)
            X[l] = -(2 * s + 1)
        else:
            X[f] = l
            X[l] = f
            wrapflag[f] = 1
            wrapflag[l] = 1


@njit(inline="always")
def _flip_edge(sentinel, spins, bra):
    idx = -sentinel - 1
    s = idx >> 1
    if idx & 1:
        spins[s] ^= 1
    else:
        bra[s] ^= 1


@njit(inline="always")
def _site_of_leg(leg, ops, bond_i, bond_j):
    b = ops[leg >> 2] >> 1
    if leg & 1:
        return bond_j[b]
    return bond_i[b]


@njit(**jkwargs)
def _loop_update(
    ops, rule_flip, X, wrapflag, visited, vfirst, spins, bra, in_a,
    bond_i, bond_j, rng, step_cap, stats,
):
    n_legs = 4 * ops.size
    for v in range(n_legs):
        visited[v] = 0
    for l0 in range(n_legs):
        if visited[l0] == 1 or ops[l0 >> 2] < 0:
            continue
        stats[STAT_LOOPS] += 1
        flip = _rng_uniform(rng) < 0.5
        closed = False
        open_string = False
        v = l0
        steps = 0
        while True:
            steps += 1
            if steps > step_cap:
                return 1
            p = v >> 2
            visited[v] = 1
            e = v ^ rule_flip[ops[p] >> 1]
            visited[e] = 1
            if flip:
                ops[p] ^= 1
            nxt = X[e]
            if nxt < 0:
                open_string = True
                if flip:
                    _flip_edge(nxt, spins, bra)
                break
            if flip and wrapflag[e] == 1:
                s = _site_of_leg(e, ops, bond_i, bond_j)
                spins[s] ^= 1
                bra[s] = spins[s]
            v = nxt
            if v == l0:
                closed = True
                break
        stats[STAT_STEPS] += steps
        if not closed:
            v = l0
            steps = 0
            while True:
                steps += 1
                if steps > step_cap:
                    return 1
                prev = X[v]
                if prev < 0:
                    open_string = True
                    if flip:
                        _flip_edge(prev, spins, bra)
                    break
                if flip and wrapflag[v] == 1:
                    s = _site_of_leg(v, ops, bond_i, bond_j)
                    spins[s] ^= 1
                    bra[s] = spins[s]
                p = prev >> 2
                visited[prev] = 1
                ent = prev ^ rule_flip[ops[p] >> 1]
                visited[ent] = 1
                if flip:
                    ops[p] ^= 1
                v = ent
            stats[STAT_STEPS] += steps
        if open_string:
            stats[STAT_EDGE_LOOPS] += 1
    for s in range(in_a.size):
        if vfirst[s] >= 0:
            continue
        if _rng_uniform(rng) < 0.5:
            spins[s] ^= 1
            if in_a[s] == 1:
                bra[s] ^= 1
            else:
                bra[s] = spins[s]
    return 0


@njit(inline="always")
def _pack_region(values, a_sites):
    key = np.int64(0)
    for t in range(a_sites.size):
        key |= np.int64(values[a_sites[t]]) << t
    return key


@njit(**jkwargs)
def _thermalize(
    spins, bra, work, ops, n, beta_w, bond_i, bond_j, need_anti, rule_flip,
    in_a, n_sweeps, rng, step_cap, stats,
):
    """Equilibrate with expansion-order growth. Returns (ops, n, err)."""
    n_slots = ops.size
    X = np.empty(4 * n_slots, np.int64)
    wrapflag = np.empty(4 * n_slots, np.uint8)
    visited = np.empty(4 * n_slots, np.uint8)
    vfirst = np.empty(spins.size, np.int64)
    vlast = np.empty(spins.size, np.int64)
    err = 0
    for sweep in range(n_sweeps):
        n = _diagonal_update(spins, work, ops, n, beta_w, bond_i, bond_j, need_anti, rng, stats)
        if 4 * n > 3 * n_slots:
            grown = max(n_slots + 8, (4 * n) // 3)
            new_ops = np.full(grown, -1, np.int64)
            new_ops[:n_slots] = ops
            ops = new_ops
            n_slots = grown
            X = np.empty(4 * n_slots, np.int64)
            wrapflag = np.empty(4 * n_slots, np.uint8)
            visited = np.empty(4 * n_slots, np.uint8)
        _build_links(ops, bond_i, bond_j, in_a, X, wrapflag, vfirst, vlast)
        err = _loop_update(
            ops, rule_flip, X, wrapflag, visited, vfirst, spins, bra, in_a,
            bond_i, bond_j, rng, step_cap, stats,
        )
        if err != 0:
            break
        stats[STAT_SWEEPS] += 1
    return ops, n, err


@njit(inline="always")
def _hash_slot(keys, key):
    mask = keys.size - 1
    h = (key * 0x2545F4914F6CDD1D) & mask
    while True:
        k = keys[h]
        if k == key or k == -1:
            return h
        h = (h + 1) & mask


@njit(**jkwargs)
def _hash_grow(keys, vals):
    cap = keys.size * 2
    new_keys = np.full(cap, -1, np.int64)
    new_vals = np.zeros(cap, np.int64)
    for i in range(keys.size):
        if keys[i] != -1:
            h = _hash_slot(new_keys, keys[i])
            new_keys[h] = keys[i]
            new_vals[h] = vals[i]
    return new_keys, new_vals


@njit(**jkwargs)
def _sample_bin(
    spins, bra, work, ops, n, beta_w, bond_i, bond_j, need_anti, rule_flip,
    in_a, a_sites, n_sweeps, rng, step_cap, stats, keys, vals, used,
):
    """Sample one bin into an open-addressing (key -> count) table.

    Records every sweep. Returns (n, keys, vals, used, err); keys/vals may
    have been grown. err 1 = loop step cap hit, 2 = edge-state sector
    mismatch (structurally impossible unless the update logic is broken).
    """
    n_slots = ops.size
    X = np.empty(4 * n_slots, np.int64)
    wrapflag = np.empty(4 * n_slots, np.uint8)
    visited = np.empty(4 * n_slots, np.uint8)
    vfirst = np.empty(spins.size, np.int64)
    vlast = np.empty(spins.size, np.int64)
    n_a = a_sites.size
    err = 0
    for sweep in range(n_sweeps):
        n = _diagonal_update(spins, work, ops, n, beta_w, bond_i, bond_j, need_anti, rng, stats)
        _build_links(ops, bond_i, bond_j, in_a, X, wrapflag, vfirst, vlast)
        err = _loop_update(
            ops, rule_flip, X, wrapflag, visited, vfirst, spins, bra, in_a,
            bond_i, bond_j, rng, step_cap, stats,
        )
        if err != 0:
            break
        stats[STAT_SWEEPS] += 1
        c_ket = _pack_region(spins, a_sites)
        c_bra = _pack_region(bra, a_sites)
        if _popcount64(c_ket) != _popcount64(c_bra):
            stats[STAT_BAD_SNAP] += 1
            err = 2
            break
        key = (c_bra << n_a) | c_ket
        h = _hash_slot(keys, key)
        if keys[h] == -1:
            keys[h] = key
            vals[h] = 1
            used += 1
            if 5 * used > 3 * keys.size:
                keys, vals = _hash_grow(keys, vals)
        else:
            vals[h] += 1
    return n, keys, vals, used, err


@njit(**jkwargs)
def _sweep_once(
    spins, bra, work, ops, n, beta_w, bond_i, bond_j, need_anti, rule_flip,
    in_a, rng, step_cap, stats,
):
    """Single sweep without growth; returns (n, err, c_ket, c_bra are packed by caller)."""
    n_slots = ops.size
    X = np.empty(4 * n_slots, np.int64)
    wrapflag = np.empty(4 * n_slots, np.uint8)
    visited = np.empty(4 * n_slots, np.uint8)
    vfirst = np.empty(spins.size, np.int64)
    vlast = np.empty(spins.size, np.int64)
    n = _diagonal_update(spins, work, ops, n, beta_w, bond_i, bond_j, need_anti, rng, stats)
    _build_links(ops, bond_i, bond_j, in_a, X, wrapflag, vfirst, vlast)
    err = _loop_update(
        ops, rule_flip, X, wrapflag, visited, vfirst, spins, bra, in_a,
        bond_i, bond_j, rng, step_cap, stats,
    )
    if err == 0:
        stats[STAT_SWEEPS] += 1
    return n, err


@njit(**jkwargs)
def random_spins(rng, out):
    for s in range(out.size):
        out[s] = 1 if _rng_uniform(rng) < 0.5 else 0
