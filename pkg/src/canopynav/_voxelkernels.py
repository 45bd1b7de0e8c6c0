"""Numba kernels over a block-sparse voxel hash.

Storage layout shared by every kernel:
  keys   int64[cap]      packed block coordinate, EMPTY where unused
  slots  int32[cap]      row of ``data`` holding that block
  data   float32[n, 512] 8x8x8 voxel log-odds per block
Capacity is a power of two; callers keep the load factor <= MAX_LOAD.
"""
from __future__ import annotations

import numpy as np
from numba import njit

BLOCK = 8
BLOCK_VOXELS = BLOCK ** 3
EMPTY = np.int64(-1)
OFFSET = 1 << 20
MAX_LOAD = 0.5

UNKNOWN = 0
FREE = 1
OCCUPIED = 2


@njit(cache=True, inline="always")
def pack_block(bx, by, bz):
    return ((np.int64(bx) + OFFSET) << 42) | ((np.int64(by) + OFFSET) << 21) | (np.int64(bz) + OFFSET)


@njit(cache=True)
def unpack_block(key):
    mask = (np.int64(1) << 21) - 1
    return ((key >> 42) & mask) - OFFSET, ((key >> 21) & mask) - OFFSET, (key & mask) - OFFSET


@njit(cache=True, inline="always")
def _hash(key, mask):
    h = np.uint64(key) * np.uint64(0x9E3779B97F4A7C15)
    return np.int64(h >> np.uint64(20)) & mask


@njit(cache=True)
def find_slot(keys, slots, key):
    mask = keys.shape[0] - 1
    i = _hash(key, mask)
    while True:
        k = keys[i]
        if k == key:
            return slots[i]
        if k == EMPTY:
            return -1
        i = (i + 1) & mask


@njit(cache=True)
def insert_key(keys, slots, key, slot):
    mask = keys.shape[0] - 1
    i = _hash(key, mask)
    while keys[i] != EMPTY:
        i = (i + 1) & mask
    keys[i] = key
    slots[i] = slot


@njit(cache=True)
def rehash(old_keys, old_slots, new_keys, new_slots):
    for i in range(old_keys.shape[0]):
        if old_keys[i] != EMPTY:
            insert_key(new_keys, new_slots, old_keys[i], old_slots[i])


@njit(cache=True, inline="always")
def _floordiv(a, b):
    return np.int64(np.floor(a / b))


@njit(cache=True)
def voxel_value(keys, slots, data, ix, iy, iz):
    bx = ix >> 3
    by = iy >> 3
    bz = iz >> 3
    s = find_slot(keys, slots, pack_block(bx, by, bz))
    if s < 0:
        return np.float32(0.0)
    return data[s, ((ix & 7) * BLOCK + (iy & 7)) * BLOCK + (iz & 7)]


@njit(cache=True, inline="always")
def _block_for(keys, slots, data, n_used, key):
    s = find_slot(keys, slots, key)
    if s < 0:
        s = n_used
        insert_key(keys, slots, key, s)
        data[s, :] = 0.0
        n_used += 1
    return s, n_used


@njit(cache=True)
def integrate_rays(keys, slots, data, n_used, origin, endpoints, is_hit, res,
                   l_hit, l_miss, lmin, lmax, start):
    """Amanatides-Woo traversal from ``origin`` to each endpoint.

    Voxels strictly before the endpoint voxel receive ``l_miss``; the
    endpoint voxel receives ``l_hit`` when ``is_hit`` else ``l_miss``.
    Returns ``(next_ray, n_used)``; ``next_ray < len(endpoints)`` means the
    caller must grow storage and call again from ``next_ray``.
    """
    cap_limit = np.int64(keys.shape[0] * MAX_LOAD)
    pool = data.shape[0]
    o0 = origin[0] / res
    o1 = origin[1] / res
    o2 = origin[2] / res
    c0 = np.int64(np.floor(o0))
    c1 = np.int64(np.floor(o1))
    c2 = np.int64(np.floor(o2))
    inf = np.inf
    last_key = EMPTY
    s = -1
    for r in range(start, endpoints.shape[0]):
        e0 = endpoints[r, 0] / res
        e1 = endpoints[r, 1] / res
        e2 = endpoints[r, 2] / res
        f0 = np.int64(np.floor(e0))
        f1 = np.int64(np.floor(e1))
        f2 = np.int64(np.floor(e2))
        n_steps = abs(f0 - c0) + abs(f1 - c1) + abs(f2 - c2)
        if n_used + n_steps + 1 > pool or n_used + n_steps + 1 > cap_limit:
            return r, n_used
        d0 = e0 - o0
        d1 = e1 - o1
        d2 = e2 - o2
        td0 = abs(1.0 / d0) if d0 != 0 else inf
        td1 = abs(1.0 / d1) if d1 != 0 else inf
        td2 = abs(1.0 / d2) if d2 != 0 else inf
        tm0 = ((c0 + 1 - o0) if d0 > 0 else (o0 - c0)) * td0 if d0 != 0 else inf
        tm1 = ((c1 + 1 - o1) if d1 > 0 else (o1 - c1)) * td1 if d1 != 0 else inf
        tm2 = ((c2 + 1 - o2) if d2 > 0 else (o2 - c2)) * td2 if d2 != 0 else inf
        v0, v1, v2 = c0, c1, c2
        for step in range(n_steps + 1):
            key = pack_block(v0 >> 3, v1 >> 3, v2 >> 3)
            if key != last_key:
                s, n_used = _block_for(keys, slots, data, n_used, key)
                last_key = key
            j = ((v0 & 7) * BLOCK + (v1 & 7)) * BLOCK + (v2 & 7)
            delta = l_miss
            if step == n_steps and is_hit[r]:
                delta = l_hit
            v = data[s, j] + delta
            if v < lmin:
                v = lmin
            elif v > lmax:
                v = lmax
            data[s, j] = v
            if step == n_steps:
                break
            # step along the nearest boundary among axes not yet at the end voxel
            best = -1
            bt = inf
            if v0 != f0 and tm0 <= bt:
                best = 0
                bt = tm0
            if v1 != f1 and tm1 < bt:
                best = 1
                bt = tm1
            if v2 != f2 and tm2 < bt:
                best = 2
                bt = tm2
            if best == -1:
                # degenerate direction from rounding; walk straight to the end voxel
                best = 0 if v0 != f0 else (1 if v1 != f1 else 2)
            if best == 0:
                v0 += 1 if f0 > v0 else -1
                tm0 += td0
            elif best == 1:
                v1 += 1 if f1 > v1 else -1
                tm1 += td1
            else:
                v2 += 1 if f2 > v2 else -1
                tm2 += td2
    return endpoints.shape[0], n_used


@njit(cache=True)
def lookup_points(keys, slots, data, pts, res):
    out = np.zeros(pts.shape[0], dtype=np.float32)
    for i in range(pts.shape[0]):
        out[i] = voxel_value(keys, slots, data, _floordiv(pts[i, 0], res),
                             _floordiv(pts[i, 1], res), _floordiv(pts[i, 2], res))
    return out


@njit(cache=True)
def nonzero_voxels(keys, slots, data, threshold, above):
    """Voxel indices and values with value > threshold (above) or != 0 (not above)."""
    n = 0
    for i in range(keys.shape[0]):
        if keys[i] == EMPTY:
            continue
        s = slots[i]
        for j in range(BLOCK_VOXELS):
            v = data[s, j]
            if (above and v > threshold) or ((not above) and v != 0.0):
                n += 1
    ijk = np.empty((n, 3), dtype=np.int64)
    vals = np.empty(n, dtype=np.float32)
    n = 0
    for i in range(keys.shape[0]):
        k = keys[i]
        if k == EMPTY:
            continue
        bx, by, bz = unpack_block(k)
        s = slots[i]
        for j in range(BLOCK_VOXELS):
            v = data[s, j]
            if (above and v > threshold) or ((not above) and v != 0.0):
                lz = j % BLOCK
                ly = (j // BLOCK) % BLOCK
                lx = j // (BLOCK * BLOCK)
                ijk[n, 0] = bx * BLOCK + lx
                ijk[n, 1] = by * BLOCK + ly
                ijk[n, 2] = bz * BLOCK + lz
                vals[n] = v
                n += 1
    return ijk, vals


@njit(cache=True)
def _classify_world_point(keys_l, slots_l, data_l, Rs, ts, res, px, py, pz, alpha, beta):
    any_free = False
    for s in range(Rs.shape[0]):
        qx = Rs[s, 0, 0] * px + Rs[s, 0, 1] * py + Rs[s, 0, 2] * pz + ts[s, 0]
        qy = Rs[s, 1, 0] * px + Rs[s, 1, 1] * py + Rs[s, 1, 2] * pz + ts[s, 1]
        qz = Rs[s, 2, 0] * px + Rs[s, 2, 1] * py + Rs[s, 2, 2] * pz + ts[s, 2]
        v = voxel_value(keys_l[s], slots_l[s], data_l[s], _floordiv(qx, res),
                        _floordiv(qy, res), _floordiv(qz, res))
        if v > beta:
            return OCCUPIED
        if v < alpha:
            any_free = True
    return FREE if any_free else UNKNOWN


@njit(cache=True)
def classify_world_points(keys_l, slots_l, data_l, Rs, ts, res, pts, alpha, beta):
    out = np.empty(pts.shape[0], dtype=np.int8)
    for i in range(pts.shape[0]):
        out[i] = _classify_world_point(keys_l, slots_l, data_l, Rs, ts, res,
                                       pts[i, 0], pts[i, 1], pts[i, 2], alpha, beta)
    return out


@njit(cache=True)
def segment_free(keys_l, slots_l, data_l, Rs, ts, res, alpha, beta,
                 a, b, radius, pitch, memo, memo_origin):
    """True iff every lattice point (pitch-spaced, world aligned) inside the
    cylinder a->b of ``radius`` or the half-ball capping b classifies FREE.

    ``memo`` caches lattice classifications (-1 = not computed) for indices
    starting at ``memo_origin``; points outside it are evaluated directly.
    """
    ax, ay, az = a[0], a[1], a[2]
    dx, dy, dz = b[0] - ax, b[1] - ay, b[2] - az
    L2 = dx * dx + dy * dy + dz * dz
    L = np.sqrt(L2)
    r2 = radius * radius
    if L > 1e-12:
        ux, uy, uz = dx / L, dy / L, dz / L
    else:
        ux, uy, uz = 0.0, 0.0, 0.0
    lo0 = np.int64(np.ceil((min(ax, b[0]) - radius) / pitch))
    hi0 = np.int64(np.floor((max(ax, b[0]) + radius) / pitch))
    lo1 = np.int64(np.ceil((min(ay, b[1]) - radius) / pitch))
    hi1 = np.int64(np.floor((max(ay, b[1]) + radius) / pitch))
    lo2 = np.int64(np.ceil((min(az, b[2]) - radius) / pitch))
    hi2 = np.int64(np.floor((max(az, b[2]) + radius) / pitch))
    hxy2 = dx * dx + dy * dy
    m0, m1, m2 = memo.shape[0], memo.shape[1], memo.shape[2]
    for i in range(lo0, hi0 + 1):
        px = i * pitch
        for j in range(lo1, hi1 + 1):
            py = j * pitch
            # reject columns whose horizontal distance to the axis exceeds radius
            rx, ry = px - ax, py - ay
            if hxy2 > 0:
                tt = (rx * dx + ry * dy) / hxy2
                tt = 0.0 if tt < 0.0 else (1.0 if tt > 1.0 else tt)
                ex, ey = rx - tt * dx, ry - tt * dy
            else:
                ex, ey = rx, ry
            if ex * ex + ey * ey > r2 + 1e-12:
                continue
            for k in range(lo2, hi2 + 1):
                pz = k * pitch
                wx, wy, wz = px - ax, py - ay, pz - az
                if L > 1e-12:
                    t = wx * ux + wy * uy + wz * uz
                    if t < 0.0:
                        continue
                    if t <= L:
                        qx, qy, qz = wx - t * ux, wy - t * uy, wz - t * uz
                        if qx * qx + qy * qy + qz * qz > r2:
                            continue
                    else:
                        bx_, by_, bz_ = px - b[0], py - b[1], pz - b[2]
                        if bx_ * bx_ + by_ * by_ + bz_ * bz_ > r2:
                            continue
                else:
                    if wx * wx + wy * wy + wz * wz > r2:
                        continue
                mi = i - memo_origin[0]
                mj = j - memo_origin[1]
                mk = k - memo_origin[2]
                if 0 <= mi < m0 and 0 <= mj < m1 and 0 <= mk < m2:
                    c = memo[mi, mj, mk]
                    if c < 0:
                        c = _classify_world_point(keys_l, slots_l, data_l, Rs, ts, res,
                                                  px, py, pz, alpha, beta)
                        memo[mi, mj, mk] = c
                else:
                    c = _classify_world_point(keys_l, slots_l, data_l, Rs, ts, res,
                                              px, py, pz, alpha, beta)
                if c != FREE:
                    return False
    return True


@njit(cache=True)
def write_voxels(keys, slots, data, n_used, ijk, vals, lmin, lmax):
    """Overwrite voxel values; storage must already have room for every new block."""
    for n in range(ijk.shape[0]):
        ix, iy, iz = ijk[n, 0], ijk[n, 1], ijk[n, 2]
        key = pack_block(ix >> 3, iy >> 3, iz >> 3)
        s = find_slot(keys, slots, key)
        if s < 0:
            s = n_used
            insert_key(keys, slots, key, s)
            data[s, :] = 0.0
            n_used += 1
        v = vals[n]
        if v < lmin:
            v = lmin
        elif v > lmax:
            v = lmax
        data[s, ((ix & 7) * BLOCK + (iy & 7)) * BLOCK + (iz & 7)] = v
    return n_used
