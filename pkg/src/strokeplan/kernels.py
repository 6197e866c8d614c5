"""Hot inner loops: disk stamping, stamp distance fields and thinning.

Every kernel exists twice, ``*_numba`` and ``*_numpy``, with identical
arithmetic so both paths give bit-identical results. The unsuffixed names are
bound to whichever path :mod:`strokeplan._jit` selected at import time.
"""

import numpy as np

from ._jit import USE_NUMBA, njit

# 8-neighbourhood in clockwise order starting north: P2..P9 of the classic
# thinning notation, as (dy, dx).
NEIGHBOR_OFFSETS = ((-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1), (0, -1), (-1, -1))


def _neighbor_tables():
    """Per-configuration lookup tables for the 256 neighbourhood codes.

    Returns (count, transitions, simple) where ``simple`` marks configurations
    in which deleting the centre preserves 8-connected topology of the
    foreground and 4-connected topology of the background.
    """
    count = np.zeros(256, dtype=np.int64)
    transitions = np.zeros(256, dtype=np.int64)
    simple = np.zeros(256, dtype=np.bool_)
    pos = NEIGHBOR_OFFSETS
    for code in range(256):
        bits = [(code >> i) & 1 for i in range(8)]
        count[code] = sum(bits)
        transitions[code] = sum(1 for i in range(8) if bits[i] == 0 and bits[(i + 1) % 8] == 1)

        def components(members, adjacent):
            seen, n = set(), 0
            for start in members:
                if start in seen:
                    continue
                n += 1
                stack = [start]
                seen.add(start)
                while stack:
                    i = stack.pop()
                    for j in members:
                        if j not in seen and adjacent(i, j):
                            seen.add(j)
                            stack.append(j)
            return seen, n

        def adj8(i, j):
            return max(abs(pos[i][0] - pos[j][0]), abs(pos[i][1] - pos[j][1])) == 1

        def adj4(i, j):
            return abs(pos[i][0] - pos[j][0]) + abs(pos[i][1] - pos[j][1]) == 1

        fg = [i for i in range(8) if bits[i]]
        _, n_fg = components(fg, adj8)
        bg = [i for i in range(8) if not bits[i]]
        # background components that touch the centre through a 4-neighbour
        n_bg = 0
        seen = set()
        for start in (i for i in bg if i % 2 == 0):
            if start in seen:
                continue
            n_bg += 1
            stack = [start]
            seen.add(start)
            while stack:
                i = stack.pop()
                for j in bg:
                    if j not in seen and adj4(i, j):
                        seen.add(j)
                        stack.append(j)
        simple[code] = n_fg == 1 and n_bg == 1
    return count, transitions, simple


NB_COUNT, NB_TRANSITIONS, NB_SIMPLE = _neighbor_tables()


# --------------------------------------------------------------------------
# disk stamping


@njit
def stamp_disks_numba(mask, cx, cy, radius, ax, ay):
    """OR filled disks into ``mask`` in place.

    Centres ``(cx, cy)`` are relative to the integer anchor ``(ax, ay)``;
    keeping geometry anchor-relative makes integer translations exact.
    A pixel (x, y) is covered when |x - cx| <= sqrt(r^2 - (y - cy)^2).
    """
    h, w = mask.shape
    for j in range(cx.shape[0]):
        r = radius[j]
        if r < 0.0:
            continue
        ext = int(np.ceil(r)) + 1
        base = np.floor(cy[j])
        for k in range(-ext, ext + 1):
            ry = base + k
            dy = ry - cy[j]
            hh = r * r - dy * dy
            if hh < 0.0:
                continue
            row = ay + int(ry)
            if row < 0 or row >= h:
                continue
            dx = np.sqrt(hh)
            x_lo = ax + int(np.ceil(cx[j] - dx))
            x_hi = ax + int(np.floor(cx[j] + dx))
            if x_lo < 0:
                x_lo = 0
            if x_hi > w - 1:
                x_hi = w - 1
            if x_lo <= x_hi:
                mask[row, x_lo:x_hi + 1] = True
    return mask


def stamp_disks_numpy(mask, cx, cy, radius, ax, ay):
    h, w = mask.shape
    cx = np.asarray(cx, dtype=np.float64)
    cy = np.asarray(cy, dtype=np.float64)
    radius = np.asarray(radius, dtype=np.float64)
    keep = radius >= 0.0
    cx, cy, radius = cx[keep], cy[keep], radius[keep]
    if cx.size == 0:
        return mask
    ext = int(np.ceil(radius.max())) + 1
    k = np.arange(-ext, ext + 1, dtype=np.float64)
    ry = np.floor(cy)[:, None] + k[None, :]
    dy = ry - cy[:, None]
    r = radius[:, None]
    hh = r * r - dy * dy
    row = ay + ry.astype(np.int64)
    ok = (hh >= 0.0) & (row >= 0) & (row < h)
    dx = np.sqrt(np.where(ok, hh, 0.0))
    x_lo = ax + np.ceil(cx[:, None] - dx).astype(np.int64)
    x_hi = ax + np.floor(cx[:, None] + dx).astype(np.int64)
    x_lo = np.maximum(x_lo, 0)
    x_hi = np.minimum(x_hi, w - 1)
    ok &= x_lo <= x_hi
    rows, lo, hi = row[ok], x_lo[ok], x_hi[ok]
    diff = np.zeros((h, w + 1), dtype=np.int64)
    np.add.at(diff, (rows, lo), 1)
    np.add.at(diff, (rows, hi + 1), -1)
    mask |= np.cumsum(diff[:, :w], axis=1) > 0
    return mask


# --------------------------------------------------------------------------
# arc-length stamp placement along a quadratic Bezier


@njit
def bezier_stamps_numba(q1x, q1y, q2x, q2y, n_dense, n_stamps):
    """Stamp offsets uniformly spaced in arc length along B(s) with q0 = 0.

    ``n_stamps <= 0`` selects max(2, ceil(2 * arc_length)).
    """
    px = np.empty(n_dense)
    py = np.empty(n_dense)
    cum = np.empty(n_dense)
    for i in range(n_dense):
        s = i / (n_dense - 1)
        px[i] = 2.0 * (1.0 - s) * s * q1x + s * s * q2x
        py[i] = 2.0 * (1.0 - s) * s * q1y + s * s * q2y
    cum[0] = 0.0
    for i in range(1, n_dense):
        cum[i] = cum[i - 1] + np.hypot(px[i] - px[i - 1], py[i] - py[i - 1])
    total = cum[n_dense - 1]
    n = n_stamps
    if n <= 0:
        n = max(2, int(np.ceil(2.0 * total)))
    ox = np.empty(n)
    oy = np.empty(n)
    seg = 0
    for j in range(n):
        target = total * j / (n - 1)
        while seg < n_dense - 2 and cum[seg + 1] < target:
            seg += 1
        span = cum[seg + 1] - cum[seg]
        f = 0.0 if span <= 0.0 else (target - cum[seg]) / span
        if f > 1.0:
            f = 1.0
        ox[j] = px[seg] + f * (px[seg + 1] - px[seg])
        oy[j] = py[seg] + f * (py[seg + 1] - py[seg])
    return ox, oy


def bezier_stamps_numpy(q1x, q1y, q2x, q2y, n_dense, n_stamps):
    s = np.arange(n_dense) / (n_dense - 1)
    px = 2.0 * (1.0 - s) * s * q1x + s * s * q2x
    py = 2.0 * (1.0 - s) * s * q1y + s * s * q2y
    cum = np.concatenate([[0.0], np.cumsum(np.hypot(np.diff(px), np.diff(py)))])
    total = cum[-1]
    n = n_stamps if n_stamps > 0 else max(2, int(np.ceil(2.0 * total)))
    target = total * np.arange(n) / (n - 1)
    seg = np.clip(np.searchsorted(cum, target, side="left") - 1, 0, n_dense - 2)
    span = cum[seg + 1] - cum[seg]
    f = np.where(span > 0.0, (target - cum[seg]) / np.where(span > 0.0, span, 1.0), 0.0)
    f = np.minimum(f, 1.0)
    return px[seg] + f * (px[seg + 1] - px[seg]), py[seg] + f * (py[seg + 1] - py[seg])


# --------------------------------------------------------------------------
# squared distance to the nearest stamp centre


@njit
def min_dist2_numba(h, w, cx, cy, ax, ay):
    """Squared distance from every pixel to its nearest centre (anchor-relative)."""
    out = np.full((h, w), np.inf)
    for row in range(h):
        py = float(row - ay)
        for col in range(w):
            px = float(col - ax)
            best = np.inf
            for j in range(cx.shape[0]):
                dx = px - cx[j]
                dy = py - cy[j]
                d = dx * dx + dy * dy
                if d < best:
                    best = d
            out[row, col] = best
    return out


def min_dist2_numpy(h, w, cx, cy, ax, ay, chunk=64):
    cx = np.asarray(cx, dtype=np.float64)
    cy = np.asarray(cy, dtype=np.float64)
    px = (np.arange(w) - ax).astype(np.float64)
    py = (np.arange(h) - ay).astype(np.float64)
    out = np.full((h, w), np.inf)
    for start in range(0, cx.size, chunk):
        dx = px[None, None, :] - cx[start:start + chunk, None, None]
        dy = py[None, :, None] - cy[start:start + chunk, None, None]
        np.minimum(out, (dx * dx + dy * dy).min(axis=0), out=out)
    return out


# --------------------------------------------------------------------------
# thinning


@njit
def _code_at(img, y, x):
    code = 0
    if img[y - 1, x]:
        code |= 1
    if img[y - 1, x + 1]:
        code |= 2
    if img[y, x + 1]:
        code |= 4
    if img[y + 1, x + 1]:
        code |= 8
    if img[y + 1, x]:
        code |= 16
    if img[y + 1, x - 1]:
        code |= 32
    if img[y, x - 1]:
        code |= 64
    if img[y - 1, x - 1]:
        code |= 128
    return code


@njit
def _zs_candidate(code, step, count, transitions):
    n = count[code]
    if n < 2 or n > 6 or transitions[code] != 1:
        return False
    p2 = code & 1
    p4 = (code >> 2) & 1
    p6 = (code >> 4) & 1
    p8 = (code >> 6) & 1
    if step == 0:
        return p2 * p4 * p6 == 0 and p4 * p6 * p8 == 0
    return p2 * p4 * p8 == 0 and p2 * p6 * p8 == 0


@njit
def thin_numba(padded, count, transitions, simple):
    """Two-subiteration thinning on a zero-padded boolean image, in place.

    Candidates are chosen in parallel per subiteration, then deleted one at a
    time after re-checking that the pixel is still simple and not an end.
    """
    h, w = padded.shape
    ys = np.empty(h * w, dtype=np.int64)
    xs = np.empty(h * w, dtype=np.int64)
    changed = True
    while changed:
        changed = False
        for step in range(2):
            n = 0
            for y in range(1, h - 1):
                for x in range(1, w - 1):
                    if padded[y, x] and _zs_candidate(_code_at(padded, y, x), step, count, transitions):
                        ys[n] = y
                        xs[n] = x
                        n += 1
            for i in range(n):
                code = _code_at(padded, ys[i], xs[i])
                if count[code] >= 2 and simple[code]:
                    padded[ys[i], xs[i]] = False
                    changed = True
    # break any surviving 2x2 blocks
    changed = True
    while changed:
        changed = False
        for y in range(1, h - 2):
            for x in range(1, w - 2):
                if padded[y, x] and padded[y + 1, x] and padded[y, x + 1] and padded[y + 1, x + 1]:
                    done = False
                    for oy in range(2):
                        for ox in range(2):
                            yy = y + oy
                            xx = x + ox
                            code = _code_at(padded, yy, xx)
                            if count[code] >= 2 and simple[code]:
                                padded[yy, xx] = False
                                changed = True
                                done = True
                                break
                        if done:
                            break
    return padded


def _codes_numpy(img):
    code = np.zeros(img.shape, dtype=np.int64)
    for bit, (dy, dx) in enumerate(NEIGHBOR_OFFSETS):
        shifted = np.zeros_like(img)
        h, w = img.shape
        ys = slice(max(0, -dy), h - max(0, dy))
        xs = slice(max(0, -dx), w - max(0, dx))
        yd = slice(max(0, dy), h - max(0, -dy))
        xd = slice(max(0, dx), w - max(0, -dx))
        shifted[ys, xs] = img[yd, xd]
        code |= shifted.astype(np.int64) << bit
    return code


def neighbor_code(img, y, x):
    code = 0
    for bit, (dy, dx) in enumerate(NEIGHBOR_OFFSETS):
        if img[y + dy, x + dx]:
            code |= 1 << bit
    return code


def thin_numpy(padded, count, transitions, simple):
    h, w = padded.shape
    changed = True
    while changed:
        changed = False
        for step in range(2):
            code = _codes_numpy(padded)
            n = count[code]
            ok = padded & (n >= 2) & (n <= 6) & (transitions[code] == 1)
            p2, p4, p6, p8 = ((code >> s) & 1 for s in (0, 2, 4, 6))
            if step == 0:
                ok &= (p2 * p4 * p6 == 0) & (p4 * p6 * p8 == 0)
            else:
                ok &= (p2 * p4 * p8 == 0) & (p2 * p6 * p8 == 0)
            ok[0, :] = ok[-1, :] = False
            ok[:, 0] = ok[:, -1] = False
            for y, x in zip(*np.nonzero(ok)):
                c = neighbor_code(padded, y, x)
                if count[c] >= 2 and simple[c]:
                    padded[y, x] = False
                    changed = True
    changed = True
    while changed:
        changed = False
        block = padded[:-1, :-1] & padded[1:, :-1] & padded[:-1, 1:] & padded[1:, 1:]
        for y, x in zip(*np.nonzero(block)):
            if y < 1 or x < 1 or y > h - 3 or x > w - 3:
                continue
            if not (padded[y, x] and padded[y + 1, x] and padded[y, x + 1] and padded[y + 1, x + 1]):
                continue
            done = False
            for oy in range(2):
                for ox in range(2):
                    yy, xx = y + oy, x + ox
                    c = neighbor_code(padded, yy, xx)
                    if count[c] >= 2 and simple[c]:
                        padded[yy, xx] = False
                        changed = done = True
                        break
                if done:
                    break
    return padded


if USE_NUMBA:
    stamp_disks = stamp_disks_numba
    bezier_stamps = bezier_stamps_numba
    min_dist2 = min_dist2_numba
    thin = thin_numba
else:
    stamp_disks = stamp_disks_numpy
    bezier_stamps = bezier_stamps_numpy
    min_dist2 = min_dist2_numpy
    thin = thin_numpy
