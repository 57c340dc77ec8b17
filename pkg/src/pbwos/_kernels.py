"""Compiled hot loops for the walk-based solvers.

Everything here mirrors the pure-Python reference implementations in
`walkers`, `jumps` and `sampling` (same formulas, same tie-breaking, same
tolerances) but runs as nopython numba kernels with an inline counter-based
generator, so large sample counts are affordable on one core.

Random numbers: Philox4x64-10 keyed by (seed, stream_id); sample j within a
chunk owns counter word 1, so samples are independent substreams and every
result is reproducible regardless of chunking or scheduling.  The block
function is bit-identical to numpy's Philox (checked in the test suite);
draws are doubles on the 2**-53 grid.

These kernels are an optimization layer: solvers fall back to the scalar
implementations when numba is unavailable, and the test suite checks the
two paths against each other statistically.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

# --------------------------------------------------------------------------
# Philox4x64-10 counter-based generator
# --------------------------------------------------------------------------

_M0 = np.uint64(0xD2E7470EE14C6C93)
_M1 = np.uint64(0xCA5A826395121157)
_W0 = np.uint64(0x9E3779B97F4A7C15)
_W1 = np.uint64(0xBB67AE8584CAA73B)
_MASK32 = np.uint64(0xFFFFFFFF)
_U32 = np.uint64(32)
_U11 = np.uint64(11)
_U0 = np.uint64(0)
_U1 = np.uint64(1)
_INV53 = float(2.0**-53)

#: Uniform doubles buffered per refill (must be a multiple of 4).
_BUF_SIZE = 64


@njit(cache=True, inline="always")
def _mulhilo(a, b):
    """Full 64x64 -> 128 bit product as (hi, lo), via 32-bit limbs."""
    ahi = a >> _U32
    alo = a & _MASK32
    bhi = b >> _U32
    blo = b & _MASK32
    lo = a * b
    t = alo * blo
    mid = ahi * blo + (t >> _U32)
    mid2 = alo * bhi + (mid & _MASK32)
    hi = ahi * bhi + (mid >> _U32) + (mid2 >> _U32)
    return hi, lo


@njit(cache=True, inline="always")
def _philox_block(c0, c1, c2, c3, k0, k1):
    """One 4x64 output block for counter (c0..c3) and key (k0, k1)."""
    for _ in range(10):
        hi0, lo0 = _mulhilo(_M0, c0)
        hi1, lo1 = _mulhilo(_M1, c2)
        c0 = hi1 ^ c1 ^ k0
        c1 = lo1
        c2 = hi0 ^ c3 ^ k1
        c3 = lo0
        k0 = k0 + _W0
        k1 = k1 + _W1
    return c0, c1, c2, c3


@njit(cache=True)
def philox_raw(c0, c1, c2, c3, k0, k1, out):
    """Test hook: write the raw block for an explicit counter/key to out[0:4]."""
    r0, r1, r2, r3 = _philox_block(
        np.uint64(c0), np.uint64(c1), np.uint64(c2), np.uint64(c3), np.uint64(k0), np.uint64(k1)
    )
    out[0] = r0
    out[1] = r1
    out[2] = r2
    out[3] = r3


@njit(cache=True)
def _refill(buf, blk, c1, k0, k1):
    """Fill buf with uniforms from consecutive blocks; returns the new block index."""
    for b in range(buf.size // 4):
        blk = blk + _U1
        r0, r1, r2, r3 = _philox_block(blk, c1, _U0, _U0, k0, k1)
        buf[4 * b] = (r0 >> _U11) * _INV53
        buf[4 * b + 1] = (r1 >> _U11) * _INV53
        buf[4 * b + 2] = (r2 >> _U11) * _INV53
        buf[4 * b + 3] = (r3 >> _U11) * _INV53
    return blk


@njit(cache=True, inline="always")
def _next_u(buf, pos, blk, c1, k0, k1):
    if pos >= buf.size:
        blk = _refill(buf, blk, c1, k0, k1)
        pos = 0
    return buf[pos], pos + 1, blk


@njit(cache=True, inline="always")
def _sphere_dir(buf, pos, blk, c1, k0, k1):
    """Uniform unit vector from two uniforms (z = 1-2u, uniform azimuth)."""
    u1, pos, blk = _next_u(buf, pos, blk, c1, k0, k1)
    u2, pos, blk = _next_u(buf, pos, blk, c1, k0, k1)
    z = 1.0 - 2.0 * u1
    s = math.sqrt(max(0.0, 1.0 - z * z))
    phi = 2.0 * math.pi * u2
    return s * math.cos(phi), s * math.sin(phi), z, pos, blk


# --------------------------------------------------------------------------
# Geometry helpers (exact mirrors of the molecule-module semantics)
# --------------------------------------------------------------------------


@njit(cache=True, inline="always")
def _nearest(centers, radii, px, py, pz):
    """Lowest-index argmin of |x - c_i| - r_i; returns (index, signed distance)."""
    best = 0
    best_sd = 1.0e300
    for i in range(centers.shape[0]):
        dx = px - centers[i, 0]
        dy = py - centers[i, 1]
        dz = pz - centers[i, 2]
        sd = math.sqrt(dx * dx + dy * dy + dz * dz) - radii[i]
        if sd < best_sd:
            best_sd = sd
            best = i
    return best, best_sd


@njit(cache=True, inline="always")
def _containing(centers, radii, px, py, pz):
    """Lowest-index atom with |x - c_i| < r_i, or (-1, 0) if none."""
    for i in range(centers.shape[0]):
        dx = px - centers[i, 0]
        dy = py - centers[i, 1]
        dz = pz - centers[i, 2]
        d = math.sqrt(dx * dx + dy * dy + dz * dz)
        if d < radii[i]:
            return i, d
    return -1, 0.0


@njit(cache=True, inline="always")
def _u0_at(centers, charges, u0coef, px, py, pz):
    total = 0.0
    for i in range(centers.shape[0]):
        dx = px - centers[i, 0]
        dy = py - centers[i, 1]
        dz = pz - centers[i, 2]
        total += charges[i] / math.sqrt(dx * dx + dy * dy + dz * dz)
    return u0coef * total


@njit(cache=True, inline="always")
def _tangent(nx, ny, nz):
    """Orthonormal (m, q) completing unit n; seeded from the smallest |component|."""
    ax = abs(nx)
    ay = abs(ny)
    az = abs(nz)
    if ax <= ay and ax <= az:
        ex, ey, ez = 1.0, 0.0, 0.0
    elif ay <= az:
        ex, ey, ez = 0.0, 1.0, 0.0
    else:
        ex, ey, ez = 0.0, 0.0, 1.0
    mx = ny * ez - nz * ey
    my = nz * ex - nx * ez
    mz = nx * ey - ny * ex
    norm = math.sqrt(mx * mx + my * my + mz * mz)
    mx /= norm
    my /= norm
    mz /= norm
    qx = ny * mz - nz * my
    qy = nz * mx - nx * mz
    qz = nx * my - ny * mx
    return mx, my, mz, qx, qy, qz


# --------------------------------------------------------------------------
# Distribution helpers (exact mirrors of the sampling module)
# --------------------------------------------------------------------------


@njit(cache=True, inline="always")
def _kill_prob(radius, lam):
    x = radius * math.sqrt(2.0 * lam)
    if x < 1.0e-4:
        return x * x / 6.0 - 7.0 * x**4 / 360.0
    if x > 30.0:
        em = math.exp(-x)
        return 1.0 - 2.0 * x * em / (1.0 - em * em)
    return 1.0 - x / math.sinh(x)


@njit(cache=True, inline="always")
def _split_cdf(R, lam, r):
    a = math.sqrt(2.0 * lam)
    x = a * R
    if x < 1.0e-4:
        val = r * r * (3.0 * R - 2.0 * r) / (R * R * R)
    elif x > 30.0:
        em = math.exp(-2.0 * x)
        den = (1.0 - em) - 2.0 * x * math.exp(-x)
        e_ar = math.exp(-a * r)
        tail = math.exp(-2.0 * a * (R - r))
        val = ((1.0 - em) - e_ar * (a * r * (1.0 + tail) + (1.0 - tail))) / den
    else:
        val = (math.sinh(x) - a * r * math.cosh(a * (R - r)) - math.sinh(a * (R - r))) / (
            math.sinh(x) - x
        )
    return min(max(val, 0.0), 1.0)


@njit(cache=True, inline="always")
def _split_pdf(R, lam, r):
    a = math.sqrt(2.0 * lam)
    x = a * R
    if x < 1.0e-4:
        return 6.0 * r * (R - r) / (R * R * R)
    if x > 30.0:
        den = (1.0 - math.exp(-2.0 * x)) - 2.0 * x * math.exp(-x)
        return a * a * r * math.exp(-a * r) * (1.0 - math.exp(-2.0 * a * (R - r))) / den
    return a * a * r * math.sinh(a * (R - r)) / (math.sinh(x) - x)


@njit(cache=True, inline="always")
def _split_radius_from_u(R, lam, u):
    """Invert the split-radius CDF: 4 clamped Newton steps, bisection backstop."""
    lo = 1.0e-9 * R
    hi = (1.0 - 1.0e-9) * R
    r = min(max(R * u, lo), hi)
    for _ in range(4):
        f = _split_cdf(R, lam, r) - u
        d = _split_pdf(R, lam, r)
        if d <= 0.0:
            break
        r = min(max(r - f / d, lo), hi)
    if abs(_split_cdf(R, lam, r) - u) > 1.0e-6:
        a = 0.0
        b = R
        for _ in range(60):
            mid = 0.5 * (a + b)
            if _split_cdf(R, lam, mid) < u:
                a = mid
            else:
                b = mid
        r = min(max(0.5 * (a + b), lo), hi)
    return r


# --------------------------------------------------------------------------
# Boundary jump (mirror of jumps.jump; kind: 0=SNJ, 1=ANJ, 2=TAJ)
# --------------------------------------------------------------------------


@njit(cache=True)
def _jump(
    centers,
    radii,
    kind,
    h,
    alpha,
    kb,
    eps_in,
    eps_out,
    spx,
    spy,
    spz,
    nx,
    ny,
    nz,
    buf,
    pos,
    blk,
    c1,
    k0,
    k1,
):
    """Returns (killed, lx, ly, lz, pos, blk)."""
    u, pos, blk = _next_u(buf, pos, blk, c1, k0, k1)
    if kind == 0:
        p_out = eps_out / (eps_in + eps_out)
        if u < p_out:
            return False, spx + h * nx, spy + h * ny, spz + h * nz, pos, blk
        return False, spx - h * nx, spy - h * ny, spz - h * nz, pos, blk
    if kind == 1:
        p_out = eps_out / (eps_out + alpha * eps_in)
        if u < p_out:
            ah = alpha * h
            return False, spx + ah * nx, spy + ah * ny, spz + ah * nz, pos, blk
        return False, spx - h * nx, spy - h * ny, spz - h * nz, pos, blk

    # Tangential scheme.
    w_in = alpha * eps_in
    w_out = eps_out
    w_kill = 0.5 * kb * kb * alpha * alpha * h * h
    total = w_in + w_out + w_kill
    if u >= (w_in + w_out) / total:
        return True, 0.0, 0.0, 0.0, pos, blk
    u2, pos, blk = _next_u(buf, pos, blk, c1, k0, k1)
    pick = min(int(u2 * 4.0), 3)
    mx, my, mz, qx, qy, qz = _tangent(nx, ny, nz)
    if u < w_in / total:
        bx = spx - h * nx
        by = spy - h * ny
        bz = spz - h * nz
        s = math.sqrt(2.0) * h
    else:
        ah = alpha * h
        bx = spx + ah * nx
        by = spy + ah * ny
        bz = spz + ah * nz
        s = math.sqrt(2.0) * ah
    if pick == 0:
        lx, ly, lz = bx + s * mx, by + s * my, bz + s * mz
    elif pick == 1:
        lx, ly, lz = bx - s * mx, by - s * my, bz - s * mz
    elif pick == 2:
        lx, ly, lz = bx + s * qx, by + s * qy, bz + s * qz
    else:
        lx, ly, lz = bx - s * qx, by - s * qy, bz - s * qz
    if u < w_in / total:
        return False, lx, ly, lz, pos, blk

    # Outward candidate buried under a neighboring sphere: relocate, trying
    # the chosen candidate first and then the others in fixed order.
    _, sd = _nearest(centers, radii, lx, ly, lz)
    if sd >= 0.0:
        return False, lx, ly, lz, pos, blk
    for trial in range(4):
        k = pick if trial == 0 else (trial - 1 if trial - 1 < pick else trial)
        if trial > 0 and k == pick:
            continue
        if k == 0:
            cx, cy, cz = bx + s * mx, by + s * my, bz + s * mz
        elif k == 1:
            cx, cy, cz = bx - s * mx, by - s * my, bz - s * mz
        elif k == 2:
            cx, cy, cz = bx + s * qx, by + s * qy, bz + s * qz
        else:
            cx, cy, cz = bx - s * qx, by - s * qy, bz - s * qz
        j, sd_c = _nearest(centers, radii, cx, cy, cz)
        if sd_c >= 0.0:
            return False, cx, cy, cz, pos, blk
        ox = cx - centers[j, 0]
        oy = cy - centers[j, 1]
        oz = cz - centers[j, 2]
        dist = math.sqrt(ox * ox + oy * oy + oz * oz)
        if dist >= 1.0e-12:
            scale = (radii[j] + h) / dist
            rx = centers[j, 0] + scale * ox
            ry = centers[j, 1] + scale * oy
            rz = centers[j, 2] + scale * oz
            _, sd_r = _nearest(centers, radii, rx, ry, rz)
            if sd_r > 0.0:
                return False, rx, ry, rz, pos, blk
    return False, spx + h * nx, spy + h * ny, spz + h * nz, pos, blk


# --------------------------------------------------------------------------
# One walk leg: run until the exponential clock (or a TAJ kill) fires
# --------------------------------------------------------------------------


@njit(cache=True)
def _walk_leg(
    centers,
    radii,
    charges,
    u0coef,
    px,
    py,
    pz,
    inside,
    lam,
    eps_shell,
    max_steps,
    kind,
    h,
    alpha,
    kb,
    eps_in,
    eps_out,
    buf,
    pos,
    blk,
    c1,
    k0,
    k1,
):
    """Accumulate the singular-part telescoping score along one particle life.

    Returns (score, kx, ky, kz, kr, ended, steps, pos, blk) where ended is
    0 = exponential kill inside the sphere (center k, radius kr),
    1 = boundary kill (tangential scheme), 2 = step cap, 3 = lost containment.
    """
    score = 0.0
    steps = 0
    while True:
        if inside:
            while True:
                ci, rho = _containing(centers, radii, px, py, pz)
                if ci < 0:
                    return score, 0.0, 0.0, 0.0, 0.0, 3, steps, pos, blk
                R = radii[ci]
                ccx = centers[ci, 0]
                ccy = centers[ci, 1]
                ccz = centers[ci, 2]
                if rho < 1.0e-12:
                    dx, dy, dz, pos, blk = _sphere_dir(buf, pos, blk, c1, k0, k1)
                else:
                    u, pos, blk = _next_u(buf, pos, blk, c1, k0, k1)
                    t = R / (R - rho) - 2.0 * R * rho * u / (R * R - rho * rho)
                    s_len = R / t
                    ca = (R * R + rho * rho - s_len * s_len) / (2.0 * R * rho)
                    ca = min(max(ca, -1.0), 1.0)
                    sa = math.sqrt(max(0.0, 1.0 - ca * ca))
                    u2, pos, blk = _next_u(buf, pos, blk, c1, k0, k1)
                    phi = 2.0 * math.pi * u2
                    erx = (px - ccx) / rho
                    ery = (py - ccy) / rho
                    erz = (pz - ccz) / rho
                    mx, my, mz, qx, qy, qz = _tangent(erx, ery, erz)
                    cp = math.cos(phi)
                    sp = math.sin(phi)
                    dx = ca * erx + sa * (cp * mx + sp * qx)
                    dy = ca * ery + sa * (cp * my + sp * qy)
                    dz = ca * erz + sa * (cp * mz + sp * qz)
                ex = ccx + R * dx
                ey = ccy + R * dy
                ez = ccz + R * dz
                steps += 1
                covered = False
                for j in range(centers.shape[0]):
                    if j == ci:
                        continue
                    ox = ex - centers[j, 0]
                    oy = ey - centers[j, 1]
                    oz = ez - centers[j, 2]
                    if math.sqrt(ox * ox + oy * oy + oz * oz) < radii[j] - 1.0e-9:
                        covered = True
                        break
                if not covered:
                    spx, spy, spz = ex, ey, ez
                    nx, ny, nz = dx, dy, dz
                    break
                px, py, pz = ex, ey, ez
                if steps >= max_steps:
                    return score, 0.0, 0.0, 0.0, 0.0, 2, steps, pos, blk
            score -= _u0_at(centers, charges, u0coef, spx, spy, spz)
        else:
            while True:
                ni, sd = _nearest(centers, radii, px, py, pz)
                if sd <= eps_shell:
                    d = sd + radii[ni]
                    nx = (px - centers[ni, 0]) / d
                    ny = (py - centers[ni, 1]) / d
                    nz = (pz - centers[ni, 2]) / d
                    spx = centers[ni, 0] + radii[ni] * nx
                    spy = centers[ni, 1] + radii[ni] * ny
                    spz = centers[ni, 2] + radii[ni] * nz
                    break
                if steps >= max_steps:
                    return score, 0.0, 0.0, 0.0, 0.0, 2, steps, pos, blk
                u, pos, blk = _next_u(buf, pos, blk, c1, k0, k1)
                if lam > 0.0 and u < _kill_prob(sd, lam):
                    return score, px, py, pz, sd, 0, steps, pos, blk
                dx, dy, dz, pos, blk = _sphere_dir(buf, pos, blk, c1, k0, k1)
                px += sd * dx
                py += sd * dy
                pz += sd * dz
                steps += 1
        killed, lx, ly, lz, pos, blk = _jump(
            centers, radii, kind, h, alpha, kb, eps_in, eps_out,
            spx, spy, spz, nx, ny, nz, buf, pos, blk, c1, k0, k1,
        )
        steps += 1
        if killed:
            return score, 0.0, 0.0, 0.0, 0.0, 1, steps, pos, blk
        px, py, pz = lx, ly, lz
        _, sd_land = _nearest(centers, radii, px, py, pz)
        inside = sd_land < 0.0
        if inside:
            score += _u0_at(centers, charges, u0coef, px, py, pz)


# --------------------------------------------------------------------------
# Chunk drivers
# --------------------------------------------------------------------------


@njit(cache=True, nogil=True)
def linear_chunk(
    centers,
    radii,
    charges,
    u0coef,
    x0,
    y0,
    z0,
    score_init,
    inside0,
    lam,
    eps_shell,
    max_steps,
    kind,
    h,
    alpha,
    kb,
    eps_in,
    eps_out,
    seed,
    stream_id,
    n,
    out_scores,
    out_status,
    out_steps,
):
    """n independent single-particle scores for the linearized problem."""
    buf = np.empty(_BUF_SIZE, dtype=np.float64)
    k0 = np.uint64(seed)
    k1 = np.uint64(stream_id)
    for j in range(n):
        c1 = np.uint64(j)
        pos = _BUF_SIZE
        blk = _U0
        score, _kx, _ky, _kz, _kr, ended, steps, pos, blk = _walk_leg(
            centers, radii, charges, u0coef, x0, y0, z0, inside0,
            lam, eps_shell, max_steps, kind, h, alpha, kb, eps_in, eps_out,
            buf, pos, blk, c1, k0, k1,
        )
        out_scores[j] = score_init + score
        out_status[j] = 0 if ended <= 1 else ended
        out_steps[j] = steps


@njit(cache=True, nogil=True)
def exit_fraction_chunk(
    centers, radii, x0, y0, z0, lam, eps_shell, max_steps, seed, stream_id, n
):
    """Count exterior walks that reach the shell before the clock fires."""
    buf = np.empty(_BUF_SIZE, dtype=np.float64)
    k0 = np.uint64(seed)
    k1 = np.uint64(stream_id)
    exits = 0
    for j in range(n):
        c1 = np.uint64(j)
        pos = _BUF_SIZE
        blk = _U0
        px, py, pz = x0, y0, z0
        steps = 0
        while True:
            _, sd = _nearest(centers, radii, px, py, pz)
            if sd <= eps_shell:
                exits += 1
                break
            if steps >= max_steps:
                break
            u, pos, blk = _next_u(buf, pos, blk, c1, k0, k1)
            if lam > 0.0 and u < _kill_prob(sd, lam):
                break
            dx, dy, dz, pos, blk = _sphere_dir(buf, pos, blk, c1, k0, k1)
            px += sd * dx
            py += sd * dy
            pz += sd * dz
            steps += 1
    return exits


@njit(cache=True, inline="always")
def _draw_offspring(off_cum, off_vals, buf, pos, blk, c1, k0, k1):
    u, pos, blk = _next_u(buf, pos, blk, c1, k0, k1)
    k = 0
    while k < off_cum.size - 1 and u >= off_cum[k]:
        k += 1
    return off_vals[k], pos, blk


@njit(cache=True)
def _sample_tree(
    m, parent, first_child, depth, cap, off_cum, off_vals, buf, pos, blk, c1, k0, k1
):
    """Generation-order tree sampling; returns (n_nodes, height, pos, blk).

    n_nodes = -1 signals the node cap was hit.  Children of node i occupy
    the contiguous range [first_child[i], first_child[i] + m[i]).
    """
    parent[0] = -1
    depth[0] = 0
    n = 1
    q = 0
    height = 0
    while q < n:
        c, pos, blk = _draw_offspring(off_cum, off_vals, buf, pos, blk, c1, k0, k1)
        m[q] = c
        first_child[q] = n
        if n + c > cap:
            return -1, 0, pos, blk
        for _ in range(c):
            parent[n] = q
            depth[n] = depth[q] + 1
            if depth[n] > height:
                height = depth[n]
            n += 1
        q += 1
    return n, height, pos, blk


@njit(cache=True)
def _tree_sig(m, first_child, height):
    """Compact id of a height<=2 tree (root count + child-count tallies), else -1."""
    if height >= 3:
        return -1
    sig = m[0]
    t0 = 0
    t3 = 0
    t5 = 0
    t7 = 0
    t9 = 0
    fc = first_child[0]
    for k in range(m[0]):
        c = m[fc + k]
        if c == 0:
            t0 += 1
        elif c == 3:
            t3 += 1
        elif c == 5:
            t5 += 1
        elif c == 7:
            t7 += 1
        else:
            t9 += 1
    sig |= t0 << 4
    sig |= t3 << 8
    sig |= t5 << 12
    sig |= t7 << 16
    sig |= t9 << 20
    return sig


@njit(cache=True, inline="always")
def _in_sorted(arr, val):
    lo = 0
    hi = arr.size
    while lo < hi:
        mid = (lo + hi) // 2
        if arr[mid] < val:
            lo = mid + 1
        else:
            hi = mid
    return lo < arr.size and arr[lo] == val


@njit(cache=True, nogil=True)
def gw_tree_chunk(off_cum, off_vals, seed, stream_id, n, out_nodes, out_height, out_sig):
    """Debug/statistics hook: sample n trees, record size, height, signature."""
    cap = 65536
    m = np.empty(cap, dtype=np.int64)
    parent = np.empty(cap, dtype=np.int64)
    first_child = np.empty(cap, dtype=np.int64)
    depth = np.empty(cap, dtype=np.int64)
    buf = np.empty(_BUF_SIZE, dtype=np.float64)
    k0 = np.uint64(seed)
    k1 = np.uint64(stream_id)
    for j in range(n):
        c1 = np.uint64(j)
        pos = _BUF_SIZE
        blk = _U0
        n_nodes, height, pos, blk = _sample_tree(
            m, parent, first_child, depth, cap, off_cum, off_vals, buf, pos, blk, c1, k0, k1
        )
        out_nodes[j] = n_nodes
        out_height[j] = height
        out_sig[j] = _tree_sig(m, first_child, height) if n_nodes > 0 else -2


@njit(cache=True, nogil=True)
def branching_chunk(
    centers,
    radii,
    charges,
    u0coef,
    x0,
    y0,
    z0,
    score_init,
    inside0,
    lam,
    eps_shell,
    max_steps,
    kind,
    h,
    alpha,
    kb,
    eps_in,
    eps_out,
    mode,
    fixed_m,
    fixed_first_child,
    fixed_parent,
    fixed_n,
    retained_sigs,
    off_cum,
    off_vals,
    seed,
    stream_id,
    n,
    out_scores,
    out_status,
    out_steps,
):
    """n independent branching-particle scores for the nonlinear problem.

    mode 0: free trees; mode 1: the fixed tree arrays passed in (stratified
    estimation conditions on a tree shape); mode 2: rejection-sample trees
    whose signature is NOT in retained_sigs (the tail stratum: height >= 3
    or an unretained shape).
    """
    cap = 65536
    sm = np.empty(cap, dtype=np.int64)
    sparent = np.empty(cap, dtype=np.int64)
    sfirst = np.empty(cap, dtype=np.int64)
    sdepth = np.empty(cap, dtype=np.int64)
    own = np.empty(cap, dtype=np.float64)
    value = np.empty(cap, dtype=np.float64)
    splx = np.empty(cap, dtype=np.float64)
    sply = np.empty(cap, dtype=np.float64)
    splz = np.empty(cap, dtype=np.float64)
    buf = np.empty(_BUF_SIZE, dtype=np.float64)
    k0 = np.uint64(seed)
    k1 = np.uint64(stream_id)
    for j in range(n):
        c1 = np.uint64(j)
        pos = _BUF_SIZE
        blk = _U0
        status = 0
        steps_total = 0
        if mode == 1:
            n_nodes = fixed_n
        else:
            while True:
                n_nodes, height, pos, blk = _sample_tree(
                    sm, sparent, sfirst, sdepth, cap, off_cum, off_vals,
                    buf, pos, blk, c1, k0, k1,
                )
                if n_nodes < 0:
                    status = 3
                    break
                if mode == 0:
                    break
                sig = _tree_sig(sm, sfirst, height)
                if sig < 0 or not _in_sorted(retained_sigs, sig):
                    break
        if status != 0:
            out_scores[j] = np.nan
            out_status[j] = status
            out_steps[j] = steps_total
            continue
        if mode == 1:
            tm = fixed_m
            tfirst = fixed_first_child
            tparent = fixed_parent
        else:
            tm = sm
            tfirst = sfirst
            tparent = sparent
        for i in range(n_nodes):
            if i == 0:
                px, py, pz = x0, y0, z0
                base = score_init
                ins = inside0
            else:
                p = tparent[i]
                px, py, pz = splx[p], sply[p], splz[p]
                base = 0.0
                ins = False
            sc, kx, ky, kz, kr, ended, steps, pos, blk = _walk_leg(
                centers, radii, charges, u0coef, px, py, pz, ins,
                lam, eps_shell, max_steps, kind, h, alpha, kb, eps_in, eps_out,
                buf, pos, blk, c1, k0, k1,
            )
            steps_total += steps
            if ended != 0:
                status = ended if ended >= 2 else 2
                break
            own[i] = base + sc
            if tm[i] > 0:
                u, pos, blk = _next_u(buf, pos, blk, c1, k0, k1)
                r_s = _split_radius_from_u(kr, lam, u)
                dx, dy, dz, pos, blk = _sphere_dir(buf, pos, blk, c1, k0, k1)
                splx[i] = kx + r_s * dx
                sply[i] = ky + r_s * dy
                splz[i] = kz + r_s * dz
        if status != 0:
            out_scores[j] = np.nan
            out_status[j] = status
            out_steps[j] = steps_total
            continue
        for i in range(n_nodes - 1, -1, -1):
            if tm[i] == 0:
                value[i] = own[i]
            else:
                prod = 1.0
                fc = tfirst[i]
                for k in range(tm[i]):
                    prod *= value[fc + k]
                value[i] = own[i] - prod
        out_scores[j] = value[0]
        out_status[j] = 0
        out_steps[j] = steps_total
