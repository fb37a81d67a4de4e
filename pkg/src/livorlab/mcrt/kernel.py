"""Compiled per-batch photon walk.

The batch is the determinism unit: each one owns an independent
counter-based random stream derived from (seed, batch_index), so tallies
per batch are reproducible regardless of which thread runs them or in
what order. All accumulation inside a batch is sequential and Kahan
compensated.

Walk structure per photon: hop to the next interaction or boundary,
deposit the implicit-capture fraction mu_a/mu_t at interactions, deflect
by Henyey-Greenstein, and resolve boundary hits with Fresnel
reflection/refraction. Weight roulette fires below the survival
threshold; deep photons are either credited exactly (lossless stacks)
or lotteried (see model.py).
"""

import numba
import numpy as np

U1 = np.uint64(1)
U11 = np.uint64(11)
U27 = np.uint64(27)
U30 = np.uint64(30)
U31 = np.uint64(31)
SM_MUL1 = np.uint64(0xBF58476D1CE4E5B9)
SM_MUL2 = np.uint64(0x94D049BB133111EB)

INV_2_53 = 1.0 / 9007199254740992.0

COS_NEAR_NORMAL = 1.0 - 1e-12
COS_NEAR_GRAZING = 1e-6


_MASK64 = (1 << 64) - 1


def _mix64(z: int) -> int:
    z ^= z >> 33
    z = (z * 0xFF51AFD7ED558CCD) & _MASK64
    z ^= z >> 33
    z = (z * 0xC4CEB9FE1A85EC53) & _MASK64
    z ^= z >> 33
    return z


def stream_for_batch(seed: int, batch_index: int):
    """Seed and odd increment of one batch's random stream."""
    s = _mix64((seed + 0x9E3779B97F4A7C15 * (batch_index + 1)) & _MASK64)
    gamma = _mix64(s ^ 0x9E3779B97F4A7C15) | 1
    return np.uint64(s), np.uint64(gamma)


@numba.njit(cache=True, inline="always", fastmath={"nsz", "arcp", "contract"})
def _next_u64(state, gamma):
    state += gamma
    z = state
    z ^= z >> U30
    z *= SM_MUL1
    z ^= z >> U27
    z *= SM_MUL2
    z ^= z >> U31
    return state, z


@numba.njit(cache=True, inline="always", fastmath={"nsz", "arcp", "contract"})
def _uniform_half_open(state, gamma):
    # in [0, 1)
    state, z = _next_u64(state, gamma)
    return state, float(z >> U11) * INV_2_53


@numba.njit(cache=True, inline="always", fastmath={"nsz", "arcp", "contract"})
def _uniform_positive(state, gamma):
    # in (0, 1]: safe under log
    state, z = _next_u64(state, gamma)
    return state, float((z >> U11) + U1) * INV_2_53


@numba.njit(cache=True, inline="always", fastmath={"nsz", "arcp", "contract"})
def _fresnel(n1, n2, ca1):
    """Unpolarized reflection factor and transmitted cosine."""
    if n1 == n2:
        return 0.0, ca1
    if ca1 > COS_NEAR_NORMAL:
        r = (n2 - n1) / (n2 + n1)
        return r * r, ca1
    if ca1 < COS_NEAR_GRAZING:
        return 1.0, 0.0
    sa1 = np.sqrt(1.0 - ca1 * ca1)
    sa2 = n1 / n2 * sa1
    if sa2 >= 1.0:
        return 1.0, 0.0
    ca2 = np.sqrt(1.0 - sa2 * sa2)
    sap = sa1 * ca2 + ca1 * sa2
    sam = sa1 * ca2 - ca1 * sa2
    cap = ca1 * ca2 - sa1 * sa2
    cam = ca1 * ca2 + sa1 * sa2
    r = 0.5 * sam * sam * (cap * cap + cam * cam) / (sap * sap * cam * cam)
    return r, ca2


@numba.njit(cache=True, inline="always", fastmath={"nsz", "arcp", "contract"})
def _spin(ux, uy, uz, g, xi_theta, cos_p, sin_p):
    """Henyey-Greenstein deflection by theta and a given azimuth.

    The update is orthonormal in exact arithmetic, so the result is not
    renormalized; rounding drift stays far below any tally tolerance and
    every refraction resets the direction anyway.
    """
    if g == 0.0:
        cos_t = 2.0 * xi_theta - 1.0
    else:
        tmp = (1.0 - g * g) / (1.0 - g + 2.0 * g * xi_theta)
        cos_t = (1.0 + g * g - tmp * tmp) / (2.0 * g)
        if cos_t > 1.0:
            cos_t = 1.0
        elif cos_t < -1.0:
            cos_t = -1.0
    sin_t = np.sqrt(1.0 - cos_t * cos_t)
    if abs(uz) > 0.99999:
        return (sin_t * cos_p, sin_t * sin_p,
                cos_t * (1.0 if uz >= 0.0 else -1.0))
    root = np.sqrt(1.0 - uz * uz)
    inv_root = 1.0 / root
    nx = sin_t * (ux * uz * cos_p - uy * sin_p) * inv_root + ux * cos_t
    ny = sin_t * (uy * uz * cos_p + ux * sin_p) * inv_root + uy * cos_t
    nz = -sin_t * cos_p * root + uz * cos_t
    return nx, ny, nz


@numba.njit(cache=True, inline="always", fastmath={"nsz", "arcp", "contract"})
def _layer_locals(mu_a, mu_s, g_arr, n_arr, z_top, z_bot, layer):
    a = mu_a[layer]
    mt = a + mu_s[layer]
    if mt > 0.0:
        inv_mt = 1.0 / mt
        absf = a * inv_mt
    else:
        inv_mt = 0.0
        absf = 0.0
    return (mt, inv_mt, absf, g_arr[layer], n_arr[layer],
            z_top[layer], z_bot[layer])


@numba.njit(cache=True, nogil=True, fastmath={"nsz", "arcp", "contract"})
def run_batch(n_photons, s0, gamma,
              mu_a, mu_s, g_arr, n_arr, z_top, z_bot,
              ambient_n, start_weight,
              enable_roulette, roulette_threshold, roulette_survival,
              depth_start, depth_survival):
    """Walk one batch of photons; returns Kahan-exact batch tallies.

    Output: (diffuse_sum, transmit_sum, absorbed_sum, diffuse_sq_sum),
    all raw photon-weight sums (not yet divided by the photon count).
    """
    state = s0
    n_layers = mu_a.shape[0]
    last = n_layers - 1

    # In a lossless bottom-infinite stack a deep photon returns to the
    # surface with probability 1 (its depth performs a driftless,
    # recurrent walk) and nothing can absorb it on the way, so its
    # eventual top-exit contribution is exactly its current weight.
    # Crediting that weight on crossing depth_start is exact, which is
    # why it is not gated by the roulette switch; without it such a
    # walk has infinite expected length.
    credit_deep = np.isinf(z_bot[last])
    for i in range(n_layers):
        if mu_a[i] > 0.0:
            credit_deep = False

    diff_s = 0.0
    diff_c = 0.0
    tran_s = 0.0
    tran_c = 0.0
    absb_s = 0.0
    absb_c = 0.0
    sq_s = 0.0
    sq_c = 0.0

    for _ in range(n_photons):
        x = 0.0
        y = 0.0
        z = 0.0
        ux = 0.0
        uy = 0.0
        uz = 1.0
        layer = 0
        la_mt, la_inv_mt, la_abs, la_g, la_n, la_zt, la_zb = _layer_locals(
            mu_a, mu_s, g_arr, n_arr, z_top, z_bot, 0)
        w = start_weight
        local_absorbed = 0.0
        exit_top = 0.0
        depth_mark = depth_start
        s = 0.0
        alive = True

        while alive:
            if s <= 0.0:
                state, u = _uniform_positive(state, gamma)
                s = -np.log(u)

            # boundary beats interaction iff dz/uz < s/mu_t; compare the
            # cross products so the common step never divides
            hit = False
            if uz > 0.0:
                hit = (la_zb - z) * la_mt < s * uz
            elif uz < 0.0:
                hit = (la_zt - z) * la_mt > s * uz
            elif la_mt == 0.0:
                # horizontal flight in a spacer never ends; close the
                # tally by treating the stranded weight as absorbed
                local_absorbed += w
                alive = False
                continue

            if hit:
                going_down = uz > 0.0
                bz = la_zb if going_down else la_zt
                d_bound = (bz - z) / uz
                x += ux * d_bound
                y += uy * d_bound
                s -= d_bound * la_mt
                z = bz
                n1 = la_n
                if going_down:
                    n2 = n_arr[layer + 1] if layer < last else ambient_n
                else:
                    n2 = n_arr[layer - 1] if layer > 0 else ambient_n
                ca1 = abs(uz)
                refl, ca2 = _fresnel(n1, n2, ca1)
                state, u = _uniform_half_open(state, gamma)
                if u >= refl:
                    scale = n1 / n2
                    ux *= scale
                    uy *= scale
                    uz = ca2 if going_down else -ca2
                    if going_down:
                        if layer == last:
                            tran_y = w - tran_c
                            tran_t = tran_s + tran_y
                            tran_c = (tran_t - tran_s) - tran_y
                            tran_s = tran_t
                            alive = False
                        else:
                            layer += 1
                            (la_mt, la_inv_mt, la_abs, la_g, la_n,
                             la_zt, la_zb) = _layer_locals(
                                mu_a, mu_s, g_arr, n_arr, z_top, z_bot,
                                layer)
                    else:
                        if layer == 0:
                            exit_top = w
                            diff_y = w - diff_c
                            diff_t = diff_s + diff_y
                            diff_c = (diff_t - diff_s) - diff_y
                            diff_s = diff_t
                            alive = False
                        else:
                            layer -= 1
                            (la_mt, la_inv_mt, la_abs, la_g, la_n,
                             la_zt, la_zb) = _layer_locals(
                                mu_a, mu_s, g_arr, n_arr, z_top, z_bot,
                                layer)
                else:
                    uz = -uz
                continue

            # interaction inside the layer
            d_interact = s * la_inv_mt
            x += ux * d_interact
            y += uy * d_interact
            z += uz * d_interact
            s = 0.0
            dw = w * la_abs
            local_absorbed += dw
            w -= dw
            if w <= 0.0:
                alive = False
            else:
                state, xi_t = _uniform_half_open(state, gamma)
                # uniform azimuth by rejection from the unit disk plus
                # double-angle identities: much cheaper than cos/sin
                while True:
                    state, pa = _uniform_half_open(state, gamma)
                    state, pb = _uniform_half_open(state, gamma)
                    pa = 2.0 * pa - 1.0
                    pb = 2.0 * pb - 1.0
                    r2 = pa * pa + pb * pb
                    if 0.0 < r2 <= 1.0:
                        break
                inv_r2 = 1.0 / r2
                cos_p = (pa * pa - pb * pb) * inv_r2
                sin_p = 2.0 * pa * pb * inv_r2
                ux, uy, uz = _spin(ux, uy, uz, la_g, xi_t, cos_p, sin_p)

                if credit_deep and z > depth_mark:
                    exit_top = w
                    diff_y = w - diff_c
                    diff_t = diff_s + diff_y
                    diff_c = (diff_t - diff_s) - diff_y
                    diff_s = diff_t
                    alive = False
                elif enable_roulette:
                    if z > depth_mark:
                        state, u = _uniform_half_open(state, gamma)
                        if u < depth_survival:
                            w /= depth_survival
                            depth_mark *= 2.0
                        else:
                            alive = False
                    if alive and w < roulette_threshold:
                        state, u = _uniform_half_open(state, gamma)
                        if u < roulette_survival:
                            w /= roulette_survival
                        else:
                            alive = False

        absb_y = local_absorbed - absb_c
        absb_t = absb_s + absb_y
        absb_c = (absb_t - absb_s) - absb_y
        absb_s = absb_t
        if exit_top > 0.0:
            sq_y = exit_top * exit_top - sq_c
            sq_t = sq_s + sq_y
            sq_c = (sq_t - sq_s) - sq_y
            sq_s = sq_t

    return diff_s, tran_s, absb_s, sq_s
