"""Standalone reference evaluation of the Lorenz-Mie series.

Used once to freeze expected values into the test suite. Deliberately
built on a different route than the production code: every partial-wave
coefficient comes from direct scipy spherical Bessel evaluations (no
logarithmic-derivative recurrence), summed at four times the production
truncation order.

Run:  python3 tools/mie_oracle.py
"""

import math

import numpy as np
from scipy.special import spherical_jn, spherical_yn


def _psi(n, z):
    return z * spherical_jn(n, z)


def _psi_prime(n, z):
    return spherical_jn(n, z) + z * spherical_jn(n, z, derivative=True)


def _xi(n, x):
    # outgoing Riccati-Hankel at the (real, lossless-medium) argument
    return x * (spherical_jn(n, x) + 1j * spherical_yn(n, x))


def _xi_prime(n, x):
    jn = spherical_jn(n, x)
    yn = spherical_yn(n, x)
    jnp = spherical_jn(n, x, derivative=True)
    ynp = spherical_yn(n, x, derivative=True)
    return (jn + 1j * yn) + x * (jnp + 1j * ynp)


def production_truncation(x):
    return math.ceil(x + 4.0 * x ** (1.0 / 3.0) + 2.0)


def mie_reference(x, m, order=None):
    """(q_ext, q_sca, g) by direct per-order evaluation of a_n, b_n."""
    if order is None:
        order = 4 * production_truncation(x)
    mx = m * x
    a = np.zeros(order + 2, dtype=complex)
    b = np.zeros(order + 2, dtype=complex)
    for n in range(1, order + 1):
        pmx = _psi(n, mx)
        ppmx = _psi_prime(n, mx)
        px = _psi(n, x)
        ppx = _psi_prime(n, x)
        xx = _xi(n, x)
        xpx = _xi_prime(n, x)
        a[n] = (m * pmx * ppx - px * ppmx) / (m * pmx * xpx - xx * ppmx)
        b[n] = (pmx * ppx - m * px * ppmx) / (pmx * xpx - m * xx * ppmx)

    n = np.arange(1, order + 1, dtype=float)
    an, bn = a[1:order + 1], b[1:order + 1]
    q_sca = (2.0 / x ** 2) * np.sum(
        (2 * n + 1) * (np.abs(an) ** 2 + np.abs(bn) ** 2))
    q_ext = (2.0 / x ** 2) * np.sum((2 * n + 1) * (an + bn).real)
    cross = np.sum(
        n * (n + 2) / (n + 1)
        * (an * np.conj(a[2:order + 2]) + bn * np.conj(b[2:order + 2])).real
    )
    same = np.sum((2 * n + 1) / (n * (n + 1)) * (an * np.conj(bn)).real)
    g = (4.0 / x ** 2) * (cross + same) / q_sca if q_sca > 0 else 0.0
    return float(q_ext), float(q_sca), float(g)


def rayleigh_q_sca(x, m):
    return (8.0 / 3.0) * x ** 4 * abs((m ** 2 - 1) / (m ** 2 + 2)) ** 2


PAIRS = [
    (0.1, 1.5 + 0.0j),
    (0.5, 1.33 + 0.0j),
    (1.0, 1.5 + 0.0j),
    (2.0, 1.1 + 0.0j),
    (5.0, 1.5 + 0.0j),
    (5.0, 1.4 + 0.01j),
    (10.0, 1.05 + 0.0j),
    (20.0, 1.33 + 0.0j),
    (35.0, 1.42 / 1.37 + 0.0j),
    (50.0, 1.33 + 0.001j),
]


def main():
    x, m = 1e-3, 1.33
    _, q_sca, _ = mie_reference(x, m)
    closed = rayleigh_q_sca(x, m)
    rel = abs(q_sca - closed) / closed
    print(f"# Rayleigh validation: x={x}, m={m}")
    print(f"#   series q_sca = {q_sca:.12e}")
    print(f"#   closed form  = {closed:.12e}")
    print(f"#   rel diff     = {rel:.3e}  (must be < 1e-3)")
    assert rel < 1e-3, "oracle fails its own Rayleigh validation"

    print("#\n# (x, m) -> q_ext, q_sca, g at 4x production truncation")
    print("ORACLE_TABLE = [")
    for x, m in PAIRS:
        q_ext, q_sca, g = mie_reference(x, m)
        print(f"    ({x!r}, {m!r}, {q_ext!r}, {q_sca!r}, {g!r}),")
    print("]")


if __name__ == "__main__":
    main()
