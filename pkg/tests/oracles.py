"""Independent reference computations used to freeze expected values.

Nothing here imports the package under test.
"""

import itertools
import math


def squeezed_pmf(nbar, n):
    if n % 2:
        return 0.0
    m = n // 2
    r = math.asinh(math.sqrt(nbar))
    return math.factorial(2 * m) / (2**m * math.factorial(m)) ** 2 * math.tanh(r) ** (2 * m) / math.cosh(r)


def poisson_pmf(mu, n):
    return math.exp(-mu) * mu**n / math.factorial(n)


def brute_force_clicks(pmf, eta, dphi, n_top):
    """Enumerate every photon's fate (lost, port 1, port 2) for n <= n_top.

    Returns (c1, c2, P(only 1), P(only 2)).
    """
    p = (1 + math.sin(dphi)) / 2
    w = {0: 1 - eta, 1: eta * p, 2: eta * (1 - p)}
    c1 = c2 = only1 = only2 = 0.0
    for n in range(n_top + 1):
        pn = pmf(n)
        if pn == 0:
            continue
        for fates in itertools.product((0, 1, 2), repeat=n):
            prob = pn * math.prod(w[f] for f in fates)
            a = 1 in fates
            b = 2 in fates
            c1 += prob * a
            c2 += prob * b
            only1 += prob * (a and not b)
            only2 += prob * (b and not a)
    return c1, c2, only1, only2


def brute_force_stats(pmf, eta, dphi=0.0, n_top=10):
    c1, c2, o1, o2 = brute_force_clicks(pmf, eta, dphi, n_top)
    mean = o1 - o2
    return {"c1": c1, "c2": c2, "mean": mean, "sigma": math.sqrt(o1 + o2 - mean * mean)}


def brute_force_alpha(pmf, eta, n_top=10, h=1e-4):
    up = brute_force_stats(pmf, eta, h, n_top)["mean"]
    dn = brute_force_stats(pmf, eta, -h, n_top)["mean"]
    c0 = brute_force_stats(pmf, eta, 0.0, n_top)
    return (up - dn) / (2 * h) / (c0["c1"] + c0["c2"])
