"""Reference computations that do not reuse any package code."""
import numpy as np
from scipy import integrate, optimize


def two_particle_extinction_time(r_small=1.0, r_large=2.0):
    """Extinction time of the smaller of two particles under u - 1/R.

    Volume conservation gives ``R2 = (V - R1**3)**(1/3)``, so the time is the
    quadrature of ``dR1 / (1/R1 - u(R1))`` from 0 to ``r_small``.
    """
    vol = r_small**3 + r_large**3

    def rate(r1):
        r2 = np.cbrt(vol - r1**3)
        u = (r1 + r2) / (r1 * r1 + r2 * r2)
        return 1.0 / r1 - u

    val, _ = integrate.quad(lambda r: 1.0 / rate(r), 0.0, r_small, epsabs=1e-13, epsrel=1e-13)
    return val


def transport_assignment(xa, ka, xb, kb):
    """Exact W1 for integer atom multiplicities ``ka``, ``kb`` with equal totals.

    Each atom is replicated by its multiplicity and the resulting equal-mass
    problem is solved as a linear assignment.
    """
    a = np.repeat(xa, ka)
    b = np.repeat(xb, kb)
    cost = np.abs(a[:, None] - b[None, :])
    i, j = optimize.linear_sum_assignment(cost)
    return cost[i, j].sum() / a.size


def transport_lp(xa, wa, xb, wb):
    """W1 between arbitrary discrete measures of equal mass by a transport LP."""
    m, n = len(xa), len(xb)
    cost = np.abs(np.subtract.outer(xa, xb)).ravel()
    a_eq = np.zeros((m + n, m * n))
    for i in range(m):
        a_eq[i, i * n:(i + 1) * n] = 1.0
    for j in range(n):
        a_eq[m + j, j::n] = 1.0
    res = optimize.linprog(cost, A_eq=a_eq, b_eq=np.concatenate([wa, wb]), bounds=(0, None),
                           method="highs",
                           options={"primal_feasibility_tolerance": 1e-10,
                                    "dual_feasibility_tolerance": 1e-10})
    assert res.success
    return res.fun


def cdf_l1_quadrature(cdf_a, cdf_b, lo, hi, n=200001):
    """Brute-force L1 distance of two CDF callables on a fine grid."""
    x = np.linspace(lo, hi, n)
    return np.trapezoid(np.abs(cdf_a(x) - cdf_b(x)), x)
