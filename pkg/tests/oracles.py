"""Reference values computed independently of the package under test.

Nothing here imports diffaqm; each oracle uses textbook closed forms,
brute-force quadrature or a birth-death chain.
"""
import math
from fractions import Fraction

import numpy as np
from scipy import integrate, special
from scipy.linalg import expm


def gl_weight_direct(order, j):
    """(-1)^j * binom(order, j) from the falling-factorial product, exactly."""
    a = Fraction(order)
    prod = Fraction(1)
    for i in range(j):
        prod *= a - i
    return float((-1) ** j * prod / math.factorial(j))


def stehfest_v_direct(n):
    """Stehfest weights from the textbook double sum, float arithmetic."""
    half = n // 2
    out = []
    for i in range(1, n + 1):
        acc = 0.0
        for k in range((i + 1) // 2, min(i, half) + 1):
            acc += (k ** half * math.factorial(2 * k)
                    / (math.factorial(half - k) * math.factorial(k) * math.factorial(k - 1)
                       * math.factorial(i - k) * math.factorial(2 * k - i)))
        out.append((-1) ** (i + half) * acc)
    return np.array(out)


def mm1n_stationary(lam, mu, n):
    """Stationary distribution of the M/M/1/N birth-death chain."""
    rho = lam / mu
    p = rho ** np.arange(n + 1)
    return p / p.sum()


def mm1n_mean(lam, mu, n):
    p = mm1n_stationary(lam, mu, n)
    return float(np.dot(np.arange(n + 1), p))


def mm1n_generator(lam, mu, n):
    q = np.zeros((n + 1, n + 1))
    idx = np.arange(n)
    q[idx, idx + 1] = lam
    q[idx + 1, idx] = mu
    q -= np.diag(q.sum(axis=1))
    return q


def mm1n_transient(p_start, lam, mu, n, t):
    return p_start @ expm(mm1n_generator(lam, mu, n) * t)


def brownian_absorbing_pdf(x, t, x0, beta, a):
    """Method-of-images density with an absorbing barrier at 0 (textbook form)."""
    s = np.sqrt(a * t)
    g = lambda z: np.exp(-0.5 * z * z) / (s * math.sqrt(2 * math.pi))
    return (g((x - x0 - beta * t) / s)
            - np.exp(-2 * beta * x0 / a) * g((x + x0 - beta * t) / s))


def inverse_gaussian_pdf(t, x0, beta, a):
    return x0 / np.sqrt(2 * np.pi * a * t ** 3) * np.exp(-(x0 + beta * t) ** 2 / (2 * a * t))


def quad(f, lo, hi, **kw):
    return integrate.quad(f, lo, hi, limit=400, **kw)[0]


def return_process_time_domain(xs, t_end, x0, lam, beta, a, dt=0.002):
    """Instantaneous-return process at x = xs, t = t_end, by direct convolution.

    Time-stepping trapezoid discretization of
        gamma_0(t) = gamma_{x0}(t) + int g1(u) gamma_{1}(t - u) du
        g1(t)      = int gamma_0(u) lam exp(-lam (t - u)) du
        f(x, t)    = phi(x, t; x0) + int g1(u) phi(x, t - u; 1) du
    starting from a point mass at x0 > 0.
    """
    K = int(round(t_end / dt))
    ts = np.arange(K + 1) * dt
    safe = np.where(ts > 0, ts, 1.0)
    gx0 = np.where(ts > 0, inverse_gaussian_pdf(safe, x0, beta, a), 0.0)
    g1k = np.where(ts > 0, inverse_gaussian_pdf(safe, 1.0, beta, a), 0.0)
    lk = lam * np.exp(-lam * ts)
    gam0 = np.zeros(K + 1)
    g1 = np.zeros(K + 1)
    for k in range(1, K + 1):
        # g1 at step k uses gam0 up to k; gam0 at k uses g1 up to k-1 (kernel vanishes at 0)
        w = np.full(k, dt)
        w[0] = 0.5 * dt
        gam0[k] = gx0[k] + np.dot(w, g1[:k] * g1k[k:0:-1])
        g1[k] = np.dot(np.r_[w, 0.5 * dt], gam0[: k + 1] * lk[k::-1])
    xs = np.atleast_1d(np.asarray(xs, dtype=float))
    out = brownian_absorbing_pdf(xs, t_end, x0, beta, a)
    for i, x in enumerate(xs):
        tau = t_end - ts[:-1]
        kern = np.where(tau > 0, brownian_absorbing_pdf(x, np.where(tau > 0, tau, 1.0), 1.0, beta, a), 0.0)
        vals = np.r_[g1[:-1] * kern, 0.0]
        out[i] += np.trapezoid(vals, ts)
    return out


def mean_and_scv(samples):
    samples = np.asarray(samples)
    m = samples.mean()
    return m, samples.var() / m ** 2


def scv_stderr(samples):
    """Delta-method standard error of the sample squared CoV."""
    x = np.asarray(samples)
    n = len(x)
    m1, m2 = x.mean(), (x ** 2).mean()
    cov = np.cov(np.vstack([x, x ** 2]))
    grad = np.array([-2 * m2 / m1 ** 3, 1 / m1 ** 2])
    return math.sqrt(grad @ cov @ grad / n)


def normal_cdf(z):
    return 0.5 * special.erfc(-z / math.sqrt(2))
