"""Independent reference implementations for the tests.

Scalar, loop-based and written from the formulas directly with ``cmath`` and
``math``; nothing here calls into the package's numerical code. The network
reference uses numpy ``longdouble`` so that finite differences resolve small
gradient components.
"""

import cmath
import itertools
import math

import mpmath
import numpy as np

# Frozen values, computed at 40 significant digits with mpmath.
# Unit at L=10 nH, C_para=0.1 pF, C_gap=0.2 pF*mm / 2 mm, R_gap=500 ohm, f=5 GHz.
Z_UNIT_FIXED = complex(146.94498472472824941, -227.77107767803511482)
# (3e8 / (4*pi*5e9))**2 * (1/2)**2
PATHLOSS_5GHZ_1M = 5.6993165798814996437e-6
# 0.5 * erfc(1): ml-mode error probability at sigma = 1 dB, S = 8
PERR_ML_S8 = 0.078649603525142565329


def conductivity(kind, sigma_ref, c_ref, coeff, x):
    if kind == "ntc":
        return sigma_ref * math.exp(coeff * (1 / (c_ref + 273.15) - 1 / (x + 273.15)))
    return sigma_ref * math.exp(coeff * (x - c_ref))


def unit_admittance(f, l_para, c_para, c_gap_unit, d_mm, sigma, w_mm, h_mm):
    w = 2 * math.pi * f
    r_gap = (d_mm * 1e-3) / (sigma * (w_mm * 1e-3) * (h_mm * 1e-3))
    return 1 / (1j * w * l_para) + 1j * w * c_para + 1j * w * (c_gap_unit / d_mm) + 1 / r_gap


def sensor_impedance(f, admittances, c_cp, topology="parallel"):
    n = len(admittances)
    coupling = (n - 1) / (1j * 2 * math.pi * f * c_cp)
    if topology == "parallel":
        return 1 / (sum(admittances) + coupling)
    return sum(1 / y for y in admittances) + coupling


def reflection(z, z0=377.0):
    return abs((z - z0) / (z + z0)) ** 2


def rx_power_dbm(f, gamma, power_w, distance_m, alpha, r_w, bias_w, area_m2, s0=1.0, d0=1.0, v=299_792_458.0):
    pl = (v / (4 * math.pi * f)) ** 2 * (1 / (2 * distance_m)) ** alpha
    eta_ms = area_m2 / (s0 * (distance_m / d0) ** 2)
    p = pl * ((1 - eta_ms) * power_w * r_w + eta_ms * power_w * gamma) + bias_w
    return 10 * math.log10(p / 1e-3)


def erfc_hp(x):
    return float(mpmath.erfc(mpmath.mpf(x)))


def perr(s, sigma, mode):
    if mode == "paper":
        return 0.5 * erfc_hp(s / (2 * math.sqrt(2)))
    return 0.5 * erfc_hp(math.sqrt(s) / (2 * math.sqrt(2) * sigma))


def neighbors_bruteforce(j, points):
    """Exhaustive reading of the nearest-neighbour definition (0-based)."""
    cj = points[j]
    out = set()
    for n in range(len(cj)):
        for sign in (1, -1):
            cands = [k for k, ck in enumerate(points) if sign * (ck[n] - cj[n]) > 0]
            if not cands:
                continue
            gap = min(abs(points[k][n] - cj[n]) for k in cands)
            closest = [k for k in cands if abs(points[k][n] - cj[n]) == gap]
            dev = lambda k: sum(abs(points[k][m] - cj[m]) for m in range(len(cj)) if m != n)
            out.add(min(closest, key=lambda k: (dev(k), k)))
    return sorted(out)


def ied_bruteforce(spectra):
    total = 0.0
    for a, b in itertools.product(spectra, repeat=2):
        total += sum((x - y) ** 2 for x, y in zip(a, b))
    return -total / len(spectra)


def rmse_bruteforce(pred, truth):
    sq, n = 0.0, 0
    for p, t in zip(pred, truth):
        for a, b in zip(p, t):
            sq += (a - b) ** 2
            n += 1
    return math.sqrt(sq / n)


def mlp_loss_ld(w1, b1, w2, b2, activation, in_mean, in_std, out_min, out_max, p, c):
    """Mean squared loss of the one-hidden-layer network in extended precision."""
    ld = np.longdouble
    x = (np.asarray(p, ld) - np.asarray(in_mean, ld)) / np.asarray(in_std, ld)
    z = x @ np.asarray(w1, ld).T + np.asarray(b1, ld)
    if activation == "sigmoid":
        h = 1 / (1 + np.exp(-z))
    elif activation == "tanh":
        h = np.tanh(z)
    elif activation == "relu":
        h = np.maximum(z, 0)
    else:
        e = np.exp(z - z.max(axis=1, keepdims=True))
        h = e / e.sum(axis=1, keepdims=True)
    y = h @ np.asarray(w2, ld).T + np.asarray(b2, ld)
    t = (np.asarray(c, ld) - np.asarray(out_min, ld)) / (np.asarray(out_max, ld) - np.asarray(out_min, ld))
    return np.mean((y - t) ** 2)


def fd_gradient_ld(params, shapes, loss, h=1e-4):
    """Central differences with one Richardson step (error O(h^4)) on a flat parameter vector."""
    w = np.asarray(params, np.longdouble)

    def split(v):
        out, k = [], 0
        for s in shapes:
            n = int(np.prod(s))
            out.append(v[k:k + n].reshape(s))
            k += n
        return out

    g = np.empty_like(w)
    for i in range(w.size):
        def diff(step):
            e = np.zeros_like(w)
            e[i] = step
            return (loss(*split(w + e)) - loss(*split(w - e))) / (2 * step)
        g[i] = (4 * diff(np.longdouble(h) / 2) - diff(np.longdouble(h))) / 3
    return g
