"""Limiting Langevin diffusion of the rescaled RWM chain.

The speed measure ``v(l) = 2 l^2 Phi(-l sqrt(E_R) / 2)`` and the limiting
acceptance curve ``a(l) = 2 Phi(-l sqrt(E_R) / 2)`` are evaluated here, the
speed is maximised by golden-section search, and an Euler-Maruyama
integrator for

    dZ = v^{1/2} dB + (v / 2) (log f)'(Z) dt

serves as a reference for the weak limit.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import special

from . import _kernels

GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0

#: rounded constants the computed optimum is checked against
REFERENCE_ELL = 2.38
REFERENCE_AOAR = 0.234


def norm_cdf(x):
    """Standard normal CDF through ``erfc``; accurate to ~1e-16 relative."""
    return special.ndtr(x)


def norm_pdf(x):
    return np.exp(-0.5 * np.square(x)) / math.sqrt(2.0 * math.pi)


def speed(ell, e_r: float = 1.0):
    """Speed measure of the limiting diffusion, ``2 l^2 Phi(-l sqrt(e_r)/2)``."""
    ell = np.asarray(ell, dtype=float)
    out = 2.0 * ell**2 * norm_cdf(-ell * math.sqrt(e_r) / 2.0)
    return float(out) if out.ndim == 0 else out


def limiting_acceptance(ell, e_r: float = 1.0):
    """Limit of the pi-average acceptance rate, ``2 Phi(-l sqrt(e_r)/2)``."""
    ell = np.asarray(ell, dtype=float)
    out = 2.0 * norm_cdf(-ell * math.sqrt(e_r) / 2.0)
    return float(out) if out.ndim == 0 else out


def golden_section_max(
    func: Callable[[float], float], lo: float, hi: float, tol: float = 1e-10
) -> float:
    """Maximiser of a unimodal ``func`` on ``[lo, hi]`` to within ``tol``."""
    a, b = lo, hi
    c = b - GOLDEN * (b - a)
    d = a + GOLDEN * (b - a)
    fc, fd = func(c), func(d)
    while b - a > tol:
        if fc > fd:
            b, d, fd = d, c, fc
            c = b - GOLDEN * (b - a)
            fc = func(c)
        else:
            a, c, fc = c, d, fd
            d = a + GOLDEN * (b - a)
            fd = func(d)
    return 0.5 * (a + b)


def maximize_speed(e_r: float = 1.0, tol: float = 1e-10) -> tuple[float, float]:
    """Return ``(ell_star, v_star)`` maximising :func:`speed` for ``e_r``.

    The maximiser of the ``e_r = 1`` curve is found on ``[0, 10]`` and
    rescaled by ``1/sqrt(e_r)``; it is checked against the rounded 2.38
    within 0.01.
    """
    if not (e_r > 0 and math.isfinite(e_r)):
        raise ValueError(f"e_r must be positive and finite, got {e_r!r}")
    root = math.sqrt(e_r)
    u = golden_section_max(lambda ell: speed(ell, 1.0), 0.0, 10.0, tol)
    u = _polish(u)
    ell_star = u / root
    if abs(ell_star * root - REFERENCE_ELL) > 0.01:
        raise ArithmeticError(
            f"speed maximiser {ell_star * root:.6f}*sqrt(e_r) disagrees with {REFERENCE_ELL}"
        )
    return ell_star, speed(ell_star, e_r)


def _polish(u: float, width: float = 1e-4) -> float:
    """Bisect the sign of ``4 Phi(-u/2) - u phi(u/2)``, the derivative of ``speed`` up to a positive factor.

    Golden-section search only locates a flat maximum to about sqrt(eps).
    """
    def slope(x):
        return 4.0 * norm_cdf(-x / 2.0) - x * norm_pdf(x / 2.0)

    lo, hi = u - width, u + width
    if not (slope(lo) > 0 > slope(hi)):
        return u
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if slope(mid) > 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def optimal_u() -> float:
    """Maximiser of ``g(u) = 2 u^2 Phi(-u/2)`` (the E_R = 1 optimum)."""
    return maximize_speed(1.0)[0]


@dataclass(frozen=True)
class DiffusionParams:
    """Langevin diffusion with speed ``v``, stationary density ``family`` and step ``dt``."""

    v: float
    family: object
    dt: float = 0.01

    def __post_init__(self):
        if not self.v >= 0 or not math.isfinite(self.v):
            raise ValueError(f"speed must be nonnegative, got {self.v!r}")
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt!r}")


def euler_maruyama(params: DiffusionParams, z0, n_steps: int, rng: np.random.Generator) -> np.ndarray:
    """Integrate the Langevin SDE from ``z0`` for ``n_steps`` steps.

    ``z0`` may be a scalar or an array of independent starting points; the
    result has shape ``(n_steps + 1,) + shape(z0)``.
    """
    v, dt = params.v, params.dt
    if v * dt > 0.1:
        raise ValueError(f"step too coarse: v*dt = {v * dt:.3g} > 0.1")
    z0 = np.asarray(z0, dtype=float)
    noise = rng.standard_normal((n_steps,) + z0.shape)
    code = getattr(params.family, "kernel_code", None)
    if code is not None:
        flat = _kernels.euler_maruyama(
            code, np.ascontiguousarray(z0.reshape(-1)), v, dt, noise.reshape(n_steps, -1)
        )
        out = flat.reshape((n_steps + 1,) + z0.shape)
    else:
        out = np.empty((n_steps + 1,) + z0.shape)
        out[0] = z0
        sd = math.sqrt(v * dt)
        z = z0.copy()
        for k in range(n_steps):
            z = z + 0.5 * v * params.family.dlog_f(z) * dt + sd * noise[k]
            out[k + 1] = z
    if not np.all(np.isfinite(out)):
        bad = int(np.argmax(~np.isfinite(out).reshape(n_steps + 1, -1).all(axis=1)))
        raise FloatingPointError(f"Euler-Maruyama state became non-finite at step {bad}")
    return out


def ou_autocorrelation(tau, v: float):
    """Autocorrelation ``exp(-v tau / 2)`` of the diffusion when f is standard normal."""
    return np.exp(-0.5 * v * np.asarray(tau, dtype=float))


def autocorrelation(series: np.ndarray, lags) -> np.ndarray:
    """Empirical autocorrelation of ``series`` at integer ``lags``.

    A 2-d ``series`` is treated as independent columns with a common
    stationary law; their ACFs are pooled.
    """
    x = np.asarray(series, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    x = x - x.mean(axis=0)
    var = np.mean(x * x)
    n = x.shape[0]
    out = []
    for lag in lags:
        lag = int(lag)
        if lag >= n:
            raise ValueError(f"lag {lag} exceeds series length {n}")
        out.append(np.mean(x[: n - lag] * x[lag:]) / var if lag else 1.0)
    return np.array(out)
