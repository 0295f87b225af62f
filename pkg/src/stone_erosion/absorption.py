"""Absorption functions B(s) and B'(s) for moisture transport in stone.

Two constitutive families are provided, both compactly supported on the
saturation interval [s_R, s_S]:

* the symmetric law, a cubic B with parabolic derivative peaking at the
  midpoint of the support;
* the asymmetric law, built from a power-law permeability k(s) and a
  capillary pressure P_c(s) through Darcy's relation B' = -k P_c' / mu
  (gravity neglected).

A linear law ``B(s) = k s`` is included for solver verification only.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "SymmetricParams",
    "AsymmetricParams",
    "ParameterError",
    "DomainError",
    "sym_b_prime",
    "sym_b",
    "permeability",
    "capillary_pressure",
    "capillary_pressure_prime",
    "asym_b_prime",
    "asym_b",
    "asym_b_quadrature",
    "adaptive_simpson",
    "golden_section_max",
    "AbsorptionLaw",
    "SymmetricLaw",
    "AsymmetricLaw",
    "LinearLaw",
    "make_law",
]


class ParameterError(ValueError):
    """Raised when a parameter record violates its invariants."""


class DomainError(ValueError):
    """Raised when a function is evaluated outside its domain."""


@dataclass(frozen=True)
class SymmetricParams:
    s_R: float = 0.227
    s_S: float = 0.884
    D: float = 1.09e-5

    def __post_init__(self):
        if not (0.0 < self.s_R < self.s_S <= 1.0):
            raise ParameterError(
                f"need 0 < s_R < s_S <= 1, got s_R={self.s_R}, s_S={self.s_S}"
            )
        if not self.D > 0.0:
            raise ParameterError(f"D must be positive, got {self.D}")


@dataclass(frozen=True)
class AsymmetricParams:
    s_R: float = 0.227
    s_S: float = 0.884
    alpha: float = 0.5
    c: float = 34.19
    K_s: float = 7.9e-9
    gamma: float = 2.0
    mu: float = 8.9e-3

    def __post_init__(self):
        if not (0.0 < self.s_R < self.s_S <= 1.0):
            raise ParameterError(
                f"need 0 < s_R < s_S <= 1, got s_R={self.s_R}, s_S={self.s_S}"
            )
        for name in ("alpha", "c", "K_s", "gamma", "mu"):
            if not getattr(self, name) > 0.0:
                raise ParameterError(f"{name} must be positive, got {getattr(self, name)}")
        if not self.gamma - self.alpha - 1.0 > 0.0:
            raise ParameterError(
                f"need gamma - alpha - 1 > 0, got gamma={self.gamma}, alpha={self.alpha}"
            )


def _scalar_or_array(x, out):
    return float(out) if np.ndim(x) == 0 else out


# --- symmetric law ---------------------------------------------------------


def sym_b_prime(p: SymmetricParams, s):
    """Symmetric absorption derivative, zero outside [s_R, s_S]."""
    s_arr = np.asarray(s, dtype=float)
    # centred form: exactly D at the midpoint
    u = (2.0 * s_arr - (p.s_R + p.s_S)) / (p.s_S - p.s_R)
    val = p.D * (1.0 - u * u)
    return _scalar_or_array(s, np.maximum(0.0, val))


def sym_b(p: SymmetricParams, s):
    """Symmetric absorption function: 0 below s_R, cubic on the support, plateau above."""
    s_arr = np.asarray(s, dtype=float)
    sc = np.clip(s_arr, p.s_R, p.s_S)
    val = -(2.0 * p.D * (p.s_R - sc) ** 2 * (p.s_R - 3.0 * p.s_S + 2.0 * sc)) / (
        3.0 * (p.s_R - p.s_S) ** 2
    )
    return _scalar_or_array(s, val)


# --- asymmetric law --------------------------------------------------------


def permeability(p: AsymmetricParams, s):
    """Power-law permeability, held at its endpoint values outside the support."""
    s_arr = np.asarray(s, dtype=float)
    x = (np.clip(s_arr, p.s_R, p.s_S) - p.s_R) / (p.s_S - p.s_R)
    return _scalar_or_array(s, p.K_s * x**p.gamma)


def _check_open_support(p, s_arr):
    if np.any(s_arr <= p.s_R):
        raise DomainError(f"capillary pressure is singular for s <= s_R={p.s_R}")


def capillary_pressure(p: AsymmetricParams, s):
    """P_c(s) = c (s - s_S)^2 / (s - s_R)^alpha on (s_R, s_S]."""
    s_arr = np.asarray(s, dtype=float)
    _check_open_support(p, s_arr)
    val = p.c * (s_arr - p.s_S) ** 2 / (s_arr - p.s_R) ** p.alpha
    return _scalar_or_array(s, val)


def capillary_pressure_prime(p: AsymmetricParams, s):
    s_arr = np.asarray(s, dtype=float)
    _check_open_support(p, s_arr)
    val = -(
        p.c
        * (s_arr - p.s_S)
        * (2.0 * p.s_R - 2.0 * s_arr - p.alpha * p.s_S + p.alpha * s_arr)
        / (s_arr - p.s_R) ** (p.alpha + 1.0)
    )
    return _scalar_or_array(s, val)


def _pow_pos(base, expo):
    # exp(expo*log(base)) with base <= 0 mapped to 0; exponents here are > 0
    b = np.asarray(base, dtype=float)
    out = np.zeros_like(b)
    pos = b > 0.0
    out[pos] = np.exp(expo * np.log(b[pos]))
    return out


def asym_b_prime(p: AsymmetricParams, s):
    """Asymmetric absorption derivative (Darcy flux coefficient without gravity)."""
    s_arr = np.asarray(s, dtype=float)
    inside = (s_arr > p.s_R) & (s_arr < p.s_S)
    w = _pow_pos(s_arr - p.s_R, p.gamma - p.alpha - 1.0)
    val = (
        p.K_s
        * p.c
        / p.mu
        * w
        / (p.s_S - p.s_R) ** p.gamma
        * (s_arr - p.s_S)
        * (2.0 * p.s_R + s_arr * (p.alpha - 2.0) - p.alpha * p.s_S)
    )
    val = np.where(inside, np.maximum(0.0, val), 0.0)
    return _scalar_or_array(s, val)


def _asym_denominator(a, g):
    return -(a**3) + 3 * a**2 * (g + 1) - 3 * a * g * (g + 2) - 2 * a + g**3 + 3 * g**2 + 2 * g


def _asym_polynomial(p: AsymmetricParams):
    """Coefficients (u, v, const) of the quadratic numerator of the antiderivative."""
    a, g, sR, sS = p.alpha, p.gamma, p.s_R, p.s_S
    # the a*g**2 term is required for B to be the antiderivative of B'
    u = a**3 - a**2 * (2 * g + 3) + a * (g**2 + 5 * g + 2) - 2 * g * (g + 1)
    v = (
        2 * g * (-sR * a + 2 * a**2 * sS + 2 * sS - 4 * a * sS)
        + 2 * g**2 * (sR - a * sS + sS)
        + 2 * a * sS * (-(a**2) + 3 * a - 2)
    )
    z = 2 * sR**2 + a * sS**2 * (-2 * a + 3) + 2 * sR * sS * (a - 2)
    const = g**2 * sS * (-2 * sR + a * sS) + g * z + a * sS**2 * (a**2 - 3 * a + 2)
    return u, v, const


def asym_b_plateau(p: AsymmetricParams) -> float:
    """Value of B_kP on [s_S, 1]."""
    return (
        2.0
        * p.K_s
        * p.c
        * p.gamma
        * (p.s_S - p.s_R) ** (2.0 - p.alpha)
        / (p.mu * _asym_denominator(p.alpha, p.gamma))
    )


def asym_b(p: AsymmetricParams, s):
    """Closed-form integral of :func:`asym_b_prime` from s_R."""
    s_arr = np.asarray(s, dtype=float)
    u, v, const = _asym_polynomial(p)
    sc = np.clip(s_arr, p.s_R, p.s_S)
    lead = p.K_s * p.c / (p.mu * (p.s_S - p.s_R) ** p.gamma)
    poly = (sc * sc * u + sc * v + const) / _asym_denominator(p.alpha, p.gamma)
    val = lead * _pow_pos(sc - p.s_R, p.gamma - p.alpha) * poly
    val = np.where(s_arr >= p.s_S, asym_b_plateau(p), val)
    return _scalar_or_array(s, val)


# --- numerical helpers -----------------------------------------------------


def adaptive_simpson(f, a: float, b: float, tol: float = 1e-14, max_depth: int = 60, rtol: float = 0.0) -> float:
    """Adaptive Simpson quadrature with Richardson correction.

    ``tol`` is absolute; a positive ``rtol`` tightens it to ``rtol`` times
    the magnitude of the first coarse estimate when that is smaller.
    """

    def simpson(fa, fm, fb, a, b):
        return (b - a) / 6.0 * (fa + 4.0 * fm + fb)

    def recurse(a, b, fa, fm, fb, whole, tol, depth):
        m = 0.5 * (a + b)
        lm, rm = 0.5 * (a + m), 0.5 * (m + b)
        flm, frm = f(lm), f(rm)
        left = simpson(fa, flm, fm, a, m)
        right = simpson(fm, frm, fb, m, b)
        delta = left + right - whole
        if depth <= 0 or abs(delta) <= 15.0 * tol:
            return left + right + delta / 15.0
        return recurse(a, m, fa, flm, fm, left, 0.5 * tol, depth - 1) + recurse(
            m, b, fm, frm, fb, right, 0.5 * tol, depth - 1
        )

    if b == a:
        return 0.0
    fa, fb, fm = f(a), f(b), f(0.5 * (a + b))
    whole = simpson(fa, fm, fb, a, b)
    if rtol > 0.0 and whole != 0.0:
        tol = min(tol, rtol * abs(whole))
    return recurse(a, b, fa, fm, fb, whole, tol, max_depth)


def asym_b_quadrature(p: AsymmetricParams, s: float, tol: float = 1e-14, rtol: float = 1e-12) -> float:
    """Validation path for :func:`asym_b`: integrate B' numerically from s_R."""
    upper = min(max(float(s), p.s_R), p.s_S)
    return adaptive_simpson(lambda x: float(asym_b_prime(p, x)), p.s_R, upper, tol=tol, rtol=rtol)


def golden_section_max(f, a: float, b: float, tol: float = 1e-12):
    """Maximize a unimodal function on [a, b]; returns (argmax, max)."""
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc > fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = f(d)
    x = 0.5 * (a + b)
    return x, f(x)


# --- law objects -----------------------------------------------------------


class AbsorptionLaw:
    """Common interface: ``B(s)``, ``dB(s)`` and the peak diffusivity ``D_max``.

    ``kernel_id`` and ``kernel_params`` describe the law to the compiled
    stepping kernels.
    """

    name: str = ""
    kernel_id: int = -1
    s_R: float
    s_S: float
    D_max: float

    def B(self, s):
        raise NotImplementedError

    def dB(self, s):
        raise NotImplementedError

    def kernel_params(self) -> np.ndarray:
        raise NotImplementedError


class SymmetricLaw(AbsorptionLaw):
    name = "symmetric"
    kernel_id = 0

    def __init__(self, params: SymmetricParams | None = None):
        self.params = params or SymmetricParams()
        self.s_R, self.s_S = self.params.s_R, self.params.s_S
        # analytic maximum at the midpoint of the support
        self.D_max = self.params.D

    def B(self, s):
        return sym_b(self.params, s)

    def dB(self, s):
        return sym_b_prime(self.params, s)

    def kernel_params(self):
        p = self.params
        return np.array([p.s_R, p.s_S, p.D], dtype=float)

    def __repr__(self):
        return f"SymmetricLaw({self.params})"


class AsymmetricLaw(AbsorptionLaw):
    name = "asymmetric"
    kernel_id = 1

    def __init__(self, params: AsymmetricParams | None = None):
        self.params = params or AsymmetricParams()
        self.s_R, self.s_S = self.params.s_R, self.params.s_S
        self.s_peak, self.D_max = golden_section_max(
            lambda x: float(asym_b_prime(self.params, x)), self.s_R, self.s_S, tol=1e-12
        )

    def B(self, s):
        return asym_b(self.params, s)

    def dB(self, s):
        return asym_b_prime(self.params, s)

    def kernel_params(self):
        p = self.params
        return np.array([p.s_R, p.s_S, p.alpha, p.c, p.K_s, p.gamma, p.mu], dtype=float)

    def __repr__(self):
        return f"AsymmetricLaw({self.params})"


class LinearLaw(AbsorptionLaw):
    """``B(s) = slope * s`` on all of R; a non-degenerate law for solver checks."""

    name = "linear"
    kernel_id = 2

    def __init__(self, slope: float = 1.0):
        if not slope > 0.0:
            raise ParameterError(f"slope must be positive, got {slope}")
        self.slope = float(slope)
        self.s_R, self.s_S = 0.0, 1.0
        self.D_max = self.slope

    def B(self, s):
        return _scalar_or_array(s, self.slope * np.asarray(s, dtype=float))

    def dB(self, s):
        return _scalar_or_array(s, np.full(np.shape(s), self.slope))

    def kernel_params(self):
        return np.array([self.slope], dtype=float)

    def __repr__(self):
        return f"LinearLaw(slope={self.slope})"


def make_law(name: str, **params) -> AbsorptionLaw:
    if name == "symmetric":
        return SymmetricLaw(SymmetricParams(**params))
    if name == "asymmetric":
        return AsymmetricLaw(AsymmetricParams(**params))
    if name == "linear":
        return LinearLaw(**params)
    raise ParameterError(f"unknown absorption law {name!r}")
