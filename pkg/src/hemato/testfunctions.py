"""Test functions f(x, i) with analytic x-gradients.

Two families are provided: monomials in (x1, x2, x3), optionally carrying a
regime weight, and smooth bumps with compact support in an open rectangle.
All functions are vectorized: ``x`` has shape (..., 3) and ``i`` broadcasts
against ``x[..., 0]``.
"""
from __future__ import annotations

import itertools

import numpy as np


class TestFunction:
    """Interface: ``value(x, i)`` and ``grad(x, i)``; optional ``support``."""

    __test__ = False  # not a pytest class
    support = None

    def value(self, x, i):
        raise NotImplementedError

    def grad(self, x, i):
        raise NotImplementedError

    def __add__(self, other):
        return Combination([self, other], [1.0, 1.0])

    def __rmul__(self, c):
        return Combination([self], [float(c)])


def _regime_weight(weights, i):
    w = np.asarray(weights, dtype=float)
    return w[np.asarray(i, dtype=np.int64)]


class Monomial(TestFunction):
    """x1^a x2^b x3^c times a regime weight (w0, w1); default weights (1, 1)."""

    def __init__(self, powers, weights=(1.0, 1.0)):
        self.powers = tuple(int(k) for k in powers)
        if len(self.powers) != 3 or min(self.powers) < 0:
            raise ValueError(f"need three nonnegative powers, got {powers}")
        self.weights = tuple(float(w) for w in weights)

    def __repr__(self):
        return f"Monomial({self.powers}, weights={self.weights})"

    @property
    def degree(self):
        return sum(self.powers)

    def value(self, x, i):
        x = np.asarray(x, dtype=float)
        m = np.ones(x.shape[:-1])
        for j, k in enumerate(self.powers):
            if k:
                m = m * x[..., j] ** k
        return m * _regime_weight(self.weights, i)

    def grad(self, x, i):
        x = np.asarray(x, dtype=float)
        out = np.zeros(x.shape)
        for j, k in enumerate(self.powers):
            if k == 0:
                continue
            term = k * x[..., j] ** (k - 1)
            for jj, kk in enumerate(self.powers):
                if jj != j and kk:
                    term = term * x[..., jj] ** kk
            out[..., j] = term
        return out * _regime_weight(self.weights, i)[..., None]


def monomial_family(max_degree: int = 3, weights=(1.0, 1.0)) -> list:
    """All monomials of total degree <= max_degree (20 of them for degree 3)."""
    out = []
    for deg in range(max_degree + 1):
        for powers in itertools.product(range(deg + 1), repeat=3):
            if sum(powers) == deg:
                out.append(Monomial(powers, weights))
    return out


class RegimeIndicator(TestFunction):
    """f(x, i) = i."""

    def value(self, x, i):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(np.asarray(i, dtype=float), x.shape[:-1]).copy()

    def grad(self, x, i):
        return np.zeros(np.shape(x))

    def __repr__(self):
        return "RegimeIndicator()"


def _phi(u):
    out = np.zeros_like(u)
    inside = np.abs(u) < 1.0
    v = u[inside]
    out[inside] = np.exp(-1.0 / (1.0 - v * v))
    return out


def _dphi(u):
    out = np.zeros_like(u)
    inside = np.abs(u) < 1.0
    v = u[inside]
    s = 1.0 - v * v
    out[inside] = np.exp(-1.0 / s) * (-2.0 * v / (s * s))
    return out


class Bump(TestFunction):
    """prod_j exp(-1/(1-u_j^2)), u_j = (x_j - center_j)/halfwidth_j, times a regime weight.

    ``support`` is the closed rectangle center +- halfwidth.
    """

    def __init__(self, center, halfwidth, weights=(1.0, 1.0)):
        self.center = np.asarray(center, dtype=float)
        self.halfwidth = np.asarray(halfwidth, dtype=float)
        if self.center.shape != (3,) or self.halfwidth.shape != (3,) or np.any(self.halfwidth <= 0):
            raise ValueError("center and positive halfwidth must be 3-vectors")
        self.weights = tuple(float(w) for w in weights)

    def __repr__(self):
        return (f"Bump(center={self.center.tolist()}, halfwidth={self.halfwidth.tolist()}, "
                f"weights={self.weights})")

    @property
    def support(self):
        return self.center - self.halfwidth, self.center + self.halfwidth

    def _u(self, x):
        return (np.asarray(x, dtype=float) - self.center) / self.halfwidth

    def value(self, x, i):
        u = self._u(x)
        return np.prod(_phi(u), axis=-1) * _regime_weight(self.weights, i)

    def grad(self, x, i):
        u = self._u(x)
        ph = _phi(u)
        dph = _dphi(u) / self.halfwidth
        out = np.empty(u.shape)
        out[..., 0] = dph[..., 0] * ph[..., 1] * ph[..., 2]
        out[..., 1] = ph[..., 0] * dph[..., 1] * ph[..., 2]
        out[..., 2] = ph[..., 0] * ph[..., 1] * dph[..., 2]
        return out * _regime_weight(self.weights, i)[..., None]


class Combination(TestFunction):
    """Finite linear combination of test functions."""

    def __init__(self, terms, coeffs):
        self.terms = list(terms)
        self.coeffs = [float(c) for c in coeffs]

    def value(self, x, i):
        return sum(c * f.value(x, i) for c, f in zip(self.coeffs, self.terms))

    def grad(self, x, i):
        return sum(c * f.grad(x, i) for c, f in zip(self.coeffs, self.terms))

    @property
    def support(self):
        sups = [f.support for f in self.terms]
        if any(s is None for s in sups):
            return None
        lo = np.min([s[0] for s in sups], axis=0)
        hi = np.max([s[1] for s in sups], axis=0)
        return lo, hi


def random_bumps(box, n: int, rng: np.random.Generator, anchors=None, margin: float = 0.02,
                 min_halfwidth: float = 0.05) -> list:
    """Draw ``n`` bumps whose supports sit strictly inside the open ``box``.

    Centers are taken from ``anchors`` (e.g. points visited by a stationary
    trajectory) when given, so the bumps overlap the invariant measure;
    otherwise uniformly inside the box. Regime weights are random so that
    the switching part of the generator is exercised. Half-widths are at
    least ``min_halfwidth`` of the box width on every axis; anchors closer
    to the boundary than that are moved inward.
    """
    lo, hi = box.lower, box.upper
    width = hi - lo
    inner_lo = lo + margin * width
    inner_hi = hi - margin * width
    floor = min_halfwidth * width
    if np.any(inner_lo + floor >= inner_hi - floor):
        raise ValueError("box too small for the requested margin and half-width")
    out = []
    for _ in range(n):
        if anchors is not None:
            c = np.asarray(anchors[rng.integers(len(anchors))], dtype=float)
        else:
            c = rng.uniform(inner_lo, inner_hi)
        c = np.clip(c, inner_lo + floor, inner_hi - floor)
        room = np.minimum(c - inner_lo, inner_hi - c)
        hw = np.maximum(np.minimum(rng.uniform(0.1, 0.35, size=3) * width, room), floor)
        w = rng.uniform(-1.0, 1.0, size=2)
        out.append(Bump(c, hw, weights=w))
    return out
