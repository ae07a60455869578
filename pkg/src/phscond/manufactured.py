"""Manufactured temperature fields for two-subdomain verification cases.

Each field has the form ``T_s = c_s * sin(g(x))`` where ``g`` vanishes on the
interface, so temperature is continuous there.  Choosing ``c_1 = k_2`` and
``c_2 = k_1`` makes ``k_1 dT_1/dn = k_2 dT_2/dn = k_1 k_2 dg/dn`` on the
interface, so flux balance also holds exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

CASES = ("equal_k_circle", "circle_in_square", "astroid_in_square", "sphere_in_cube")
GEOMETRY = {
    "equal_k_circle": "circle_in_square",
    "circle_in_square": "circle_in_square",
    "astroid_in_square": "astroid_in_square",
    "sphere_in_cube": "sphere_in_cube",
}


class RadialLevel:
    """g = |x|^2 - r^2 (circle or sphere of radius r at the origin)."""

    def __init__(self, radius: float = 0.5):
        self.radius = radius

    def value(self, x):
        return np.sum(x * x, axis=1) - self.radius**2

    def grad(self, x):
        return 2.0 * x

    def laplacian(self, x):
        return np.full(x.shape[0], 2.0 * x.shape[1])


class AstroidLevel:
    """g = x^4 y^4 (|x/a|^(2/3) + |y/a|^(2/3) - 1).

    The fractional powers use the real cube root of the square, i.e.
    |x/a|^(2/3), which vanishes on the astroid for any sign of x, y.  Terms
    are combined so no negative power of |x| is evaluated at x = 0.
    """

    def __init__(self, a: float = 0.5):
        self.a = a
        self._c = a ** (-2.0 / 3.0)

    def value(self, x):
        X, Y = x[:, 0], x[:, 1]
        ax, ay = np.abs(X), np.abs(Y)
        s = self._c * (np.cbrt(ax * ax) + np.cbrt(ay * ay)) - 1.0
        return X**4 * Y**4 * s

    def grad(self, x):
        X, Y = x[:, 0], x[:, 1]
        ax, ay = np.abs(X), np.abs(Y)
        c = self._c
        s = c * (np.cbrt(ax * ax) + np.cbrt(ay * ay)) - 1.0
        # d/dx [x^4 y^4 s] = 4 x^3 y^4 s + x^4 y^4 (2/3) c sign(x) |x|^(-1/3)
        gx = 4 * X**3 * Y**4 * s + (2.0 / 3.0) * c * np.sign(X) * ax ** (11.0 / 3.0) * Y**4
        gy = 4 * Y**3 * X**4 * s + (2.0 / 3.0) * c * np.sign(Y) * ay ** (11.0 / 3.0) * X**4
        return np.column_stack([gx, gy])

    def laplacian(self, x):
        X, Y = x[:, 0], x[:, 1]
        ax, ay = np.abs(X), np.abs(Y)
        c = self._c
        s = c * (np.cbrt(ax * ax) + np.cbrt(ay * ay)) - 1.0
        lap_p = 12 * X**2 * Y**4 + 12 * X**4 * Y**2
        # 2 grad(P) . grad(S) and P lap(S), written with non-negative powers
        cross = (16.0 / 3.0) * c * (ax ** (8.0 / 3.0) * Y**4 + ay ** (8.0 / 3.0) * X**4)
        p_lap_s = -(2.0 / 9.0) * c * (ax ** (8.0 / 3.0) * Y**4 + ay ** (8.0 / 3.0) * X**4)
        return s * lap_p + cross + p_lap_s


@dataclass(frozen=True)
class ManufacturedCase:
    """Analytic temperature, gradient and Laplacian per subdomain.

    Subdomain 1 is the matrix (conductivity ``k1``), subdomain 2 the
    inclusion (``k2``).  ``amplitude`` gives ``(c_1, c_2)``.
    """

    name: str
    k1: float
    k2: float
    amplitude: tuple[float, float]
    level: object

    @property
    def geometry(self) -> str:
        return GEOMETRY[self.name]

    def _amp(self, subdomain):
        sub = np.asarray(subdomain)
        return np.where(sub == 2, self.amplitude[1], self.amplitude[0])

    def temperature(self, x, subdomain):
        x = np.atleast_2d(x)
        return self._amp(subdomain) * np.sin(self.level.value(x))

    def gradient(self, x, subdomain):
        x = np.atleast_2d(x)
        return (self._amp(subdomain) * np.cos(self.level.value(x)))[:, None] * self.level.grad(x)

    def laplacian(self, x, subdomain):
        x = np.atleast_2d(x)
        g = self.level.value(x)
        gg = self.level.grad(x)
        return self._amp(subdomain) * (np.cos(g) * self.level.laplacian(x) - np.sin(g) * np.sum(gg * gg, axis=1))

    def conductivity(self) -> dict[int, float]:
        return {1: self.k1, 2: self.k2}

    def source(self, x, subdomain):
        """Heat generation ``-k lap(T)`` that makes the field a steady solution."""
        k = np.where(np.asarray(subdomain) == 2, self.k2, self.k1)
        return -k * self.laplacian(x, subdomain)


def make_case(name: str, ratio: float = 10.0, k2: float = 1.0) -> ManufacturedCase:
    """Build a case with ``k1 / k2 = ratio``.

    ``equal_k_circle`` ignores ``ratio`` and uses ``k1 = k2``; its amplitudes
    are ``(k1, k2)``, whereas the jump cases use the swapped ``(k2, k1)``.
    """
    if name not in CASES:
        raise ValueError(f"unknown manufactured case {name!r}; choose from {CASES}")
    if name == "equal_k_circle":
        return ManufacturedCase(name, k2, k2, (k2, k2), RadialLevel(0.5))
    k1 = ratio * k2
    level = AstroidLevel(0.5) if name == "astroid_in_square" else RadialLevel(0.5)
    return ManufacturedCase(name, k1, k2, (k2, k1), level)
