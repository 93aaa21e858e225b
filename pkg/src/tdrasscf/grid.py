"""Sine discrete-variable representation on a 1D box.

Orbitals are stored as their values at the quadrature points with the
uniform DVR weight absorbed, so a normalized orbital satisfies
``sum(abs(phi)**2) == 1`` and multiplicative potentials act as diagonal
matrices. The kinetic matrix is exact for the particle-in-a-box basis
underlying the DVR.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = ["DvrGrid", "build_sine_dvr", "quadrature_inner"]


@dataclass(frozen=True)
class DvrGrid:
    """Sine-DVR grid.

    Attributes
    ----------
    n : int
        Number of interior quadrature points.
    xmin, xmax : float
        Box edges; the wavefunction vanishes there.
    points : ndarray, shape (n,)
        Quadrature points ``xmin + k*dx`` for ``k = 1..n``.
    kinetic : ndarray, shape (n, n)
        Matrix of ``-1/2 d^2/dx^2`` for unit mass.
    """

    n: int
    xmin: float
    xmax: float
    points: np.ndarray = field(repr=False)
    kinetic: np.ndarray = field(repr=False)

    @property
    def length(self) -> float:
        return self.xmax - self.xmin

    @property
    def dx(self) -> float:
        return self.length / (self.n + 1)

    def basis_functions(self) -> np.ndarray:
        """Box eigenfunctions at the points in the unit-weight convention, shape (n, n)."""
        k = np.arange(1, self.n + 1)
        return np.sqrt(2.0 / (self.n + 1)) * np.sin(np.pi * np.outer(k, k) / (self.n + 1))


def build_sine_dvr(n: int, xmin: float, xmax: float) -> DvrGrid:
    """Build a sine-DVR grid with ``n`` points strictly inside ``(xmin, xmax)``.

    Parameters
    ----------
    n : int
        Number of points, at least 2.
    xmin, xmax : float
        Box edges with ``xmax > xmin``.

    Returns
    -------
    DvrGrid
    """
    if int(n) != n or n < 2:
        raise ValueError(f"number of grid points must be an integer >= 2, got {n}")
    length = float(xmax) - float(xmin)
    if not np.isfinite(length) or length <= 0.0:
        raise ValueError(f"box length must be positive, got xmin={xmin}, xmax={xmax}")
    n = int(n)
    dx = length / (n + 1)
    points = float(xmin) + dx * np.arange(1, n + 1)
    k = np.arange(1, n + 1)
    # orthogonal sine transform: U[k, i] = sqrt(2/(n+1)) sin(k i pi/(n+1))
    u = np.sqrt(2.0 / (n + 1)) * np.sin(np.pi * np.outer(k, k) / (n + 1))
    energies = 0.5 * (k * np.pi / length) ** 2
    kinetic = (u.T * energies) @ u
    kinetic = 0.5 * (kinetic + kinetic.T)
    points.setflags(write=False)
    kinetic.setflags(write=False)
    return DvrGrid(n=n, xmin=float(xmin), xmax=float(xmax), points=points, kinetic=kinetic)


def quadrature_inner(f: np.ndarray, g: np.ndarray) -> complex:
    """Inner product ``sum(conj(f) * g)`` of two grid vectors (unit weights)."""
    f = np.asarray(f)
    g = np.asarray(g)
    if f.shape != g.shape or f.ndim != 1:
        raise ValueError(f"grid vectors of equal length expected, got {f.shape} and {g.shape}")
    return complex(np.vdot(f, g))
