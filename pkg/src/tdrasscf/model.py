"""Harmonic interaction model and orbital-basis Hamiltonian integrals.

The mixture Hamiltonian is

    H = sum_k sum_i [ T/m_k + m_k w^2 x_i^2 / 2 ]
        + sum_k lambda_k sum_{i<j} (x_i - x_j)^2
        + sum_{k<g} lambda_kg sum_{i,j} (x_i - y_j)^2

with a shared trap frequency ``w``. It is solved exactly by normal modes
(centre of mass, intra-species relative and inter-species relative
coordinates), which gives :func:`exact_him_energy`.

Pair potentials are kept as dense grid x grid matrices so any local pair
interaction can be used; the harmonic form only enters through
:func:`build_him_terms` and the optional separable fast path.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .grid import DvrGrid

__all__ = [
    "HimModel",
    "HamiltonianTerms",
    "OrbitalIntegrals",
    "UnboundSystemError",
    "build_him_terms",
    "exact_him_energy",
    "orbital_integrals",
    "pair_integrals",
    "pair_integrals_separable",
    "energy_expectation",
]


class UnboundSystemError(ValueError):
    """Raised when a normal-mode frequency of the model is not real."""


@dataclass(frozen=True)
class HimModel:
    """Parameters of a harmonically trapped, harmonically interacting mixture.

    Attributes
    ----------
    particles : tuple of int
        Particle count per species.
    omega : float
        Trap frequency shared by all species.
    masses : tuple of float
        Mass per species.
    lambda_intra : tuple of float
        Same-species pair strength per species.
    lambda_inter : ndarray
        Symmetric ``K x K`` inter-species strengths (diagonal ignored).
    """

    particles: tuple[int, ...]
    omega: float = 1.0
    masses: tuple[float, ...] | None = None
    lambda_intra: tuple[float, ...] | None = None
    lambda_inter: np.ndarray | None = None

    def __post_init__(self) -> None:
        k = len(self.particles)
        if k < 1:
            raise ValueError("at least one species is required")
        if any(int(n) != n or n < 1 for n in self.particles):
            raise ValueError(f"particle counts must be positive integers, got {self.particles}")
        object.__setattr__(self, "particles", tuple(int(n) for n in self.particles))
        masses = (1.0,) * k if self.masses is None else tuple(float(m) for m in self.masses)
        lam = (0.0,) * k if self.lambda_intra is None else tuple(float(x) for x in self.lambda_intra)
        inter = np.zeros((k, k)) if self.lambda_inter is None else np.array(self.lambda_inter, dtype=float)
        if inter.ndim == 0 and k == 2:
            inter = np.array([[0.0, float(inter)], [float(inter), 0.0]])
        if len(masses) != k or len(lam) != k or inter.shape != (k, k):
            raise ValueError("masses, lambda_intra and lambda_inter must match the species count")
        if not self.omega > 0:
            raise ValueError(f"omega must be positive, got {self.omega}")
        if any(not m > 0 for m in masses):
            raise ValueError(f"masses must be positive, got {masses}")
        if not np.allclose(inter, inter.T, rtol=0, atol=0):
            raise ValueError("lambda_inter must be symmetric")
        inter = inter.copy()
        np.fill_diagonal(inter, 0.0)
        inter.setflags(write=False)
        object.__setattr__(self, "masses", masses)
        object.__setattr__(self, "lambda_intra", lam)
        object.__setattr__(self, "lambda_inter", inter)
        object.__setattr__(self, "omega", float(self.omega))

    @property
    def n_species(self) -> int:
        return len(self.particles)

    @classmethod
    def two_species(
        cls,
        n1: int,
        n2: int,
        omega: float = 1.0,
        m1: float = 1.0,
        m2: float = 1.0,
        lambda1: float = 0.0,
        lambda2: float = 0.0,
        lambda12: float = 0.0,
    ) -> "HimModel":
        return cls(
            particles=(n1, n2),
            omega=omega,
            masses=(m1, m2),
            lambda_intra=(lambda1, lambda2),
            lambda_inter=np.array([[0.0, lambda12], [lambda12, 0.0]]),
        )


@dataclass(frozen=True)
class HamiltonianTerms:
    """Grid representation of the mixture Hamiltonian.

    ``h[k]`` is the one-body matrix of species ``k``; ``v[k]`` its pair
    potential sampled on grid x grid (``None`` when absent); ``w[(k, g)]``
    for ``k < g`` is the inter-species potential with rows indexing species
    ``k`` positions.
    """

    h: tuple[np.ndarray, ...]
    v: tuple[np.ndarray | None, ...]
    w: dict = field(default_factory=dict)

    @property
    def n_species(self) -> int:
        return len(self.h)

    def pair(self, kappa: int, gamma: int) -> np.ndarray | None:
        """Inter-species potential with rows on species ``kappa``."""
        if kappa < gamma:
            return self.w.get((kappa, gamma))
        w = self.w.get((gamma, kappa))
        return None if w is None else w.T

    def scaled(self, factor: float) -> "HamiltonianTerms":
        return HamiltonianTerms(
            h=tuple(factor * x for x in self.h),
            v=tuple(None if x is None else factor * x for x in self.v),
            w={k: factor * x for k, x in self.w.items()},
        )


def build_him_terms(model: HimModel, grid: DvrGrid) -> HamiltonianTerms:
    """Grid terms of the harmonic interaction model."""
    x = grid.points
    diff2 = (x[:, None] - x[None, :]) ** 2
    h, v = [], []
    for kappa in range(model.n_species):
        m = model.masses[kappa]
        hk = grid.kinetic / m + np.diag(0.5 * m * model.omega**2 * x**2)
        h.append(hk)
        lam = model.lambda_intra[kappa]
        v.append(lam * diff2 if lam != 0.0 else None)
    w = {}
    for kappa in range(model.n_species):
        for gamma in range(kappa + 1, model.n_species):
            lam = model.lambda_inter[kappa, gamma]
            if lam != 0.0:
                w[(kappa, gamma)] = lam * diff2
    return HamiltonianTerms(h=tuple(h), v=tuple(v), w=w)


def exact_him_energy(model: HimModel) -> float:
    """Closed-form ground-state energy of the two-species harmonic interaction model.

    The Hamiltonian separates into the centre of mass (frequency ``w``),
    ``N1-1`` and ``N2-1`` intra-species relative modes, and one relative
    mode between the two species' centres of mass.
    """
    if model.n_species != 2:
        raise ValueError("the closed form is available for two species only")
    n1, n2 = model.particles
    m1, m2 = model.masses
    l1, l2 = model.lambda_intra
    l12 = float(model.lambda_inter[0, 1])
    w2 = model.omega**2
    rad1 = w2 + 2.0 / m1 * (l1 * n1 + l12 * n2)
    rad2 = w2 + 2.0 / m2 * (l2 * n2 + l12 * n1)
    rad12 = w2 + 2.0 * l12 * (n1 / m2 + n2 / m1)
    for name, r in (("species-1 relative", rad1), ("species-2 relative", rad2), ("inter-species", rad12)):
        if r <= 0.0:
            raise UnboundSystemError(f"{name} mode frequency squared is {r} <= 0; system is unbound")
    e1 = (n1 - 1) * np.sqrt(rad1)
    e2 = (n2 - 1) * np.sqrt(rad2)
    e12 = np.sqrt(rad12)
    return float(0.5 * (e1 + e2 + e12 + model.omega))


@dataclass
class OrbitalIntegrals:
    """Hamiltonian matrix elements in the current orbital basis.

    ``h[k][p, q] = <p|h|q>``; ``v[k][p, r, q, s]`` multiplies
    ``b_p^+ b_r^+ b_s b_q / 2``; ``w[(k, g)][p, r, q, s]`` multiplies
    ``b_p^+ b_q (species k) b_r^+ b_s (species g)`` for ``k < g``.
    """

    h: list
    v: list
    w: dict

    def pair(self, kappa: int, gamma: int) -> np.ndarray | None:
        """Inter-species elements with the first and third index on ``kappa``."""
        if kappa < gamma:
            return self.w.get((kappa, gamma))
        w = self.w.get((gamma, kappa))
        return None if w is None else w.transpose(1, 0, 3, 2)


def _pair_products(phi: np.ndarray) -> np.ndarray:
    """Rows ``conj(phi_p) * phi_q`` ordered by ``p*M + q``."""
    m, n = phi.shape
    return (phi.conj()[:, None, :] * phi[None, :, :]).reshape(m * m, n)


def pair_integrals(phi_a: np.ndarray, pot: np.ndarray, phi_b: np.ndarray) -> np.ndarray:
    """Double-quadrature pair integrals.

    Returns ``out[p, r, q, s] = sum_{x,y} conj(a_p(x)) a_q(x) pot[x, y] conj(b_r(y)) b_s(y)``.
    """
    ma, mb = phi_a.shape[0], phi_b.shape[0]
    da = _pair_products(phi_a)
    db = _pair_products(phi_b)
    full = (da @ pot @ db.T).reshape(ma, ma, mb, mb)
    return full.transpose(0, 2, 1, 3)


def pair_integrals_separable(
    phi_a: np.ndarray, phi_b: np.ndarray, x: np.ndarray, strength: float
) -> np.ndarray:
    """Fast path for ``strength * (x - y)^2`` using one-body moments."""
    def moments(phi):
        s = phi.conj() @ phi.T
        m1 = (phi.conj() * x) @ phi.T
        m2 = (phi.conj() * x**2) @ phi.T
        return s, m1, m2

    sa, xa, x2a = moments(phi_a)
    sb, xb, x2b = moments(phi_b)
    # out[p, r, q, s] with (p, q) on a and (r, s) on b
    out = (
        x2a[:, None, :, None] * sb[None, :, None, :]
        + sa[:, None, :, None] * x2b[None, :, None, :]
        - 2.0 * xa[:, None, :, None] * xb[None, :, None, :]
    )
    return strength * out


def orbital_integrals(orbitals: Sequence[np.ndarray], terms: HamiltonianTerms) -> OrbitalIntegrals:
    """Transform the grid terms to the orbital basis of each species."""
    h, v = [], []
    for kappa, phi in enumerate(orbitals):
        h.append(phi.conj() @ terms.h[kappa] @ phi.T)
        pot = terms.v[kappa]
        v.append(None if pot is None else pair_integrals(phi, pot, phi))
    w = {}
    for (kappa, gamma), pot in terms.w.items():
        w[(kappa, gamma)] = pair_integrals(orbitals[kappa], pot, orbitals[gamma])
    return OrbitalIntegrals(h=h, v=v, w=w)


def energy_expectation(wf, terms: HamiltonianTerms, dens, ints: OrbitalIntegrals | None = None) -> float:
    """Energy from reduced densities.

    ``E = sum_k [sum h rho1 + 1/2 sum v rho2] + sum_{k<g} sum w rho_inter``.
    The imaginary residue is available through :func:`energy_expectation_complex`.
    """
    return float(energy_expectation_complex(wf, terms, dens, ints).real)


def energy_expectation_complex(wf, terms: HamiltonianTerms, dens, ints: OrbitalIntegrals | None = None) -> complex:
    if ints is None:
        ints = orbital_integrals(wf.orbitals, terms)
    norm2 = dens.norm2
    e = 0.0 + 0.0j
    for kappa in range(len(ints.h)):
        e += np.sum(ints.h[kappa] * dens.rho1[kappa])
        if ints.v[kappa] is not None:
            e += 0.5 * np.sum(ints.v[kappa] * dens.rho2[kappa])
    for key, w in ints.w.items():
        e += np.sum(w * dens.rho_inter[key])
    return complex(e / norm2)
