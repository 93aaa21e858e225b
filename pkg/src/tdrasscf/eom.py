"""Right-hand sides of the coupled amplitude and orbital equations of motion.

State: amplitudes ``C`` over the restricted product space and, per species,
orbitals stored as rows of an ``(M, n)`` grid array. The orbital derivative
splits into a rotation among the occupied orbitals, ``eta[p, q] =
<phi_p|dphi_q/dt>``, and a part orthogonal to all of them:

    dphi_q/dt = sum_p phi_p eta[p, q] + (Q dphi/dt)_q .

Gauge: ``eta`` vanishes inside the P1 and P2 blocks; only the off-block
entries are determined, from

* general scheme: the out-of-space overlaps of the rotated state
  (least-squares projection onto the rotation directions),
* even-only scheme: ``<[E_{i'j''}, i D - H]> = 0`` whose coefficient tensor
  only depends on ``rho1``,

and the conjugate block follows from anti-Hermiticity. Unrestricted species
keep ``eta = 0``.

Inter-species terms act with full pair weight on each species: the pair
operator ``sum w n^k n^g`` enters both the species-k and species-g
equations with coefficient one (checked against a brute-force second-
quantized grid oracle in the test suite).

Real time: ``i dPsi/dt = H Psi``. Imaginary time uses the same projections
with ``i d/dt -> -d/dtau``, an energy shift on the amplitudes, and an
anti-Hermitian ``eta`` obtained by negating the solved rotation generator,
so orbitals stay orthonormal along the flow.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .densities import (
    DensitySet,
    ZetaTensors,
    build_a_tensor,
    densities_from_images,
    off_block_pairs,
    one_body_images,
)
from .fockspace import AugmentedSpace, ConfigSpace, Scheme
from .model import HamiltonianTerms, OrbitalIntegrals, orbital_integrals

__all__ = [
    "Mode",
    "WaveFunction",
    "MeanFieldOps",
    "Derivatives",
    "EomEvaluator",
    "build_mean_fields",
    "regularized_inverse",
    "amplitude_rhs",
    "commutator_rhs",
    "solve_eta_even",
    "solve_eta_general",
    "qspace_rhs",
    "assemble_derivatives",
    "fill_eta",
]


class Mode(str, enum.Enum):
    REAL = "real"
    IMAGINARY = "imaginary"

    @classmethod
    def parse(cls, value: "str | Mode") -> "Mode":
        if isinstance(value, Mode):
            return value
        key = str(value).strip().lower().replace("_", "").replace("-", "")
        table = {
            "real": cls.REAL,
            "realtime": cls.REAL,
            "imaginary": cls.IMAGINARY,
            "imaginarytime": cls.IMAGINARY,
            "imag": cls.IMAGINARY,
            "relax": cls.IMAGINARY,
        }
        if key not in table:
            raise ValueError(f"unknown propagation mode {value!r}")
        return table[key]


@dataclass
class WaveFunction:
    """Amplitudes over a restricted product space plus per-species orbitals."""

    amps: np.ndarray
    orbitals: list

    def copy(self) -> "WaveFunction":
        return WaveFunction(self.amps.copy(), [o.copy() for o in self.orbitals])

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.amps))

    def orbital_overlaps(self) -> list:
        return [phi.conj() @ phi.T for phi in self.orbitals]

    def ortho_deviation(self) -> float:
        dev = 0.0
        for s in self.orbital_overlaps():
            dev = max(dev, float(np.abs(s - np.eye(s.shape[0])).max()))
        return dev

    def pack(self) -> np.ndarray:
        parts = [self.amps.reshape(-1)] + [o.reshape(-1) for o in self.orbitals]
        return np.concatenate(parts).astype(complex)

    @classmethod
    def unpack(cls, vec: np.ndarray, like: "WaveFunction") -> "WaveFunction":
        n_amp = like.amps.size
        amps = vec[:n_amp].copy()
        orbitals = []
        pos = n_amp
        for o in like.orbitals:
            orbitals.append(vec[pos:pos + o.size].reshape(o.shape).copy())
            pos += o.size
        return cls(amps, orbitals)


@dataclass
class MeanFieldOps:
    """Grid mean fields.

    ``intra[k][a, b, x] = sum_y v_k(x, y) conj(phi_a(y)) phi_b(y)``;
    ``inter[(k, g)][a, b, x] = sum_y w_kg(x, y) conj(chi_a(y)) chi_b(y)`` with
    ``chi`` the species-g orbitals, for every ordered pair ``k != g``.
    """

    intra: list
    inter: dict


def _pair_density_rows(phi: np.ndarray) -> np.ndarray:
    m, n = phi.shape
    return (phi.conj()[:, None, :] * phi[None, :, :]).reshape(m * m, n)


def build_mean_fields(wf: WaveFunction, terms: HamiltonianTerms) -> MeanFieldOps:
    intra = []
    for kappa, phi in enumerate(wf.orbitals):
        pot = terms.v[kappa]
        if pot is None:
            intra.append(None)
            continue
        m, n = phi.shape
        intra.append((_pair_density_rows(phi) @ pot.T).reshape(m, m, n))
    inter = {}
    n_sp = len(wf.orbitals)
    for kappa in range(n_sp):
        for gamma in range(n_sp):
            if kappa == gamma:
                continue
            pot = terms.pair(kappa, gamma)
            if pot is None:
                continue
            chi = wf.orbitals[gamma]
            mg = chi.shape[0]
            inter[(kappa, gamma)] = (_pair_density_rows(chi) @ pot.T).reshape(mg, mg, pot.shape[0])
    return MeanFieldOps(intra=intra, inter=inter)


def regularized_inverse(rho: np.ndarray, eps: float) -> np.ndarray:
    """Inverse of a Hermitian PSD matrix with eigenvalues ``l -> l + eps*exp(-l/eps)``."""
    vals, vecs = np.linalg.eigh(rho)
    vals = np.maximum(vals, 0.0)
    if eps > 0:
        vals = vals + eps * np.exp(-vals / eps)
    return (vecs / vals) @ vecs.conj().T


def qspace_rhs(
    kappa: int,
    wf: WaveFunction,
    terms: HamiltonianTerms,
    mf: MeanFieldOps,
    dens: DensitySet,
    mode: "Mode | str" = Mode.REAL,
    eps: float = 1e-8,
) -> np.ndarray:
    """Component of the orbital derivative orthogonal to all occupied orbitals.

    Returns rows ``Q dphi_i/dt``: ``-i rho^-1 Q B`` in real time and
    ``-rho^-1 Q B`` in imaginary time, where ``B_i`` is the bracket of
    one-body, same-species mean-field and inter-species mean-field terms.
    """
    mode = Mode.parse(mode)
    phi = wf.orbitals[kappa]
    rho = dens.rho1[kappa]
    bracket = rho @ (phi @ terms.h[kappa].T)
    if mf.intra[kappa] is not None:
        bracket = bracket + _mean_field_term(dens.rho2[kappa], mf.intra[kappa], phi)
    for gamma in range(len(wf.orbitals)):
        if gamma == kappa or (kappa, gamma) not in mf.inter:
            continue
        bracket = bracket + _mean_field_term(dens.inter(kappa, gamma), mf.inter[(kappa, gamma)], phi)
    out = regularized_inverse(rho, eps * dens.norm2) @ bracket
    out = _project_out(out, phi)
    out = _project_out(out, phi)
    factor = -1j if mode is Mode.REAL else -1.0
    return factor * out


def _mean_field_term(dens4: np.ndarray, field_: np.ndarray, phi: np.ndarray) -> np.ndarray:
    """``out[i, x] = sum_{a,j,b} dens4[i, a, j, b] field[a, b, x] phi[j, x]``."""
    # contract (a, j, b) in one matrix product; einsum path planning dominated small systems
    weighted = field_[:, None, :, :] * phi[None, :, None, :]
    return dens4.reshape(dens4.shape[0], -1) @ weighted.reshape(-1, phi.shape[1])


def _project_out(rows: np.ndarray, phi: np.ndarray) -> np.ndarray:
    return rows - (rows @ phi.conj().T) @ phi


def fill_eta(x_exc: np.ndarray, m1: int, m2: int) -> np.ndarray:
    """Anti-Hermitian ``eta`` from its excitation block ``x_exc[c, d] = eta[m1+c, d]``."""
    m = m1 + m2
    eta = np.zeros((m, m), dtype=complex)
    eta[m1:, :m1] = x_exc
    eta[:m1, m1:] = -x_exc.conj().T
    return eta


def _generator_to_eta(z: np.ndarray, m1: int, m2: int, mode: Mode) -> np.ndarray:
    # z solves the real-time system for i*eta_exc
    x = -1j * z if mode is Mode.REAL else -z
    return fill_eta(x, m1, m2)


def _solve_psd(s: np.ndarray, g: np.ndarray, eps: float) -> np.ndarray:
    vals, vecs = np.linalg.eigh(s)
    if vals.size == 0 or vals[-1] <= 0.0:
        return np.zeros_like(g)
    vals = np.maximum(vals, 0.0)
    keep = vals > vals[-1] * 1e-14
    inv = np.zeros_like(vals)
    if eps > 0:
        # Tikhonov filter: ~1/s above eps, ~s/eps^2 below, so noise in a vanishing direction is not amplified
        h = np.hypot(vals[keep], eps)
        inv[keep] = vals[keep] / h / h
    else:
        inv[keep] = 1.0 / vals[keep]
    return vecs @ (inv * (vecs.conj().T @ g))


def commutator_rhs(kappa: int, spec, ints: OrbitalIntegrals, dens: DensitySet, n_species: int) -> np.ndarray:
    """``g[a, b] = <[E_{a, m1+b}, H]>`` for ``a`` in P1, ``b`` in P2 (local indices).

    Expressed through ``rho1``, ``rho2`` and the inter-species densities.
    """
    m1 = spec.m1
    rho = dens.rho1[kappa]
    h = ints.h[kappa]
    p1 = slice(0, m1)
    p2 = slice(m1, None)
    # one-body: sum_q h[b,q] rho[a,q] - sum_p h[p,a] rho[p,b]
    g = (rho @ h.T)[p1, p2] - (h.T @ rho)[p1, p2]
    v = ints.v[kappa]
    if v is not None:
        r2 = dens.rho2[kappa]
        t1 = np.einsum("brqs,arqs->ab", v, r2)
        t2 = np.einsum("pras,prbs->ab", v, r2)
        g = g + (t1 - t2)[p1, p2]
    for gamma in range(n_species):
        if gamma == kappa:
            continue
        w = ints.pair(kappa, gamma)
        if w is None:
            continue
        r = dens.inter(kappa, gamma)
        t1 = np.einsum("bjql,ajql->ab", w, r)
        t2 = np.einsum("pjal,pjbl->ab", w, r)
        g = g + (t1 - t2)[p1, p2]
    return g


def solve_eta_even(
    kappa: int,
    spec,
    ints: OrbitalIntegrals,
    dens: DensitySet,
    n_species: int,
    mode: "Mode | str" = Mode.REAL,
    rcond: float = 1e-12,
) -> np.ndarray:
    """Off-block rotations of an even-only species.

    Solves ``sum_{c,d} (i eta[m1+c, d]) A[a, b, c, d] = <[E_{a, m1+b}, H]>``
    by least squares and fills the conjugate block.
    """
    mode = Mode.parse(mode)
    m1, m2 = spec.m1, spec.m2
    if m2 == 0:
        return np.zeros((m1, m1), complex)
    a = build_a_tensor(dens.rho1[kappa], spec).reshape(m1 * m2, m2 * m1)
    g = commutator_rhs(kappa, spec, ints, dens, n_species).reshape(m1 * m2)
    z, *_ = np.linalg.lstsq(a, g, rcond=rcond)
    return _generator_to_eta(z.reshape(m2, m1), m1, m2, mode)


def solve_eta_general(
    kappa: int,
    spec,
    zeta: ZetaTensors,
    ints: OrbitalIntegrals,
    n_species: int,
    mode: "Mode | str" = Mode.REAL,
    eps: float = 0.0,
) -> np.ndarray:
    """Off-block rotations of a general-scheme species from explicit rotation tensors.

    Solves ``sum_{c,d} (i eta[m1+c, d] - h[m1+c, d]) zeta4[a, b, c, d]
    = 1/2 sum v zeta6_intra + sum_g sum w zeta6_inter`` in least squares.
    """
    mode = Mode.parse(mode)
    m1, m2 = spec.m1, spec.m2
    m = m1 + m2
    if m2 == 0 or not np.any(zeta.zeta4):
        return np.zeros((m, m), complex)
    h_exc = ints.h[kappa][m1:, :m1]
    g = np.einsum("cd,abcd->ab", h_exc, zeta.zeta4)
    v = ints.v[kappa]
    if v is not None:
        # zeta6_intra[a, b, k, m, l, n] pairs with b_k^+ b_m^+ b_n b_l -> v[k, m, l, n]
        g = g + 0.5 * np.einsum("kmln,abkmln->ab", v, zeta.zeta6_intra)
    for gamma, z6 in zeta.zeta6_inter.items():
        w = ints.pair(kappa, gamma)
        if w is None:
            continue
        w_exc = w[m1:, :, :m1, :]  # [c, r, d, s]
        g = g + np.einsum("crds,abcdrs->ab", w_exc, z6)
    # bra pair (a, b) matches ket pair (d, c): order the unknowns as (d, c) so the metric is Hermitian
    s = zeta.zeta4.transpose(0, 1, 3, 2).reshape(m1 * m2, m1 * m2)
    z = _solve_psd(s, g.reshape(-1), eps)
    return _generator_to_eta(z.reshape(m1, m2).T, m1, m2, mode)


@dataclass
class Derivatives:
    amps: np.ndarray
    orbitals: list
    energy: float
    eta: list
    densities: DensitySet = field(repr=False, default=None)
    norm2: float = 1.0

    def pack(self) -> np.ndarray:
        return np.concatenate([self.amps.reshape(-1)] + [o.reshape(-1) for o in self.orbitals])


class EomEvaluator:
    """Evaluates the full time derivative of a wavefunction.

    Parameters
    ----------
    space : ConfigSpace
        Restricted product space of the amplitudes.
    terms : HamiltonianTerms
        Grid Hamiltonian.
    mode : Mode
        Real or imaginary time.
    eps : float
        Regularization scale for the one-body density inverse and the
        general-scheme rotation metric (relative to the squared norm).
    """

    def __init__(self, space: ConfigSpace, terms: HamiltonianTerms, mode: "Mode | str" = Mode.REAL, eps: float = 1e-8):
        if terms.n_species != space.n_species:
            raise ValueError("Hamiltonian and configuration space disagree on the species count")
        self.space = space
        self.aug: AugmentedSpace = space.augmented
        self.terms = terms
        self.mode = Mode.parse(mode)
        self.eps = float(eps)
        self.n_species = space.n_species
        self.kinds = []
        for s in space.species:
            if s.spec.is_complete(s.n_particles):
                self.kinds.append("complete")
            elif s.spec.scheme is Scheme.EVEN_ONLY:
                self.kinds.append("even")
            else:
                self.kinds.append("general")
        self._out_mask = (~self.aug.in_space).astype(float)

    def images(self, tensor: np.ndarray) -> list:
        return [one_body_images(self.aug, tensor, k) for k in range(self.n_species)]

    def sigma(self, tensor: np.ndarray, ints: OrbitalIntegrals, images: list) -> np.ndarray:
        """``H |Psi>`` on the closure space for a closure tensor supported in the base."""
        aug = self.aug
        shape = aug.full.shape
        out = np.zeros(shape, dtype=complex)
        for kappa in range(self.n_species):
            hk = aug.ops[kappa].hamiltonian(ints.h[kappa], ints.v[kappa])
            front = np.moveaxis(tensor, kappa, 0).reshape(shape[kappa], -1)
            res = (hk @ front).reshape((shape[kappa],) + tuple(s for g, s in enumerate(shape) if g != kappa))
            out += np.moveaxis(res, 0, kappa)
        for (kappa, gamma), w in ints.w.items():
            ok, og = aug.ops[kappa], aug.ops[gamma]
            # z[(p,q)] = sum_{r,s} w[p, r, q, s] E^g_rs Psi
            wmat = w.transpose(0, 2, 1, 3).reshape(ok.m * ok.m, og.m * og.m)
            z = (wmat @ images[gamma]).reshape((ok.m * ok.m,) + shape)
            z = np.moveaxis(z, kappa + 1, 1).reshape(ok.m * ok.m * shape[kappa], -1)
            res = (ok.cat @ z).reshape((shape[kappa],) + tuple(s for g, s in enumerate(shape) if g != kappa))
            out += np.moveaxis(res, 0, kappa)
        return out

    def eta_general(self, kappa: int, images: list, sigma: np.ndarray) -> np.ndarray:
        """Rotation block from out-of-space overlaps (equivalent to the explicit tensors)."""
        spec = self.space.species[kappa].spec
        m1, m2 = spec.m1, spec.m2
        m = m1 + m2
        y = images[kappa]
        p1, p2 = off_block_pairs(spec)
        # bra rows u[(a, b)] = (1-P) E_{m1+b, a} Psi ; ket rows (1-P) E_{m1+c, d} Psi
        u = y[p2 * m + p1] * self._out_mask
        s = u.conj() @ u.T
        g = u.conj() @ sigma.reshape(-1)
        if not np.any(s):
            return np.zeros((m, m), complex)
        z = _solve_psd(s, g, self.eps * self._norm2)
        # rows of u are ordered (a, b); the unknown is z[(c, d)] on the same pair list
        z_mat = np.zeros((m2, m1), complex)
        z_mat[p2 - m1, p1] = z
        return _generator_to_eta(z_mat, m1, m2, self.mode)

    def __call__(self, wf: WaveFunction) -> Derivatives:
        aug = self.aug
        tensor = aug.lift(wf.amps)
        ints = orbital_integrals(wf.orbitals, self.terms)
        images = self.images(tensor)
        dens = densities_from_images(aug, tensor, images)
        self._norm2 = dens.norm2
        sig = self.sigma(tensor, ints, images)
        flat = tensor.reshape(-1)
        energy_c = np.vdot(flat, sig.reshape(-1)) / dens.norm2
        energy = float(energy_c.real)

        etas = []
        for kappa, kind in enumerate(self.kinds):
            spec = self.space.species[kappa].spec
            m = spec.n_orbitals
            if kind == "complete":
                etas.append(np.zeros((m, m), complex))
            elif kind == "even":
                etas.append(solve_eta_even(kappa, spec, ints, dens, self.n_species, self.mode))
            else:
                etas.append(self.eta_general(kappa, images, sig))

        # amplitude derivative
        d_psi = np.zeros(aug.full.product_size, dtype=complex)
        for kappa, eta in enumerate(etas):
            if np.any(eta):
                d_psi += eta.reshape(-1) @ images[kappa]
        h_psi = aug.restrict(sig)
        if self.mode is Mode.REAL:
            amp_dot = -1j * h_psi - aug.restrict(d_psi)
        else:
            amp_dot = -(h_psi - energy * wf.amps) - aug.restrict(d_psi)

        mf = build_mean_fields(wf, self.terms)
        orb_dot = []
        for kappa, phi in enumerate(wf.orbitals):
            q = qspace_rhs(kappa, wf, self.terms, mf, dens, self.mode, self.eps)
            orb_dot.append(etas[kappa].T @ phi + q)
        return Derivatives(amps=amp_dot, orbitals=orb_dot, energy=energy, eta=etas, densities=dens, norm2=dens.norm2)


def amplitude_rhs(
    wf: WaveFunction,
    terms: HamiltonianTerms,
    eta: Sequence[np.ndarray],
    space: ConfigSpace,
    mode: "Mode | str" = Mode.REAL,
) -> np.ndarray:
    """Amplitude derivative for given rotation matrices ``eta``.

    Real time: ``dC/dt = -i P H Psi - P D Psi`` with ``D = sum eta[p,q] E_pq``.
    Imaginary time: ``dC/dtau = -P (H - E) Psi - P D Psi``.
    """
    ev = EomEvaluator(space, terms, mode)
    aug = ev.aug
    if np.asarray(wf.amps).shape != (space.product_size,):
        raise ValueError("amplitude vector does not match the configuration space")
    tensor = aug.lift(wf.amps)
    ints = orbital_integrals(wf.orbitals, terms)
    images = ev.images(tensor)
    sig = ev.sigma(tensor, ints, images)
    d_psi = np.zeros(aug.full.product_size, dtype=complex)
    for kappa, e in enumerate(eta):
        if e is not None and np.any(e):
            d_psi += np.asarray(e).reshape(-1) @ images[kappa]
    h_psi = aug.restrict(sig)
    if ev.mode is Mode.REAL:
        return -1j * h_psi - aug.restrict(d_psi)
    energy = np.vdot(wf.amps, h_psi).real / np.vdot(wf.amps, wf.amps).real
    return -(h_psi - energy * wf.amps) - aug.restrict(d_psi)


def assemble_derivatives(
    wf: WaveFunction,
    terms: HamiltonianTerms,
    space: ConfigSpace,
    mode: "Mode | str" = Mode.REAL,
    eps: float = 1e-8,
) -> Derivatives:
    """Full derivative ``(dC, dphi per species)`` of one state."""
    return EomEvaluator(space, terms, mode, eps)(wf)
