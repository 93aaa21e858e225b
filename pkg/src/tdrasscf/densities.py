"""Reduced density matrices and orbital-rotation tensors.

Conventions (all expectation values of the unnormalized amplitude vector;
``norm2`` is stored alongside):

* ``rho1[k][i, j]     = <b_i^+ b_j>``
* ``rho2[k][i, k, j, l] = <b_i^+ b_k^+ b_l b_j>``
* ``rho_inter[(k, g)][i, j, m, l] = <b_i^+ b_m (species k) b_j^+ b_l (species g)>``

Everything is contracted from the one-body images ``E_pq |Psi>`` computed
once on the single-excitation closure of the space, so intermediate states
that leave the restricted space are kept exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .fockspace import AugmentedSpace, ConfigSpace, RasSpec, Scheme

__all__ = [
    "DensitySet",
    "ZetaTensors",
    "one_body_images",
    "densities_from_images",
    "build_densities",
    "build_rho1",
    "build_rho2",
    "build_rho_inter",
    "build_zeta",
    "build_a_tensor",
    "off_block_pairs",
]


@dataclass
class DensitySet:
    rho1: list
    rho2: list
    rho_inter: dict = field(default_factory=dict)
    norm2: float = 1.0

    def inter(self, kappa: int, gamma: int) -> np.ndarray:
        """Inter-species density with the first and third index on ``kappa``."""
        if kappa < gamma:
            return self.rho_inter[(kappa, gamma)]
        return self.rho_inter[(gamma, kappa)].transpose(1, 0, 3, 2)


def _to_front(tensor: np.ndarray, axis: int) -> np.ndarray:
    moved = np.moveaxis(tensor, axis, 0)
    return moved.reshape(moved.shape[0], -1)


def one_body_images(aug: AugmentedSpace, tensor: np.ndarray, kappa: int) -> np.ndarray:
    """All ``E_pq`` images of a closure tensor for species ``kappa``.

    Returns an array of shape ``(M*M, product_size)`` in the canonical flat
    layout, row ``p*M + q`` holding ``b_p^+ b_q |Psi>``.
    """
    ops = aug.ops[kappa]
    shape = aug.full.shape
    front = _to_front(tensor, kappa)
    img = ops.stack @ front
    m2 = ops.m * ops.m
    moved_shape = (m2, shape[kappa]) + tuple(s for g, s in enumerate(shape) if g != kappa)
    img = np.moveaxis(img.reshape(moved_shape), 1, kappa + 1)
    return np.ascontiguousarray(img).reshape(m2, -1)


def _hermitian_from_upper(mat: np.ndarray) -> np.ndarray:
    upper = np.triu(mat, 1)
    out = upper + upper.conj().T
    out[np.diag_indices_from(out)] = mat.diagonal().real
    return out


def densities_from_images(
    aug: AugmentedSpace, tensor: np.ndarray, images: list, pairs=None
) -> DensitySet:
    """Contract one-body images into ``rho1``, ``rho2`` and inter-species densities."""
    flat = tensor.reshape(-1)
    cflat = flat.conj()
    rho1, rho2 = [], []
    for kappa, y in enumerate(images):
        m = aug.ops[kappa].m
        r1 = _hermitian_from_upper((y @ cflat).reshape(m, m))
        gram = (y.conj() @ y.T).reshape(m, m, m, m)
        # gram[b, a, c, d] = <E_ab E_cd>; rho2[i, k, j, l] = <E_ij E_kl> - delta_jk rho1[i, l]
        t = gram.transpose(1, 0, 2, 3)
        r2 = t.transpose(0, 2, 1, 3).copy()
        for j in range(m):
            r2[:, j, j, :] -= r1
        rho1.append(r1)
        rho2.append(r2)
    inter = {}
    n_sp = len(images)
    keys = pairs if pairs is not None else [(k, g) for k in range(n_sp) for g in range(k + 1, n_sp)]
    for kappa, gamma in keys:
        mk, mg = aug.ops[kappa].m, aug.ops[gamma].m
        cross = (images[kappa].conj() @ images[gamma].T).reshape(mk, mk, mg, mg)
        inter[(kappa, gamma)] = cross.transpose(1, 2, 0, 3)
    norm2 = float(np.vdot(flat, flat).real)
    return DensitySet(rho1=rho1, rho2=rho2, rho_inter=inter, norm2=norm2)


def build_densities(amps: np.ndarray, space: ConfigSpace) -> DensitySet:
    aug = space.augmented
    tensor = aug.lift(np.asarray(amps))
    images = [one_body_images(aug, tensor, k) for k in range(space.n_species)]
    return densities_from_images(aug, tensor, images)


def build_rho1(kappa: int, amps: np.ndarray, space: ConfigSpace) -> np.ndarray:
    """``rho1[i, j] = <b_i^+ b_j>`` for species ``kappa``."""
    return build_densities(amps, space).rho1[kappa]


def build_rho2(kappa: int, amps: np.ndarray, space: ConfigSpace) -> np.ndarray:
    """``rho2[i, k, j, l] = <b_i^+ b_k^+ b_l b_j>`` for species ``kappa``."""
    return build_densities(amps, space).rho2[kappa]


def build_rho_inter(kappa: int, gamma: int, amps: np.ndarray, space: ConfigSpace) -> np.ndarray:
    """``out[i, j, k, l] = <b_i^+ b_k (kappa) b_j^+ b_l (gamma)>``."""
    if kappa == gamma:
        raise ValueError("inter-species density needs two distinct species")
    return build_densities(amps, space).inter(kappa, gamma)


def off_block_pairs(spec: RasSpec) -> tuple[np.ndarray, np.ndarray]:
    """Orbital indices (P1, P2) of all off-block pairs, ordered ``i' * m2 + j''``."""
    p1 = np.repeat(np.arange(spec.m1), spec.m2)
    p2 = np.tile(np.arange(spec.m1, spec.m1 + spec.m2), spec.m1)
    return p1, p2


@dataclass
class ZetaTensors:
    """Overlaps of out-of-space images for one species.

    Index layout, with ``a`` in P1 (local), ``b`` in P2 (local):

    * ``zeta4[a, b, c, d] = <Psi| E_{a b} (1-P) E_{c d} |Psi>`` with ``c`` in P2, ``d`` in P1
    * ``zeta6_intra[a, b, k, m, l, n] = <Psi| E_{a b} (1-P) b_k^+ b_m^+ b_n b_l |Psi>``
    * ``zeta6_inter[g][a, b, c, d, r, s] = <Psi| E_{a b} (1-P) E_{c d} E^g_{r s} |Psi>``

    ``P`` is the projector onto the restricted space.
    """

    zeta4: np.ndarray
    zeta6_intra: np.ndarray
    zeta6_inter: dict


def build_zeta(kappa: int, amps: np.ndarray, space: ConfigSpace) -> ZetaTensors:
    """Explicit rotation tensors of a general-scheme species.

    The bra ``(1-P) E_{b a} |Psi>`` only has components in the block one
    above ``nmax``; it is obtained on the closure space, so no other block
    can contribute. In the unrestricted limit every tensor is zero.
    """
    aug = space.augmented
    spec = space.species[kappa].spec
    n_k = space.species[kappa].n_particles
    m1, m2 = spec.m1, spec.m2
    m = spec.n_orbitals
    n_sp = space.n_species
    others = {g: aug.ops[g].m for g in range(n_sp) if g != kappa}
    zero = ZetaTensors(
        zeta4=np.zeros((m1, m2, m2, m1), complex),
        zeta6_intra=np.zeros((m1, m2, m, m, m, m), complex),
        zeta6_inter={g: np.zeros((m1, m2, m2, m1, mg, mg), complex) for g, mg in others.items()},
    )
    if spec.is_complete(n_k) or m2 == 0:
        return zero
    tensor = aug.lift(np.asarray(amps))
    out_mask = (~aug.in_space).astype(float)
    y = one_body_images(aug, tensor, kappa)
    y_out = y * out_mask

    def idx(p, q):
        return p * m + q

    bra = np.array([[y_out[idx(m1 + b, a)] for b in range(m2)] for a in range(m1)])
    ket_exc = np.array([[y_out[idx(m1 + c, d)] for d in range(m1)] for c in range(m2)])
    zeta4 = np.einsum("abx,cdx->abcd", bra.conj(), ket_exc)

    shape = aug.full.shape
    z6 = np.zeros((m1, m2, m, m, m, m), complex)
    for mm in range(m):
        for n in range(m):
            y_mn = y[idx(mm, n)].reshape(shape)
            second = one_body_images(aug, y_mn, kappa)
            for k in range(m):
                for l in range(m):
                    vec = second[idx(k, l)].copy()
                    if mm == l:
                        vec = vec - y[idx(k, n)]
                    z6[:, :, k, mm, l, n] = np.einsum("abx,x->ab", bra.conj(), vec * out_mask)
    z6_inter = {}
    for g, mg in others.items():
        yg = one_body_images(aug, tensor, g)
        zt = np.zeros((m1, m2, m2, m1, mg, mg), complex)
        for r in range(mg):
            for s in range(mg):
                second = one_body_images(aug, yg[r * mg + s].reshape(shape), kappa)
                for c in range(m2):
                    for d in range(m1):
                        vec = second[idx(m1 + c, d)] * out_mask
                        zt[:, :, c, d, r, s] = np.einsum("abx,x->ab", bra.conj(), vec)
        z6_inter[g] = zt
    return ZetaTensors(zeta4=zeta4, zeta6_intra=z6, zeta6_inter=z6_inter)


def build_a_tensor(rho1: np.ndarray, spec: RasSpec) -> np.ndarray:
    """Even-scheme coefficient tensor from the one-body density.

    ``A[a, b, c, d] = rho1[a, d] delta_{b c} - rho1[c, b] delta_{d a}`` with
    ``a, d`` in P1 and ``b, c`` in P2 (local indices, P2 offset by ``m1``).
    """
    m1, m2 = spec.m1, spec.m2
    rho1 = np.asarray(rho1)
    r11 = rho1[:m1, :m1]
    r22 = rho1[m1:, m1:]
    eye1 = np.eye(m1)
    eye2 = np.eye(m2)
    return (
        np.einsum("ad,bc->abcd", r11, eye2)
        - np.einsum("cb,da->abcd", r22, eye1)
    ).astype(np.result_type(rho1, float))
