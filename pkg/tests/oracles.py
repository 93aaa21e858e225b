"""Brute-force reference implementations used only by the test suite.

``SiteFock`` is the bosonic Fock space of particles on the grid sites
themselves. Orbital creators are ``sum_x phi(x) a_x^+``, so configuration
states, Hamiltonians and every derivative can be built without any of the
package's configuration-space machinery.
"""

from __future__ import annotations

import itertools
from math import factorial

import numpy as np
import scipy.sparse as sp


class SiteFock:
    """Fock spaces of ``0..n_max`` bosons on ``n_sites`` sites."""

    def __init__(self, n_sites: int, n_max: int):
        self.n_sites = n_sites
        self.n_max = n_max
        self.basis = []
        self.index = []
        for k in range(n_max + 1):
            states = []
            for combo in itertools.combinations_with_replacement(range(n_sites), k):
                occ = np.zeros(n_sites, dtype=int)
                for x in combo:
                    occ[x] += 1
                states.append(tuple(occ))
            self.basis.append(np.array(states, dtype=int).reshape(len(states), n_sites))
            self.index.append({s: i for i, s in enumerate(states)})
        # annih[k][x]: (k-1)-space <- k-space
        self.annih = [None]
        for k in range(1, n_max + 1):
            ops = []
            for x in range(n_sites):
                rows, cols, vals = [], [], []
                for i, occ in enumerate(self.basis[k]):
                    if occ[x] > 0:
                        t = list(occ)
                        t[x] -= 1
                        rows.append(self.index[k - 1][tuple(t)])
                        cols.append(i)
                        vals.append(np.sqrt(occ[x]))
                ops.append(sp.csr_matrix((vals, (rows, cols)), shape=(len(self.basis[k - 1]), len(self.basis[k]))))
            self.annih.append(ops)

    def dim(self, k: int) -> int:
        return len(self.basis[k])

    def create(self, phi: np.ndarray, k: int):
        """Orbital creator mapping the k-space to the (k+1)-space."""
        return sum(phi[x] * self.annih[k + 1][x].T for x in range(self.n_sites))

    def destroy(self, phi: np.ndarray, k: int):
        """Orbital annihilator mapping the k-space to the (k-1)-space."""
        return sum(np.conj(phi[x]) * self.annih[k][x] for x in range(self.n_sites))

    def config_vector(self, occupations, orbitals: np.ndarray) -> np.ndarray:
        vec = np.zeros(1, dtype=complex)
        vec[0] = 1.0
        k = 0
        for p, n_p in enumerate(occupations):
            for _ in range(n_p):
                vec = self.create(orbitals[p], k) @ vec
                k += 1
            vec = vec / np.sqrt(factorial(n_p))
        return vec

    def one_body(self, h: np.ndarray, k: int):
        """``sum_xy h[x,y] a_x^+ a_y`` on the k-space."""
        a = self.annih[k]
        out = sp.csr_matrix((self.dim(k), self.dim(k)), dtype=complex)
        for y in range(self.n_sites):
            col = sum(h[x, y] * a[x].T for x in range(self.n_sites) if h[x, y] != 0)
            if not isinstance(col, int):
                out = out + col @ a[y]
        return out

    def pair_diagonal(self, v: np.ndarray, k: int) -> np.ndarray:
        """Diagonal of ``1/2 sum_xy v(x,y) a_x^+ a_y^+ a_y a_x`` on the k-space."""
        occ = self.basis[k].astype(float)
        return 0.5 * (np.einsum("sx,xy,sy->s", occ, v, occ) - occ @ np.diag(v))

    def occupations(self, k: int) -> np.ndarray:
        return self.basis[k].astype(float)

    def site_op(self, x: int, k: int):
        return self.annih[k][x]


class MixtureOracle:
    """Dense reference for a mixture of species on a shared grid.

    State vectors are tensors with one axis per species (the species' N-particle
    site Fock space), row-major like the package amplitude tensors.
    """

    def __init__(self, n_sites: int, particles, terms):
        self.particles = tuple(particles)
        self.focks = [SiteFock(n_sites, n) for n in particles]
        self.terms = terms
        self.h_species = []
        for kappa, (fock, n) in enumerate(zip(self.focks, particles)):
            hk = fock.one_body(terms.h[kappa], n)
            if terms.v[kappa] is not None:
                hk = hk + sp.diags(fock.pair_diagonal(terms.v[kappa], n))
            self.h_species.append(sp.csr_matrix(hk))
        self.shape = tuple(f.dim(n) for f, n in zip(self.focks, particles))
        diag = np.zeros(self.shape)
        for (kappa, gamma), w in terms.w.items():
            ok = self.focks[kappa].occupations(particles[kappa])
            og = self.focks[gamma].occupations(particles[gamma])
            block = ok @ w @ og.T
            idx = [None] * len(particles)
            idx[kappa] = slice(None)
            idx[gamma] = slice(None)
            diag = diag + block[tuple(idx)] if kappa < gamma else diag + block.T[tuple(idx)]
        self.inter_diag = diag

    def apply_species(self, op, state, kappa):
        moved = np.moveaxis(state, kappa, 0)
        res = op @ moved.reshape(moved.shape[0], -1)
        res = res.reshape((op.shape[0],) + moved.shape[1:])
        return np.moveaxis(res, 0, kappa)

    def hamiltonian(self, state):
        out = self.inter_diag * state
        for kappa, hk in enumerate(self.h_species):
            out = out + self.apply_species(hk, state, kappa)
        return out

    def config_basis(self, space, orbitals):
        """Columns: product configuration vectors in flat row-major order."""
        per = []
        for kappa, s in enumerate(space.species):
            per.append(np.array([self.focks[kappa].config_vector(c, orbitals[kappa]) for c in s.configs]).T)
        vecs = []
        for flat in range(space.product_size):
            local = np.unravel_index(flat, space.shape)
            v = per[0][:, local[0]]
            for kappa in range(1, len(per)):
                v = np.multiply.outer(v, per[kappa][:, local[kappa]])
            vecs.append(v.reshape(-1))
        return np.array(vecs).T

    def state(self, space, wf):
        basis = self.config_basis(space, wf.orbitals)
        return (basis @ wf.amps).reshape(self.shape)

    def one_body_op(self, kappa, p_orb, q_orb):
        """``b_p^+ b_q`` for orbitals given as grid vectors, on the N-particle space of species kappa."""
        f = self.focks[kappa]
        n = self.particles[kappa]
        return f.create(p_orb, n - 1) @ f.destroy(q_orb, n)

    def rotation_op(self, kappa, eta, orbitals):
        m = eta.shape[0]
        op = None
        for p in range(m):
            for q in range(m):
                if eta[p, q] == 0:
                    continue
                term = eta[p, q] * self.one_body_op(kappa, orbitals[p], orbitals[q])
                op = term if op is None else op + term
        return op

    def tangent_image(self, kappa, vectors, orbitals, state):
        """``sum_i sum_x vectors[i, x] a_x^+ b_i |Psi>`` for species kappa."""
        f = self.focks[kappa]
        n = self.particles[kappa]
        out = np.zeros(self.shape, dtype=complex)
        for i in range(orbitals.shape[0]):
            low = self.apply_species(f.destroy(orbitals[i], n), state, kappa)
            out = out + self.apply_species(f.create(vectors[i], n - 1), low, kappa)
        return out

    def full_derivative(self, space, wf, amp_dot, orb_dot):
        """Grid-Fock image of a derivative ``(dC, dphi)``."""
        basis = self.config_basis(space, wf.orbitals)
        psi = (basis @ wf.amps).reshape(self.shape)
        out = (basis @ amp_dot).reshape(self.shape)
        for kappa in range(len(self.particles)):
            out = out + self.tangent_image(kappa, orb_dot[kappa], wf.orbitals[kappa], psi)
        return out

    def qspace_bracket(self, kappa, wf, psi):
        """``G[i, x] = <Psi| b_i^+ a_x H |Psi>`` for species kappa."""
        f = self.focks[kappa]
        n = self.particles[kappa]
        hpsi = self.hamiltonian(psi)
        phi = wf.orbitals[kappa]
        g = np.zeros(phi.shape, dtype=complex)
        for i in range(phi.shape[0]):
            low = self.apply_species(f.destroy(phi[i], n), psi, kappa)  # b_i Psi in N-1 space
            for x in range(f.n_sites):
                vec = self.apply_species(f.annih[n][x], hpsi, kappa)  # a_x H Psi
                g[i, x] = np.vdot(low, vec)
        return g

    def tangent_basis(self, space, wf, even_species=()):
        """Complex tangent directions (configurations and orbital variations).

        For species listed in ``even_species`` the P1/P2 rotation directions are
        omitted; use :meth:`even_rotation_directions` for their real-linear pairs.
        """
        basis = self.config_basis(space, wf.orbitals)
        psi = (basis @ wf.amps).reshape(self.shape)
        cols = [basis[:, j] for j in range(basis.shape[1])]
        for kappa in range(len(self.particles)):
            phi = wf.orbitals[kappa]
            n_sites = phi.shape[1]
            if kappa in even_species:
                # Q-space variations only: orthonormal complement of the orbitals
                proj = np.eye(n_sites) - phi.T @ phi.conj()
                u, s, _ = np.linalg.svd(proj)
                qvecs = u[:, s > 0.5].T
            else:
                qvecs = np.eye(n_sites)
            for i in range(phi.shape[0]):
                for a in qvecs:
                    vec = np.zeros_like(phi)
                    vec[i] = a
                    cols.append(self.tangent_image(kappa, vec, phi, psi).reshape(-1))
        return np.array(cols).T, psi

    def even_rotation_directions(self, kappa, spec, wf, psi):
        phi = wf.orbitals[kappa]
        m1 = spec.m1
        out = []
        for c in range(spec.m2):
            for d in range(m1):
                e = self.apply_species(self.one_body_op(kappa, phi[m1 + c], phi[d]), psi, kappa)
                e_dag = self.apply_species(self.one_body_op(kappa, phi[d], phi[m1 + c]), psi, kappa)
                out.append((e - e_dag).reshape(-1))
                out.append((1j * (e + e_dag)).reshape(-1))
        return out


def random_orbitals(rng, m, n, complex_=True):
    a = rng.normal(size=(n, m)) + (1j * rng.normal(size=(n, m)) if complex_ else 0)
    q, _ = np.linalg.qr(a)
    return q.T.copy()


def random_amps(rng, size):
    c = rng.normal(size=size) + 1j * rng.normal(size=size)
    return c / np.linalg.norm(c)
