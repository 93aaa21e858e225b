"""Restricted-active-space configuration spaces for bosonic mixtures.

A species with ``m1`` orbitals in the first block (P1) and ``m2`` in the
second block (P2) admits the occupation vectors whose P2 population (the
excitation count) is one of the admitted counts of its :class:`RasSpec`.
Mixture states live in the row-major product of the per-species lists.

Canonical order inside a species list: ascending excitation count, then
descending lexicographic order of the occupation tuple. With this order the
first configuration is always the fully condensed one, ``(N, 0, ..., 0)``,
and every excitation block is a contiguous slice.

Operator chains act on amplitude vectors through precomputed
(target, source, factor) tables. A term whose target configuration is not
in the index map is dropped, which is exactly the projection onto the
restricted space.
"""

from __future__ import annotations

import enum
import itertools
from dataclasses import dataclass
from functools import cached_property
from math import comb, prod
from typing import Iterator, Sequence

import numpy as np
import scipy.sparse as sp

__all__ = [
    "Scheme",
    "RasSpec",
    "InvalidSpecError",
    "SpeciesSpace",
    "ConfigSpace",
    "AugmentedSpace",
    "SpeciesOperators",
    "enumerate_species_configs",
    "product_space",
    "apply_one_body",
    "apply_two_body",
    "apply_inter_pair",
    "count_species_configs",
    "count_product_configs",
    "count_fci",
]


class InvalidSpecError(ValueError):
    """Raised for inconsistent RAS specifications."""


class Scheme(str, enum.Enum):
    """Excitation admission rule for the P2 block."""

    GENERAL = "general"
    EVEN_ONLY = "even"

    @classmethod
    def parse(cls, value: "str | Scheme") -> "Scheme":
        if isinstance(value, Scheme):
            return value
        key = str(value).strip().lower().replace("_", "").replace("-", "")
        aliases = {"general": cls.GENERAL, "even": cls.EVEN_ONLY, "evenonly": cls.EVEN_ONLY}
        if key not in aliases:
            raise InvalidSpecError(f"unknown scheme {value!r}; expected 'general' or 'even'")
        return aliases[key]


@dataclass(frozen=True)
class RasSpec:
    """Orbital partition and excitation rule of one species.

    Attributes
    ----------
    m1, m2 : int
        Number of orbitals in the P1 and P2 blocks. Orbitals ``0..m1-1``
        form P1 and ``m1..m1+m2-1`` form P2.
    scheme : Scheme
        ``GENERAL`` admits every excitation count ``0..nmax``;
        ``EVEN_ONLY`` admits only the even counts.
    nmax : int
        Largest number of particles allowed in P2.
    """

    m1: int
    m2: int = 0
    scheme: Scheme = Scheme.GENERAL
    nmax: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "scheme", Scheme.parse(self.scheme))
        if int(self.m1) != self.m1 or self.m1 < 1:
            raise InvalidSpecError(f"m1 must be a positive integer, got {self.m1}")
        if int(self.m2) != self.m2 or self.m2 < 0:
            raise InvalidSpecError(f"m2 must be a non-negative integer, got {self.m2}")
        if int(self.nmax) != self.nmax or self.nmax < 0:
            raise InvalidSpecError(f"nmax must be a non-negative integer, got {self.nmax}")

    @classmethod
    def fci(cls, n_orbitals: int) -> "RasSpec":
        """Unrestricted space over ``n_orbitals`` orbitals."""
        return cls(m1=n_orbitals, m2=0)

    @property
    def n_orbitals(self) -> int:
        return self.m1 + self.m2

    def validate(self, n_particles: int) -> None:
        if n_particles < 1:
            raise InvalidSpecError(f"particle count must be >= 1, got {n_particles}")
        if self.nmax > n_particles:
            raise InvalidSpecError(
                f"nmax={self.nmax} exceeds the particle count {n_particles}"
            )

    def admitted(self, n_particles: int) -> list[int]:
        """Admitted excitation counts, ascending."""
        self.validate(n_particles)
        if self.m2 == 0:
            return [0]
        step = 2 if self.scheme is Scheme.EVEN_ONLY else 1
        return list(range(0, self.nmax + 1, step))

    def is_complete(self, n_particles: int) -> bool:
        """True when the admitted set is the full configuration space."""
        if self.m2 == 0:
            return True
        return self.admitted(n_particles) == list(range(n_particles + 1))

    def closure(self, n_particles: int) -> "RasSpec":
        """Smallest general-scheme spec containing every single excitation of this space."""
        if self.is_complete(n_particles):
            return self
        return RasSpec(self.m1, self.m2, Scheme.GENERAL, min(self.nmax + 1, n_particles))


def _compositions(total: int, parts: int) -> Iterator[tuple[int, ...]]:
    """Occupation tuples of ``total`` bosons in ``parts`` slots, descending lexicographic."""
    if parts == 0:
        if total == 0:
            yield ()
        return
    if parts == 1:
        yield (total,)
        return
    for first in range(total, -1, -1):
        for rest in _compositions(total - first, parts - 1):
            yield (first,) + rest


def enumerate_species_configs(spec: RasSpec, n_particles: int) -> list[tuple[int, ...]]:
    """List the admitted occupation tuples of one species in canonical order."""
    configs: list[tuple[int, ...]] = []
    for k in spec.admitted(n_particles):
        p2 = list(_compositions(k, spec.m2))
        for p1 in _compositions(n_particles - k, spec.m1):
            configs.extend(p1 + q for q in p2)
    return configs


def _stars_and_bars(n: int, m: int) -> int:
    if m == 0:
        return 1 if n == 0 else 0
    return comb(n + m - 1, m - 1)


def count_species_configs(spec: RasSpec, n_particles: int) -> int:
    """Closed-form size of a species space (nothing is enumerated)."""
    return sum(
        _stars_and_bars(k, spec.m2) * _stars_and_bars(n_particles - k, spec.m1)
        for k in spec.admitted(n_particles)
    )


def count_product_configs(specs: Sequence[RasSpec], particles: Sequence[int]) -> int:
    if len(specs) != len(particles):
        raise ValueError("one RAS spec per species is required")
    return prod(count_species_configs(s, n) for s, n in zip(specs, particles))


def count_fci(n_particles: int, n_orbitals: int) -> int:
    """Number of ways to place ``n_particles`` bosons in ``n_orbitals`` orbitals."""
    return _stars_and_bars(n_particles, n_orbitals)


class SpeciesSpace:
    """Admitted configurations of one species with a tuple-keyed index map."""

    def __init__(self, spec: RasSpec, n_particles: int):
        self.spec = spec
        self.n_particles = int(n_particles)
        configs = enumerate_species_configs(spec, self.n_particles)
        self.configs: list[tuple[int, ...]] = configs
        self.occupations = np.array(configs, dtype=np.int64).reshape(len(configs), spec.n_orbitals)
        self.index: dict[tuple[int, ...], int] = {c: i for i, c in enumerate(configs)}
        self.excitations = self.occupations[:, spec.m1:].sum(axis=1)
        # integer keys (radix N+1) allow vectorized lookups while building tables
        radix = self.n_particles + 1
        self._fast = radix ** spec.n_orbitals < 2**62
        if self._fast:
            self._radix = radix ** np.arange(spec.n_orbitals, dtype=np.int64)
            keys = self.occupations @ self._radix
            self._order = np.argsort(keys, kind="stable")
            self._sorted_keys = keys[self._order]

    def __len__(self) -> int:
        return len(self.configs)

    def __repr__(self) -> str:
        return f"SpeciesSpace({self.spec!r}, N={self.n_particles}, size={len(self)})"

    @property
    def n_orbitals(self) -> int:
        return self.spec.n_orbitals

    def lookup(self, rows: np.ndarray) -> np.ndarray:
        """Indices of occupation rows, ``-1`` where a row is not in the space."""
        rows = np.asarray(rows, dtype=np.int64)
        out = np.full(rows.shape[0], -1, dtype=np.int64)
        valid = (rows >= 0).all(axis=1) & (rows.sum(axis=1) == self.n_particles)
        if not valid.any():
            return out
        if self._fast:
            keys = rows[valid] @ self._radix
            pos = np.searchsorted(self._sorted_keys, keys)
            pos = np.minimum(pos, len(self._sorted_keys) - 1)
            hit = self._sorted_keys[pos] == keys
            found = np.where(hit, self._order[pos], -1)
            out[valid] = found
        else:
            out[valid] = [self.index.get(tuple(r), -1) for r in rows[valid].tolist()]
        return out

    def chain_table(
        self, ops: Sequence[tuple[int, int]], target: "SpeciesSpace | None" = None
    ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Table of a normal-ordered ladder chain.

        ``ops`` lists ``(orbital, +1)`` for a creator and ``(orbital, -1)``
        for an annihilator, written left to right as in the operator
        product; they are applied right to left. Returns
        ``(dst, src, factor)`` with ``dst`` indexing ``target`` (default:
        this space). Terms leaving ``target`` are dropped.
        """
        target = self if target is None else target
        occ = self.occupations.copy()
        # squared factor is an integer; one square root at the end keeps
        # number-operator entries exact
        fac2 = np.ones(len(self), dtype=np.int64)
        for orb, kind in reversed(ops):
            if not 0 <= orb < self.n_orbitals:
                raise IndexError(f"orbital index {orb} out of range 0..{self.n_orbitals - 1}")
            if kind < 0:
                fac2 *= np.maximum(occ[:, orb], 0)
                occ[:, orb] -= 1
            else:
                fac2 *= np.maximum(occ[:, orb] + 1, 0)
                occ[:, orb] += 1
        alive = fac2 != 0
        src = np.nonzero(alive)[0]
        dst = target.lookup(occ[alive])
        keep = dst >= 0
        return dst[keep], src[keep], np.sqrt(fac2[alive][keep].astype(float))

    def one_body_table(self, i: int, j: int, target: "SpeciesSpace | None" = None):
        """Table of ``b_i^dagger b_j``."""
        return self.chain_table(((i, 1), (j, -1)), target)

    def two_body_table(self, i: int, k: int, l: int, j: int, target: "SpeciesSpace | None" = None):
        """Table of ``b_i^dagger b_k^dagger b_l b_j``."""
        return self.chain_table(((i, 1), (k, 1), (l, -1), (j, -1)), target)


class ConfigSpace:
    """Row-major product of per-species configuration lists."""

    def __init__(self, species: Sequence[SpeciesSpace]):
        if len(species) == 0:
            raise ValueError("a configuration space needs at least one species")
        for s in species:
            if len(s) == 0:
                raise ValueError(f"species space {s!r} is empty")
        self.species: tuple[SpeciesSpace, ...] = tuple(species)
        self.shape: tuple[int, ...] = tuple(len(s) for s in species)
        self.product_size: int = prod(self.shape)

    @classmethod
    def build(cls, specs: Sequence[RasSpec], particles: Sequence[int]) -> "ConfigSpace":
        if len(specs) != len(particles):
            raise ValueError("one RAS spec per species is required")
        return cls([SpeciesSpace(s, n) for s, n in zip(specs, particles)])

    @property
    def n_species(self) -> int:
        return len(self.species)

    @property
    def per_species(self) -> list[list[tuple[int, ...]]]:
        return [s.configs for s in self.species]

    @property
    def specs(self) -> tuple[RasSpec, ...]:
        return tuple(s.spec for s in self.species)

    @property
    def particles(self) -> tuple[int, ...]:
        return tuple(s.n_particles for s in self.species)

    def __len__(self) -> int:
        return self.product_size

    def index_of(self, configs: Sequence[Sequence[int]]) -> int:
        """Flat index of one occupation tuple per species."""
        if len(configs) != self.n_species:
            raise ValueError("one occupation tuple per species is required")
        local = []
        for s, c in zip(self.species, configs):
            key = tuple(int(x) for x in c)
            if key not in s.index:
                raise KeyError(f"configuration {key} is not in the space")
            local.append(s.index[key])
        return int(np.ravel_multi_index(local, self.shape))

    def config_at(self, flat: int) -> tuple[tuple[int, ...], ...]:
        local = np.unravel_index(int(flat), self.shape)
        return tuple(s.configs[i] for s, i in zip(self.species, local))

    def reference_index(self) -> int:
        """Flat index of the fully condensed configuration (always first)."""
        return 0

    @cached_property
    def augmented(self) -> "AugmentedSpace":
        """Single-excitation closure used for exact operator images (built once)."""
        return AugmentedSpace(self)


def product_space(species_lists: Sequence[SpeciesSpace]) -> ConfigSpace:
    """Build the product space of per-species configuration lists."""
    return ConfigSpace(species_lists)


def _check_amps(amps: np.ndarray, space: ConfigSpace) -> np.ndarray:
    amps = np.asarray(amps)
    if amps.shape != (space.product_size,):
        raise ValueError(
            f"amplitude vector of length {space.product_size} expected, got shape {amps.shape}"
        )
    return amps.reshape(space.shape)


def _apply_table(tensor: np.ndarray, axis: int, table, out: np.ndarray | None = None) -> np.ndarray:
    dst, src, fac = table
    moved = np.moveaxis(tensor, axis, 0)
    res = np.zeros(moved.shape, dtype=np.result_type(tensor, 1.0)) if out is None else out
    extra = (slice(None),) + (None,) * (moved.ndim - 1)
    np.add.at(res, dst, fac[extra] * moved[src])
    return res


def _species_apply(kappa: int, ops, amps: np.ndarray, space: ConfigSpace) -> np.ndarray:
    if not 0 <= kappa < space.n_species:
        raise IndexError(f"species index {kappa} out of range")
    tensor = _check_amps(amps, space)
    sp_ = space.species[kappa]
    table = sp_.chain_table(ops)
    res = _apply_table(tensor, kappa, table)
    return np.moveaxis(res, 0, kappa).reshape(-1)


def apply_one_body(kappa: int, i: int, j: int, amps: np.ndarray, space: ConfigSpace) -> np.ndarray:
    """Image of ``b_i^dagger b_j`` of species ``kappa``, projected onto the space."""
    return _species_apply(kappa, ((i, 1), (j, -1)), amps, space)


def apply_two_body(
    kappa: int, i: int, k: int, l: int, j: int, amps: np.ndarray, space: ConfigSpace
) -> np.ndarray:
    """Image of ``b_i^dagger b_k^dagger b_l b_j`` of species ``kappa``, projected."""
    return _species_apply(kappa, ((i, 1), (k, 1), (l, -1), (j, -1)), amps, space)


def apply_inter_pair(
    kappa: int,
    gamma: int,
    i_k: int,
    j_k: int,
    i_g: int,
    j_g: int,
    amps: np.ndarray,
    space: ConfigSpace,
) -> np.ndarray:
    """Image of ``b_{i_k}^dagger b_{j_k}`` (species kappa) times ``b_{i_g}^dagger b_{j_g}`` (species gamma)."""
    if kappa == gamma:
        raise ValueError("inter-species chain needs two distinct species")
    mid = _species_apply(gamma, ((i_g, 1), (j_g, -1)), amps, space)
    return _species_apply(kappa, ((i_k, 1), (j_k, -1)), mid, space)


class SpeciesOperators:
    """Sparse one- and two-body operator data of one species space.

    ``stack`` is the vertical stack of all ``E_pq = b_p^dagger b_q`` as a
    ``(M*M*n, n)`` CSR matrix, ordered by ``p*M + q``; ``cat`` is the
    horizontal concatenation ``[E_00, E_01, ...]``. The species Hamiltonian
    for orbital-basis integrals ``h`` and ``v`` is assembled from cached
    sparsity patterns in :meth:`hamiltonian`.
    """

    def __init__(self, space: SpeciesSpace):
        self.space = space
        n = len(space)
        m = space.n_orbitals
        self.n = n
        self.m = m
        rows, cols, vals = [], [], []
        for p in range(m):
            for q in range(m):
                dst, src, fac = space.one_body_table(p, q)
                rows.append(dst + (p * m + q) * n)
                cols.append(src)
                vals.append(fac)
        rows_a = np.concatenate(rows)
        cols_a = np.concatenate(cols)
        vals_a = np.concatenate(vals)
        self.stack = sp.csr_matrix((vals_a, (rows_a, cols_a)), shape=(m * m * n, n))
        pair = rows_a // n
        self.cat = sp.csr_matrix((vals_a, (rows_a % n, cols_a + pair * n)), shape=(n, m * m * n))
        self._one = (rows_a % n, cols_a, pair, vals_a)

    @cached_property
    def _pattern(self):
        n, m = self.n, self.m
        dst1, src1, idx1, fac1 = self._one
        dst2, src2, idx2, fac2 = [], [], [], []
        for p, r, q, s in itertools.product(range(m), repeat=4):
            d, s_, f = self.space.two_body_table(p, r, s, q)
            dst2.append(d)
            src2.append(s_)
            idx2.append(np.full(d.shape, ((p * m + r) * m + q) * m + s))
            fac2.append(f)
        dst2 = np.concatenate(dst2)
        src2 = np.concatenate(src2)
        idx2 = np.concatenate(idx2)
        fac2 = np.concatenate(fac2)
        keys = np.concatenate([dst1 * n + src1, dst2 * n + src2])
        uniq, inverse = np.unique(keys, return_inverse=True)
        nnz = uniq.size
        inv1 = inverse[: dst1.size]
        inv2 = inverse[dst1.size:]
        g1 = sp.csr_matrix((fac1, (inv1, idx1)), shape=(nnz, m * m))
        g2 = sp.csr_matrix((fac2, (inv2, idx2)), shape=(nnz, m**4))
        rows = uniq // n
        cols = uniq % n
        indptr = np.zeros(n + 1, dtype=np.int64)
        np.add.at(indptr, rows + 1, 1)
        indptr = np.cumsum(indptr)
        # keys are sorted, so the pattern is canonical; new values are swapped in without re-validation
        template = sp.csr_matrix((np.zeros(nnz), cols, indptr), shape=(n, n))
        return g1, g2, template

    def hamiltonian(self, h: np.ndarray, v: np.ndarray | None) -> sp.csr_matrix:
        """Sparse matrix of ``sum h[p,q] E_pq + 1/2 sum v[p,r,q,s] b_p^+ b_r^+ b_s b_q``."""
        g1, g2, template = self._pattern
        vals = g1 @ np.asarray(h).reshape(-1)
        if v is not None:
            vals = vals + g2 @ (0.5 * np.asarray(v).reshape(-1))
        out = template.copy()
        out.data = vals
        return out


class AugmentedSpace:
    """A restricted product space embedded in its single-excitation closure.

    Every species list is extended by the next excitation block (general
    scheme, ``nmax + 1``) so that one-body images of in-space states and the
    out-of-space components needed by the orbital-rotation equations are
    represented exactly. ``embed`` gives the flat positions of the base
    configurations inside the closure.
    """

    def __init__(self, base: ConfigSpace):
        self.base = base
        full_species = []
        local_embed = []
        for s in base.species:
            spec_c = s.spec.closure(s.n_particles)
            sc = s if spec_c == s.spec else SpeciesSpace(spec_c, s.n_particles)
            idx = sc.lookup(s.occupations)
            if (idx < 0).any():
                raise RuntimeError("closure does not contain the base space")
            full_species.append(sc)
            local_embed.append(idx)
        self.full = ConfigSpace(full_species)
        self.local_embed = local_embed
        grids = np.meshgrid(*local_embed, indexing="ij")
        self.embed = np.ravel_multi_index([g.ravel() for g in grids], self.full.shape)
        self.in_space = np.zeros(self.full.product_size, dtype=bool)
        self.in_space[self.embed] = True
        self.ops = [SpeciesOperators(s) for s in full_species]
        self.trivial = self.full.product_size == base.product_size

    @property
    def n_species(self) -> int:
        return self.base.n_species

    def lift(self, amps: np.ndarray) -> np.ndarray:
        """Base amplitude vector -> closure tensor (zeros outside the base)."""
        out = np.zeros(self.full.product_size, dtype=np.result_type(amps, 1j))
        out[self.embed] = amps
        return out.reshape(self.full.shape)

    def restrict(self, tensor: np.ndarray) -> np.ndarray:
        """Closure tensor -> base amplitude vector (projection)."""
        return np.asarray(tensor).reshape(-1)[self.embed]

    @cached_property
    def outside_masks(self) -> list[np.ndarray]:
        """Per species: closure configurations with only that species outside its base list."""
        inside = []
        for s, e in zip(self.full.species, self.local_embed):
            m = np.zeros(len(s), dtype=bool)
            m[e] = True
            inside.append(m)
        masks = []
        for kappa in range(self.n_species):
            parts = [~inside[g] if g == kappa else inside[g] for g in range(self.n_species)]
            mask = parts[0]
            for p in parts[1:]:
                mask = np.multiply.outer(mask, p)
            masks.append(np.asarray(mask, dtype=bool).reshape(self.full.shape))
        return masks
