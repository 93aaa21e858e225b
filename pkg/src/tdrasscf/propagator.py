"""Time stepping: Adams-Bashforth-Moulton predictor-corrector in real and imaginary time.

The state is packed into one complex vector (amplitudes followed by every
species' orbital grid values) and advanced with a fixed step. The first
``order - 1`` steps use classical fourth-order Runge-Kutta to fill the
derivative history.

Imaginary-time relaxation renormalizes the amplitudes after every step and
re-orthonormalizes a species' orbitals symmetrically when their Gram matrix
drifts beyond ``ortho_tol``; the induced orbital change is compensated on
the amplitudes to first order. Convergence is declared when two successive
step energies differ by less than ``energy_tol``.
"""

from __future__ import annotations

import logging
import math
from collections import deque
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .densities import one_body_images
from .eom import EomEvaluator, Mode, WaveFunction
from .fockspace import ConfigSpace, RasSpec
from .grid import DvrGrid
from .model import HamiltonianTerms, HimModel

__all__ = [
    "PropagationSettings",
    "TraceRecord",
    "PropagationResult",
    "DivergenceError",
    "NumericalAbortError",
    "adams_coefficients",
    "abm_step",
    "rk4_step",
    "AbmIntegrator",
    "relax",
    "propagate_real",
    "initial_guess",
    "lowdin_orthonormalize",
    "write_checkpoint",
    "read_checkpoint",
]

log = logging.getLogger(__name__)

CHECKPOINT_SCHEMA = 1


class DivergenceError(RuntimeError):
    """Imaginary-time energy kept increasing."""

    def __init__(self, message: str, trace=None):
        super().__init__(message)
        self.trace = trace or []


class NumericalAbortError(RuntimeError):
    """The state became non-finite."""

    def __init__(self, message: str, trace=None):
        super().__init__(message)
        self.trace = trace or []


@dataclass
class PropagationSettings:
    """Step control.

    Attributes
    ----------
    mode : Mode
        Real or imaginary time.
    dt : float
        Fixed step (``d tau`` in imaginary time).
    max_steps : int
        Hard cap on the number of steps.
    energy_tol : float
        Convergence threshold on successive step energies (imaginary time).
    ortho_tol : float
        Orthonormality deviation that triggers symmetric re-orthonormalization.
    order : int
        Adams method order (history depth).
    eps : float
        Regularization scale for density inverses.
    t_final : float or None
        End time of a real-time run; ``max_steps`` applies when ``None``.
    min_steps : int
        Steps taken before the convergence test is armed.
    divergence_patience : int
        Consecutive steps with the energy more than ``divergence_tol`` above the
        lowest energy seen so far that abort a relaxation.
    trace_every : int
        Record every ``trace_every``-th step (first and last are always kept).
    """

    mode: Mode = Mode.IMAGINARY
    dt: float = 1e-3
    max_steps: int = 200_000
    energy_tol: float = 1e-13
    ortho_tol: float = 1e-10
    order: int = 4
    eps: float = 1e-8
    t_final: float | None = None
    min_steps: int = 1
    divergence_patience: int = 50
    divergence_tol: float = 1e-10
    trace_every: int = 1

    def __post_init__(self) -> None:
        self.mode = Mode.parse(self.mode)
        if not (self.dt > 0 and math.isfinite(self.dt)):
            raise ValueError(f"dt must be positive, got {self.dt}")
        if not self.energy_tol > 0:
            raise ValueError(f"energy_tol must be positive, got {self.energy_tol}")
        if not self.ortho_tol > 0:
            raise ValueError(f"ortho_tol must be positive, got {self.ortho_tol}")
        if int(self.order) != self.order or not 1 <= self.order <= 8:
            raise ValueError(f"order must be an integer in 1..8, got {self.order}")
        if self.max_steps < 0:
            raise ValueError("max_steps must be non-negative")
        if self.trace_every < 1:
            raise ValueError("trace_every must be >= 1")
        if self.divergence_patience < 1:
            raise ValueError("divergence_patience must be >= 1")
        if not self.divergence_tol >= 0:
            raise ValueError(f"divergence_tol must be non-negative, got {self.divergence_tol}")


@dataclass
class TraceRecord:
    step: int
    time: float
    energy: float
    norm: float
    ortho_dev: float
    eta_max: float = 0.0
    residual: float = 0.0


@dataclass
class PropagationResult:
    wavefunction: WaveFunction
    trace: list
    converged: bool
    steps: int
    energy: float


@lru_cache(maxsize=None)
def _adams_weights(order: int, implicit: bool) -> tuple[Fraction, ...]:
    """Weights ``b_j`` of an Adams formula, ``y_{n+1} = y_n + h sum_j b_j f_{n+1-j}`` (implicit) or ``f_{n-j}``."""
    # integrate Lagrange basis polynomials exactly with fractions
    nodes = [Fraction(1 - j) for j in range(order)] if implicit else [Fraction(-j) for j in range(order)]
    weights = []
    for j, xj in enumerate(nodes):
        poly = [Fraction(1)]  # coefficients, lowest degree first
        denom = Fraction(1)
        for k, xk in enumerate(nodes):
            if k == j:
                continue
            poly = [Fraction(0)] + poly
            for d in range(len(poly) - 1):
                poly[d] -= xk * poly[d + 1]
            denom *= xj - xk
        integral = sum(c / (d + 1) for d, c in enumerate(poly))  # over [0, 1]
        weights.append(integral / denom)
    return tuple(weights)


def adams_coefficients(order: int) -> tuple[np.ndarray, np.ndarray]:
    """Predictor (explicit) and corrector (implicit) weights of the given order."""
    ab = np.array([float(w) for w in _adams_weights(order, implicit=False)])
    am = np.array([float(w) for w in _adams_weights(order, implicit=True)])
    return ab, am


def rk4_step(y: np.ndarray, f: Callable, dt: float, f0: np.ndarray | None = None) -> np.ndarray:
    k1 = f(y) if f0 is None else f0
    k2 = f(y + 0.5 * dt * k1)
    k3 = f(y + 0.5 * dt * k2)
    k4 = f(y + dt * k3)
    return y + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)


def abm_step(y: np.ndarray, f: Callable, dt: float, history: deque, order: int = 4) -> tuple[np.ndarray, np.ndarray]:
    """One predict-evaluate-correct-evaluate step.

    ``history`` holds derivatives at the most recent points, newest first,
    with ``history[0] = f(y)``; it must contain ``order`` entries (fewer
    entries trigger a Runge-Kutta step). The new derivative is pushed to the
    front. Returns ``(y_new, f(y_new))``.
    """
    if len(history) < order:
        y_new = rk4_step(y, f, dt, history[0] if history else None)
        f_new = f(y_new)
    else:
        ab, am = adams_coefficients(order)
        pred = y + dt * sum(b * history[j] for j, b in enumerate(ab))
        f_pred = f(pred)
        corr_terms = am[0] * f_pred + sum(am[j] * history[j - 1] for j in range(1, order))
        y_new = y + dt * corr_terms
        f_new = f(y_new)
    history.appendleft(f_new)
    while len(history) > order:
        history.pop()
    return y_new, f_new


class AbmIntegrator:
    """Fixed-step Adams integrator for a vector ODE ``dy/dt = f(y)``."""

    def __init__(self, f: Callable, dt: float, order: int = 4):
        self.f = f
        self.dt = dt
        self.order = order
        self.history: deque = deque()
        self._ab, self._am = adams_coefficients(order)

    def reset(self) -> None:
        self.history.clear()

    def step(self, y: np.ndarray) -> np.ndarray:
        if not self.history:
            self.history.appendleft(self.f(y))
        y_new, _ = abm_step(y, self.f, self.dt, self.history, self.order)
        return y_new

    def integrate(self, y0: np.ndarray, n_steps: int) -> np.ndarray:
        y = np.array(y0, dtype=complex if np.iscomplexobj(y0) else float)
        for _ in range(n_steps):
            y = self.step(y)
        return y


def lowdin_orthonormalize(wf: WaveFunction, space: ConfigSpace, species: Sequence[int] | None = None) -> WaveFunction:
    """Symmetric re-orthonormalization with first-order amplitude compensation.

    With ``S`` the orbital Gram matrix, new orbitals are ``phi' = S^{-1/2} phi``
    (as rows) and the old creators are ``b_i^+ = sum_j b'_j^+ (S^{1/2})[j, i]``,
    so the amplitudes pick up ``(1 + sum (S^{1/2} - 1)[j, i] E_ji) C``.
    """
    aug = space.augmented
    species = range(len(wf.orbitals)) if species is None else species
    out = wf.copy()
    for kappa in species:
        phi = out.orbitals[kappa]
        s = phi.conj() @ phi.T
        vals, vecs = np.linalg.eigh(s)
        if not vals.min() > 0:
            raise ValueError(f"orbitals of species {kappa} are linearly dependent (smallest Gram eigenvalue {vals.min():.3g})")
        s_half = (vecs * np.sqrt(vals)) @ vecs.conj().T
        s_mhalf = (vecs / np.sqrt(vals)) @ vecs.conj().T
        # new rows: phi'_j = sum_i phi_i T[i, j], T = S^{-1/2}
        out.orbitals[kappa] = s_mhalf.T @ phi
        delta = s_half - np.eye(s.shape[0])
        tensor = aug.lift(out.amps)
        images = one_body_images(aug, tensor, kappa)
        out.amps = out.amps + aug.restrict(delta.reshape(-1) @ images)
    return out


def _record(step, time, energy, wf, derivs) -> TraceRecord:
    """Trace entry; ``residual`` is the norm of the full derivative (zero at a stationary point)."""
    eta_max = max((float(np.abs(e).max()) if e.size else 0.0) for e in derivs.eta)
    residual = float(np.linalg.norm(derivs.pack()))
    return TraceRecord(
        step=step, time=time, energy=energy, norm=wf.norm, ortho_dev=wf.ortho_deviation(),
        eta_max=eta_max, residual=residual,
    )


def _run(
    initial: WaveFunction,
    space: ConfigSpace,
    terms: HamiltonianTerms,
    settings: PropagationSettings,
    callback: Callable | None = None,
) -> PropagationResult:
    mode = settings.mode
    evaluator = EomEvaluator(space, terms, mode, settings.eps)
    template = initial.copy()
    last = {}

    def f(y):
        wf = WaveFunction.unpack(y, template)
        d = evaluator(wf)
        last["d"] = d
        return d.pack()

    wf = initial.copy()
    if mode is Mode.IMAGINARY:
        wf.amps = wf.amps / wf.norm
    if wf.ortho_deviation() > settings.ortho_tol:
        wf = lowdin_orthonormalize(wf, space)
    y = wf.pack()
    history: deque = deque()
    history.appendleft(f(y))
    d0 = last["d"]
    energy = d0.energy
    trace = [_record(0, 0.0, energy, wf, d0)]
    if settings.t_final is not None and mode is Mode.REAL:
        n_steps = int(round(settings.t_final / settings.dt))
    else:
        n_steps = settings.max_steps
    converged = False
    increases = 0
    lowest = energy
    step = 0
    for step in range(1, n_steps + 1):
        # overflow in a blowing-up step is reported by the finiteness check below
        with np.errstate(over="ignore", invalid="ignore"):
            y, _ = abm_step(y, f, settings.dt, history, settings.order)
        d = last["d"]
        if not np.all(np.isfinite(y)) or not math.isfinite(d.energy):
            raise NumericalAbortError(f"non-finite state at step {step}", trace)
        wf = WaveFunction.unpack(y, template)
        adjusted = False
        if mode is Mode.IMAGINARY:
            wf.amps = wf.amps / wf.norm
            adjusted = True
        dev = wf.ortho_deviation()
        if dev > settings.ortho_tol:
            try:
                wf = lowdin_orthonormalize(wf, space)
            except ValueError as exc:
                raise NumericalAbortError(f"step {step}: {exc}", trace) from exc
            adjusted = True
        if adjusted:
            y = wf.pack()
        new_energy = d.energy
        time = step * settings.dt
        if step % settings.trace_every == 0:
            trace.append(_record(step, time, new_energy, wf, d))
        if callback is not None:
            callback(step, time, new_energy, wf)
        if mode is Mode.IMAGINARY:
            change = new_energy - energy
            lowest = min(lowest, new_energy)
            if step > settings.order and new_energy - lowest > settings.divergence_tol:
                increases += 1
                if increases >= settings.divergence_patience:
                    raise DivergenceError(
                        f"energy stayed above its minimum {lowest:.17g} for {increases} steps "
                        f"(now {new_energy:.17g})",
                        trace,
                    )
            else:
                increases = 0
            energy = new_energy
            if step >= settings.min_steps and abs(change) < settings.energy_tol:
                converged = True
                break
        else:
            energy = new_energy
    if trace[-1].step != step:
        trace.append(_record(step, step * settings.dt, energy, wf, last["d"]))
    if mode is Mode.REAL:
        converged = True
    return PropagationResult(wavefunction=wf, trace=trace, converged=converged, steps=step, energy=energy)


def relax(
    initial: WaveFunction,
    space: ConfigSpace,
    terms: HamiltonianTerms,
    settings: PropagationSettings | None = None,
    callback: Callable | None = None,
) -> PropagationResult:
    """Imaginary-time relaxation to the lowest state of the restricted ansatz."""
    settings = PropagationSettings() if settings is None else settings
    if settings.mode is not Mode.IMAGINARY:
        settings = PropagationSettings(**{**settings.__dict__, "mode": Mode.IMAGINARY})
    return _run(initial, space, terms, settings, callback)


def propagate_real(
    initial: WaveFunction,
    space: ConfigSpace,
    terms: HamiltonianTerms,
    settings: PropagationSettings | None = None,
    callback: Callable | None = None,
) -> PropagationResult:
    """Real-time propagation (no renormalization, so norm drift is observable)."""
    settings = PropagationSettings(mode=Mode.REAL) if settings is None else settings
    if settings.mode is not Mode.REAL:
        settings = PropagationSettings(**{**settings.__dict__, "mode": Mode.REAL})
    return _run(initial, space, terms, settings, callback)


def initial_guess(terms: HamiltonianTerms, space: ConfigSpace) -> WaveFunction:
    """Lowest one-body eigenvectors as orbitals, all weight on the condensed configuration."""
    orbitals = []
    for kappa, s in enumerate(space.species):
        h = terms.h[kappa]
        vals, vecs = np.linalg.eigh(0.5 * (h + h.conj().T))
        phi = vecs[:, : s.n_orbitals].T.astype(complex)
        # fix the sign so that each orbital's largest component is positive
        for row in phi:
            row *= np.sign(row[np.argmax(np.abs(row))].real) or 1.0
        orbitals.append(phi)
    amps = np.zeros(space.product_size, dtype=complex)
    amps[space.reference_index()] = 1.0
    return WaveFunction(amps, orbitals)


# ----------------------------------------------------------------------------
# checkpoints


def _fmt(z: complex) -> str:
    return f"{z.real:.17g} {z.imag:.17g}"


def write_checkpoint(
    path: str | Path,
    wf: WaveFunction,
    space: ConfigSpace,
    model: HimModel | None = None,
    grid: DvrGrid | None = None,
    step: int = 0,
    time: float = 0.0,
) -> None:
    """Write a text checkpoint.

    Layout: ``#``-prefixed header lines (``key = value``), then one line per
    amplitude (flat row-major order) and one line per orbital grid value
    (species, then orbital, then grid point), each ``real imag`` with 17
    significant digits.
    """
    lines = [f"# schema = {CHECKPOINT_SCHEMA}", f"# species = {space.n_species}", f"# step = {step}", f"# time = {time:.17g}"]
    for kappa, s in enumerate(space.species):
        sp_ = s.spec
        lines.append(
            f"# ras.{kappa} = m1={sp_.m1} m2={sp_.m2} scheme={sp_.scheme.value} nmax={sp_.nmax} particles={s.n_particles}"
        )
    if model is not None:
        lines.append(f"# model.omega = {model.omega:.17g}")
        lines.append("# model.masses = " + " ".join(f"{m:.17g}" for m in model.masses))
        lines.append("# model.lambda_intra = " + " ".join(f"{m:.17g}" for m in model.lambda_intra))
        lines.append("# model.lambda_inter = " + " ".join(f"{m:.17g}" for m in np.asarray(model.lambda_inter).ravel()))
    if grid is not None:
        lines.append(f"# grid = n={grid.n} xmin={grid.xmin:.17g} xmax={grid.xmax:.17g}")
    lines.append(f"# amplitudes = {wf.amps.size}")
    lines.append("# orbitals = " + " ".join(f"{o.shape[0]}x{o.shape[1]}" for o in wf.orbitals))
    lines.extend(_fmt(z) for z in wf.amps)
    for o in wf.orbitals:
        lines.extend(_fmt(z) for z in o.ravel())
    Path(path).write_text("\n".join(lines) + "\n")


def read_checkpoint(path: str | Path) -> tuple[WaveFunction, dict]:
    """Read a checkpoint written by :func:`write_checkpoint`; returns ``(wf, header)``."""
    header: dict[str, str] = {}
    values: list[complex] = []
    for line in Path(path).read_text().splitlines():
        if line.startswith("#"):
            key, _, val = line[1:].partition("=")
            header[key.strip()] = val.strip()
        elif line.strip():
            re_, im_ = line.split()
            values.append(complex(float(re_), float(im_)))
    if int(header.get("schema", -1)) != CHECKPOINT_SCHEMA:
        raise ValueError(f"unsupported checkpoint schema {header.get('schema')!r}")
    n_amp = int(header["amplitudes"])
    shapes = [tuple(int(x) for x in s.split("x")) for s in header["orbitals"].split()]
    arr = np.array(values, dtype=complex)
    expected = n_amp + sum(a * b for a, b in shapes)
    if arr.size != expected:
        raise ValueError(f"checkpoint holds {arr.size} values, expected {expected}")
    amps = arr[:n_amp].copy()
    orbitals = []
    pos = n_amp
    for shape in shapes:
        size = shape[0] * shape[1]
        orbitals.append(arr[pos:pos + size].reshape(shape).copy())
        pos += size
    return WaveFunction(amps, orbitals), header


def ras_specs_from_header(header: dict) -> list[tuple[RasSpec, int]]:
    out = []
    for kappa in range(int(header["species"])):
        fields = dict(item.split("=") for item in header[f"ras.{kappa}"].split())
        spec = RasSpec(int(fields["m1"]), int(fields["m2"]), fields["scheme"], int(fields["nmax"]))
        out.append((spec, int(fields["particles"])))
    return out
