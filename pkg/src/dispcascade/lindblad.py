"""Time-dependent Lindblad master equations and their integration.

The generator is

    d rho/dt = -i [H(t), rho] + sum_c D[c] rho,
    D[c] rho = c rho c^dag - (c^dag c rho + rho c^dag c) / 2,

with H(t) a sum of static operators times real envelopes. Integration is
classical RK4 with step-doubling error control; nothing is renormalised, so
the trace drift of the returned trajectory is an honest accuracy signal.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .hilbert import DensityMatrix, HilbertError, HilbertSpace, Operator, min_eigenvalue

__all__ = [
    "HamiltonianTerm",
    "CollapseTerm",
    "MasterEquation",
    "StepControl",
    "Trajectory",
    "IntegrationError",
    "dissipator",
    "rhs",
    "integrate",
]

log = logging.getLogger(__name__)

Envelope = Callable[[float], float]


class IntegrationError(RuntimeError):
    def __init__(self, message: str, t: float):
        super().__init__(f"{message} (t = {t:.12g})")
        self.t = t


@dataclass(frozen=True)
class HamiltonianTerm:
    op: Operator
    envelope: Envelope | None = None

    def __post_init__(self):
        if not self.op.is_hermitian(1e-10):
            raise HilbertError("Hamiltonian term must be Hermitian")

    def coefficient(self, t: float) -> float:
        return 1.0 if self.envelope is None else float(self.envelope(t))


@dataclass(frozen=True)
class CollapseTerm:
    """Jump operator with its rate already folded in (e.g. sqrt(gamma) c)."""

    op: Operator


@dataclass(frozen=True)
class MasterEquation:
    space: HilbertSpace
    h_terms: tuple[HamiltonianTerm, ...] = ()
    c_terms: tuple[CollapseTerm, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "h_terms", tuple(self.h_terms))
        object.__setattr__(self, "c_terms", tuple(self.c_terms))
        for term in (*self.h_terms, *self.c_terms):
            if term.op.space != self.space:
                raise HilbertError(
                    f"term on space {term.op.space.dims} in master equation on {self.space.dims}"
                )

    def hamiltonian(self, t: float) -> np.ndarray:
        d = self.space.total_dim
        h = np.zeros((d, d), dtype=complex)
        for term in self.h_terms:
            h += term.coefficient(t) * term.op.matrix
        return h

    def max_collapse_rate(self) -> float:
        return max((np.linalg.norm(c.op.matrix, 2) ** 2 for c in self.c_terms), default=0.0)

    def max_hamiltonian_norm(self, times: Sequence[float] = ()) -> float:
        """Upper bound on ||H(t)|| using |envelope| sampled at ``times``."""
        total = 0.0
        for term in self.h_terms:
            norm = np.linalg.norm(term.op.matrix, 2)
            if term.envelope is None:
                total += norm
            elif len(times):
                total += norm * max(abs(term.coefficient(t)) for t in times)
            else:
                total += norm
        return total

    def compile(self) -> "_Generator":
        return _Generator(self)


def dissipator(a: Operator | np.ndarray, rho: np.ndarray) -> np.ndarray:
    """D[a] rho."""
    a = a.matrix if isinstance(a, Operator) else np.asarray(a)
    rho = np.asarray(rho)
    if a.shape != rho.shape:
        raise HilbertError(f"shape mismatch: {a.shape} vs {rho.shape}")
    ad = a.conj().T
    ada = ad @ a
    return a @ rho @ ad - 0.5 * (ada @ rho + rho @ ada)


def rhs(me: MasterEquation, t: float, rho: np.ndarray) -> np.ndarray:
    """Generator applied to ``rho``, term by term (reference implementation)."""
    rho = np.asarray(rho)
    n = me.space.total_dim
    if rho.shape != (n, n):
        raise HilbertError(f"state shape {rho.shape} does not match space dimension {n}")
    h = me.hamiltonian(t)
    out = -1j * (h @ rho - rho @ h)
    for c in me.c_terms:
        out += dissipator(c.op.matrix, rho)
    return out


class _Generator:
    """Precomputed form of the generator used inside the integrator.

    Uses the effective non-Hermitian Hamiltonian
    K(t) = H(t) - (i/2) sum c^dag c so that
    L rho = -i (K rho - rho K^dag) + sum c rho c^dag.
    """

    def __init__(self, me: MasterEquation):
        d = me.space.total_dim
        k0 = np.zeros((d, d), dtype=complex)
        self.dynamic: list[tuple[Envelope, np.ndarray]] = []
        for term in me.h_terms:
            if term.envelope is None:
                k0 += term.op.matrix
            else:
                self.dynamic.append((term.envelope, np.array(term.op.matrix)))
        self.jumps = [np.array(c.op.matrix) for c in me.c_terms]
        self.jumps_dag = [j.conj().T for j in self.jumps]
        for j in self.jumps:
            k0 -= 0.5j * (j.conj().T @ j)
        self.k0 = k0

    def __call__(self, t: float, rho: np.ndarray) -> np.ndarray:
        k = self.k0
        if self.dynamic:
            k = k.copy()
            for env, h in self.dynamic:
                k += env(t) * h
        out = -1j * (k @ rho - rho @ k.conj().T)
        for j, jd in zip(self.jumps, self.jumps_dag):
            out += j @ rho @ jd
        return out


@dataclass(frozen=True)
class StepControl:
    """Step-size control for :func:`integrate`.

    ``atol`` is the allowed local error per unit time (max-abs entrywise).
    Set ``fixed_step`` to disable adaptivity entirely.
    """

    atol: float = 1e-10
    h0: float | None = None
    h_min: float = 1e-9
    h_max: float | None = None
    safety: float = 0.9
    max_steps: int = 2_000_000
    fixed_step: float | None = None


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray | None
    expectations: dict[str, np.ndarray] = field(default_factory=dict)
    final: np.ndarray | None = None
    trace_drift: float = 0.0
    herm_drift: float = 0.0
    min_eig: float | None = None
    n_steps: int = 0
    n_rejected: int = 0
    last_error_estimate: float = 0.0

    def state(self, i: int) -> DensityMatrix:
        if self.states is None:
            raise ValueError("trajectory was recorded without states")
        return DensityMatrix(self.states[i], space=[self.states.shape[1]],)


def _rk4(f: Callable[[float, np.ndarray], np.ndarray], t: float, y: np.ndarray, h: float) -> np.ndarray:
    k1 = f(t, y)
    k2 = f(t + 0.5 * h, y + (0.5 * h) * k1)
    k3 = f(t + 0.5 * h, y + (0.5 * h) * k2)
    k4 = f(t + h, y + h * k3)
    return y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _default_h0(me: MasterEquation, t0: float, t1: float) -> float:
    span = t1 - t0
    candidates = [span / 1000.0]
    rate = me.max_collapse_rate()
    if rate > 0:
        candidates.append(1.0 / (50.0 * rate))
    hnorm = me.max_hamiltonian_norm(np.linspace(t0, t1, 257))
    if hnorm > 0:
        candidates.append(1.0 / (50.0 * hnorm))
    return min(candidates)


def integrate(
    me: MasterEquation,
    rho0: DensityMatrix | np.ndarray,
    t0: float,
    t1: float,
    control: StepControl = StepControl(),
    sample_times: Sequence[float] | int | None = 200,
    e_ops: Mapping[str, Operator] | None = None,
    store_states: bool = True,
    check_positivity: bool = False,
) -> Trajectory:
    """Integrate ``me`` from ``t0`` to ``t1``.

    Args:
        me: the master equation.
        rho0: initial state.
        t0, t1: integration window, ``t1 > t0``.
        control: step control; see :class:`StepControl`.
        sample_times: times at which to record the state. An int gives that
            many evenly spaced samples including both ends; ``None`` records
            every accepted step.
        e_ops: optional named observables whose expectations are recorded at
            the sample times.
        store_states: keep the sampled density matrices.
        check_positivity: compute the minimum eigenvalue at every sample
            (diagnostic; costs an eigensolve per sample).

    Returns:
        A :class:`Trajectory`. ``final`` always holds the state at ``t1``.

    Raises:
        IntegrationError: if the controller needs a step below ``h_min``
            or exceeds ``max_steps``.
    """
    if not t1 > t0:
        raise ValueError("t1 must be greater than t0")
    rho = np.array(rho0.matrix if isinstance(rho0, DensityMatrix) else rho0, dtype=complex)
    n = me.space.total_dim
    if rho.shape != (n, n):
        raise HilbertError(f"initial state shape {rho.shape} does not match space dimension {n}")

    every_step = sample_times is None
    if isinstance(sample_times, (int, np.integer)):
        samples = np.linspace(t0, t1, max(int(sample_times), 2))
    elif every_step:
        samples = np.array([t0])
    else:
        samples = np.unique(np.clip(np.asarray(sample_times, dtype=float), t0, t1))
    f = me.compile()
    e_ops = dict(e_ops or {})
    e_mats = {k: np.asarray(v.matrix).T for k, v in e_ops.items()}

    rec_t: list[float] = []
    rec_states: list[np.ndarray] = []
    rec_e: dict[str, list[complex]] = {k: [] for k in e_ops}
    traj = Trajectory(times=np.empty(0), states=None)
    tr0 = np.trace(rho).real

    def record(t: float, y: np.ndarray) -> None:
        rec_t.append(t)
        if store_states:
            rec_states.append(y.copy())
        for k, mt in e_mats.items():
            rec_e[k].append(complex(np.sum(mt * y)))
        if check_positivity:
            ev = min_eigenvalue(y)
            traj.min_eig = ev if traj.min_eig is None else min(traj.min_eig, ev)

    def monitor(y: np.ndarray) -> None:
        traj.trace_drift = max(traj.trace_drift, abs(np.trace(y).real - tr0))
        traj.herm_drift = max(traj.herm_drift, float(np.max(np.abs(y - y.conj().T))))

    t = float(t0)
    next_sample = 0
    if samples[0] <= t0:
        record(t, rho)
        next_sample = 1 if not every_step else len(samples)

    fixed = control.fixed_step is not None
    h = control.fixed_step if fixed else (control.h0 or _default_h0(me, t0, t1))
    h_max = control.h_max or (t1 - t0)
    span_eps = 1e-12 * max(1.0, abs(t1), abs(t0))

    while t < t1 - span_eps:
        if traj.n_steps + traj.n_rejected >= control.max_steps:
            raise IntegrationError("step budget exhausted", t)
        target = t1 if every_step or next_sample >= len(samples) else samples[next_sample]
        h_try = min(h, target - t)
        hits_target = h_try >= target - t - span_eps
        if fixed:
            y_new = _rk4(f, t, rho, h_try)
        else:
            y_full = _rk4(f, t, rho, h_try)
            half = 0.5 * h_try
            y_half = _rk4(f, t, rho, half)
            y_new = _rk4(f, t + half, y_half, half)
            err = float(np.max(np.abs(y_new - y_full))) / 15.0
            allowed = control.atol * h_try
            if err > allowed:
                traj.n_rejected += 1
                factor = max(0.2, control.safety * (allowed / err) ** 0.25)
                h = h_try * factor
                if h < control.h_min:
                    raise IntegrationError(f"required step {h:.3e} below floor {control.h_min:.3e}", t)
                continue
            traj.last_error_estimate = err
            grow = 4.0 if err == 0 else min(4.0, control.safety * (allowed / err) ** 0.25)
            # a step clipped to land on a sample says little about the natural step
            h_next = h if h_try < h else min(h_max, h_try * max(grow, 0.2))
        rho = y_new
        t = target if hits_target else t + h_try
        traj.n_steps += 1
        monitor(rho)
        if not fixed:
            h = h_next
        if every_step:
            record(t, rho)
        elif hits_target and next_sample < len(samples) and target == samples[next_sample]:
            record(t, rho)
            next_sample += 1

    if not rec_t or rec_t[-1] != t:
        record(t, rho)
    traj.times = np.array(rec_t)
    traj.states = np.array(rec_states) if store_states else None
    traj.expectations = {k: np.array(v) for k, v in rec_e.items()}
    traj.final = rho
    log.debug("integrated %d steps (%d rejected), trace drift %.2e",
              traj.n_steps, traj.n_rejected, traj.trace_drift)
    return traj
