"""Builders for cascaded (one-way coupled) master equations.

A cascade is a chain of stages, upstream first. For a chain of modes
c_1 -> c_2 -> ... with output rates gamma_i the generator is

    d rho/dt = -i [H_sys + H_casc, rho] + D[sum_i sqrt(gamma_i) c_i] rho,
    H_casc = (i/2) sum_{i<j} sqrt(gamma_i gamma_j) (c_i^dag c_j - c_j^dag c_i).

A stage holding M parallel branches (the fictitious cavities behind an
M-port splitter) turns this into an average over the M single-branch
chains: M jump operators scaled by 1/sqrt(M) and H_casc averaged over the
branches.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .hilbert import HilbertSpace, Operator, embed, lowering_op
from .lindblad import CollapseTerm, HamiltonianTerm, MasterEquation

__all__ = [
    "CascadeError",
    "SubsystemSpec",
    "CascadeSpec",
    "Branch",
    "cascade_from_operators",
    "cascade_hamiltonian",
    "build_triple_cascade",
    "build_pair_cascade",
    "build_fermionic_cascade",
    "filter_cavity_subsystem",
    "trivial_subsystem",
    "MAX_FICTITIOUS_CAVITIES",
]

MAX_FICTITIOUS_CAVITIES = 10


class CascadeError(ValueError):
    pass


@dataclass(frozen=True)
class SubsystemSpec:
    """One link of the chain, described on its own local space.

    ``lowering`` is the mode that couples to the channel; ``hamiltonian``
    holds local terms (possibly with time envelopes).
    """

    label: str
    dim: int
    gamma: float
    lowering: Operator
    hamiltonian: tuple[HamiltonianTerm, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "hamiltonian", tuple(self.hamiltonian))
        if self.gamma < 0:
            raise CascadeError(f"subsystem {self.label}: negative rate {self.gamma}")
        if self.lowering.space.total_dim != self.dim:
            raise CascadeError(f"subsystem {self.label}: lowering operator dimension "
                               f"{self.lowering.space.total_dim} != {self.dim}")
        for term in self.hamiltonian:
            if term.op.space.total_dim != self.dim:
                raise CascadeError(f"subsystem {self.label}: Hamiltonian term has wrong dimension")


@dataclass(frozen=True)
class CascadeSpec:
    """Subsystems upstream first: s, f_1 .. f_M, t."""

    subsystems: tuple[SubsystemSpec, ...]
    M: int = 1

    def __post_init__(self):
        object.__setattr__(self, "subsystems", tuple(self.subsystems))
        if self.M < 1:
            raise CascadeError("M must be at least 1")
        if len(self.subsystems) != self.M + 2:
            raise CascadeError(f"expected {self.M + 2} subsystems (s, {self.M} x f, t), "
                               f"got {len(self.subsystems)}")

    @property
    def space(self) -> HilbertSpace:
        return HilbertSpace([s.dim for s in self.subsystems])


@dataclass(frozen=True)
class Branch:
    """A coupled mode already acting on the full space."""

    gamma: float
    op: Operator


def cascade_hamiltonian(chain: Sequence[Branch]) -> np.ndarray:
    """(i/2) sum_{i<j} sqrt(g_i g_j) (c_i^dag c_j - h.c.) for one chain."""
    d = chain[0].op.space.total_dim
    x = np.zeros((d, d), dtype=complex)
    for up, down in itertools.combinations(chain, 2):
        x += math.sqrt(up.gamma * down.gamma) * (up.op.matrix.conj().T @ down.op.matrix)
    return 0.5j * (x - x.conj().T)


def cascade_from_operators(space: HilbertSpace, stages: Sequence[Sequence[Branch]],
                           h_terms: Sequence[HamiltonianTerm] = ()) -> MasterEquation:
    """Cascade master equation from full-space mode operators.

    ``stages`` lists the chain upstream first; a stage with several branches
    is an M-port split. Every path through the stages gets weight
    1 / (number of paths), which for one split stage reproduces the
    (1/M) sum_k D[...] form and the (1/M)-averaged H_casc.
    """
    stages = [list(st) for st in stages]
    if any(not st for st in stages):
        raise CascadeError("empty stage")
    paths = list(itertools.product(*stages))
    w = 1.0 / len(paths)
    d = space.total_dim
    h_casc = np.zeros((d, d), dtype=complex)
    collapses = []
    for path in paths:
        h_casc += w * cascade_hamiltonian(path)
        jump = sum(math.sqrt(b.gamma) * b.op.matrix for b in path)
        collapses.append(CollapseTerm(Operator(space, math.sqrt(w) * jump)))
    terms = list(h_terms)
    if np.any(h_casc):
        # enforce exact Hermiticity against rounding in the sum
        terms.append(HamiltonianTerm(Operator(space, 0.5 * (h_casc + h_casc.conj().T))))
    return MasterEquation(space, terms, collapses)


def _embedded(spec: CascadeSpec) -> tuple[list[Branch], list[HamiltonianTerm]]:
    space = spec.space
    branches = []
    h_terms = []
    for pos, sub in enumerate(spec.subsystems):
        branches.append(Branch(sub.gamma, embed(sub.lowering, space, pos)))
        for term in sub.hamiltonian:
            h_terms.append(HamiltonianTerm(embed(term.op, space, pos), term.envelope))
    return branches, h_terms


def build_triple_cascade(spec: CascadeSpec) -> MasterEquation:
    """s -> f -> t with a single composite jump operator."""
    if spec.M != 1 or len(spec.subsystems) != 3:
        raise CascadeError("triple cascade needs exactly three subsystems (s, f, t)")
    branches, h_terms = _embedded(spec)
    return cascade_from_operators(spec.space, [[b] for b in branches], h_terms)


def build_pair_cascade(s: SubsystemSpec, t: SubsystemSpec) -> MasterEquation:
    """Dispersionless two-system cascade s -> t."""
    space = HilbertSpace([s.dim, t.dim])
    h_terms = []
    branches = []
    for pos, sub in enumerate((s, t)):
        branches.append([Branch(sub.gamma, embed(sub.lowering, space, pos))])
        h_terms += [HamiltonianTerm(embed(term.op, space, pos), term.envelope)
                    for term in sub.hamiltonian]
    return cascade_from_operators(space, branches, h_terms)


def build_fermionic_cascade(spec: CascadeSpec, allow_large: bool = False) -> MasterEquation:
    """s -> (M parallel fictitious cavities) -> t.

    Implements

        d rho/dt = -i [H_sys + H_casc, rho]
                   + (1/M) sum_k D[sqrt(g_s) c_s + sqrt(g_f) c_k + sqrt(g_t) c_t] rho

    with H_casc the branch average. Note that in this form each fictitious
    cavity decays at g_f / M, so a per-cavity linewidth gamma is obtained by
    passing g_f = M * gamma (see :func:`dispcascade.transfer.build_transfer_model`).
    """
    M = spec.M
    if M > MAX_FICTITIOUS_CAVITIES and not allow_large:
        raise CascadeError(f"M = {M} exceeds {MAX_FICTITIOUS_CAVITIES}; pass allow_large=True")
    for sub in spec.subsystems[1:-1]:
        if sub.dim != 2:
            raise CascadeError(f"fictitious cavity {sub.label} must have dimension 2 (occupation 0/1)")
    branches, h_terms = _embedded(spec)
    stages = [[branches[0]], branches[1:-1], [branches[-1]]]
    return cascade_from_operators(spec.space, stages, h_terms)


def filter_cavity_subsystem(delta_f: float, gamma_f: float, label: str = "f",
                            dim: int = 2) -> SubsystemSpec:
    """Fictitious cavity in the frame rotating at the carrier: H_f = -delta_f c^dag c."""
    c = lowering_op(dim)
    h = -delta_f * (c.dag @ c)
    terms = (HamiltonianTerm(h),) if delta_f != 0 else ()
    return SubsystemSpec(label, dim, gamma_f, c, terms)


def trivial_subsystem(label: str = "f") -> SubsystemSpec:
    """One-dimensional placeholder: an uncoupled slot with a zero mode."""
    zero = Operator(HilbertSpace([1]), np.zeros((1, 1)))
    return SubsystemSpec(label, 1, 0.0, zero)
