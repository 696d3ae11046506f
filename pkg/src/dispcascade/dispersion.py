"""Channel physics: quadratic dispersion and the matched filter cavity.

The channel obeys omega = v k + alpha k**2. Its propagation phase k(omega) L
is approximated near the carrier ``omega_bar`` by reflection off a damped
single-mode cavity (detuning ``delta_f = omega_bar - omega_f``, linewidth
``gamma_f``) plus a linear delay and a constant phase:

    phi_cav(omega) = omega * delay + theta + 2 arctan(2 (omega - omega_f) / gamma_f)

Delay and theta absorb the constant and linear orders; the cavity's two
parameters are chosen so the second and third derivatives agree.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Literal

import numpy as np

__all__ = [
    "ChannelError",
    "NoDispersionError",
    "DispersionTooStrongError",
    "ChannelSpec",
    "FilterCavity",
    "MatchResult",
    "ValidityReport",
    "FeedbackInconsistency",
    "FluxReport",
    "group_velocity",
    "wavenumber",
    "dispersive_phase",
    "cavity_phase",
    "phase_mismatch",
    "mismatch_increment",
    "derivative_targets",
    "cavity_derivatives",
    "match_closed_form",
    "match_exact",
    "phase_residual",
    "validity_report",
    "feedback_match",
    "fermion_flux_check",
    "unit_channel",
]

DEFAULT_THRESHOLD = 10.0
_SMALL_DISPERSION = 1e-12


class ChannelError(ValueError):
    """Invalid channel parameters."""


class NoDispersionError(ChannelError):
    """alpha == 0: the channel is dispersionless and needs no cavity."""


class DispersionTooStrongError(RuntimeError):
    pass


@dataclass(frozen=True)
class ChannelSpec:
    v: float
    alpha: float
    L: float
    omega_bar: float
    delta_omega: float = 0.0

    def __post_init__(self):
        if not self.L > 0:
            raise ChannelError("L must be positive")
        if not self.omega_bar > 0:
            raise ChannelError("omega_bar must be positive")
        if self.delta_omega < 0 or self.alpha < 0 or self.v < 0:
            raise ChannelError("v, alpha and delta_omega must be non-negative")
        if self.v == 0 and self.alpha == 0:
            raise ChannelError("v and alpha cannot both be zero")
        if not self.v**2 + 4 * self.alpha * self.omega_bar > 0:
            raise ChannelError("v^2 + 4 alpha omega_bar must be positive")


@dataclass(frozen=True)
class FilterCavity:
    delta_f: float
    gamma_f: float
    theta: float = 0.0
    delay: float = 0.0

    def __post_init__(self):
        if not self.gamma_f > 0:
            raise ChannelError("cavity linewidth must be positive")

    def omega_f(self, omega_bar: float) -> float:
        return omega_bar - self.delta_f


@dataclass(frozen=True)
class MatchResult:
    cavity: FilterCavity
    method: Literal["closed_form", "exact"]
    residual_d2: float
    residual_d3: float
    iterations: int = 0
    warnings: tuple[str, ...] = ()


def group_velocity(ch: ChannelSpec, omega: float | None = None) -> float:
    """u = sqrt(v^2 + 4 alpha omega), evaluated at the carrier by default."""
    omega = ch.omega_bar if omega is None else omega
    radicand = ch.v**2 + 4 * ch.alpha * omega
    if not radicand > 0:
        raise ChannelError(f"non-positive radicand v^2 + 4 alpha omega = {radicand}")
    return math.sqrt(radicand)


def wavenumber(ch: ChannelSpec, omega):
    """k(omega), the positive root of omega = v k + alpha k^2.

    Uses the rationalised form 2 omega / (v + sqrt(v^2 + 4 alpha omega)),
    which equals (-v + sqrt(...)) / (2 alpha) but does not cancel, and
    switches to omega / v outright when 4 alpha omega / v^2 < 1e-12.
    """
    w = np.asarray(omega, dtype=float)
    if np.any(w <= 0):
        raise ChannelError("frequency must be positive")
    if ch.v > 0 and np.all(4 * ch.alpha * w < _SMALL_DISPERSION * ch.v**2):
        k = w / ch.v
    else:
        k = 2 * w / (ch.v + np.sqrt(ch.v**2 + 4 * ch.alpha * w))
    return float(k) if np.ndim(k) == 0 else k


def dispersive_phase(ch: ChannelSpec, omega):
    return wavenumber(ch, omega) * ch.L


def cavity_phase(cav: FilterCavity, omega, omega_bar: float):
    w = np.asarray(omega, dtype=float)
    omega_f = omega_bar - cav.delta_f
    out = w * cav.delay + cav.theta + 2 * np.arctan(2 * (w - omega_f) / cav.gamma_f)
    return float(out) if np.ndim(out) == 0 else out


def _atan_minus_identity(z):
    """arctan(z) - z without cancellation for small z."""
    z = np.asarray(z, dtype=float)
    z2 = z * z
    series = z * z2 * (-1 / 3 + z2 * (1 / 5 + z2 * (-1 / 7 + z2 / 9)))
    return np.where(np.abs(z) < 1e-2, series, np.arctan(z) - z)


def mismatch_increment(ch: ChannelSpec, cav: FilterCavity, omega):
    """[phi_disp(w) - phi_disp(w0)] - [phi_cav(w) - phi_cav(w0)], w0 = omega_bar.

    Linear and nonlinear parts of both increments are formed in closed form,
    so a matched cavity yields a result accurate to rounding relative to the
    (tiny) mismatch itself rather than to k L.
    """
    w = np.asarray(omega, dtype=float)
    if np.any(w <= 0):
        raise ChannelError("frequency must be positive")
    eps = w - ch.omega_bar
    s0 = group_velocity(ch)
    s1 = np.sqrt(ch.v**2 + 4 * ch.alpha * w)
    g, d = cav.gamma_f, cav.delta_f
    disp_nl = -4 * ch.alpha * ch.L * eps**2 / (s0 * (s0 + s1) ** 2)
    if math.isinf(g):
        # transparent cavity: only the delay line remains
        out = eps * (ch.L / s0 - cav.delay) + disp_nl
        return float(out) if np.ndim(out) == 0 else out
    D = g * g + 4 * d * d
    linear = eps * (ch.L / s0 - cav.delay - 4 * g / D)
    # 2 arctan(2(w - w_f)/g) - 2 arctan(2 d/g) = 2 arctan(z)
    z = 2 * eps * g / (D + 4 * d * eps)
    cav_nl = 2 * _atan_minus_identity(z) - 16 * g * d * eps**2 / (D * (D + 4 * d * eps))
    out = linear + disp_nl - cav_nl
    return float(out) if np.ndim(out) == 0 else out


def phase_mismatch(ch: ChannelSpec, cav: FilterCavity, omega):
    """phi_disp(omega) - phi_cav(omega)."""
    base = dispersive_phase(ch, ch.omega_bar) - cavity_phase(cav, ch.omega_bar, ch.omega_bar)
    return base + mismatch_increment(ch, cav, omega)


def derivative_targets(ch: ChannelSpec) -> tuple[float, float]:
    """(alpha L / u^3, 6 alpha^2 L / u^5): the right-hand targets of the
    second- and third-derivative matching equations."""
    u = group_velocity(ch)
    return ch.alpha * ch.L / u**3, 6 * ch.alpha**2 * ch.L / u**5


def cavity_derivatives(gamma: float, delta: float) -> tuple[float, float, float]:
    """Cavity-side terms of the matching equations.

    Returns (16 g d / D^2, 16 g (12 d^2 - g^2) / D^3, 16 g (12 d^2 + g^2) / D^3)
    with D = g^2 + 4 d^2; the last entry is the natural magnitude scale of
    the third-derivative equation.
    """
    D = gamma**2 + 4 * delta**2
    m2 = 16 * gamma * delta / D**2
    m3 = 16 * gamma * (12 * delta**2 - gamma**2) / D**3
    s3 = 16 * gamma * (12 * delta**2 + gamma**2) / D**3
    return m2, m3, s3


def _residuals(ch: ChannelSpec, gamma: float, delta: float) -> tuple[float, float]:
    t2, t3 = derivative_targets(ch)
    m2, m3, s3 = cavity_derivatives(gamma, delta)
    return abs(m2 - t2) / t2, abs(m3 - t3) / max(s3, t3)


def _complete(ch: ChannelSpec, gamma: float, delta: float) -> tuple[FilterCavity, tuple[str, ...]]:
    """Fix delay and theta so orders 0 and 1 of the phases agree."""
    u = group_velocity(ch)
    delay = ch.L / u - 4 * gamma / (gamma**2 + 4 * delta**2)
    theta = dispersive_phase(ch, ch.omega_bar) - ch.omega_bar * delay - 2 * math.atan(2 * delta / gamma)
    notes = ()
    if delay < 0:
        notes = (f"negative propagation delay {delay:.6g}; absorbed into control timing",)
    return FilterCavity(delta_f=delta, gamma_f=gamma, theta=theta, delay=delay), notes


def match_closed_form(ch: ChannelSpec) -> MatchResult:
    """Leading-order matched cavity: delta_f^2 = sqrt(3) u^3 / (8 L alpha),
    gamma_f^2 = 12 delta_f^2."""
    if ch.alpha == 0:
        raise NoDispersionError("channel is dispersionless; no cavity needed")
    u = group_velocity(ch)
    delta = math.sqrt(math.sqrt(3) * u**3 / (8 * ch.L * ch.alpha))
    gamma = math.sqrt(12) * delta
    cav, notes = _complete(ch, gamma, delta)
    r2, r3 = _residuals(ch, gamma, delta)
    return MatchResult(cav, "closed_form", r2, r3, warnings=notes)


def match_exact(ch: ChannelSpec, max_iter: int = 100, tol: float = 1e-13,
                ceiling: float = 0.1) -> MatchResult:
    """Solve both derivative equations exactly by Newton iteration.

    Works in (ln gamma, ln delta) from the closed-form seed, so both stay
    positive. The second-derivative equation is used in log form, the third
    normalised by its magnitude scale at the seed.

    Raises:
        NoDispersionError: alpha == 0.
        DispersionTooStrongError: alpha / (L u) above ``ceiling`` or no
            convergence within ``max_iter`` iterations.
    """
    seed = match_closed_form(ch)
    u = group_velocity(ch)
    weak = ch.alpha / (ch.L * u)
    if weak > ceiling:
        raise DispersionTooStrongError(
            f"alpha/(L u) = {weak:.3g} exceeds the solvability ceiling {ceiling}")
    t2, t3 = derivative_targets(ch)
    _, _, scale = cavity_derivatives(seed.cavity.gamma_f, seed.cavity.delta_f)
    x = np.log([seed.cavity.gamma_f, seed.cavity.delta_f])

    def system(x):
        g, d = np.exp(x)
        D = g * g + 4 * d * d
        m2, m3, _ = cavity_derivatives(g, d)
        f = np.array([math.log(m2 / t2), (m3 - t3) / scale])
        # d/d(ln g), d/d(ln d)
        j = np.empty((2, 2))
        j[0, 0] = 1 - 4 * g * g / D
        j[0, 1] = 1 - 16 * d * d / D
        j[1, 0] = 16 * g * ((12 * d * d - 3 * g * g) / D**3 - 6 * g * g * (12 * d * d - g * g) / D**4) / scale
        j[1, 1] = 16 * g * (24 * d * d / D**3 - 24 * d * d * (12 * d * d - g * g) / D**4) / scale
        return f, j

    for it in range(1, max_iter + 1):
        f, j = system(x)
        step = np.linalg.solve(j, -f)
        # damp steps that would move either parameter by more than a factor e
        big = np.max(np.abs(step))
        if big > 1:
            step /= big
        x = x + step
        if np.max(np.abs(step)) < tol:
            break
    else:
        raise DispersionTooStrongError(f"Newton matching did not converge in {max_iter} iterations")
    gamma, delta = (float(v) for v in np.exp(x))
    cav, notes = _complete(ch, gamma, delta)
    r2, r3 = _residuals(ch, gamma, delta)
    return MatchResult(cav, "exact", r2, r3, iterations=it, warnings=notes)


def phase_residual(ch: ChannelSpec, cav: FilterCavity, n: float = 2.0, points: int = 401,
                   bandwidth: float | None = None) -> float:
    """Largest |phi_disp - phi_cav| over omega_bar +/- n * delta_omega."""
    bw = ch.delta_omega if bandwidth is None else bandwidth
    w = ch.omega_bar + np.linspace(-n * bw, n * bw, points)
    w = w[w > 0]
    return float(np.max(np.abs(phase_mismatch(ch, cav, w))))


@dataclass(frozen=True)
class ValidityReport:
    """Operational form of the asymptotic validity conditions.

    "X << Y" is taken as X * threshold_factor <= Y; "delta_omega <~ gamma_f"
    as delta_omega <= gamma_f.
    """

    markov_ok: bool
    kL_ok: bool
    weak_dispersion_ok: bool
    bandwidth_ok: bool
    delta_f_over_omega_bar: float
    gamma_f_over_omega_bar: float
    delta_omega_over_omega_bar: float
    kL: float
    alpha_over_Lu: float
    delta_omega_over_gamma_f: float
    tau_p: float
    tau_d: float
    threshold_factor: float

    @property
    def all_ok(self) -> bool:
        return self.markov_ok and self.kL_ok and self.weak_dispersion_ok and self.bandwidth_ok

    def flags(self) -> dict[str, bool]:
        return {"markov_ok": self.markov_ok, "kL_ok": self.kL_ok,
                "weak_dispersion_ok": self.weak_dispersion_ok, "bandwidth_ok": self.bandwidth_ok}

    def to_dict(self) -> dict:
        d = asdict(self)
        d["all_ok"] = self.all_ok
        return d


def validity_report(ch: ChannelSpec, cav: FilterCavity,
                    threshold_factor: float = DEFAULT_THRESHOLD) -> ValidityReport:
    u = group_velocity(ch)
    tf = threshold_factor
    markov = (abs(cav.delta_f) / ch.omega_bar, cav.gamma_f / ch.omega_bar,
              ch.delta_omega / ch.omega_bar)
    kL = dispersive_phase(ch, ch.omega_bar)
    weak = ch.alpha / (ch.L * u)
    bw = ch.delta_omega / cav.gamma_f
    return ValidityReport(
        markov_ok=all(r * tf <= 1 for r in markov),
        kL_ok=tf <= kL,
        weak_dispersion_ok=weak * tf <= 1,
        bandwidth_ok=bw <= 1,
        delta_f_over_omega_bar=markov[0],
        gamma_f_over_omega_bar=markov[1],
        delta_omega_over_omega_bar=markov[2],
        kL=kL,
        alpha_over_Lu=weak,
        delta_omega_over_gamma_f=bw,
        tau_p=ch.L / u,
        tau_d=ch.L**2 / ch.alpha if ch.alpha > 0 else math.inf,
        threshold_factor=tf,
    )


@dataclass(frozen=True)
class FeedbackInconsistency:
    """Why no cavity can model a dispersive channel inside a feedback loop.

    Without a free delay the cavity must supply the first-order phase too.
    First- and second-order matching then force

        alpha (gamma^2 + 4 delta^2) = 4 delta u^2,

    whose unique positive solution is reported, together with the cavity's
    third-derivative phase compared to the channel's. ``stated_rhs`` holds
    2 delta u^2, the right side as it is often quoted; it is off by a
    factor 2 and is kept only for comparison. For weak dispersion
    the cavity's curvature outweighs the channel's by ~ (L u / alpha)^2.
    """

    gamma_candidate: float
    delta_candidate: float
    relation_lhs: float
    relation_rhs: float
    stated_rhs: float
    third_order_ratio: float
    markov_ratios: tuple[float, float]
    reason: str
    consistent: bool = False

    def to_dict(self) -> dict:
        return asdict(self)


def feedback_match(ch: ChannelSpec) -> FilterCavity | FeedbackInconsistency:
    """Cavity for a channel inside a feedback loop (no free delay).

    A dispersionless channel is matched exactly by delta_f = 0,
    gamma_f = 4 v / L. Any alpha > 0 yields a :class:`FeedbackInconsistency`.
    """
    u = group_velocity(ch)
    if ch.alpha == 0:
        return FilterCavity(delta_f=0.0, gamma_f=4 * ch.v / ch.L)
    eta = ch.alpha / (ch.L * u)
    gamma = 4 * u / ch.L / (1 + 4 * eta**2)
    delta = eta * gamma
    D = gamma**2 + 4 * delta**2
    _, m3, _ = cavity_derivatives(gamma, delta)
    # cavity phase''' = 2 * m3; channel phase''' = 12 alpha^2 L / u^5
    ratio = abs(2 * m3) / (12 * ch.alpha**2 * ch.L / u**5)
    return FeedbackInconsistency(
        gamma_candidate=gamma,
        delta_candidate=delta,
        relation_lhs=ch.alpha * D,
        relation_rhs=4 * delta * u**2,
        stated_rhs=2 * delta * u**2,
        third_order_ratio=ratio,
        markov_ratios=(gamma / ch.omega_bar, delta / ch.omega_bar),
        reason=("first-order matching leaves no free delay; the cavity then carries "
                "the whole propagation phase and its own higher-order phase cannot "
                "reproduce the dispersion inside the Markov regime"),
    )


@dataclass(frozen=True)
class FluxReport:
    flux: float
    occupation: float
    ok: bool
    recommended_M: int
    threshold_factor: float
    max_flux_scale: float | None = None


def fermion_flux_check(n: float, cav: FilterCavity, ch: ChannelSpec | None = None,
                       threshold_factor: float = DEFAULT_THRESHOLD,
                       target_occupation: float = 0.1) -> FluxReport:
    """Occupation N = n / gamma_f of the fictitious cavity for a fermion flux n.

    ``recommended_M`` is the smallest M with N / M <= ``target_occupation``.
    """
    if n < 0:
        raise ValueError("flux must be non-negative")
    N = n / cav.gamma_f
    M = max(1, math.ceil(N / target_occupation - 1e-9))
    scale = None
    if ch is not None and ch.alpha > 0:
        scale = math.sqrt(group_velocity(ch) ** 3 / (ch.L * ch.alpha))
    return FluxReport(flux=n, occupation=N, ok=N * threshold_factor <= 1, recommended_M=M,
                      threshold_factor=threshold_factor, max_flux_scale=scale)


def unit_channel(alpha_star: float, delta_omega: float = 1.0) -> ChannelSpec:
    """Channel with L = u = 1 and dispersion alpha* = alpha / (L u).

    v = 0 and omega_bar = 1 / (4 alpha*) give u = 1 exactly; the matching
    equations depend only on u, L and alpha, so the carrier is otherwise
    immaterial.
    """
    return ChannelSpec(v=0.0, alpha=alpha_star, L=1.0, omega_bar=1.0 / (4.0 * alpha_star),
                       delta_omega=delta_omega)
