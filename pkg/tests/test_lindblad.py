import numpy as np
import pytest

from dispcascade.hilbert import (DensityMatrix, HilbertError, HilbertSpace, Operator, lowering_op,
                                 number_op)
from dispcascade.lindblad import (CollapseTerm, HamiltonianTerm, IntegrationError, MasterEquation,
                                  StepControl, dissipator, integrate, rhs)


def random_hermitian(rng, d):
    x = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    return x + x.conj().T


def random_state(rng, d):
    x = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    r = x @ x.conj().T
    return r / np.trace(r).real


def decay_model(gamma=1.0):
    a = lowering_op(2)
    return MasterEquation(a.space, [], [CollapseTerm(np.sqrt(gamma) * a)])


def excited():
    return DensityMatrix.basis([2], 1)


# dissipator

def test_dissipator_ground_is_dark():
    rho = np.diag([1.0, 0.0])
    np.testing.assert_array_equal(dissipator(lowering_op(2), rho), np.zeros((2, 2)))


def test_dissipator_excited():
    rho = np.diag([0.0, 1.0])
    np.testing.assert_array_equal(dissipator(lowering_op(2), rho), np.diag([1.0, -1.0]))


def test_dissipator_traceless_and_hermitian(rng):
    for _ in range(50):
        a = rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4))
        rho = random_hermitian(rng, 4)
        out = dissipator(a, rho)
        assert abs(np.trace(out)) <= 1e-12 * max(1.0, np.abs(out).max())
        np.testing.assert_allclose(out, out.conj().T, atol=1e-12)


def test_dissipator_shape_mismatch():
    with pytest.raises(HilbertError):
        dissipator(lowering_op(2), np.eye(3))


# rhs

def test_rhs_zero_generator(rng):
    me = MasterEquation(HilbertSpace([3]), [], [])
    np.testing.assert_array_equal(rhs(me, 0.0, random_state(rng, 3)), np.zeros((3, 3)))


def test_rhs_stationary_eigenprojector(rng):
    h = random_hermitian(rng, 4)
    _, vecs = np.linalg.eigh(h)
    proj = np.outer(vecs[:, 2], vecs[:, 2].conj())
    me = MasterEquation(HilbertSpace([4]), [HamiltonianTerm(Operator(HilbertSpace([4]), h))], [])
    np.testing.assert_allclose(rhs(me, 0.3, proj), 0, atol=1e-12)


def test_rhs_linear_and_traceless(rng):
    sp = HilbertSpace([4])
    me = MasterEquation(
        sp,
        [HamiltonianTerm(Operator(sp, random_hermitian(rng, 4)), np.cos)],
        [CollapseTerm(Operator(sp, rng.normal(size=(4, 4)))) for _ in range(2)],
    )
    r1, r2 = random_state(rng, 4), random_state(rng, 4)
    np.testing.assert_allclose(rhs(me, 0.7, r1 + r2), rhs(me, 0.7, r1) + rhs(me, 0.7, r2), atol=1e-12)
    assert abs(np.trace(rhs(me, 0.7, r1))) <= 1e-12


def test_compiled_generator_matches_reference(rng):
    sp = HilbertSpace([4])
    me = MasterEquation(
        sp,
        [HamiltonianTerm(Operator(sp, random_hermitian(rng, 4))),
         HamiltonianTerm(Operator(sp, random_hermitian(rng, 4)), np.sin)],
        [CollapseTerm(Operator(sp, rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4))))],
    )
    f = me.compile()
    # the compiled form must also be right for non-Hermitian arguments (RK stages)
    x = rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4))
    np.testing.assert_allclose(f(1.3, x), rhs(me, 1.3, x), atol=1e-12)


def test_nonhermitian_hamiltonian_rejected():
    with pytest.raises(HilbertError):
        HamiltonianTerm(lowering_op(2))


def test_space_mismatch_rejected():
    with pytest.raises(HilbertError):
        MasterEquation(HilbertSpace([2]), [HamiltonianTerm(number_op(3))], [])


# integrate

def test_single_mode_decay():
    traj = integrate(decay_model(), excited(), 0.0, 1.0)
    assert traj.final[1, 1].real == pytest.approx(np.exp(-1.0), abs=1e-6)
    assert traj.final[1, 1].real == pytest.approx(0.367879, abs=1e-6)


def test_samples_strictly_increasing_and_exact():
    traj = integrate(decay_model(), excited(), 0.0, 2.0, sample_times=21)
    assert np.all(np.diff(traj.times) > 0)
    np.testing.assert_allclose(traj.times, np.linspace(0, 2, 21), atol=1e-14)
    np.testing.assert_allclose(traj.states[:, 1, 1].real, np.exp(-traj.times), atol=1e-8)


def test_zero_generator_is_identity(rng):
    rho0 = random_state(rng, 3)
    me = MasterEquation(HilbertSpace([3]), [], [])
    traj = integrate(me, rho0, -1.0, 4.0)
    np.testing.assert_allclose(traj.final, rho0, atol=1e-12)


def _fixed(h, t1=1.0):
    return integrate(decay_model(), excited(), 0.0, t1, StepControl(fixed_step=h), sample_times=2)


def test_fourth_order_convergence():
    exact = np.exp(-1.0)
    errs = [abs(_fixed(h).final[1, 1].real - exact) for h in (1e-2, 5e-3, 2.5e-3)]
    for coarse, fine in zip(errs, errs[1:]):
        # step^4 within a factor 2: ratio 16 in [8, 32]
        assert 8 <= coarse / fine <= 32


def test_richardson_step_doubling():
    exact = np.exp(-1.0)
    for h in (1e-1, 5e-2, 2.5e-2):
        coarse = _fixed(h).final[1, 1].real
        fine = _fixed(h / 2).final[1, 1].real
        estimate = abs(coarse - fine) / 15.0
        assert abs(fine - exact) <= estimate


def test_adaptive_meets_error_target():
    for atol in (1e-8, 1e-10, 1e-12):
        traj = integrate(decay_model(), excited(), 0.0, 3.0, StepControl(atol=atol), sample_times=2)
        assert abs(traj.final[1, 1].real - np.exp(-3.0)) <= 10 * atol * 3.0


def test_stiff_rates_handled():
    a = lowering_op(2)
    me = MasterEquation(a.space, [HamiltonianTerm(50.0 * number_op(2))], [CollapseTerm(10.0 * a)])
    traj = integrate(me, DensityMatrix.pure(np.array([1, 1]) / np.sqrt(2)), 0.0, 0.1)
    expected = 0.5 * np.exp(-100 * 0.1 / 2) * np.exp(1j * 50 * 0.1)
    assert traj.final[0, 1] == pytest.approx(expected, abs=1e-8)


def test_time_dependent_envelope():
    # H = f(t) sigma_x with f = cos: Rabi angle is 2 * sin(t)
    sx = Operator(HilbertSpace([2]), np.array([[0, 1], [1, 0]]))
    me = MasterEquation(sx.space, [HamiltonianTerm(sx, np.cos)], [])
    traj = integrate(me, DensityMatrix.basis([2], 0), 0.0, 2.0)
    assert traj.final[1, 1].real == pytest.approx(np.sin(np.sin(2.0)) ** 2, abs=1e-9)


def test_step_floor_failure_carries_time():
    with pytest.raises(IntegrationError) as info:
        integrate(decay_model(), excited(), 0.5, 1.0, StepControl(atol=1e-30, h_min=1e-6))
    assert 0.5 <= info.value.t < 1.0


def test_step_budget_failure():
    with pytest.raises(IntegrationError):
        integrate(decay_model(), excited(), 0.0, 1.0, StepControl(fixed_step=1e-3, max_steps=10))


def test_invalid_window():
    with pytest.raises(ValueError):
        integrate(decay_model(), excited(), 1.0, 1.0)


def test_physicality_recorded(physicality_guard):
    a = lowering_op(3)
    sp = a.space
    me = MasterEquation(sp, [HamiltonianTerm(Operator(sp, a.matrix + a.matrix.T))], [CollapseTerm(a)])
    traj = integrate(me, DensityMatrix.basis([3], 2), 0.0, 5.0, sample_times=20)
    assert traj.min_eig is not None and traj.min_eig >= -1e-9
    assert traj.trace_drift <= 1e-9 and traj.herm_drift <= 1e-9
    assert physicality_guard and physicality_guard[-1] is traj


def test_expectations_recorded():
    traj = integrate(decay_model(), excited(), 0.0, 1.0, e_ops={"n": number_op(2)},
                     store_states=False, sample_times=11)
    assert traj.states is None
    np.testing.assert_allclose(traj.expectations["n"].real, np.exp(-traj.times), atol=1e-8)
