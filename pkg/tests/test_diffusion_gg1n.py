import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from diffaqm.diffusion_gg1 import (
    DiffusionCoeffs,
    ExponentialSojourn,
    InitialCondition,
    TrafficMoments,
    absorbing_pdf,
    coeffs,
    first_passage_density,
    return_steady_state,
)
from diffaqm.diffusion_gg1n import (
    DivergentEvolutionError,
    QueueDensity,
    SeriesTruncationError,
    TwoBarrierModel,
    default_step,
    evolve,
    first_passage_cdf_pair,
    first_passage_pair,
    mean_queue,
    propagator,
    two_barrier_absorbing_pdf,
)

import oracles

C = DiffusionCoeffs(-0.25, 1.75)


def model(N=10, c=C, **kw):
    return TwoBarrierModel(N, c, ExponentialSojourn(0.75), ExponentialSojourn(1.0), **kw)


def mm1n(lam, N=30, **kw):
    return TwoBarrierModel.from_moments(TrafficMoments(lam, 1.0), N, **kw)


@pytest.mark.parametrize("kw", [dict(N=1), dict(h=0.0), dict(points_per_unit=3)])
def test_model_validation(kw):
    with pytest.raises(ValueError):
        model(**kw)


def test_default_step():
    assert default_step(0.5, 1.0) == 0.05
    assert default_step(2.0, 1.0) == 0.05
    assert default_step(6.0, 4.0) == pytest.approx(1 / 40)


def test_absorbing_zero_on_barriers():
    m = model()
    assert two_barrier_absorbing_pdf(0.0, 1.0, 3.0, m) == 0.0
    assert two_barrier_absorbing_pdf(10.0, 1.0, 3.0, m) == 0.0


def test_far_second_barrier_reduces_to_single():
    m = model(N=1000)
    x = np.linspace(0.01, 8, 40)
    np.testing.assert_allclose(two_barrier_absorbing_pdf(x, 1.0, 1.0, m),
                               absorbing_pdf(x, 1.0, 1.0, C), rtol=0, atol=1e-10)
    t = np.linspace(0.05, 5, 30)
    g0, gN = first_passage_pair(t, 1.0, m)
    np.testing.assert_allclose(g0, first_passage_density(t, 1.0, C), atol=1e-8)
    np.testing.assert_allclose(gN, 0.0, atol=1e-8)


@pytest.mark.parametrize("x0, t", [(3.0, 2.0), (1.0, 10.0), (7.5, 25.0)])
def test_conservation_with_two_barriers(x0, t):
    m = model()
    inside = oracles.quad(lambda x: float(two_barrier_absorbing_pdf(x, t, x0, m)), 0, 10, points=[x0])
    out0 = oracles.quad(lambda u: float(first_passage_pair(u, x0, m)[0]), 0, t)
    outN = oracles.quad(lambda u: float(first_passage_pair(u, x0, m)[1]), 0, t)
    assert inside + out0 + outN == pytest.approx(1.0, abs=1e-4)


def test_eventual_absorption():
    m = model()
    g0, gN = first_passage_cdf_pair(2000.0, 4.0, m)
    assert g0 + gN == pytest.approx(1.0, abs=1e-4)
    total = oracles.quad(lambda u: float(sum(first_passage_pair(u, 4.0, m))), 0, 2000, points=[1, 10, 100])
    assert total == pytest.approx(1.0, abs=1e-4)


@settings(max_examples=25, deadline=None)
@given(t=st.floats(0.01, 50), x0=st.floats(0.1, 9.9))
def test_cdf_pair_matches_quadrature(t, x0):
    m = model()
    c0, cN = first_passage_cdf_pair(t, x0, m)
    q0 = oracles.quad(lambda u: float(first_passage_pair(u, x0, m)[0]), 0, t)
    qN = oracles.quad(lambda u: float(first_passage_pair(u, x0, m)[1]), 0, t)
    assert c0 == pytest.approx(q0, abs=1e-7)
    assert cN == pytest.approx(qN, abs=1e-7)


@settings(max_examples=25, deadline=None)
@given(t=st.floats(0.01, 80))
def test_mirror_symmetry(t):
    m = model(c=DiffusionCoeffs(0.0, 1.3))
    g0, gN = first_passage_pair(t, 5.0, m)
    assert g0 == pytest.approx(gN, abs=1e-10)


def test_series_truncation_detected():
    m = model(N=2, series_cutoff=1)
    with pytest.raises(SeriesTruncationError, match="series truncation"):
        two_barrier_absorbing_pdf(1.0, 500.0, 1.0, m)


def test_never_leaves_empty_barrier():
    m = TwoBarrierModel(10, DiffusionCoeffs(-1.0, 1.0), ExponentialSojourn(0.0), ExponentialSojourn(1.0))
    out = evolve(InitialCondition.at_zero(), 5.0, m)
    assert all(d.p0 == 1.0 and d.pN == 0.0 for d in out)
    assert all(np.all(d.interior == 0.0) for d in out)


@pytest.mark.parametrize("ic", [InitialCondition.at_zero(), InitialCondition.point(5.0),
                                InitialCondition.at_capacity()])
def test_mass_conserved_at_every_step(ic):
    out = evolve(ic, 20.0, mm1n(0.75, N=10))
    assert len(out) == 401
    for d in out[1:]:
        assert d.mass == pytest.approx(1.0, abs=5e-3)
        assert np.all(d.interior >= 0) and 0 <= d.p0 <= 1 and 0 <= d.pN <= 1


def test_record_every_keeps_final_step():
    out = evolve(InitialCondition.at_zero(), 1.0, mm1n(0.5, N=5), record_every=7)
    assert [round(d.t, 6) for d in out] == [0.0, 0.35, 0.7, 1.0]


def test_horizon_must_be_multiple_of_step():
    with pytest.raises(ValueError):
        evolve(InitialCondition.at_zero(), 1.01, mm1n(0.5, N=5))


def test_divergence_reported_with_step(monkeypatch):
    import diffaqm.diffusion_gg1n as mod
    monkeypatch.setattr(mod, "MASS_TOL", -1.0)
    with pytest.raises(DivergentEvolutionError, match="divergent evolution") as info:
        evolve(InitialCondition.at_zero(), 1.0, mm1n(0.5, N=5))
    assert info.value.step == 1


@pytest.mark.parametrize("lam, t", [(0.5, 4.0), (0.9, 10.0), (1.3, 6.0)])
def test_transient_mean_tracks_birth_death_chain(lam, t):
    N = 10
    d = evolve(InitialCondition.at_zero(), t, mm1n(lam, N=N), record_every=10_000)[-1]
    start = np.zeros(N + 1)
    start[0] = 1.0
    exact = oracles.mm1n_transient(start, lam, 1.0, N, t) @ np.arange(N + 1)
    assert mean_queue(d) == pytest.approx(exact, abs=0.1 + 0.03 * exact)


def test_long_horizon_mean_matches_mm1n():
    d = evolve(InitialCondition.at_zero(), 200.0, mm1n(0.75), record_every=10_000)[-1]
    assert mean_queue(d) == pytest.approx(oracles.mm1n_mean(0.75, 1.0, 30), rel=0.1)


def test_load_response_monotone():
    means = [mean_queue(evolve(InitialCondition.at_zero(), 150.0, mm1n(lam, N=20),
                               record_every=10_000)[-1]) for lam in (0.25, 0.5, 0.75, 0.9)]
    assert means == sorted(means)


def test_step_halving_changes_little():
    m1 = mm1n(0.8, N=15)
    m2 = mm1n(0.8, N=15, h=m1.h / 2)
    for T in (2.0, 10.0, 30.0):
        a = mean_queue(evolve(InitialCondition.point(3.0), T, m1, record_every=10_000)[-1])
        b = mean_queue(evolve(InitialCondition.point(3.0), T, m2, record_every=10_000)[-1])
        assert abs(a - b) < 1e-2


def test_restart_equals_single_run():
    m = mm1n(0.75, N=20)
    T = 10.0
    whole = evolve(InitialCondition.point(4.0), T, m, record_every=10_000)[-1]
    half = evolve(InitialCondition.point(4.0), T / 2, m, record_every=10_000)[-1]
    again = evolve(half.as_initial(), T / 2, m, record_every=10_000)[-1]
    np.testing.assert_allclose(again.interior, whole.interior, atol=1e-2)
    assert again.p0 == pytest.approx(whole.p0, abs=1e-2)
    assert again.pN == pytest.approx(whole.pN, abs=1e-2)


def test_propagator_matches_evolve():
    m = mm1n(0.9, N=8)
    half = evolve(InitialCondition.point(3.0), 2.0, m, record_every=10_000)[-1]
    direct = evolve(half.as_initial(), 1.5, m, record_every=10_000)[-1]
    P = propagator(m, 1.5)
    state = P @ np.concatenate([half.interior, [half.p0, half.pN]])
    np.testing.assert_allclose(state[:-2], direct.interior, atol=1e-10)
    assert state[-2] == pytest.approx(direct.p0, abs=1e-12)
    assert state[-1] == pytest.approx(direct.pN, abs=1e-12)


def test_mean_queue_simple_states():
    grid = np.linspace(0, 30, 301)
    zero = np.zeros_like(grid)
    assert mean_queue(QueueDensity(0.0, grid, zero, 1.0, 0.0)) == 0.0
    assert mean_queue(QueueDensity(0.0, grid, zero, 0.0, 1.0)) == 30.0
    uniform = np.full_like(grid, 1 / 30)
    assert mean_queue(QueueDensity(0.0, grid, uniform, 0.0, 0.0)) == pytest.approx(15.0, abs=0.5)


def test_large_capacity_reaches_return_stationary_law():
    # with N far above the mean queue the upper barrier is never felt
    m = mm1n(0.5)
    d = evolve(InitialCondition.at_zero(), 150.0, m, record_every=10_000)[-1]
    p0, f = return_steady_state(coeffs(TrafficMoments(0.5, 1.0)), ExponentialSojourn(0.5))
    np.testing.assert_allclose(d.interior, f(d.grid), atol=2e-2)
    assert d.p0 == pytest.approx(p0, abs=2e-2)
    assert d.pN < 1e-6
