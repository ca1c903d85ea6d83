import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nlsrd import conjugate, model, solver, wiener
from nlsrd.galerkin import Field
from nlsrd.noise import NoiseKind
from nlsrd.solver import DivergenceError, SolveConfig

H = 2.5e-4
LINEAR = dict(a_profile="constant", f_profile="linear", epsilon=0.0)


def e1(n=16, amp=1.0):
    return Field.mode(1, n, amp)


def linear_spec():
    return model.default_additive().with_(**LINEAR)


def test_config_validation():
    with pytest.raises(ValueError):
        SolveConfig(dt=0.0)
    with pytest.raises(ValueError):
        SolveConfig(t_start=1.0, t_end=1.0)
    with pytest.raises(ValueError):
        SolveConfig(scheme="rk4")
    with pytest.raises(wiener.GridError):
        SolveConfig(dt=0.3, t_end=1.0)
    assert SolveConfig().n_steps == 1000


@settings(max_examples=30, deadline=None)
@given(st.floats(-1e3, 1e3), st.floats(0.0, 1.0))
def test_zero_field_is_an_equilibrium_under_multiplicative_noise(sample, eps):
    spec = model.default_multiplicative().with_(epsilon=eps)
    out = solver.step(spec, Field.zeros(16), 0.0, 1e-3, sample)
    assert not np.any(out.coeffs)


def test_linear_decay_matches_closed_form():
    cfg = SolveConfig(dt=1e-4, t_end=0.1)
    u = solver.solve_deterministic(linear_spec(), cfg, e1()).final()
    assert u.coeffs[0] == pytest.approx(np.exp(-(np.pi**2 + 1) * 0.1), abs=1e-3)
    assert np.max(np.abs(u.coeffs[1:])) < 1e-14


def test_step_agrees_with_solver():
    spec = model.default_additive().with_(epsilon=0.3)
    cfg = SolveConfig(dt=1e-3, t_end=1e-3, noise_sampling="point")
    p = wiener.sample_path(2, -0.5, 1.0, H)
    kind = NoiseKind("diffq", 0.125)
    traj = solver.solve_stationary(spec, p, kind, cfg, e1())
    z = kind.series(p, p.zero_index, p.zero_index)[0]
    assert np.array_equal(solver.step(spec, e1(), 0.0, 1e-3, z).coeffs, traj.states[-1])


def test_richardson_ratio_linear():
    exact = np.exp(-(np.pi**2 + 1) * 0.1)
    errs = []
    for dt in (1e-3, 5e-4, 2.5e-4):
        cfg = SolveConfig(dt=dt, t_end=0.1)
        errs.append(abs(solver.solve_deterministic(linear_spec(), cfg, e1()).final().coeffs[0] - exact))
    for a, b in zip(errs, errs[1:]):
        assert 1.7 <= a / b <= 2.3


def test_richardson_ratio_nonlinear():
    spec = model.default_additive()
    finals = [solver.solve_deterministic(spec, SolveConfig(dt=dt, t_end=0.5), e1()).final().coeffs
              for dt in (1e-3, 5e-4, 2.5e-4)]
    ratio = np.linalg.norm(finals[0] - finals[1]) / np.linalg.norm(finals[1] - finals[2])
    assert 1.7 <= ratio <= 2.3


def test_heun_cross_check_is_first_order():
    spec = model.default_additive()
    gaps = []
    for dt in (2.5e-4, 1.25e-4, 6.25e-5):
        cfg = SolveConfig(dt=dt, t_end=0.5, n_modes=8)
        a = solver.solve_deterministic(spec, cfg, e1(8)).states
        b = solver.solve_deterministic(spec, SolveConfig(dt=dt, t_end=0.5, n_modes=8, scheme="explicit-heun"),
                                       e1(8)).states
        gaps.append(np.max(np.abs(a - b)))
    rates = np.log2(np.array(gaps[:-1]) / np.array(gaps[1:]))
    assert np.all(rates >= 0.9), rates


@pytest.mark.parametrize("factory", [model.default_additive, model.default_multiplicative])
def test_epsilon_zero_is_bit_identical_to_deterministic(factory):
    spec = factory().with_(epsilon=0.0)
    cfg = SolveConfig()
    p = wiener.sample_path(7, -45.0, 1.5, H)
    det = solver.solve_deterministic(spec, cfg, e1()).states
    for kind in (NoiseKind("ou", 0.1), NoiseKind("diffq", 0.05)):
        assert np.array_equal(solver.solve_stationary(spec, p, kind, cfg, e1()).states, det)
        assert np.array_equal(solver.solve_conjugated_stationary(spec, p, kind, cfg, e1()).states, det)
    assert np.array_equal(solver.solve_white(spec, p, cfg, e1()).states, det)


def test_general_coupling_epsilon_zero():
    spec = model.default_general().with_(epsilon=0.0)
    cfg = SolveConfig(t_end=0.5)
    p = wiener.sample_path(1, -1.0, 1.0, H)
    det = solver.solve_deterministic(spec, cfg, e1()).states
    assert np.array_equal(solver.solve_stationary(spec, p, NoiseKind("mollifier", 0.05), cfg, e1()).states, det)


@pytest.mark.parametrize("factory", [model.default_additive, model.default_multiplicative])
def test_zero_path_matches_deterministic(factory):
    spec = factory()
    cfg = SolveConfig()
    p = wiener.zero_path(-45.0, 1.5, H)
    det = solver.solve_deterministic(spec, cfg, e1()).states
    for v in ("ou", "mollifier", "diffq"):
        got = solver.solve_stationary(spec, p, NoiseKind(v, 0.05), cfg, e1()).states
        assert np.max(np.abs(got - det)) <= 1e-12
    assert np.max(np.abs(solver.solve_white(spec, p, cfg, e1()).states - det)) <= 1e-12


def test_rerun_is_bit_identical():
    spec = model.default_additive().with_(epsilon=0.1)
    p = wiener.sample_path(7, -3.0, 1.5, H)
    kind = NoiseKind("ou", 0.05)
    a = solver.solve_stationary(spec, p, kind, SolveConfig(), e1())
    b = solver.solve_stationary(spec, wiener.sample_path(7, -3.0, 1.5, H), kind, SolveConfig(), e1())
    assert a.states.tobytes() == b.states.tobytes()
    assert a.meta == b.meta and a.meta["seed"] == 7 and a.meta["noise"] == "ou:0.05"


def test_batch_matches_single_solves():
    spec = model.default_additive().with_(epsilon=0.2)
    p = wiener.sample_path(3, -45.0, 1.0, H)
    ics = np.stack([e1().coeffs, Field.mode(2, 16, -0.5).coeffs])
    batch = solver.solve_white(spec, p, SolveConfig(), ics, store=False)
    # matrix products over a batch may round differently from single rows
    for row, ic in zip(batch, ics):
        assert np.allclose(row, solver.solve_white(spec, p, SolveConfig(), ic, store=False), rtol=0, atol=1e-14)


@pytest.mark.parametrize("eta_damp", [1.0, 2.0])
def test_white_additive_linear_path(eta_damp):
    eps = 0.3
    spec = model.default_additive().with_(epsilon=eps, eta_damp=eta_damp)
    p = wiener.linear_path(1.0, -45.0, 1.0, H)
    traj = solver.solve_white_additive(spec, p, SolveConfig(), e1())
    assert np.allclose(traj.meta["aux"], eps / eta_damp, atol=1e-6, rtol=0)


def test_white_multiplicative_linear_path():
    eps = 0.4
    spec = model.default_multiplicative().with_(epsilon=eps)
    p = wiener.linear_path(1.0, -45.0, 1.0, H)
    traj = solver.solve_white_multiplicative(spec, p, SolveConfig(), e1())
    assert np.allclose(traj.meta["aux"], eps, atol=1e-6, rtol=0)


def test_white_solver_coupling_checks():
    p = wiener.zero_path(-45.0, 1.0, H)
    with pytest.raises(ValueError):
        solver.solve_white_additive(model.default_multiplicative(), p, SolveConfig(), e1())
    with pytest.raises(ValueError):
        solver.solve_white_multiplicative(model.default_additive(), p, SolveConfig(), e1())


def test_white_additive_sde_residual_scales_like_sqrt_grid():
    # (x(t+h) - x(t))/h + x(t) - (w(t+h) - w(t))/h has mean square O(sqrt h)
    rms = []
    for h in (2.0**-8, 2.0**-10, 2.0**-12):
        p = wiener.sample_path(3, -45.0, 2.0, h)
        proc = conjugate.process_for(model.default_additive().with_(epsilon=1.0), None, 16)
        i0, i1 = p.zero_index, p.index(1.0)
        x = conjugate.aux_series(proc, p, i0, i1)
        dw = np.diff(p.values[i0 : i1 + 1])
        r = np.diff(x) / h + x[:-1] - dw / h
        rms.append(np.sqrt(np.mean(r**2)))
    ratios = np.array(rms[:-1]) / np.array(rms[1:])
    assert np.all((ratios > 1.6) & (ratios < 2.5)), ratios


@pytest.mark.parametrize("factory", [model.default_additive, model.default_multiplicative])
def test_conjugation_round_trip_every_step(factory):
    spec = factory().with_(epsilon=0.5)
    p = wiener.sample_path(11, -45.0, 1.5, H)
    for kind in (None, NoiseKind("ou", 0.05)):
        traj = solver._conjugated(spec, p, SolveConfig(), e1(), kind, True)
        proc = conjugate.process_for(spec, kind, 16)
        back = conjugate.from_transformed_batch(proc, traj.meta["transformed"], traj.meta["aux"])
        if proc.flavor == "additive":
            assert np.max(np.abs(back - traj.states)) < 1e-12
        else:
            norm = np.linalg.norm(traj.states, axis=1)
            keep = norm > 1e-8
            rel = np.linalg.norm(back - traj.states, axis=1)[keep] / norm[keep]
            assert np.max(rel) < 1e-10


def test_conjugated_colored_solve_tracks_direct_solve():
    spec = model.default_multiplicative().with_(epsilon=0.2)
    p = wiener.sample_path(5, -45.0, 1.5, H)
    kind = NoiseKind("ou", 0.1)
    cfg = SolveConfig()
    direct = solver.solve_stationary(spec, p, kind, cfg, e1()).states
    conj = solver.solve_conjugated_stationary(spec, p, kind, cfg, e1()).states
    # two consistent first-order discretisations of one random PDE
    assert np.max(np.abs(direct - conj)) < 1e-2


def test_conjugated_reaction_has_linear_growth():
    spec = model.default_multiplicative().with_(epsilon=0.5)
    p = wiener.sample_path(7, -45.0, 1.5, H)
    proc = conjugate.process_for(spec, None, 16)
    y = conjugate.aux_series(proc, p, p.index(-1.0), p.index(1.0))[::16]
    s = np.linspace(-50.0, 50.0, 2001)
    yy, ss = np.meshgrid(y, s)
    F = np.exp(-yy) * spec.f(ss * np.exp(yy)) + ss * yy
    c_F = np.max(np.abs(F) / (1.0 + np.abs(ss)))
    ymax = np.max(np.abs(y))
    assert np.isfinite(c_F)
    assert c_F <= spec.c_f * np.exp(ymax) + ymax


def test_converge_epsilon_zero_gives_zero_table():
    spec = model.default_additive()
    p = wiener.sample_path(7, -45.0, 1.5, H)
    rows = solver.converge_solutions(spec, p, [0.1, 0.05], [0.0], SolveConfig(), e1())
    assert len(rows) == 2
    assert all(r.sup_gap_vs_deterministic == 0.0 and r.sup_gap_vs_white == 0.0 for r in rows)


def test_converge_zero_path():
    spec = model.default_multiplicative()
    p = wiener.zero_path(-45.0, 1.5, H)
    rows = solver.converge_solutions(spec, p, [0.1, 0.05], [0.1, 0.2], SolveConfig(), e1())
    assert len(rows) == 4
    assert max(r.sup_gap_vs_deterministic for r in rows) <= 1e-12


def test_converge_empty_lists():
    with pytest.raises(ValueError):
        solver.converge_solutions(model.default_additive(), wiener.zero_path(-1.0, 1.0, H), [], [0.1],
                                  SolveConfig(), e1())


def test_converge_default_additive_refinement():
    spec = model.default_additive()
    h = 2.0**-12
    cfg = SolveConfig(dt=2.0**-10)
    p = wiener.sample_path(7, -45.0, 1.5, h)
    ks = range(2, 7)
    rows = solver.converge_solutions(spec, p, [2.0**-k for k in ks], [2.0**-k for k in ks], cfg, e1(),
                                     paired=True)
    e = [r.sup_gap_vs_deterministic for r in rows]
    assert all(b * 1.05 < a or b < a for a, b in zip(e, e[1:])), e
    assert e[-1] < 1e-3


def test_energy_inequality_holds_with_margin():
    spec = model.default_general()
    kind = NoiseKind("diffq", 0.05)
    p = wiener.sample_path(7, 0.0, 2.5, H)
    reports = []
    for dt in (1e-3, 5e-4):
        traj = solver.solve_stationary(spec, p, kind, SolveConfig(dt=dt, t_end=2.0), e1())
        reports.append(solver.energy_inequality(spec, p, kind, traj))
    for r in reports:
        assert r.residuals.shape == (round(2.0 / r.dt),)
        assert r.violation <= r.constant * r.dt + 1e-300
        assert r.margin > 0


def test_divergence_guard_reports_time():
    cfg = SolveConfig(t_end=0.1, blowup=0.5)
    with pytest.raises(DivergenceError) as info:
        solver.solve_deterministic(model.default_additive(), cfg, e1())
    assert info.value.t == pytest.approx(1e-3) and info.value.norm > 0.5


def test_evolve_dispatch():
    spec = model.default_additive().with_(epsilon=0.1)
    cfg = SolveConfig(t_end=0.25)
    p = wiener.sample_path(2, -45.0, 1.0, H)
    det = solver.solve_deterministic(spec, cfg, e1(), store=False)
    assert np.array_equal(solver.evolve(spec, None, None, cfg, e1()), det)
    assert np.array_equal(solver.evolve(spec, p, solver.WHITE, cfg, e1()),
                          solver.solve_white(spec, p, cfg, e1(), store=False))
    k = NoiseKind("ou", 0.1)
    assert np.array_equal(solver.evolve(spec, p, k, cfg, e1()), solver.solve_stationary(spec, p, k, cfg, e1(), False))


def test_path_window():
    spec = model.default_additive()
    assert solver.path_window(None, spec, 0.0, 1.0) == (0.0, 1.0)
    lo, hi = solver.path_window(NoiseKind("diffq", 0.1), spec, -2.0, 1.0)
    assert lo == -2.0 and hi == pytest.approx(1.1)
    lo, _ = solver.path_window(solver.WHITE, spec, 0.0, 1.0)
    assert lo <= -40.0
