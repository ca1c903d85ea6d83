import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from nlsrd import conjugate, model, wiener
from nlsrd.conjugate import AuxiliaryProcess
from nlsrd.galerkin import Field
from nlsrd.noise import NoiseKind

H = 2.5e-4
PHI = Field.mode(1, 16).coeffs

coeffs = arrays(np.float64, 16, elements=st.floats(-1e3, 1e3, allow_subnormal=False))


def proc(flavor, noise=None, eps=0.25, rate=1.0):
    return AuxiliaryProcess(flavor, noise, eps, PHI if flavor == "additive" else None, rate)


def seeded(seed, t_min=-50.0, t_max=2.0, h=H):
    return wiener.sample_path(seed, t_min, t_max, h)


def test_process_validation():
    with pytest.raises(ValueError):
        AuxiliaryProcess("sideways", None, 0.1)
    with pytest.raises(ValueError):
        AuxiliaryProcess("multiplicative", None, -0.1)
    with pytest.raises(ValueError):
        AuxiliaryProcess("additive", None, 0.1)
    with pytest.raises(ValueError):
        AuxiliaryProcess("multiplicative", None, 0.1, rate=2.0)
    with pytest.raises(ValueError):
        conjugate.process_for(model.default_general(), None, 16)


def test_process_for_reads_the_spec():
    spec = model.default_additive().with_(epsilon=0.3, eta_damp=2.0)
    p = conjugate.process_for(spec, None, 8)
    assert p.flavor == "additive" and p.rate == 2.0 and p.epsilon == 0.3
    assert np.array_equal(p.phi, spec.phi(8))


@pytest.mark.parametrize("flavor", conjugate.FLAVORS)
@pytest.mark.parametrize("noise", [None, NoiseKind("ou", 0.1), NoiseKind("diffq", 0.05)])
def test_epsilon_zero_gives_zero(flavor, noise):
    a = conjugate.eval_aux(proc(flavor, noise, eps=0.0), seeded(1), 0.5)
    if flavor == "additive":
        assert not np.any(a.coeffs)
    else:
        assert a == 0.0


def test_multiplicative_white_linear_path():
    p = wiener.linear_path(1.0, -45.0, 1.0, H)
    for t in (-1.0, 0.0, 0.75):
        assert conjugate.eval_aux(proc("multiplicative", eps=0.4), p, t) == pytest.approx(0.4, abs=1e-6)


def test_additive_white_linear_path():
    p = wiener.linear_path(1.0, -85.0, 1.0, H)
    x = conjugate.eval_aux(proc("additive", eps=0.5, rate=0.5), p, 0.0)
    assert np.allclose(x.coeffs, 1.0 * PHI, atol=1e-6)


def test_identity_at_zero_aux():
    u = Field(np.arange(1.0, 5.0))
    zero = Field.zeros(4)
    assert np.array_equal(conjugate.to_transformed(u, zero).coeffs, u.coeffs)
    assert np.array_equal(conjugate.from_transformed(u, zero).coeffs, u.coeffs)
    assert np.array_equal(conjugate.to_transformed(u, 0.0).coeffs, u.coeffs)
    assert np.array_equal(conjugate.from_transformed(u, 0.0).coeffs, u.coeffs)


@settings(max_examples=100, deadline=None)
@given(coeffs, st.integers(-4, 4))
def test_additive_round_trip_is_exact(c, k):
    # adding back an exact power of two undoes the subtraction bit for bit
    u = Field(c)
    x = Field(np.full(16, 2.0**k))
    back = conjugate.from_transformed(conjugate.to_transformed(u, x), x)
    assert np.allclose(back.coeffs, u.coeffs, rtol=0, atol=1e-12)


def test_additive_round_trip_bit_exact_on_representable_values():
    u = Field([0.5, -1.25, 3.0])
    x = Field([0.25, 0.125, -2.0])
    assert np.array_equal(conjugate.from_transformed(conjugate.to_transformed(u, x), x).coeffs, u.coeffs)


@settings(max_examples=100, deadline=None)
@given(coeffs)
def test_multiplicative_halving(c):
    u = Field(c)
    q = conjugate.to_transformed(u, np.log(2.0))
    assert np.allclose(q.coeffs, c / 2, rtol=1e-15, atol=0)
    back = conjugate.from_transformed(q, np.log(2.0))
    assert np.allclose(back.coeffs, c, rtol=2e-16, atol=0)


@settings(max_examples=50, deadline=None)
@given(coeffs, st.floats(-5, 5))
def test_batch_transforms_match_single(c, y):
    pr = proc("multiplicative")
    states = np.stack([c, 2 * c])
    aux = np.array([y, -y])
    batch = conjugate.to_transformed_batch(pr, states, aux)
    assert np.array_equal(batch[0], conjugate.to_transformed(Field(c), y).coeffs)
    assert np.allclose(conjugate.from_transformed_batch(pr, batch, aux), states, rtol=1e-14, atol=1e-300)
    pa = proc("additive")
    b = conjugate.to_transformed_batch(pa, states, aux)
    assert np.array_equal(b[1], conjugate.to_transformed(Field(2 * c), Field(-y * PHI)).coeffs)


@settings(max_examples=20, deadline=None)
@given(st.sampled_from(conjugate.FLAVORS), st.sampled_from([None, "ou", "mollifier", "diffq"]),
       st.integers(0, 2**32), st.integers(-400, 400), st.integers(-400, 400))
def test_stationarity_identity(flavor, variant, seed, i, j):
    h = 2.0**-8
    p = seeded(seed, -48.0, 5.0, h)
    pr = proc(flavor, None if variant is None else NoiseKind(variant, 0.125))
    s, t = i * h, j * h
    lhs = conjugate.eval_aux(pr, wiener.shift(p, s), t)
    rhs = conjugate.eval_aux(pr, p, s + t)
    if flavor == "additive":
        lhs, rhs = lhs.coeffs, rhs.coeffs
    assert np.allclose(lhs, rhs, rtol=0, atol=1e-10)


@pytest.mark.parametrize("flavor", conjugate.FLAVORS)
@pytest.mark.parametrize("noise", [None, NoiseKind("ou", 0.1), NoiseKind("mollifier", 0.05)])
def test_linear_in_epsilon(flavor, noise):
    p = seeded(4)
    i0 = p.zero_index
    a = conjugate.aux_series(proc(flavor, noise, eps=0.2), p, i0 - 400, i0 + 400)
    b = conjugate.aux_series(proc(flavor, noise, eps=0.4), p, i0 - 400, i0 + 400)
    assert np.max(np.abs(b - 2 * a)) <= 1e-12


@pytest.mark.parametrize("variant", ["ou", "mollifier", "diffq"])
def test_aux_solves_its_random_ode(variant):
    # (a(t+h) - a(t))/h + rate a(t) - eps zeta(t) is O(h) on a smooth path
    res = []
    for h in (2.0**-8, 2.0**-9):
        p = wiener.from_function(np.sin, -48.0, 1.0, h)
        kind = NoiseKind(variant, 0.125)
        pr = proc("additive", kind, eps=0.5, rate=2.0)
        i0 = p.zero_index
        a = conjugate.aux_series(pr, p, i0, i0 + 64)
        z = kind.series(p, i0, i0 + 64)
        res.append(np.max(np.abs(np.diff(a) / h + 2.0 * a[:-1] - 0.5 * z[:-1])))
    assert 1.7 <= res[0] / res[1] <= 2.3


def test_aux_on_times_strides_the_grid():
    p = seeded(2)
    pr = proc("multiplicative", NoiseKind("ou", 0.1))
    times = np.linspace(0.0, 1.0, 11)
    got = conjugate.aux_on_times(pr, p, times)
    want = [conjugate.eval_aux(pr, p, t) for t in times]
    assert np.allclose(got, want, rtol=0, atol=1e-14)
    assert conjugate.aux_on_times(pr, p, times[:1])[0] == want[0]


def test_history_needed():
    assert conjugate.history_needed(proc("additive", rate=2.0)) == (20.0, 0.0)
    back, fwd = conjugate.history_needed(proc("multiplicative", NoiseKind("diffq", 0.1)))
    assert back == 40.0 and fwd == pytest.approx(0.1)


def test_limit_check_zero_path():
    p = wiener.zero_path(-45.0, 2.0, H)
    procs = [proc(f, NoiseKind(v, d)) for f in conjugate.FLAVORS for v in ("ou", "diffq") for d in (0.1, 0.05)]
    rows = conjugate.limit_check(procs, p, 1.0)
    assert all(r.gap == 0.0 and r.sup_white == 0.0 for r in rows)


def test_limit_check_errors():
    with pytest.raises(ValueError):
        conjugate.limit_check([], seeded(0), 1.0)
    with pytest.raises(ValueError):
        conjugate.limit_check([proc("additive")], seeded(0), 1.0)


@pytest.mark.parametrize("flavor", conjugate.FLAVORS)
@pytest.mark.parametrize("variant", ["ou", "mollifier", "diffq"])
def test_limit_gaps_decrease(flavor, variant):
    p = seeded(7)
    rows = conjugate.limit_check([proc(flavor, NoiseKind(variant, d)) for d in (0.1, 0.05, 0.025)], p, 1.0)
    gaps = [r.gap for r in rows]
    assert all(b < a * 1.1 for a, b in zip(gaps, gaps[1:])), gaps
    assert gaps[-1] < gaps[0]
    assert len({r.sup_white for r in rows}) == 1


def test_halving_epsilon_halves_the_white_supremum():
    p = seeded(3)
    a = conjugate.limit_check([proc("multiplicative", NoiseKind("ou", 0.05), eps=0.5)], p, 1.0)[0]
    b = conjugate.limit_check([proc("multiplicative", NoiseKind("ou", 0.05), eps=0.25)], p, 1.0)[0]
    assert b.sup_white == 0.5 * a.sup_white
    assert b.gap == pytest.approx(0.5 * a.gap, rel=1e-14)


@pytest.mark.parametrize("flavor", conjugate.FLAVORS)
def test_sublinear_growth_surrogate(flavor):
    # |x| <= eps (|w(t)| + int rate e^{-rate(t-s)} |w(s)| ds) <= 3 eps c_w (|t| + 1) for rate 1
    p = seeded(9, -60.0, 20.0, 2.0**-8)
    eps = 0.25
    pr = proc(flavor, eps=eps)
    i_lo, i_hi = p.index(-20.0), p.index(20.0)
    a = np.abs(conjugate.aux_series(pr, p, i_lo, i_hi)) * pr.phi_norm
    t = p.times[i_lo : i_hi + 1]
    reported = np.max(a / (np.abs(t) + 1.0))
    c_w = wiener.growth_constant(p).c_omega
    assert 0 < reported <= 3 * eps * c_w * (1 + 1e-9)
