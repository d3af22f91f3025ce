import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kkqkd import security
from kkqkd.channel import ChannelSegment, QanTopology
from kkqkd.security import FiniteSizeParams, SecurityParams

HOM, HET, DD = security.HOMODYNE, security.HETERODYNE, security.DD
T_EXP = 10 ** (-(0.21 * 5 + 6) / 10)


def P(**kw):
    base = dict(v_a=5.0, t=1.0, eps=0.0, eta=1.0, v_el=0.0, beta=0.95, f_rep=1e6, detection=HET)
    base.update(kw)
    return SecurityParams(**base)


def test_chi_values_examples():
    assert security.chi_values(P())[1] == pytest.approx(1.0)
    assert security.chi_values(P(eta=0.5, v_el=0.2))[1] == pytest.approx(3.8)
    assert security.chi_values(P(eta=0.5, v_el=0.2, detection=HOM))[1] == pytest.approx(1.4)
    assert security.chi_values(P())[0] == 0.0
    line, det, tot = security.chi_values(P(t=0.5, eps=0.1, eta=0.6, v_el=0.1))
    assert line == pytest.approx(1.1) and tot == pytest.approx(line + det / 0.5)


def test_params_validation():
    with pytest.raises(ValueError, match="t must"):
        P(t=0.0)
    with pytest.raises(ValueError, match="detection"):
        P(detection="balanced")
    with pytest.raises(ValueError):
        FiniteSizeParams(1e6, 1e6)
    with pytest.raises(ValueError):
        FiniteSizeParams(1e6, 5e5, eps_pe=1.0)


def test_mutual_information_examples():
    assert security.mutual_information(P(v_a=0.0)) == 0.0
    assert security.mutual_information(P()) == pytest.approx(math.log2(3.5), abs=1e-12)
    assert security.mutual_information(P()) == pytest.approx(1.8074, abs=1e-4)
    chi = 0.7
    assert security.mutual_information_from_chi(6.0, chi, True) == pytest.approx(
        2 * security.mutual_information_from_chi(6.0, chi, False))


def test_g_entropy_examples():
    assert security.g_entropy(0.0) == 0.0
    assert security.g_entropy(1.0) == pytest.approx(2.0)
    assert security.g_entropy(3.0) == pytest.approx(8 - 3 * math.log2(3))
    assert security.g_entropy(3.0) == pytest.approx(3.2451, abs=1e-4)
    with pytest.raises(ValueError):
        security.g_entropy(-0.1)


def test_symplectic_channel_examples():
    assert security.symplectic_channel(P()) == pytest.approx((1.0, 1.0), abs=1e-12)
    assert security.symplectic_channel(P(v_a=0.0, t=0.3)) == pytest.approx((1.0, 1.0), abs=1e-12)
    # without modulation Bob holds a thermal state of variance 1 + T eps
    assert security.symplectic_channel(P(v_a=0.0, t=0.3, eps=0.1)) == pytest.approx((1.03, 1.0), abs=1e-12)
    p = P(t=0.5, eps=0.1, eta=0.7, v_el=0.05)
    numeric = security.build_conditional_covariance(p).lambdas()[:2]
    assert security.symplectic_channel(p) == pytest.approx(numeric, abs=1e-9)


def test_pure_state_conditional():
    p = P()
    assert security.conditional_c_d(p) == pytest.approx((2.0, 1.0), abs=1e-12)
    assert security.symplectic_conditional(p) == pytest.approx((1.0, 1.0, 1.0), abs=1e-12)
    assert abs(security.holevo_bound(p)) < 1e-9


def test_lambda5_is_one():
    for det in (HOM, HET):
        assert security.symplectic_conditional(P(t=0.3, eps=0.05, eta=0.6, v_el=0.1, detection=det))[2] == 1.0


def _random_point(rng, detection):
    return P(v_a=rng.uniform(1, 20), t=rng.uniform(0.01, 1), eps=rng.uniform(0, 0.3),
             eta=rng.uniform(0.3, 0.99), v_el=rng.uniform(0, 0.3), detection=detection)


@pytest.mark.parametrize("detection", [HOM, HET])
def test_closed_form_matches_matrix_oracle(detection):
    rng = np.random.default_rng(0 if detection == HOM else 1)
    for _ in range(200):
        p = _random_point(rng, detection)
        closed = (*security.symplectic_channel(p), *security.symplectic_conditional(p))
        numeric = security.build_conditional_covariance(p).lambdas()
        assert np.max(np.abs(np.array(closed) - np.array(numeric))) < 1e-9
        assert min(closed) >= 1 - 1e-9


def test_gamma_ab1_blocks():
    p = P(v_a=4.0, t=0.4, eps=0.06, eta=0.8, v_el=0.1)
    g = security.build_conditional_covariance(p).gamma_ab1
    chi_line = security.chi_values(p)[0]
    assert np.allclose(g[:2, :2], p.v * np.eye(2))
    assert np.allclose(g[2:, 2:], p.t * (p.v + chi_line) * np.eye(2))


def test_eta_limit_converges():
    base = P(v_a=6.0, t=0.4, eps=0.05, v_el=0.0)
    limit = security.holevo_bound(base.replace(eta=1.0))
    limit_matrix = security.build_conditional_covariance(base.replace(eta=1.0)).lambdas()
    assert limit_matrix[2:] == pytest.approx(security.symplectic_conditional(base.replace(eta=1.0)), abs=1e-12)
    errs = []
    for k in range(2, 7):
        lam = security.build_conditional_covariance(base.replace(eta=1 - 10.0 ** -k)).lambdas()
        chi = sum(security._entropy_of(x) for x in lam[:2]) - sum(security._entropy_of(x) for x in lam[2:])
        errs.append(abs(chi - limit))
    assert errs[-1] < 1e-4
    assert all(b <= a + 1e-12 for a, b in zip(errs, errs[1:]))


def test_holevo_increases_with_eps():
    for det in (HOM, HET):
        values = [security.holevo_bound(P(t=0.3, eps=e, eta=0.6, v_el=0.1, detection=det))
                  for e in np.linspace(0, 0.3, 13)]
        assert all(b > a for a, b in zip(values, values[1:]))


def test_dd_matches_heterodyne():
    p = P(t=0.3, eps=0.05, eta=0.6, v_el=0.1)
    assert security.skr_asymptotic(p.replace(detection=DD)) == security.skr_asymptotic(p)


USERS = [(7.4496, 0.0237, 0.0178, 55.732), (7.7716, 0.0217, 0.0180, 56.915),
         (8.0080, 0.0268, 0.0186, 53.334), (7.5951, 0.0258, 0.0178, 54.284)]


def _experiment(v_a, eps, v_el):
    return SecurityParams(v_a, T_EXP, eps, 0.72, v_el, 0.96, 1e6, DD)


@pytest.mark.parametrize("v_a,eps,v_el,kbps", USERS)
def test_experiment_asymptotic(v_a, eps, v_el, kbps):
    r = security.skr_asymptotic(_experiment(v_a, eps, v_el))
    assert r.skr_bps / 1e3 == pytest.approx(kbps, rel=0.02)
    assert r.skr_clipped_bps == r.skr_bps


def test_zero_beta_gives_minus_holevo():
    p = _experiment(*USERS[0][:3]).replace(beta=0.0)
    r = security.skr_asymptotic(p)
    assert r.skr_bps == pytest.approx(-p.f_rep * r.chi_be) and r.skr_bps <= 0 and r.skr_clipped_bps == 0.0


@pytest.mark.parametrize("n_total,kbps", [(1e9, 26.156), (1e8, 22.529)])
def test_experiment_finite_size_user1(n_total, kbps):
    r = security.skr_finite_size(_experiment(*USERS[0][:3]), FiniteSizeParams.half(n_total))
    assert r.skr_bps / 1e3 == pytest.approx(kbps, rel=0.03)
    terms = r.finite_size_terms
    assert terms.t_min < T_EXP and terms.eps_max > USERS[0][1]
    assert terms.z == pytest.approx(6.4670, abs=1e-3)


def test_finite_size_converges_to_half_asymptotic():
    p = _experiment(*USERS[0][:3])
    fs = security.skr_finite_size(p, FiniteSizeParams.half(1e13)).skr_bps
    assert fs == pytest.approx(0.5 * security.skr_asymptotic(p).skr_bps, rel=0.005)


def test_finite_size_block_too_small():
    with pytest.raises(ValueError, match="too small"):
        security.skr_finite_size(P(v_a=0.5, t=0.001, eta=0.5), FiniteSizeParams.half(1e3))


@settings(max_examples=200)
@given(v_a=st.floats(1, 20), t=st.floats(0.01, 1), eps=st.floats(0, 0.3), eta=st.floats(0.3, 0.99),
       v_el=st.floats(0, 0.3), n=st.sampled_from([1e8, 1e10, 1e12]), det=st.sampled_from([HOM, HET]))
def test_finite_size_never_beats_asymptotic(v_a, t, eps, eta, v_el, n, det):
    p = P(v_a=v_a, t=t, eps=eps, eta=eta, v_el=v_el, detection=det)
    fs_params = FiniteSizeParams.half(n)
    try:
        fs = security.skr_finite_size(p, fs_params).skr_bps
    except ValueError:
        return
    assert fs <= fs_params.n_key / fs_params.n_total * security.skr_asymptotic(p).skr_bps + 1e-9


@settings(max_examples=150)
@given(v_a=st.floats(1, 20), t=st.floats(0.01, 1), eps=st.floats(0, 0.25), eta=st.floats(0.3, 0.95),
       v_el=st.floats(0, 0.25), beta=st.floats(0.8, 0.99), det=st.sampled_from([HOM, HET]),
       d=st.floats(0.005, 0.05))
def test_skr_monotone_in_eps_and_beta(v_a, t, eps, eta, v_el, beta, det, d):
    p = P(v_a=v_a, t=t, eps=eps, eta=eta, v_el=v_el, beta=beta, detection=det)
    skr = security.skr_asymptotic(p).skr_bps
    tol = 1e-7 * max(1.0, abs(skr))
    assert security.skr_asymptotic(p.replace(eps=eps + d)).skr_bps <= skr + tol
    assert security.skr_asymptotic(p.replace(beta=min(beta + d, 1.0))).skr_bps >= skr - tol


def _operating_grid():
    for det in security.DETECTIONS:
        for d in np.arange(0.0, 30.01, 0.5):
            t = 10 ** (-(0.2 * d + 6) / 10)
            for e in FIG3_EPS:
                yield P(v_a=5.0, t=t, eps=e, eta=0.5, v_el=0.2, beta=0.98, detection=det)
        for v_a, e, v_el, _ in USERS:
            yield _experiment(v_a, e, v_el).replace(detection=det)


def test_skr_monotone_in_v_el_and_eta_on_operating_grid():
    for p in _operating_grid():
        skr = security.skr_asymptotic(p).skr_bps
        tol = 1e-7 * max(1.0, abs(skr))
        for d in (0.005, 0.02, 0.05):
            assert security.skr_asymptotic(p.replace(v_el=p.v_el + d)).skr_bps <= skr + tol
            assert security.skr_asymptotic(p.replace(eta=p.eta + d)).skr_bps >= skr - tol


def test_trusted_noise_can_raise_the_rate():
    # high excess noise: extra trusted detector noise lowers chi_BE faster than I_AB
    p = P(v_a=3.1796, t=0.48587, eps=0.17974, eta=0.90222, v_el=0.21182, beta=0.9844, detection=HOM)
    noisier = p.replace(v_el=p.v_el + 0.02)
    assert security.skr_asymptotic(noisier).skr_bps > security.skr_asymptotic(p).skr_bps > 0
    for q in (p, noisier):
        closed = [*security.symplectic_channel(q), *security.symplectic_conditional(q)]
        assert closed == pytest.approx(security.build_conditional_covariance(q).lambdas(), abs=1e-9)


FIG3_EPS = (0.1, 0.095, 0.09, 0.085)


def _fig3():
    topo = QanTopology((ChannelSegment.fiber(0.0, 0.2),), ChannelSegment.splitter(loss_db=6.0),
                       tuple(() for _ in FIG3_EPS))
    per_user = [P(v_a=5.0, eps=e, eta=0.5, v_el=0.2, beta=0.98, t=1.0) for e in FIG3_EPS]
    return topo, per_user


def test_fig3_ordering_and_monotone():
    topo, per_user = _fig3()
    grid = np.arange(0.0, 50.01, 0.5)
    rows = security.qan_sweep(topo, per_user, grid)
    by_user = {u: [r.skr_asym_bps for r in rows if r.user == u] for u in range(4)}
    for k in range(len(grid)):
        assert by_user[3][k] >= by_user[2][k] >= by_user[1][k] >= by_user[0][k]
    for curve in by_user.values():
        assert all(b <= a for a, b in zip(curve, curve[1:]))


def test_sweep_symmetric_users_identical():
    topo, per_user = _fig3()
    same = [per_user[0]] * 4
    rows = security.qan_sweep(topo, same, [0.0, 10.0])
    for d in (0.0, 10.0):
        values = {r.skr_asym_bps for r in rows if r.distance_km == d}
        assert len(values) == 1


def test_sweep_equals_point_to_point():
    topo, per_user = _fig3()
    rows = security.qan_sweep(topo, per_user, [12.5])
    for r in rows:
        t = 10 ** (-(0.2 * 12.5 + 6) / 10)
        direct = security.skr_asymptotic(per_user[r.user].replace(t=t))
        assert r.t_eff == pytest.approx(t, rel=1e-12)
        assert r.skr_asym_bps == pytest.approx(direct.skr_bps, rel=1e-12)


def test_fig3_holevo_dual_implementation():
    topo, per_user = _fig3()
    row = security.qan_sweep(topo, per_user, [0.0])[0]
    lam = security.build_conditional_covariance(per_user[0].replace(t=row.t_eff)).lambdas()

    def entropy(x):
        nu = (x - 1) / 2
        return (nu + 1) * math.log2(nu + 1) - (nu * math.log2(nu) if nu > 0 else 0.0)

    independent = sum(map(entropy, lam[:2])) - sum(map(entropy, lam[2:]))
    assert row.chi_be == pytest.approx(independent, abs=1e-9)


def test_sweep_errors():
    topo, per_user = _fig3()
    with pytest.raises(ValueError, match="empty"):
        security.qan_sweep(topo, per_user, [])
    with pytest.raises(ValueError):
        security.qan_sweep(topo, per_user[:2], [0.0])


def test_quantum_efficiency_examples():
    assert security.quantum_efficiency_from_responsivity(0.9, 1550e-9) == pytest.approx(0.72, abs=1e-3)
    assert security.quantum_efficiency_from_responsivity(0.45, 1550e-9) == pytest.approx(0.36, abs=1e-3)
    from scipy import constants

    unit = constants.e * 1550e-9 / (constants.h * constants.c)
    assert security.quantum_efficiency_from_responsivity(unit, 1550e-9) == pytest.approx(1.0, abs=1e-12)
    with pytest.raises(ValueError, match="eta"):
        security.quantum_efficiency_from_responsivity(1.5, 1550e-9)
