"""Global likelihood, complete-data reconstruction, and coordinate ascent."""

import numpy as np
import pytest
from numpy.testing import assert_allclose

from rispos import channel as ch
from rispos import coarse_est as ce
from rispos import geometry as gm
from rispos import sage as sg
from rispos.params import ChannelParams


def _loglik_reference(params, rx, pilots, sched, geom, cfg):
    """||Y||^2 - ||Y - model||^2 with the model built channel-by-channel."""
    total = 0.0
    for n in range(1, cfg.n_subcarriers + 1):
        y_n = rx.y[:, :, n - 1]
        mu = np.column_stack([
            ch.build_channel(cfg, geom, params, sched.slot_phases[t], n)
            @ pilots[:, t] for t in range(cfg.t_total)])
        total += np.linalg.norm(y_n) ** 2 - np.linalg.norm(y_n - mu) ** 2
    return total


def _random_params(s, rng):
    n_paths = 2
    return ChannelParams(
        tau=rng.uniform(0.05, 0.9, n_paths) * s.cfg.n_subcarriers
        / s.cfg.bandwidth,
        gains=1e-6 * (rng.standard_normal(n_paths)
                      + 1j * rng.standard_normal(n_paths)),
        theta_t=rng.uniform(-1.2, 1.2, n_paths),
        phi_in=rng.uniform(0.3, 2.8, n_paths),
        psi_in=rng.uniform(np.pi / 2, 1.5 * np.pi, n_paths),
        theta_r0=s.true.theta_r0, phi_out0=s.true.phi_out0,
        psi_out0=s.true.psi_out0)


def test_loglik_matches_residual_form(setup20):
    """Double-sum expression equals the norm form on random inputs."""
    s = setup20
    rng = np.random.default_rng(0)
    shape = (s.geom.n_bs, s.cfg.t_total, s.cfg.n_subcarriers)
    for _ in range(5):
        params = _random_params(s, rng)
        y = 1e-5 * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))
        rx = ch.RxSignal(y=y, pilots=s.pilots)
        lam = sg.global_log_likelihood(params, rx, s.pilots, s.sched,
                                       s.geom, s.cfg)
        ref = _loglik_reference(params, rx, s.pilots, s.sched, s.geom, s.cfg)
        assert abs(lam - ref) < 1e-8 * max(abs(ref), 1e-30)


def test_loglik_zero_gain(setup20):
    s = setup20
    silent = s.true.copy()
    silent.gains[:] = 0.0
    lam = sg.global_log_likelihood(silent, s.rx_noisy, s.pilots, s.sched,
                                   s.geom, s.cfg)
    assert lam == 0.0


def test_loglik_local_optimality_at_truth(setup20):
    s = setup20
    lam0 = sg.global_log_likelihood(s.true, s.rx_clean, s.pilots, s.sched,
                                    s.geom, s.cfg)
    rng = np.random.default_rng(1)
    vec0 = s.true.to_vector()
    scales = np.tile([1e-10, 1e-8, 1e-8, 1e-4, 1e-4, 1e-4], 2)
    for _ in range(100):
        vec = vec0 + scales * rng.standard_normal(vec0.size)
        pert = ChannelParams.from_vector(vec, s.true.theta_r0,
                                         s.true.phi_out0, s.true.psi_out0)
        lam = sg.global_log_likelihood(pert, s.rx_clean, s.pilots, s.sched,
                                       s.geom, s.cfg)
        assert lam <= lam0 + 1e-10 * abs(lam0)


def test_reconstruct_single_path_identity(setup20):
    s = setup20
    single = ChannelParams(
        tau=s.true.tau[:1], gains=s.true.gains[:1],
        theta_t=s.true.theta_t[:1], phi_in=s.true.phi_in[:1],
        psi_in=s.true.psi_in[:1], theta_r0=s.true.theta_r0,
        phi_out0=s.true.phi_out0, psi_out0=s.true.psi_out0)
    rx = ch.synthesize_rx(s.cfg, s.geom, single, s.sched, s.pilots,
                          noise_seed=5)
    y_0 = sg.reconstruct_complete_data(rx, single, 0, s.pilots, s.sched,
                                       s.geom, s.cfg)
    assert np.array_equal(y_0, rx.y)


def test_reconstruct_recovers_planted_path(setup20):
    s = setup20
    for q in range(2):
        only_q = s.true.copy()
        only_q.gains = s.true.gains.copy()
        only_q.gains[1 - q] = 0.0
        planted = ch.synthesize_rx(s.cfg, s.geom, only_q, s.sched, s.pilots,
                                   noiseless=True)
        y_q = sg.reconstruct_complete_data(s.rx_clean, s.true, q, s.pilots,
                                           s.sched, s.geom, s.cfg)
        scale = np.max(np.abs(planted.y))
        assert np.max(np.abs(y_q - planted.y)) < 1e-10 * scale


def test_reconstruct_sum_identity(setup20):
    s = setup20
    prob = sg.SageProblem(s.rx_noisy, s.pilots, s.sched, s.geom, s.cfg,
                          s.known)
    y_0 = prob.complete_data(s.true, 0)
    interference = prob.model_tensor(s.true, skip=0)
    scale = np.max(np.abs(s.rx_noisy.y))
    assert np.max(np.abs(y_0 + interference - s.rx_noisy.y)) < 1e-15 * scale


def _planted_single(s, seed=None):
    only = s.true.copy()
    only.gains = s.true.gains.copy()
    only.gains[1] = 0.0
    rx = ch.synthesize_rx(s.cfg, s.geom, only, s.sched, s.pilots,
                          noiseless=True)
    return only, rx


def test_gain_closed_form_recovers_planted(setup20):
    s = setup20
    only, rx = _planted_single(s)
    d_hat = sg.gain_closed_form(rx.y, only.tau[0], only.theta_t[0],
                                only.phi_in[0], only.psi_in[0], rx, s.pilots,
                                s.sched, s.geom, s.cfg, s.known)
    assert abs(d_hat - only.gains[0]) < 1e-10 * abs(only.gains[0])


def test_gain_closed_form_linearity(setup20):
    s = setup20
    only, rx = _planted_single(s)
    args = (only.tau[0], only.theta_t[0], only.phi_in[0], only.psi_in[0],
            rx, s.pilots, s.sched, s.geom, s.cfg, s.known)
    d1 = sg.gain_closed_form(rx.y, *args)
    c = 0.7 - 2.3j
    d2 = sg.gain_closed_form(c * rx.y, *args)
    assert abs(d2 - c * d1) < 1e-14 * abs(d1)


def test_gain_trace_form_identity(setup20):
    """Trace and beamformed-vector numerators agree (gain closed form)."""
    s = setup20
    rng = np.random.default_rng(2)
    shape = (s.geom.n_bs, s.cfg.t_total, s.cfg.n_subcarriers)
    y_q = 1e-5 * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))
    params = _random_params(s, rng)
    q = 0
    rx = ch.RxSignal(y=y_q, pilots=s.pilots)
    d_vec = sg.gain_closed_form(y_q, params.tau[q], params.theta_t[q],
                                params.phi_in[q], params.psi_in[q], rx,
                                s.pilots, s.sched, s.geom, s.cfg, s.known)

    a_b = ch.bs_steering(s.geom, s.known[0])
    a_m = ch.ms_steering(s.geom, params.theta_t[q])
    a_r = ch.ris_diff_steering(s.geom, params.phi_in[q], params.psi_in[q],
                               s.known[1], s.known[2])
    sigma = s.sched.slot_phases @ a_r
    h_q = np.outer(a_b, a_m.conj())
    num = 0.0
    den = 0.0
    for n in range(s.cfg.n_subcarriers):
        hxs = h_q @ s.pilots @ np.diag(sigma)
        phase = np.exp(2j * np.pi * params.tau[q] * n * s.cfg.bandwidth
                       / s.cfg.n_subcarriers)
        num += phase * np.trace(hxs.conj().T @ y_q[:, :, n])
        den += np.trace(hxs.conj().T @ hxs)
    assert abs(d_vec - num / den) < 1e-10 * abs(d_vec)


def test_objective_dominance_at_truth(setup20):
    s = setup20
    only, rx = _planted_single(s)
    args_ctx = (rx, s.pilots, s.sched, s.geom, s.cfg, s.known)
    f_true = sg.single_path_objective(rx.y, only.tau[0], only.theta_t[0],
                                      only.phi_in[0], only.psi_in[0],
                                      *args_ctx)
    rng = np.random.default_rng(3)
    for _ in range(100):
        tau = rng.uniform(0.05, 0.9) * s.cfg.n_subcarriers / s.cfg.bandwidth
        th = rng.uniform(-1.2, 1.2)
        ph = rng.uniform(0.3, 2.8)
        ps = rng.uniform(np.pi / 2, 1.5 * np.pi)
        f = sg.single_path_objective(rx.y, tau, th, ph, ps, *args_ctx)
        assert f <= f_true * (1 + 1e-12)


def test_objective_phase_invariance(setup20):
    s = setup20
    only, rx = _planted_single(s)
    args_ctx = (rx, s.pilots, s.sched, s.geom, s.cfg, s.known)
    f1 = sg.single_path_objective(rx.y, only.tau[0], only.theta_t[0],
                                  only.phi_in[0], only.psi_in[0], *args_ctx)
    f2 = sg.single_path_objective(np.exp(1.1j) * rx.y, only.tau[0],
                                  only.theta_t[0], only.phi_in[0],
                                  only.psi_in[0], *args_ctx)
    assert abs(f1 - f2) < 1e-12 * abs(f1)


def test_concentrated_equals_substituted_likelihood(setup20):
    """F equals the two-term likelihood at the closed-form gain."""
    s = setup20
    rng = np.random.default_rng(4)
    shape = (s.geom.n_bs, s.cfg.t_total, s.cfg.n_subcarriers)
    for _ in range(5):
        y_q = 1e-5 * (rng.standard_normal(shape)
                      + 1j * rng.standard_normal(shape))
        params = _random_params(s, rng)
        rx = ch.RxSignal(y=y_q, pilots=s.pilots)
        args = (params.tau[0], params.theta_t[0], params.phi_in[0],
                params.psi_in[0], rx, s.pilots, s.sched, s.geom, s.cfg,
                s.known)
        f_val = sg.single_path_objective(y_q, *args)
        delta = sg.gain_closed_form(y_q, *args)
        single = ChannelParams(
            tau=params.tau[:1], gains=np.array([delta]),
            theta_t=params.theta_t[:1], phi_in=params.phi_in[:1],
            psi_in=params.psi_in[:1], theta_r0=s.known[0],
            phi_out0=s.known[1], psi_out0=s.known[2])
        l_val = sg.global_log_likelihood(single, rx, s.pilots, s.sched,
                                         s.geom, s.cfg)
        assert abs(l_val - f_val) < 1e-8 * max(abs(f_val), 1e-30)


def test_gain_stationarity(setup20):
    """dL/d(conj gain) vanishes at the closed-form gain."""
    s = setup20
    rng = np.random.default_rng(5)
    shape = (s.geom.n_bs, s.cfg.t_total, s.cfg.n_subcarriers)
    y_q = 1e-5 * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))
    params = _random_params(s, rng)
    rx = ch.RxSignal(y=y_q, pilots=s.pilots)
    prob = sg.SageProblem(rx, s.pilots, s.sched, s.geom, s.cfg, s.known)
    pa = prob.beamformed(y_q)
    proj = prob.ms_proj(params.theta_t[0])
    sigma = prob.ris_slot_scalars(params.phi_in[0], params.psi_in[0])
    num = prob._numerator(pa, params.tau[0], proj, sigma)
    den = prob._denominator(proj, sigma)
    delta = num / den
    # derivative of L w.r.t. conj(delta) is numerator - delta * denominator
    assert abs(num - delta * den) < 1e-6


def test_objective_zero_denominator(setup20):
    s = setup20
    rx = ch.RxSignal(y=s.rx_noisy.y, pilots=np.zeros_like(s.pilots))
    with pytest.raises(sg.ZeroDenominator):
        sg.single_path_objective(rx.y, s.true.tau[0], s.true.theta_t[0],
                                 s.true.phi_in[0], s.true.psi_in[0], rx,
                                 np.zeros_like(s.pilots), s.sched, s.geom,
                                 s.cfg, s.known)


def test_coordinate_cycle_fixed_point(setup20):
    s = setup20
    prob = sg.SageProblem(s.rx_clean, s.pilots, s.sched, s.geom, s.cfg,
                          s.known)
    params = s.true.copy()
    opts = sg.SageOptions()
    trace = sg.coordinate_update_cycle(prob, params, 0, opts)
    assert abs(params.tau[0] - s.true.tau[0]) \
        < 1e-6 / s.cfg.bandwidth
    assert abs(params.theta_t[0] - s.true.theta_t[0]) < 1e-6
    assert abs(params.phi_in[0] - s.true.phi_in[0]) < 1e-6
    assert abs(params.psi_in[0] - s.true.psi_in[0]) < 1e-6
    assert list(trace) == ["start", "tau", "theta_t", "phi_in", "psi_in"]
    vals = list(trace.values())
    assert np.all(np.diff(vals) >= -1e-9 * np.abs(vals[0]))


def test_coordinate_cycle_ascent_any_input(setup20):
    s = setup20
    prob = sg.SageProblem(s.rx_noisy, s.pilots, s.sched, s.geom, s.cfg,
                          s.known)
    rng = np.random.default_rng(6)
    params = _random_params(s, rng)
    trace = sg.coordinate_update_cycle(prob, params, 1, sg.SageOptions())
    vals = list(trace.values())
    assert np.all(np.diff(vals) >= -1e-9 * max(abs(vals[0]), 1e-30))
    assert sg.UPDATE_ORDER == ("tau", "theta_t", "phi_in", "psi_in", "delta")


def test_run_sage_noiseless_ongrid(ongrid):
    """SAGE leaves exact coarse estimates essentially unchanged."""
    geom, cfg = ongrid.geom, ongrid.cfg
    gains = ch.draw_gains(cfg, geom, 42)
    true = gm.true_channel_params(geom, gains)
    known = (true.theta_r0, true.phi_out0, true.psi_out0)
    sched = ch.make_phase_schedule(cfg, geom.n_ris, 7)
    pilots = ch.make_pilots(cfg, geom.n_ms, 8)
    a_m, ris_dict = ch.build_dictionaries(cfg, geom)
    rx = ch.synthesize_rx(cfg, geom, true, sched, pilots, noiseless=True)
    coarse = ce.run_coarse(rx, pilots, sched, geom, cfg, 2, known, a_m,
                           ris_dict)
    refined, info = sg.run_sage(rx, pilots, sched, geom, cfg, coarse.params)
    assert info.monotone_ok
    assert np.max(np.abs(refined.theta_t - true.theta_t)) < 1e-6
    assert np.max(np.abs(refined.phi_in - true.phi_in)) < 1e-6
    assert np.max(np.abs(refined.psi_in - true.psi_in)) < 1e-6
    assert np.max(np.abs(refined.tau - true.tau)) * cfg.bandwidth < 1e-6
    assert np.max(np.abs(refined.gains - true.gains)) \
        < 1e-6 * np.max(np.abs(true.gains))


def test_run_sage_monotone_noisy(setup20):
    s = setup20
    a_m, ris_dict = s.a_m_dict, s.ris_dict
    coarse = ce.run_coarse(s.rx_noisy, s.pilots, s.sched, s.geom, s.cfg, 2,
                           s.known, a_m, ris_dict)
    refined, info = sg.run_sage(s.rx_noisy, s.pilots, s.sched, s.geom, s.cfg,
                                coarse.params)
    assert info.monotone_ok
    hist = np.asarray(info.loglik_history)
    assert np.all(np.diff(hist) >= -1e-8 * np.abs(hist[:-1]))


def test_run_sage_single_path_reduction(setup20):
    """Q=0: one SAGE cycle is exactly one per-path coordinate ascent."""
    s = setup20
    single = ChannelParams(
        tau=s.true.tau[:1], gains=s.true.gains[:1],
        theta_t=s.true.theta_t[:1], phi_in=s.true.phi_in[:1],
        psi_in=s.true.psi_in[:1], theta_r0=s.true.theta_r0,
        phi_out0=s.true.phi_out0, psi_out0=s.true.psi_out0)
    rx = ch.synthesize_rx(s.cfg, s.geom, single, s.sched, s.pilots,
                          noise_seed=9)
    init = single.copy()
    init.tau[0] += 3e-9
    init.theta_t[0] += 0.01
    opts = sg.SageOptions(max_cycles=1)
    refined, _ = sg.run_sage(rx, s.pilots, s.sched, s.geom, s.cfg, init,
                             opts)
    prob = sg.SageProblem(rx, s.pilots, s.sched, s.geom, s.cfg, s.known)
    manual = init.copy()
    sg.coordinate_update_cycle(prob, manual, 0, sg.SageOptions())
    assert_allclose(refined.to_vector(), manual.to_vector(), rtol=0,
                    atol=1e-30)


def test_sage_beats_coarse_at_20dbm(mini_mc):
    """Refined RMSE strictly below coarse for every parameter class."""
    rep = mini_mc
    for cls in ("delta_re", "delta_im", "tau", "theta_t", "phi_in", "psi_in"):
        coarse = rep.rmse["coarse"][cls][0]
        sage = rep.rmse["sage"][cls][0]
        assert sage < coarse, f"{cls}: sage {sage} vs coarse {coarse}"
