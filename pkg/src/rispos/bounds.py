"""Fisher information, parameter-transformation Jacobian, and error bounds.

The channel FIM uses the closed-form derivatives of the noiseless model
with respect to each per-path parameter; the position-domain FIM follows
by congruence with the geometric Jacobian. Known RIS-BS leg angles are
constants, not information-bearing rows.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .channel import (PhaseSchedule, SystemConfig, ms_steering,
                      ris_diff_steering, subcarrier_ramp)
from .errors import DegenerateGeometry
from .geometry import SPEED_OF_LIGHT, ScenarioGeometry
from .params import ChannelParams, PositionParams

_COND_LIMIT = 1e12


def model_field(params: ChannelParams, pilots: np.ndarray,
                schedule: PhaseSchedule, geom: ScenarioGeometry,
                cfg: SystemConfig) -> np.ndarray:
    """Noiseless per-slot/per-subcarrier scalar field (T, N).

    The full noiseless tensor is the BS steering vector times this field;
    all parameter derivatives share that rank-1 structure.
    """
    a_m = ms_steering(geom, params.theta_t)
    a_r = ris_diff_steering(geom, params.phi_in, params.psi_in,
                            params.phi_out0, params.psi_out0)
    sigma = schedule.slot_phases @ a_r                    # (T, Q+1)
    proj = pilots.T @ a_m.conj()                          # (T, Q+1) a_M^H x_t
    ramp = subcarrier_ramp(params.tau, cfg.bandwidth, cfg.n_subcarriers)
    return np.einsum("q,tq,nq->tn", params.gains, sigma * proj, ramp)


def model_field_derivs(params: ChannelParams, pilots: np.ndarray,
                       schedule: PhaseSchedule, geom: ScenarioGeometry,
                       cfg: SystemConfig) -> np.ndarray:
    """Analytic derivatives of the scalar field, shape (6(Q+1), T, N).

    Parameter order per path: [tau, delta_re, delta_im, theta_t, phi_in,
    psi_in]. Elevation/azimuth derivatives act on the RIS steering
    vector through diagonal index weightings; the departure-angle
    derivative weights the MS array index ramp.
    """
    lam = geom.wavelength
    n_q = params.n_paths
    a_m = ms_steering(geom, params.theta_t)
    a_r = ris_diff_steering(geom, params.phi_in, params.psi_in,
                            params.phi_out0, params.psi_out0)
    sigma = schedule.slot_phases @ a_r
    proj = pilots.T @ a_m.conj()
    ramp = subcarrier_ramp(params.tau, cfg.bandwidth, cfg.n_subcarriers)

    k_el = np.repeat(np.arange(geom.n_ris_el), geom.n_ris_az)
    k_az = np.tile(np.arange(geom.n_ris_az), geom.n_ris_el)
    idx_ms = np.arange(geom.n_ms)
    freq_slope = 2j * np.pi * cfg.bandwidth / cfg.n_subcarriers

    out = np.zeros((6 * n_q, cfg.t_total, cfg.n_subcarriers), dtype=complex)
    for q in range(n_q):
        dq = params.gains[q]
        base_tn = np.outer(sigma[:, q] * proj[:, q], ramp[:, q])
        # tau
        out[6 * q + 0] = -freq_slope * dq * base_tn * np.arange(cfg.n_subcarriers)
        # gain real / imaginary parts
        out[6 * q + 1] = base_tn
        out[6 * q + 2] = 1j * base_tn
        # departure angle: d(a_M^H x)/d(theta) via the index ramp
        dproj = 2j * np.pi * geom.d_ms / lam * np.cos(params.theta_t[q]) * (
            pilots.T @ (idx_ms * a_m[:, q].conj()))
        out[6 * q + 3] = dq * np.outer(sigma[:, q] * dproj, ramp[:, q])
        # elevation arrival angle
        d_phi = 2j * np.pi * (
            geom.d_ris_el / lam * np.sin(params.phi_in[q]) * k_el
            - geom.d_ris_az / lam * np.sin(params.psi_in[q])
            * np.cos(params.phi_in[q]) * k_az)
        dsig = schedule.slot_phases @ (d_phi * a_r[:, q])
        out[6 * q + 4] = dq * np.outer(dsig * proj[:, q], ramp[:, q])
        # azimuth arrival angle
        d_psi = -2j * np.pi * geom.d_ris_az / lam * np.cos(params.psi_in[q]) \
            * np.sin(params.phi_in[q]) * k_az
        dsig = schedule.slot_phases @ (d_psi * a_r[:, q])
        out[6 * q + 5] = dq * np.outer(dsig * proj[:, q], ramp[:, q])
    return out


def fim_channel(params: ChannelParams, pilots: np.ndarray,
                schedule: PhaseSchedule, geom: ScenarioGeometry,
                cfg: SystemConfig, sigma2: float | None = None) -> np.ndarray:
    """FIM of the channel parameters, shape (6(Q+1), 6(Q+1)).

    Entry (u, v) is (2/sigma^2) sum_n Re{d_u mu[n]^H d_v mu[n]}; the
    shared BS steering factor contributes the antenna count.
    """
    if sigma2 is None:
        sigma2 = cfg.noise_power
    derivs = model_field_derivs(params, pilots, schedule, geom, cfg)
    inner = np.einsum("utn,vtn->uv", derivs.conj(), derivs)
    return 2.0 * geom.n_bs / sigma2 * np.real(inner)


def _unit_diff(a: np.ndarray, b: np.ndarray, what: str):
    diff = a - b
    dist = float(np.linalg.norm(diff))
    if dist <= 0.0:
        raise DegenerateGeometry(f"zero distance: {what}")
    return diff, dist


def _dtheta_dpoint(target: np.ndarray, ms: np.ndarray, alpha: float):
    """Gradients of the departure angle w.r.t. the far point and the MS."""
    a = np.array([np.cos(alpha), -np.sin(alpha), 0.0])
    u, h = _unit_diff(target, ms, "AOD leg")
    g = float(a @ u)
    root = h * h - g * g
    if root <= 0.0:
        raise DegenerateGeometry("departure angle at +-pi/2")
    root = np.sqrt(root)
    d_target = (a * h * h - g * u) / (h * h * root)
    d_ms = -d_target
    a_dot = np.array([-np.sin(alpha), -np.cos(alpha), 0.0])
    d_alpha = float(a_dot @ u) / root
    return d_target, d_ms, d_alpha


def _dphi_dpoint(ris: np.ndarray, point: np.ndarray):
    """Gradient of the elevation arrival angle w.r.t. the source point."""
    u, h = _unit_diff(ris, point, "elevation leg")
    w = u[2]
    root = h * h - w * w
    if root <= 0.0:
        raise DegenerateGeometry("elevation angle gradient undefined")
    root = np.sqrt(root)
    return np.array([-u[0] * w, -u[1] * w, h * h - w * w]) / (h * h * root)


def _dpsi_dpoint(ris: np.ndarray, point: np.ndarray):
    """Gradient of the azimuth arrival angle w.r.t. the source point."""
    u = np.asarray(ris, float) - np.asarray(point, float)
    rho2 = u[0] ** 2 + u[1] ** 2
    ax = abs(u[0])
    if rho2 <= 0.0 or ax <= 0.0:
        raise DegenerateGeometry("azimuth angle gradient undefined")
    return np.array([-u[0] * u[1], u[0] ** 2, 0.0]) / (rho2 * ax)


def transformation_matrix(pos: PositionParams, ris: np.ndarray,
                          bs: np.ndarray) -> np.ndarray:
    """Jacobian d(eta)^T/d(eta~), shape (5Q+6, 6(Q+1)).

    Rows follow the position-parameter vector (gains, MS position,
    rotation, scatterers); columns follow the channel-parameter vector.
    """
    ris = np.asarray(ris, float)
    q_n = pos.n_scatterers
    n_paths = q_n + 1
    rows = 5 * q_n + 6
    cols = 6 * n_paths
    t_mat = np.zeros((rows, cols))
    m_off = 2 * n_paths           # row offset of the MS coordinates
    a_off = m_off + 3             # row of alpha

    def s_off(qq: int) -> int:    # row offset of scatterer q (1-based)
        return a_off + 1 + 3 * (qq - 1)

    c = SPEED_OF_LIGHT
    for q in range(n_paths):
        col = 6 * q
        # gain identity blocks
        t_mat[2 * q, col + 1] = 1.0
        t_mat[2 * q + 1, col + 2] = 1.0

        if q == 0:
            u, h = _unit_diff(pos.ms, ris, "MS-RIS")
            t_mat[m_off:m_off + 3, col + 0] = u / (c * h)
            d_t, d_m, d_a = _dtheta_dpoint(ris, pos.ms, pos.alpha)
            t_mat[m_off:m_off + 3, col + 3] = d_m
            t_mat[a_off, col + 3] = d_a
            t_mat[m_off:m_off + 3, col + 4] = _dphi_dpoint(ris, pos.ms)
            t_mat[m_off:m_off + 3, col + 5] = _dpsi_dpoint(ris, pos.ms)
        else:
            s = pos.scatterers[q - 1]
            u_ms, h_ms = _unit_diff(pos.ms, s, "MS-scatterer")
            u_sr, h_sr = _unit_diff(s, ris, "scatterer-RIS")
            t_mat[m_off:m_off + 3, col + 0] = u_ms / (c * h_ms)
            t_mat[s_off(q):s_off(q) + 3, col + 0] = \
                u_sr / (c * h_sr) - u_ms / (c * h_ms)
            d_t, d_m, d_a = _dtheta_dpoint(s, pos.ms, pos.alpha)
            t_mat[m_off:m_off + 3, col + 3] = d_m
            t_mat[s_off(q):s_off(q) + 3, col + 3] = d_t
            t_mat[a_off, col + 3] = d_a
            t_mat[s_off(q):s_off(q) + 3, col + 4] = _dphi_dpoint(ris, s)
            t_mat[s_off(q):s_off(q) + 3, col + 5] = _dpsi_dpoint(ris, s)
    return t_mat


@dataclass
class BoundReport:
    """Per-parameter CRLBs plus position/orientation error bounds."""

    crlb_channel: np.ndarray       # (6(Q+1),) variances in natural units
    peb: float                     # meters
    oeb: float                     # radians
    fim_position: np.ndarray
    cond_channel: float
    cond_position: float
    singular: bool


def _inv_psd(mat: np.ndarray) -> tuple[np.ndarray, float, bool]:
    """Eigendecomposition-based inverse with condition reporting.

    The matrix mixes parameters of wildly different units (seconds,
    radians, raw gains), so it is diagonally preconditioned to a
    correlation-like form first; the condition number and pseudo-inverse
    cutoff apply to that scaled matrix.
    """
    sym = 0.5 * (mat + mat.T)
    d = np.sqrt(np.maximum(np.diag(sym), np.finfo(float).tiny))
    scaled = sym / np.outer(d, d)
    vals, vecs = np.linalg.eigh(scaled)
    top = float(np.max(np.abs(vals)))
    if top <= 0.0:
        return np.full_like(sym, np.inf), np.inf, True
    cond = top / max(float(np.min(np.abs(vals))), np.finfo(float).tiny)
    singular = cond > _COND_LIMIT
    floor = top / _COND_LIMIT
    inv_vals = np.where(np.abs(vals) > floor, 1.0 / vals, 0.0)
    inv_scaled = (vecs * inv_vals) @ vecs.T
    inv = inv_scaled / np.outer(d, d)
    return inv, cond, singular


def position_bounds(j_eta: np.ndarray, t_mat: np.ndarray) -> BoundReport:
    """CRLBs of the channel parameters and PEB/OEB of the position ones."""
    inv_eta, cond_eta, sing_eta = _inv_psd(j_eta)
    n_paths = j_eta.shape[0] // 6
    j_pos = t_mat @ j_eta @ t_mat.T
    inv_pos, cond_pos, sing_pos = _inv_psd(j_pos)
    m_off = 2 * n_paths
    peb = float(np.sqrt(np.trace(inv_pos[m_off:m_off + 3, m_off:m_off + 3])))
    oeb = float(np.sqrt(inv_pos[m_off + 3, m_off + 3]))
    return BoundReport(
        crlb_channel=np.diag(inv_eta).copy(), peb=peb, oeb=oeb,
        fim_position=j_pos, cond_channel=cond_eta, cond_position=cond_pos,
        singular=bool(sing_eta or sing_pos))
