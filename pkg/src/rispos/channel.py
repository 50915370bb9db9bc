"""Channel construction and pilot-signal synthesis.

Builds the cascaded MS-RIS-BS channel, the RIS phase-shift schedule,
random binary pilots, angular dictionaries, and the received OFDM
pilot tensor with circularly-symmetric Gaussian noise.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import geometry
from .errors import DimensionMismatch, ScheduleInfeasible
from .geometry import ScenarioGeometry, steer_ula, steer_upa
from .params import ChannelParams


def dbm_to_watt(p_dbm: float) -> float:
    return 10.0 ** ((p_dbm - 30.0) / 10.0)


def watt_to_dbm(p_w: float) -> float:
    return 10.0 * np.log10(p_w) + 30.0


@dataclass
class SystemConfig:
    """Waveform, slot-schedule, power, and dictionary-grid settings."""

    fc: float = 4.9e9                  # carrier, Hz
    bandwidth: float = 20e6            # Hz
    n_subcarriers: int = 20
    t_total: int = 37                  # pilot slots T
    t1: int = 16                       # slots of the first phase block
    n_blocks: int = 7                  # extra time blocks (Upsilon)
    v_slots: int = 3                   # slots per extra block
    p_tx: float = dbm_to_watt(20.0)    # transmit power, watts
    noise_density: float = dbm_to_watt(-174.0)  # W/Hz
    g_ms: int = 128                    # AOD grid size
    g_ris_az: int = 10
    g_ris_el: int = 10
    path_loss_exponent: float = 2.2
    shadow_std_db: float = 4.0

    @property
    def wavelength(self) -> float:
        return geometry.SPEED_OF_LIGHT / self.fc

    @property
    def noise_power(self) -> float:
        """Per-subcarrier noise power: density times subcarrier bandwidth."""
        return self.noise_density * self.bandwidth / self.n_subcarriers

    def validate(self, n_paths: int) -> None:
        """Check the slot-schedule feasibility conditions for Q+1 paths."""
        if self.t_total != self.t1 + self.n_blocks * self.v_slots:
            raise ScheduleInfeasible("T must equal T1 + Upsilon*V")
        if self.t1 < 8 * n_paths - 2:
            raise ScheduleInfeasible(
                f"T1={self.t1} too small for {n_paths}-sparse AOD recovery "
                f"(needs >= {8 * n_paths - 2})")
        if self.v_slots < n_paths:
            raise ScheduleInfeasible(
                "each time block needs at least Q+1 slots for block de-mixing")
        if self.n_blocks + 1 < 6:
            raise ScheduleInfeasible(
                "need at least 6 phase blocks for 1-sparse AOA recovery")


@dataclass
class PhaseSchedule:
    """Block-constant RIS reflection coefficients over the T slots."""

    block_phases: np.ndarray   # (n_blocks+1, N_r) unit-modulus
    slot_block: np.ndarray     # (T,) block index of each slot

    @property
    def n_slots(self) -> int:
        return self.slot_block.size

    @property
    def n_blocks(self) -> int:
        return self.block_phases.shape[0]

    @property
    def slot_phases(self) -> np.ndarray:
        """Per-slot phase vectors, shape (T, N_r)."""
        return self.block_phases[self.slot_block]

    def block_slots(self, i: int) -> np.ndarray:
        return np.flatnonzero(self.slot_block == i)


def make_phase_schedule(cfg: SystemConfig, n_ris: int,
                        seed: int | np.random.Generator = 0) -> PhaseSchedule:
    """Draw the block-constant phase profile with uniform random phases."""
    if cfg.t_total != cfg.t1 + cfg.n_blocks * cfg.v_slots:
        raise ScheduleInfeasible("T must equal T1 + Upsilon*V")
    if cfg.t1 < 1 or cfg.v_slots < 1:
        raise ScheduleInfeasible("empty phase block")
    rng = np.random.default_rng(seed)
    phases = rng.uniform(0.0, 2.0 * np.pi, size=(cfg.n_blocks + 1, n_ris))
    slot_block = np.concatenate([
        np.zeros(cfg.t1, dtype=int),
        1 + np.repeat(np.arange(cfg.n_blocks), cfg.v_slots),
    ])
    return PhaseSchedule(np.exp(1j * phases), slot_block)


def make_pilots(cfg: SystemConfig, n_ms: int,
                seed: int | np.random.Generator = 0) -> np.ndarray:
    """Random +-1 pilots, one column per slot, shared by all subcarriers.

    Entries are scaled so that each slot's pilot vector carries the full
    transmit power: ||x_t||^2 = P_tx.
    """
    rng = np.random.default_rng(seed)
    signs = rng.integers(0, 2, size=(n_ms, cfg.t_total)) * 2 - 1
    return signs * np.sqrt(cfg.p_tx / n_ms)


def pilot_tensor(pilots: np.ndarray, n_subcarriers: int) -> np.ndarray:
    """Broadcast view of the pilots over subcarriers, (N_m, T, N)."""
    return np.broadcast_to(pilots[:, :, None],
                           (*pilots.shape, n_subcarriers))


def path_loss_db(cfg: SystemConfig, geom: ScenarioGeometry,
                 shadowing_db: float = 0.0) -> np.ndarray:
    """Large-scale loss of each cascaded path (dB), NLoS = VLoS + 3 dB.

    Uses the UMa-style reflection-link model with the carrier expressed
    in GHz and 3-D link distances in meters.
    """
    d_mr = np.linalg.norm(geom.ms - geom.ris)
    d_rb = np.linalg.norm(geom.ris - geom.bs)
    pl0 = (28.0 + 40.0 * np.log10(cfg.fc / 1e9)
           + 10.0 * cfg.path_loss_exponent * np.log10(d_mr * d_rb)
           + shadowing_db)
    pl = np.full(geom.n_scatterers + 1, pl0)
    pl[1:] += 3.0
    return pl


def draw_gains(cfg: SystemConfig, geom: ScenarioGeometry,
               seed: int | np.random.Generator = 0) -> np.ndarray:
    """Draw complex path gains: CN(0, 10^(-PL/10)) with shared shadowing."""
    rng = np.random.default_rng(seed)
    xi = rng.normal(0.0, cfg.shadow_std_db)
    var = 10.0 ** (-path_loss_db(cfg, geom, xi) / 10.0)
    raw = rng.standard_normal(var.size) + 1j * rng.standard_normal(var.size)
    return np.sqrt(var / 2.0) * raw


def nominal_gain_amplitudes(cfg: SystemConfig, geom: ScenarioGeometry) -> np.ndarray:
    """Deterministic per-path amplitude sqrt(10^(-PL/10)) at zero shadowing."""
    return 10.0 ** (-path_loss_db(cfg, geom) / 20.0)


@dataclass
class Dictionary:
    """Steering vectors over a uniform grid of trigonometric values.

    Column g (1-based) corresponds to grid value -1 + 2(g-1)/G, mapped to
    a spatial frequency through spacing/wavelength.
    """

    matrix: np.ndarray      # (n_ant, G)
    grid: np.ndarray        # (G,) values in [-1, 1)
    spacing: float
    wavelength: float

    @property
    def size(self) -> int:
        return self.grid.size


@dataclass
class RisDictionary:
    """Kronecker dictionary of the RIS UPA: elevation (x) azimuth."""

    matrix: np.ndarray      # (N_r, G_e*G_a)
    azimuth: Dictionary
    elevation: Dictionary

    @property
    def size(self) -> int:
        return self.matrix.shape[1]


def grid_values(g: int) -> np.ndarray:
    return -1.0 + 2.0 * np.arange(g) / g


def build_dictionaries(cfg: SystemConfig,
                       geom: ScenarioGeometry) -> tuple[Dictionary, RisDictionary]:
    """AOD dictionary at the MS and the Kronecker RIS dictionary."""
    lam = geom.wavelength
    gm = grid_values(cfg.g_ms)
    a_m = Dictionary(steer_ula(gm * geom.d_ms / lam, geom.n_ms), gm,
                     geom.d_ms, lam)
    ga = grid_values(cfg.g_ris_az)
    ge = grid_values(cfg.g_ris_el)
    az = Dictionary(steer_ula(ga * geom.d_ris_az / lam, geom.n_ris_az), ga,
                    geom.d_ris_az, lam)
    el = Dictionary(steer_ula(ge * geom.d_ris_el / lam, geom.n_ris_el), ge,
                    geom.d_ris_el, lam)
    return a_m, RisDictionary(np.kron(el.matrix, az.matrix), az, el)


def ris_index_split(k: int, g_az: int) -> tuple[int, int]:
    """1-based Kronecker column index -> (elevation, azimuth) indices."""
    k_el = int(np.ceil(k / g_az))
    k_az = k - (k_el - 1) * g_az
    return k_el, k_az


def ris_index_join(k_el: int, k_az: int, g_az: int) -> int:
    return (k_el - 1) * g_az + k_az


# per-path response factors used throughout estimation

def bs_steering(geom: ScenarioGeometry, theta_r0: float) -> np.ndarray:
    return steer_ula(geometry.aod_spatial_freq(theta_r0, geom.d_bs,
                                               geom.wavelength), geom.n_bs)


def ms_steering(geom: ScenarioGeometry, theta_t) -> np.ndarray:
    """MS steering vectors, shape (N_m,) or (N_m, n) for array input."""
    return steer_ula(geometry.aod_spatial_freq(theta_t, geom.d_ms,
                                               geom.wavelength), geom.n_ms)


def ris_diff_steering(geom: ScenarioGeometry, phi_in, psi_in,
                      phi_out0: float, psi_out0: float) -> np.ndarray:
    """RIS steering at the differential spatial frequencies.

    Equals a_R(in) Hadamard a_R(out)^*; shape (N_r,) or (N_r, n).
    """
    dw_az, dw_el = geometry.ris_delta_freqs(geom, phi_in, psi_in,
                                            phi_out0, psi_out0)
    return steer_upa(dw_az, dw_el, geom.n_ris_az, geom.n_ris_el)


def subcarrier_ramp(tau, bandwidth: float, n_subcarriers: int) -> np.ndarray:
    """exp(-j*2*pi*tau*(n-1)*B/N) over subcarriers; shape (N,) or (N, len(tau))."""
    n = np.arange(n_subcarriers)
    return np.exp(-2j * np.pi * np.multiply.outer(n, tau)
                  * bandwidth / n_subcarriers)


def build_channel(cfg: SystemConfig, geom: ScenarioGeometry,
                  params: ChannelParams, g_t: np.ndarray, n: int) -> np.ndarray:
    """Channel matrix H_t[n] (N_b x N_m) for one slot's phase vector.

    Uses the scalar-reflection form: each path contributes
    delta_q * ramp_q[n] * (g_t^T a_R(dw_q)) * a_B a_M(theta_q)^H.
    """
    g_t = np.asarray(g_t)
    if g_t.shape != (geom.n_ris,):
        raise DimensionMismatch("phase vector length must equal N_r")
    if not (1 <= n <= cfg.n_subcarriers):
        raise DimensionMismatch("subcarrier index out of range")
    a_b = bs_steering(geom, params.theta_r0)
    a_m = ms_steering(geom, params.theta_t)          # (N_m, Q+1)
    a_r = ris_diff_steering(geom, params.phi_in, params.psi_in,
                            params.phi_out0, params.psi_out0)  # (N_r, Q+1)
    ramp = subcarrier_ramp(params.tau, cfg.bandwidth,
                           cfg.n_subcarriers)[n - 1]  # (Q+1,)
    scal = params.gains * ramp * (g_t @ a_r)
    return np.outer(a_b, (a_m.conj() * scal).sum(axis=1))


def build_channel_cascade(cfg: SystemConfig, geom: ScenarioGeometry,
                          params: ChannelParams, g_t: np.ndarray,
                          n: int) -> np.ndarray:
    """H_t[n] built the long way: H_RB[n] diag(g_t) H_MR[n].

    The composite gain/delay are split with a unit-gain RIS-BS leg of
    delay ||r-b||/c; only the combined values affect the product.
    """
    g_t = np.asarray(g_t)
    if g_t.shape != (geom.n_ris,):
        raise DimensionMismatch("phase vector length must equal N_r")
    lam = geom.wavelength
    tau_rb = np.linalg.norm(geom.ris - geom.bs) / geometry.SPEED_OF_LIGHT
    a_b = bs_steering(geom, params.theta_r0)
    w_out_az = geom.d_ris_az / lam * np.sin(params.psi_out0) * np.sin(params.phi_out0)
    w_out_el = geom.d_ris_el / lam * np.cos(params.phi_out0)
    a_r_out = steer_upa(w_out_az, w_out_el, geom.n_ris_az, geom.n_ris_el)
    ramp_rb = np.exp(-2j * np.pi * tau_rb * (n - 1) * cfg.bandwidth
                     / cfg.n_subcarriers)
    h_rb = ramp_rb * np.outer(a_b, a_r_out.conj())

    h_mr = np.zeros((geom.n_ris, geom.n_ms), dtype=complex)
    for q in range(params.n_paths):
        w_in_az = geom.d_ris_az / lam * np.sin(params.psi_in[q]) * np.sin(params.phi_in[q])
        w_in_el = geom.d_ris_el / lam * np.cos(params.phi_in[q])
        a_r_in = steer_upa(w_in_az, w_in_el, geom.n_ris_az, geom.n_ris_el)
        a_m = ms_steering(geom, params.theta_t[q])
        ramp_mr = np.exp(-2j * np.pi * (params.tau[q] - tau_rb) * (n - 1)
                         * cfg.bandwidth / cfg.n_subcarriers)
        h_mr += params.gains[q] * ramp_mr * np.outer(a_r_in, a_m.conj())
    return h_rb @ np.diag(g_t) @ h_mr


@dataclass
class RxSignal:
    """Received pilot tensor y (N_b, T, N) and the pilots that produced it."""

    y: np.ndarray
    pilots: np.ndarray       # (N_m, T)

    @property
    def n_subcarriers(self) -> int:
        return self.y.shape[2]

    @property
    def pilot_cube(self) -> np.ndarray:
        return pilot_tensor(self.pilots, self.n_subcarriers)


def synthesize_rx(cfg: SystemConfig, geom: ScenarioGeometry,
                  params: ChannelParams, schedule: PhaseSchedule,
                  pilots: np.ndarray,
                  noise_seed: int | np.random.Generator | None = 0,
                  noiseless: bool = False) -> RxSignal:
    """Simulate the received uplink pilot tensor y = Hx + z.

    Steering vectors are evaluated once per path and reused across all
    subcarriers (narrow-band model). Noise entries are CN(0, sigma^2)
    with the per-subcarrier noise power of ``cfg``; passing the same
    seed reproduces the tensor exactly.
    """
    if pilots.shape != (geom.n_ms, cfg.t_total):
        raise DimensionMismatch("pilot matrix must be (N_m, T)")
    if schedule.n_slots != cfg.t_total:
        raise DimensionMismatch("schedule slot count must equal T")
    a_b = bs_steering(geom, params.theta_r0)
    a_m = ms_steering(geom, params.theta_t)              # (N_m, Q+1)
    a_r = ris_diff_steering(geom, params.phi_in, params.psi_in,
                            params.phi_out0, params.psi_out0)
    sigma_slots = schedule.slot_phases @ a_r             # (T, Q+1)
    proj = pilots.T @ a_m.conj()                         # (T, Q+1): a_M^H x_t
    ramp = subcarrier_ramp(params.tau, cfg.bandwidth, cfg.n_subcarriers)
    field = np.einsum("q,tq,nq->tn", params.gains, sigma_slots * proj, ramp)
    y = a_b[:, None, None] * field[None, :, :]
    if not noiseless:
        rng = np.random.default_rng(noise_seed)
        scale = np.sqrt(cfg.noise_power / 2.0)
        shape = y.shape
        y = y + scale * (rng.standard_normal(shape)
                         + 1j * rng.standard_normal(shape))
    return RxSignal(y=y, pilots=pilots)
