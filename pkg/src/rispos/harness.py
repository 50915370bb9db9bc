"""Seeded Monte Carlo experiment engine and CSV emission.

Runs the synthesize -> coarse -> SAGE -> closed-form -> LM pipeline over
a transmit-power sweep, aggregates per-parameter RMSE curves next to the
corresponding bounds, and writes plot-ready CSV files (one per figure
panel analogue).
"""

from __future__ import annotations

import concurrent.futures
import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from . import bounds as bnd
from . import channel as ch
from . import coarse_est as ce
from . import positioning as pos_mod
from . import sage as sg
from .coarse_est import associate_paths
from .errors import IoError, RisposError
from .geometry import ScenarioGeometry, true_channel_params
from .params import ChannelParams, PositionParams

_TAG_PILOTS = 1
_TAG_SCHEDULE = 2
_TAG_TRIAL = 3

STAGES = ("coarse", "aod_mle", "sage", "lm")

CHANNEL_CLASSES = ("delta_re", "delta_im", "tau", "theta_t", "phi_in", "psi_in")

# reporting units per class: ns for delays, degrees for angles
_CLASS_SCALE = {"delta_re": 1.0, "delta_im": 1.0, "tau": 1e9,
                "theta_t": 180.0 / np.pi, "phi_in": 180.0 / np.pi,
                "psi_in": 180.0 / np.pi}


@dataclass
class ExperimentConfig:
    """Scenario, system, and sweep settings with defaults of the
    reference urban scenario."""

    # geometry
    bs: list = field(default_factory=lambda: [0.0, 0.0, 28.0])
    ris: list = field(default_factory=lambda: [-6.0, 8.0, 20.0])
    ms: list = field(default_factory=lambda: [22.0, 35.0, 1.5])
    alpha_deg: float = 75.0
    scatterers: list = field(default_factory=lambda: [[6.0, 5.0, 3.0]])
    n_bs: int = 40
    n_ms: int = 16
    n_ris_az: int = 10
    n_ris_el: int = 10
    bs_spacing_wl: float = 0.5
    ms_spacing_wl: float = 0.5
    ris_spacing_wl: float = 1.0 / 3.0
    # waveform / schedule
    fc_hz: float = 4.9e9
    bandwidth_hz: float = 20e6
    n_subcarriers: int = 20
    t_total: int = 37
    t1: int = 16
    n_blocks: int = 7
    v_slots: int = 3
    noise_density_dbm_hz: float = -174.0
    g_ms: int = 128
    g_ris_az: int = 10
    g_ris_el: int = 10
    path_loss_exponent: float = 2.2
    shadow_std_db: float = 4.0
    # experiment
    powers_dbm: list = field(default_factory=lambda: [-10.0, 0.0, 10.0, 20.0])
    n_trials: int = 200
    master_seed: int = 20260809
    stage: str = "lm"               # coarse | aod_mle | sage | lm
    noiseless: bool = False
    out_dir: str = "results"
    workers: int = 1

    def __post_init__(self):
        if self.stage not in STAGES:
            raise ValueError(f"stage must be one of {STAGES}")
        if self.n_trials < 1:
            raise ValueError("n_trials must be >= 1")
        if not self.powers_dbm:
            raise ValueError("powers_dbm must be non-empty")

    @classmethod
    def from_file(cls, path: str | Path) -> "ExperimentConfig":
        with open(path, "r", encoding="utf-8") as fh:
            raw = yaml.safe_load(fh) or {}
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**raw)

    def geometry(self) -> ScenarioGeometry:
        lam = ch.SystemConfig(fc=self.fc_hz).wavelength
        return ScenarioGeometry(
            bs=self.bs, ris=self.ris, ms=self.ms,
            alpha=np.deg2rad(self.alpha_deg), scatterers=self.scatterers,
            n_bs=self.n_bs, n_ms=self.n_ms, n_ris_az=self.n_ris_az,
            n_ris_el=self.n_ris_el, wavelength=lam,
            d_bs=self.bs_spacing_wl * lam, d_ms=self.ms_spacing_wl * lam,
            d_ris_az=self.ris_spacing_wl * lam,
            d_ris_el=self.ris_spacing_wl * lam)

    def system(self, power_dbm: float) -> ch.SystemConfig:
        return ch.SystemConfig(
            fc=self.fc_hz, bandwidth=self.bandwidth_hz,
            n_subcarriers=self.n_subcarriers, t_total=self.t_total,
            t1=self.t1, n_blocks=self.n_blocks, v_slots=self.v_slots,
            p_tx=ch.dbm_to_watt(power_dbm),
            noise_density=ch.dbm_to_watt(self.noise_density_dbm_hz),
            g_ms=self.g_ms, g_ris_az=self.g_ris_az, g_ris_el=self.g_ris_el,
            path_loss_exponent=self.path_loss_exponent,
            shadow_std_db=self.shadow_std_db)


def channel_sq_errors(est: ChannelParams, true: ChannelParams) -> dict:
    """Per-class squared errors (per path) after association."""
    perm = associate_paths(est.theta_t, true.theta_t)
    return {
        "delta_re": (est.gains.real[perm] - true.gains.real) ** 2,
        "delta_im": (est.gains.imag[perm] - true.gains.imag) ** 2,
        "tau": (est.tau[perm] - true.tau) ** 2,
        "theta_t": (est.theta_t[perm] - true.theta_t) ** 2,
        "phi_in": (est.phi_in[perm] - true.phi_in) ** 2,
        "psi_in": (est.psi_in[perm] - true.psi_in) ** 2,
    }


def position_sq_errors(est: PositionParams, true_geom: ScenarioGeometry) -> dict:
    return {
        "position": float(np.sum((est.ms - true_geom.ms) ** 2)),
        "orientation": pos_mod.wrapped_rotation_error(
            est.alpha, true_geom.alpha) ** 2,
    }


@dataclass
class TrialRecord:
    """Everything one Monte Carlo trial produced."""

    power_dbm: float
    trial_index: int
    seed_entropy: tuple
    gains_true: np.ndarray = None
    eta_true: np.ndarray = None
    pos_true: np.ndarray = None
    stages: dict = field(default_factory=dict)       # stage -> parameter vector
    sq_errors: dict = field(default_factory=dict)    # stage -> class -> errors
    crlb: np.ndarray = None
    peb: float = np.nan
    oeb: float = np.nan
    support_ok: bool = False
    flags: dict = field(default_factory=dict)
    error: str | None = None


def _support_matches(est: ChannelParams, true: ChannelParams,
                     g_ms: int) -> bool:
    """Coarse support within 1.5 grid cells of every true AOD."""
    perm = associate_paths(est.theta_t, true.theta_t)
    gap = np.abs(np.sin(est.theta_t[perm]) - np.sin(true.theta_t))
    return bool(np.all(gap <= 1.5 * 2.0 / g_ms))


def run_trial(exp: ExperimentConfig, power_dbm: float, power_idx: int,
              trial_idx: int) -> TrialRecord:
    """One seeded trial through the configured pipeline stages.

    Stage failures are captured in the record rather than aborting the
    sweep; every random draw derives from (master seed, power index,
    trial index) so scheduling cannot perturb results.
    """
    entropy = (exp.master_seed, _TAG_TRIAL, power_idx, trial_idx)
    rec = TrialRecord(power_dbm=power_dbm, trial_index=trial_idx,
                      seed_entropy=entropy)
    geom = exp.geometry()
    cfg = exp.system(power_dbm)
    n_paths = geom.n_scatterers + 1
    cfg.validate(n_paths)

    pilots = ch.make_pilots(cfg, geom.n_ms,
                            np.random.SeedSequence((exp.master_seed, _TAG_PILOTS)))
    sched = ch.make_phase_schedule(cfg, geom.n_ris,
                                   np.random.SeedSequence((exp.master_seed, _TAG_SCHEDULE)))
    a_m_dict, ris_dict = ch.build_dictionaries(cfg, geom)

    ss = np.random.SeedSequence(entropy)
    gain_seed, noise_seed = ss.spawn(2)
    gains = ch.draw_gains(cfg, geom, np.random.default_rng(gain_seed))
    rec.gains_true = gains
    true = true_channel_params(geom, gains)
    rec.eta_true = true.to_vector()
    rec.pos_true = PositionParams(gains=gains, ms=geom.ms, alpha=geom.alpha,
                                  scatterers=geom.scatterers).to_vector()
    known = (true.theta_r0, true.phi_out0, true.psi_out0)

    # per-trial bounds at the true parameters
    j_true = bnd.fim_channel(true, pilots, sched, geom, cfg)
    t_true = bnd.transformation_matrix(
        PositionParams(gains=gains, ms=geom.ms, alpha=geom.alpha,
                       scatterers=geom.scatterers), geom.ris, geom.bs)
    rep = bnd.position_bounds(j_true, t_true)
    rec.crlb, rec.peb, rec.oeb = rep.crlb_channel, rep.peb, rep.oeb

    rx = ch.synthesize_rx(cfg, geom, true, sched, pilots,
                          noise_seed=np.random.default_rng(noise_seed),
                          noiseless=exp.noiseless)
    try:
        coarse = ce.run_coarse(rx, pilots, sched, geom, cfg, n_paths, known,
                               a_m_dict, ris_dict,
                               refine_aod=exp.stage != "coarse")
        rec.stages["coarse"] = coarse.params.to_vector()
        rec.sq_errors["coarse"] = channel_sq_errors(coarse.params, true)
        rec.support_ok = _support_matches(coarse.params, true, cfg.g_ms)
        rec.flags.update(coarse.flags)
        est = coarse.params

        if exp.stage in ("sage", "lm"):
            refined, info = sg.run_sage(rx, pilots, sched, geom, cfg, est)
            rec.stages["sage"] = refined.to_vector()
            rec.sq_errors["sage"] = channel_sq_errors(refined, true)
            rec.flags["sage_converged"] = info.converged
            rec.flags["sage_monotone"] = info.monotone_ok
            est = refined

        pos0, pflags = pos_mod.position_closed_form(est, geom.ris, geom.bs)
        rec.stages["closed_form"] = pos0.to_vector()
        rec.sq_errors["closed_form"] = position_sq_errors(pos0, geom)
        rec.flags.update(pflags)

        if exp.stage == "lm":
            j_est = bnd.fim_channel(est, pilots, sched, geom, cfg)
            pos_ref, diag = pos_mod.refine_position_lm(
                est, j_est, pos0, geom.ris, geom.bs, check_jacobian=False)
            rec.stages["lm"] = pos_ref.to_vector()
            rec.sq_errors["lm"] = position_sq_errors(pos_ref, geom)
            rec.flags["lm_stalled"] = diag.stalled
    except (RisposError, np.linalg.LinAlgError) as exc:
        rec.error = f"{type(exc).__name__}: {exc}"
    return rec


def _trial_star(args):
    return run_trial(*args)


@dataclass
class SweepReport:
    """Aggregated RMSE curves, bounds, and bookkeeping per power point."""

    powers_dbm: list
    n_trials: int
    rmse: dict                  # stage -> class -> (n_powers,) in report units
    rmse_filtered: dict         # same, over support-ok trials only
    bounds_ref: dict            # class -> (n_powers,) deterministic reference
    bounds_trial: dict          # class -> (n_powers,) aggregated true-eta bounds
    n_failed: np.ndarray
    n_support_fail: np.ndarray
    records: list               # list of lists of TrialRecord


def reference_bounds(exp: ExperimentConfig, power_dbm: float) -> dict:
    """Bound values at the nominal zero-shadowing gains (RNG-free)."""
    geom = exp.geometry()
    cfg = exp.system(power_dbm)
    pilots = ch.make_pilots(cfg, geom.n_ms,
                            np.random.SeedSequence((exp.master_seed, _TAG_PILOTS)))
    sched = ch.make_phase_schedule(cfg, geom.n_ris,
                                   np.random.SeedSequence((exp.master_seed, _TAG_SCHEDULE)))
    gains = ch.nominal_gain_amplitudes(cfg, geom).astype(complex)
    true = true_channel_params(geom, gains)
    j_eta = bnd.fim_channel(true, pilots, sched, geom, cfg)
    t_mat = bnd.transformation_matrix(
        PositionParams(gains=gains, ms=geom.ms, alpha=geom.alpha,
                       scatterers=geom.scatterers), geom.ris, geom.bs)
    rep = bnd.position_bounds(j_eta, t_mat)
    crlb = rep.crlb_channel.reshape(-1, 6)
    order = {"tau": 0, "delta_re": 1, "delta_im": 2, "theta_t": 3,
             "phi_in": 4, "psi_in": 5}
    out = {cls: float(np.sqrt(np.mean(crlb[:, col]))) * _CLASS_SCALE[cls]
           for cls, col in order.items()}
    out["position"] = rep.peb
    out["orientation"] = np.rad2deg(rep.oeb)
    return out


def _aggregate_trial_bounds(records: list) -> dict:
    """Root-mean bounds at the trials' true parameters (one power point)."""
    recs = [r for r in records if r.error is None]
    out = {}
    if not recs:
        return {c: np.nan for c in list(CHANNEL_CLASSES)
                + ["position", "orientation"]}
    crlb = np.stack([r.crlb for r in recs]).reshape(len(recs), -1, 6)
    order = {"tau": 0, "delta_re": 1, "delta_im": 2, "theta_t": 3,
             "phi_in": 4, "psi_in": 5}
    for cls, col in order.items():
        out[cls] = float(np.sqrt(np.mean(crlb[:, :, col]))) * _CLASS_SCALE[cls]
    out["position"] = float(np.sqrt(np.mean([r.peb ** 2 for r in recs])))
    out["orientation"] = float(np.rad2deg(
        np.sqrt(np.mean([r.oeb ** 2 for r in recs]))))
    return out


def _aggregate_rmse(records: list, stage: str, cls: str,
                    only_support_ok: bool) -> float:
    sq = []
    for rec in records:
        if rec.error is not None or stage not in rec.sq_errors:
            continue
        if only_support_ok and not rec.support_ok:
            continue
        sq.append(np.atleast_1d(rec.sq_errors[stage][cls]))
    if not sq:
        return np.nan
    scale = _CLASS_SCALE.get(cls, 180.0 / np.pi if cls == "orientation" else 1.0)
    if cls == "position":
        scale = 1.0
    return float(np.sqrt(np.mean(np.concatenate(sq)))) * scale


def run_sweep(exp: ExperimentConfig) -> SweepReport:
    """Monte Carlo sweep over transmit powers with per-trial RNG streams."""
    stage_list = ["coarse"]
    if exp.stage in ("sage", "lm"):
        stage_list.append("sage")
    stage_list.append("closed_form")
    if exp.stage == "lm":
        stage_list.append("lm")

    all_records = []
    for p_idx, power in enumerate(exp.powers_dbm):
        tasks = [(exp, power, p_idx, t) for t in range(exp.n_trials)]
        if exp.workers > 1:
            with concurrent.futures.ProcessPoolExecutor(exp.workers) as pool:
                recs = list(pool.map(_trial_star, tasks, chunksize=4))
        else:
            recs = [run_trial(*t) for t in tasks]
        recs.sort(key=lambda r: r.trial_index)
        all_records.append(recs)

    rmse = {}
    rmse_filtered = {}
    for stage in stage_list:
        classes = (("position", "orientation")
                   if stage in ("closed_form", "lm") else CHANNEL_CLASSES)
        rmse[stage] = {c: np.array([
            _aggregate_rmse(recs, stage, c, False) for recs in all_records])
            for c in classes}
        rmse_filtered[stage] = {c: np.array([
            _aggregate_rmse(recs, stage, c, True) for recs in all_records])
            for c in classes}

    ref = [reference_bounds(exp, p) for p in exp.powers_dbm]
    bounds_ref = {c: np.array([r[c] for r in ref])
                  for c in list(CHANNEL_CLASSES) + ["position", "orientation"]}
    per_trial = [_aggregate_trial_bounds(recs) for recs in all_records]
    bounds_trial = {c: np.array([b[c] for b in per_trial])
                    for c in list(CHANNEL_CLASSES) + ["position", "orientation"]}
    n_failed = np.array([sum(r.error is not None for r in recs)
                         for recs in all_records])
    n_support_fail = np.array([sum((r.error is None) and (not r.support_ok)
                                   for r in recs) for recs in all_records])
    return SweepReport(powers_dbm=list(exp.powers_dbm), n_trials=exp.n_trials,
                       rmse=rmse, rmse_filtered=rmse_filtered,
                       bounds_ref=bounds_ref, bounds_trial=bounds_trial,
                       n_failed=n_failed, n_support_fail=n_support_fail,
                       records=all_records)


def _fmt(x) -> str:
    return f"{x:.12e}"


def write_summary_csv(report: SweepReport, path: str | Path) -> Path:
    """One aggregate row per power point."""
    path = Path(path)
    stages = list(report.rmse)
    cols = ["power_dbm", "n_trials", "n_failed", "n_support_fail"]
    for stage in stages:
        for cls in report.rmse[stage]:
            cols.append(f"rmse_{stage}_{cls}")
            cols.append(f"rmse_{stage}_{cls}_filtered")
    for cls in report.bounds_ref:
        cols.append(f"bound_{cls}")
        cols.append(f"bound_trial_{cls}")
    lines = [",".join(cols)]
    for i, p in enumerate(report.powers_dbm):
        row = [_fmt(p), str(report.n_trials), str(int(report.n_failed[i])),
               str(int(report.n_support_fail[i]))]
        for stage in stages:
            for cls in report.rmse[stage]:
                row.append(_fmt(report.rmse[stage][cls][i]))
                row.append(_fmt(report.rmse_filtered[stage][cls][i]))
        for cls in report.bounds_ref:
            row.append(_fmt(report.bounds_ref[cls][i]))
            row.append(_fmt(report.bounds_trial[cls][i]))
        lines.append(",".join(row))
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    except OSError as exc:
        raise IoError(str(exc)) from exc
    return path


_FIG_FILES = {
    "delta_re": "fig_delta_re.csv", "delta_im": "fig_delta_im.csv",
    "tau": "fig_tau_ns.csv", "theta_t": "fig_theta_t_deg.csv",
    "phi_in": "fig_phi_in_deg.csv", "psi_in": "fig_psi_in_deg.csv",
    "position": "fig_position_m.csv", "orientation": "fig_orientation_deg.csv",
}


def emit_plot_data(report: SweepReport, out_dir: str | Path) -> list[Path]:
    """Per-figure CSVs (power, coarse RMSE, refined RMSE, bound) plus a
    gnuplot script that renders them without edits."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IoError(str(exc)) from exc
    paths = []
    for cls, name in _FIG_FILES.items():
        if cls in ("position", "orientation"):
            coarse_stage, refined_stage = "closed_form", "lm"
        else:
            coarse_stage, refined_stage = "coarse", "sage"
        lines = ["power_dbm,rmse_coarse,rmse_refined,bound"]
        for i, p in enumerate(report.powers_dbm):
            coarse = report.rmse.get(coarse_stage, {}).get(cls, [np.nan] * (i + 1))[i]
            refined = report.rmse.get(refined_stage, {}).get(cls, [np.nan] * (i + 1))[i]
            bound = report.bounds_ref[cls][i]
            lines.append(",".join([_fmt(p), _fmt(coarse), _fmt(refined),
                                   _fmt(bound)]))
        p_out = out / name
        p_out.write_text("\n".join(lines) + "\n", encoding="utf-8")
        paths.append(p_out)
    script = [
        "set datafile separator ','",
        "set key autotitle columnhead",
        "set logscale y",
        "set xlabel 'transmit power (dBm)'",
    ]
    for cls, name in _FIG_FILES.items():
        script.append(f"set title '{cls}'")
        script.append(
            f"plot '{name}' using 1:2 with linespoints, "
            f"'{name}' using 1:3 with linespoints, "
            f"'{name}' using 1:4 with lines")
        script.append("pause -1")
    gp = out / "plots.gp"
    gp.write_text("\n".join(script) + "\n", encoding="utf-8")
    paths.append(gp)
    return paths
