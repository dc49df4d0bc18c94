"""Command-line entry point: config-driven runs with serialised outputs.

Exit codes: 0 success, 2 configuration error, 3 numerical failure. Errors
are reported as one JSON object on stderr; a numerical failure after the
output directory is known leaves a ``FAILED.json`` marker there.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import sys
from dataclasses import asdict, dataclass, fields
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__
from . import beamlever as bl
from . import gravfom as gf
from . import quantum as qm
from . import response as rsp
from . import specan as sa
from . import timesim as ts
from .physcore import CONSTANTS, TWO_PI, OscillatorParams, derive_all, zero_point_angle
from .records import (SpectrumRecord, spectrum_from_csv, spectrum_to_csv, timeseries_sidecar,
                      timeseries_to_csv, write_text)

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL = 0, 2, 3
SUBCOMMANDS = ("simulate", "analyze", "coherence", "fom", "beam", "geometry", "report")
FAILURE_MARKER = "FAILED.json"
LADDER_Q = (25.0, 10.0, 4.0, 1.5, 0.58)
ORACLE_A = (0.25, 0.5, 1.0, 2.0, 10.0)
TIME_DOMAIN_RATE = 1.0e4


class ConfigError(ValueError):
    pass


class NumericalError(RuntimeError):
    pass


_TOP_KEYS = {"label", "seed", "oscillator", "feedback", "noise", "sim", "band", "outputs",
             "coherence", "fom", "beam", "geometry"}
_SECTION_KEYS = {
    "oscillator": {f.name for f in fields(OscillatorParams)},
    "feedback": {"f_eff", "Q_eff", "lag_corner_hz", "exact"},
    "noise": {f.name for f in fields(rsp.NoiseBudget)},
    "sim": {"duration", "rate", "mode", "actuator_torque_max", "segment_seconds",
            "drive_torque_psd"},
    "coherence": {"n", "fb_fraction"},
    "fom": {"table"},
    "beam": {"setup", "z_start", "z_stop", "z_points"},
    "geometry": {"a_values", "resolution"},
}


@dataclass(frozen=True)
class RunConfig:
    raw: dict
    base_dir: Path
    seed: int
    params: OscillatorParams
    f_eff: float | None
    Q_eff: float | None
    filt: rsp.LoopFilter
    budget: rsp.NoiseBudget
    plan: ts.SimPlan
    segment_seconds: float
    drive_torque_psd: float
    band: tuple
    outputs: Path
    coherence: dict
    fom_table: Path | None
    beam_setup: Path | None
    z_grid: tuple | None
    a_values: tuple
    resolution: int

    @property
    def digest(self) -> str:
        canon = json.dumps(self.raw, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()

    def header(self, content: str) -> dict:
        return {"content": content, "config_sha256": self.digest, "seed": self.seed,
                "version": __version__}

    @property
    def f_eff_or_f0(self) -> float:
        return self.f_eff if self.f_eff is not None else self.params.f0


def _section(raw: dict, name: str) -> dict:
    sec = raw.get(name, {})
    if sec is None:
        return {}
    if not isinstance(sec, dict):
        raise ConfigError(f"section {name!r} must be an object")
    unknown = set(sec) - _SECTION_KEYS[name]
    if unknown:
        raise ConfigError(f"unknown keys in {name!r}: {sorted(unknown)}")
    return sec


def _number(x, name):
    if isinstance(x, bool) or not isinstance(x, (int, float)) or not math.isfinite(x):
        raise ConfigError(f"{name} must be a finite number")
    return float(x)


def _parse_band(text: str) -> list:
    try:
        f1, f2 = (float(v) for v in text.split(","))
    except ValueError as exc:
        raise ConfigError(f"--band expects 'f1,f2', got {text!r}") from exc
    return [f1, f2]


def build_config(raw: dict, base_dir: Path, seed: int | None = None,
                 band: list | None = None) -> RunConfig:
    """Validate a config mapping (after command-line overrides)."""
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    raw = json.loads(json.dumps(raw))
    unknown = set(raw) - _TOP_KEYS
    if unknown:
        raise ConfigError(f"unknown top-level keys: {sorted(unknown)}")
    if seed is not None:
        raw["seed"] = seed
    if band is not None:
        raw["band"] = band
    if "seed" not in raw:
        raise ConfigError("a seed is required")
    s = raw["seed"]
    if isinstance(s, bool) or not isinstance(s, int) or s < 0:
        raise ConfigError("seed must be a non-negative integer")
    try:
        params = OscillatorParams(**_section(raw, "oscillator"))
        fb = _section(raw, "feedback")
        f_eff = fb.get("f_eff")
        Q_eff = fb.get("Q_eff")
        lag = TWO_PI * _number(fb.get("lag_corner_hz", rsp.DEFAULT_OMEGA_LAG / TWO_PI), "lag_corner_hz")
        exact = fb.get("exact", True)
        if not isinstance(exact, bool):
            raise ConfigError("feedback.exact must be true or false")
        if f_eff is None:
            if Q_eff is not None:
                raise ConfigError("Q_eff given without f_eff")
            filt = rsp.LoopFilter(0.0, 1.0, lag, exact)
        else:
            f_eff, Q_eff = _number(f_eff, "f_eff"), _number(Q_eff, "Q_eff")
            if Q_eff <= 0:
                raise ConfigError("Q_eff must be positive")
            filt = rsp.design_filter(params, f_eff, Q_eff, lag, exact)
        budget = rsp.NoiseBudget(**_section(raw, "noise"))
        sim = _section(raw, "sim")
        clamp = sim.get("actuator_torque_max", ts.default_actuator_clamp(params.lever_arm))
        mode = sim.get("mode", ts.FREQUENCY_DOMAIN)
        # the discretised loop needs a rate well above the lag corner
        default_rate = TIME_DOMAIN_RATE if mode == ts.TIME_DOMAIN else 256.0
        plan = ts.SimPlan(_number(sim.get("duration", 600.0), "duration"),
                          _number(sim.get("rate", default_rate), "rate"), s,
                          _number(clamp, "actuator_torque_max"), mode)
        seg = _number(sim.get("segment_seconds", 10.0), "segment_seconds")
        if seg * plan.rate < 16 or seg > plan.duration:
            raise ConfigError("segment_seconds must hold >= 16 samples and fit in the run")
        drive = _number(sim.get("drive_torque_psd", 0.0), "drive_torque_psd")
        if drive < 0:
            raise ConfigError("drive_torque_psd must be >= 0")
        b = raw.get("band", list(sa.DEFAULT_BAND))
        if not isinstance(b, list) or len(b) != 2:
            raise ConfigError("band must be [f1, f2]")
        f1, f2 = _number(b[0], "band f1"), _number(b[1], "band f2")
        nyq = 0.5 * plan.rate
        if not 0 < f1 < f2 <= nyq:
            raise ConfigError("band must satisfy 0 < f1 < f2 <= rate/2")
        if f2 - f1 < 3.0 / seg:
            raise ConfigError("band must span at least three frequency bins")
        out = raw.get("outputs", "out")
        if not isinstance(out, str) or not out:
            raise ConfigError("outputs must be a directory path")
        coh = _section(raw, "coherence")
        for k, v in coh.items():
            if v is not None:
                _number(v, f"coherence.{k}")
        if coh.get("fb_fraction") is not None and not 0 <= coh["fb_fraction"] <= 1:
            raise ConfigError("coherence.fb_fraction must lie in [0, 1]")
        if coh.get("n") is not None and coh["n"] < 0:
            raise ConfigError("coherence.n must be >= 0")
        fom = _section(raw, "fom")
        table = base_dir / fom["table"] if fom.get("table") else None
        beam = _section(raw, "beam")
        setup = base_dir / beam["setup"] if beam.get("setup") else None
        z_grid = None
        if {"z_start", "z_stop", "z_points"} & set(beam):
            z_grid = (_number(beam["z_start"], "z_start"), _number(beam["z_stop"], "z_stop"),
                      int(beam["z_points"]))
            if z_grid[2] < 2 or z_grid[1] <= z_grid[0]:
                raise ConfigError("beam z grid needs z_stop > z_start and >= 2 points")
        geo = _section(raw, "geometry")
        a_values = tuple(_number(a, "a") for a in geo.get("a_values", np.geomspace(0.02, 100, 41).tolist()))
        if any(a <= 0 for a in a_values):
            raise ConfigError("geometry a values must be positive")
        res = int(geo.get("resolution", 128))
        if res < 64:
            raise ConfigError("geometry resolution must be >= 64")
    except ConfigError:
        raise
    except (ValueError, TypeError, KeyError) as exc:
        raise ConfigError(str(exc)) from exc
    for p in (table, setup):
        if p is not None and not p.is_file():
            raise ConfigError(f"file not found: {p}")
    return RunConfig(raw, base_dir, s, params, f_eff, Q_eff, filt, budget, plan, seg, drive,
                     (f1, f2), base_dir / out, coh, table, setup, z_grid, a_values, res)


def load_config(path: str | None, seed: int | None = None, band: list | None = None) -> RunConfig:
    if path is None:
        text = resources.files("mgtorsion").joinpath("data/critical_config.json").read_text()
        base = Path.cwd()
    else:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file not found: {path}")
        text = p.read_text()
        base = p.resolve().parent
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON: {exc}") from exc
    return build_config(raw, base, seed, band)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, Path):
        return obj.name
    return obj


def _json(cfg: RunConfig, content: str, payload: dict) -> str:
    doc = {"meta": cfg.header(content), **payload}
    return json.dumps(_jsonable(doc), indent=2, sort_keys=True) + "\n"


def _csv(cfg: RunConfig, content: str, columns: dict) -> str:
    head = "".join(f"# {k}: {v}\n" for k, v in cfg.header(content).items())
    names = list(columns)
    cols = [np.asarray(columns[n]) for n in names]
    lines = [",".join(names)]
    for row in zip(*cols):
        lines.append(",".join(_cell(v) for v in row))
    return head + "\n".join(lines) + "\n"


def _cell(v) -> str:
    if isinstance(v, (str, np.str_)):
        return '"' + str(v).replace('"', "'") + '"' if "," in str(v) else str(v)
    v = float(v)
    return repr(v) if math.isfinite(v) else ""


def _check_stable(cfg: RunConfig) -> rsp.StabilityReport | None:
    if cfg.filt.g == 0:
        return None
    rep = rsp.stability_margin(cfg.filt, cfg.params)
    if not rep.stable:
        raise NumericalError(f"closed loop is unstable (margin {rep.margin_deg:.1f} deg; {rep.note})")
    return rep


def _run(cfg: RunConfig, seed_offset: int = 0, filt=None, plan=None):
    filt = cfg.filt if filt is None else filt
    plan = cfg.plan if plan is None else plan
    if seed_offset:
        plan = ts.SimPlan(plan.duration, plan.rate, plan.seed + seed_offset,
                          plan.actuator_torque_max, plan.mode)
    run = ts.simulate_closed_loop(cfg.params, filt, None, cfg.budget, plan,
                                  cfg.drive_torque_psd)
    return run, sa.welch_psd(run.theta, cfg.segment_seconds)


def cmd_simulate(cfg: RunConfig, args) -> dict:
    _check_stable(cfg)
    run, psd = _run(cfg)
    f1, f2 = cfg.band
    model = rsp.closed_loop_angle_psd(psd.freqs, cfg.filt, cfg.params, None, cfg.budget)
    binned = psd.band(f1, f2).binned(2.4)
    h = cfg.header
    return {
        "theta_timeseries.csv": timeseries_to_csv(run.theta, h("closed-loop angle")),
        "theta_timeseries.json": timeseries_sidecar(run.theta) + "\n",
        "torque_timeseries.csv": timeseries_to_csv(run.torque, h("feedback torque")),
        "torque_timeseries.json": timeseries_sidecar(run.torque) + "\n",
        "theta_psd.csv": spectrum_to_csv(psd, {**h("Welch angle PSD"), "segments": psd.segments}),
        "theta_psd_binned.csv": spectrum_to_csv(binned, {**h("angle PSD, 2.4 Hz bin means"),
                                                         "segments": psd.segments}),
        "model_psd.csv": _csv(cfg, "closed-loop model PSD breakdown", {
            "f_hz": model.freqs, "thermal": model.thermal, "imprinted": model.imprinted,
            "vibration": model.vibration, "radiation": model.radiation, "total": model.total}),
        "simulate.json": _json(cfg, "simulation summary", {
            "saturation_fraction": run.saturation_fraction, "saturation_flagged": run.flagged,
            "segments": psd.segments, "mode": cfg.plan.mode}),
    }


def _read_spectrum(path: Path) -> SpectrumRecord:
    text = path.read_text()
    segments = 1
    for line in text.splitlines():
        if line.startswith("# segments:"):
            segments = int(line.split(":", 1)[1])
    return spectrum_from_csv(text, segments)


def analysis_payload(cfg: RunConfig, psd: SpectrumRecord) -> dict:
    f1, f2 = cfg.band
    T = sa.effective_temperature(psd, cfg.params, cfg.f_eff_or_f0, None, f1, f2)
    out = {"band_hz": [f1, f2], "T_eff_K": T.T_eff, "n": T.n,
           "measured_band_power": T.measured_power, "reference_band_power": T.reference_power}
    if cfg.filt.g > 0:
        fit = sa.fit_noise_budget(psd, cfg.filt, cfg.params, None, cfg.budget, f1, f2)
        out["noise_budget_fit"] = fit.to_dict()
        out["fb_noise_fraction_model"] = sa.fb_noise_fraction(cfg.filt, cfg.params, None,
                                                              cfg.budget, f1, f2)
    if cfg.drive_torque_psd > 0:
        out["susceptibility_fit"] = sa.fit_susceptibility(psd, cfg.drive_torque_psd, cfg.params,
                                                          f1, f2).to_dict()
    return out


def cmd_analyze(cfg: RunConfig, args) -> dict:
    if args.input:
        p = Path(args.input)
        if not p.is_absolute():
            p = cfg.base_dir / p
        if not p.is_file():
            raise ConfigError(f"input spectrum not found: {p}")
        try:
            psd = _read_spectrum(p)
        except ValueError as exc:
            raise ConfigError(f"bad spectrum file: {exc}") from exc
        source = p.name
    else:
        _check_stable(cfg)
        _, psd = _run(cfg)
        source = "simulated"
    payload = analysis_payload(cfg, psd)
    payload["source"] = source
    return {"analysis.json": _json(cfg, "effective temperature and fits", payload)}


def coherence_payload(cfg: RunConfig) -> dict:
    params = cfg.params
    f_eff = cfg.f_eff_or_f0
    Q = cfg.Q_eff if cfg.Q_eff is not None else params.Q0
    w = TWO_PI * f_eff
    th_zp = zero_point_angle(params.inertia, w)
    f1, f2 = cfg.band
    n = cfg.coherence.get("n")
    frac = cfg.coherence.get("fb_fraction")
    T = None
    if n is None:
        T = sa.model_temperature(cfg.filt, params, None, cfg.budget, f1, f2)
        n = T.n
    if frac is None:
        frac = sa.fb_noise_fraction(cfg.filt, params, None, cfg.budget, f1, f2) if cfg.filt.g else 0.0
    xi_th, s = qm.feedback_coherence_angle(th_zp, n, Q, frac)
    rates = qm.rates_from_experiment(th_zp, n, Q, frac, w, params.inertia)
    state = qm.steady_state_moments(rates, frame=qm.ANGULAR)
    xi_mom, dth = qm.coherence_from_covariance(state)
    return {"theta_zp_rad": th_zp, "n": n, "T_eff_K": T.T_eff if T else None, "Q_eff": Q,
            "fb_fraction": frac, "s": s, "xi_theta_rad": xi_th,
            "xi_m": xi_th * params.lever_arm, "lever_arm_m": params.lever_arm,
            "xi_theta_moment_rad": xi_mom, "delta_theta_rad": dth,
            "moment_vs_closed_form": xi_mom / xi_th - 1.0}


def cmd_coherence(cfg: RunConfig, args) -> dict:
    _check_stable(cfg)
    return {"coherence.json": _json(cfg, "coherence angle and length", coherence_payload(cfg))}


def fom_files(cfg: RunConfig, table: Path | None, prefix: str = "") -> dict:
    try:
        records = gf.load_platforms(table)
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read platform table: {exc}") from exc
    rows = gf.platform_table(records)
    cols = {"label": [], "eta": [], "eta_zp": [], "grad_F": [], "notes": []}
    for r in rows:
        cols["label"].append(r.record.label)
        cols["eta"].append(r.result.eta if r.result else math.nan)
        cols["eta_zp"].append(r.result.eta_zp if r.result else math.nan)
        cols["grad_F"].append(r.result.grad_F if r.result else math.nan)
        cols["notes"].append((r.error or r.record.notes).replace(",", ";"))
    return {
        prefix + "fom.csv": _csv(cfg, "figure-of-merit table, sorted by eta", cols),
        prefix + "fom.json": _json(cfg, "figure-of-merit table", {
            "rows": [r.to_dict() for r in rows], "table": table.name if table else "shipped"}),
    }


def cmd_fom(cfg: RunConfig, args) -> dict:
    table = cfg.fom_table
    if args.table:
        table = Path(args.table)
        if not table.is_absolute():
            table = (cfg.base_dir / table) if args.config else table.resolve()
        if not table.is_file():
            raise ConfigError(f"platform table not found: {table}")
    return fom_files(cfg, table)


def beam_files(cfg: RunConfig, setup_path: Path | None, prefix: str = "") -> dict:
    try:
        if setup_path is None:
            text = resources.files("mgtorsion").joinpath("data/optics_example.json").read_text()
            setup = bl.setup_from_dict(json.loads(text))
        else:
            setup = bl.load_setup(setup_path)
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise ConfigError(f"bad optics setup: {exc}") from exc
    presc = setup["prescription"]
    bh, bv = setup["beams"]["horizontal"], setup["beams"]["vertical"]
    if cfg.z_grid:
        z = np.linspace(*cfg.z_grid)
    else:
        z = np.linspace(presc.pendulum_position, presc.extent, 401)
    try:
        table = bl.scan_detector_plane(bh, bv, presc, presc, z)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    summary = {"label": setup["label"]}
    for tag, beam in (("horizontal", bh), ("vertical", bv)):
        wp = float(bl.propagate(beam, presc, [presc.pendulum_position])[0, 1])
        entry = {"S_max": bl.sensitivity_max(beam.wavelength, wp), "w_pendulum_m": wp}
        try:
            zo = bl.find_optimal_detector(beam, presc)
            entry["z_opt_m"] = zo
            entry["S_at_z_opt"] = bl.tilt_sensitivity(beam, presc, zo)
        except ValueError:
            entry["z_opt_m"] = None
        summary[tag] = entry
    return {prefix + "beam_scan.csv": _csv(cfg, "tilt sensitivity scan", table),
            prefix + "beam.json": _json(cfg, "tilt sensitivity summary", summary)}


def cmd_beam(cfg: RunConfig, args) -> dict:
    setup = cfg.beam_setup
    if args.setup:
        setup = Path(args.setup)
        if not setup.is_absolute():
            setup = cfg.base_dir / setup if args.config else setup.resolve()
    return beam_files(cfg, setup)


def geometry_files(cfg: RunConfig, prefix: str = "") -> dict:
    a = np.array(cfg.a_values)
    cols = {"a": a}
    for g in gf.GEOMETRIES:
        cols[f"f_{g[1:]}"] = [gf.geometry_factor(x, g) for x in a]
    cols["inverse_a_cubed"] = 1.0 / a**3
    m, L = 1.0e-6, 1.0
    oracle = {"a": [], "geometry": [], "closed_form": [], "brute_force": [], "rel_delta": [],
              "error_estimate": []}
    for g in gf.GEOMETRIES:
        for x in ORACLE_A:
            closed = gf.force_gradient(m, L, x * L, g)
            try:
                bf = gf.brute_force_gradient(m, L, x * L, g, cfg.resolution)
            except ArithmeticError as exc:
                raise NumericalError(str(exc)) from exc
            oracle["a"].append(x)
            oracle["geometry"].append(g)
            oracle["closed_form"].append(closed / (2 * CONSTANTS.G * m**2 / L**3))
            oracle["brute_force"].append(bf.grad_F / (2 * CONSTANTS.G * m**2 / L**3))
            oracle["rel_delta"].append(bf.grad_F / closed - 1.0)
            oracle["error_estimate"].append(bf.error / bf.grad_F)
    return {prefix + "geometry.csv": _csv(cfg, "geometry factors f(a)", cols),
            prefix + "geometry_oracle.csv": _csv(cfg, "closed form vs brute force, in units of f", oracle)}


def cmd_geometry(cfg: RunConfig, args) -> dict:
    return geometry_files(cfg)


def torque_sensitivity(cfg: RunConfig, f=None) -> SpectrumRecord:
    """Free-running torque-referred noise of the model budget."""
    f = np.geomspace(0.5, 200.0, 801) if f is None else f
    ang = SpectrumRecord(f, rsp.free_running_angle_psd(f, cfg.params, None, cfg.budget))
    return rsp.torque_referred_psd(ang, cfg.params)


def cmd_report(cfg: RunConfig, args) -> dict:
    _check_stable(cfg)
    params = cfg.params
    f1, f2 = cfg.band
    files = {}
    checks = {}

    d = asdict(derive_all(params, cfg.f_eff_or_f0))
    files["report/derived.json"] = _json(cfg, "derived quantities", d)
    checks["derived"] = d

    rd = ts.ringdown(params, 1e-4, 8000.0, 20.0)
    rt = ts.ringdown(params, 1e-4, 1.5e6, 1.0, thermal=True, seed=cfg.seed)
    checks["ringdown"] = {"tau_fit_s": rd.tau, "tau_expected_s": 2 * params.Q0 / params.omega0,
                          "Q_fit": rd.Q, "thermal_late_rms_rad": rt.late_rms}

    run, psd = _run(cfg)
    files["report/theta_psd.csv"] = spectrum_to_csv(psd, {**cfg.header("Welch angle PSD"),
                                                          "segments": psd.segments})
    files["report/theta_psd_binned.csv"] = spectrum_to_csv(
        psd.band(f1, f2).binned(2.4), {**cfg.header("angle PSD, 2.4 Hz bin means"),
                                       "segments": psd.segments})
    checks["cooling"] = analysis_payload(cfg, psd)

    if cfg.f_eff is not None:
        ladder = {"Q_eff": [], "T_eff_sim_K": [], "T_eff_model_K": [], "n_sim": [],
                  "fb_fraction": [], "xi_theta_rad": [], "s": []}
        th_zp = zero_point_angle(params.inertia, TWO_PI * cfg.f_eff)
        for k, q in enumerate(LADDER_Q):
            filt = rsp.design_filter(params, cfg.f_eff, q, cfg.filt.omega_lag, cfg.filt.exact)
            _, p = _run(cfg, seed_offset=k + 1, filt=filt)
            T = sa.effective_temperature(p, params, cfg.f_eff, None, f1, f2)
            Tm = sa.model_temperature(filt, params, None, cfg.budget, f1, f2)
            frac = sa.fb_noise_fraction(filt, params, None, cfg.budget, f1, f2)
            xi, s = qm.feedback_coherence_angle(th_zp, T.n, q, frac)
            for key, v in zip(ladder, (q, T.T_eff, Tm.T_eff, T.n, frac, xi, s)):
                ladder[key].append(v)
        files["report/ladder.csv"] = _csv(cfg, "damping ladder at fixed shifted frequency", ladder)
        checks["ladder_T_eff_K"] = ladder["T_eff_sim_K"]
        checks["equipartition_capture"] = sa.equipartition_capture(params, cfg.f_eff)

    checks["coherence"] = coherence_payload(cfg)

    tq = torque_sensitivity(cfg)
    amp = np.sqrt(tq.psd)
    files["report/torque_sensitivity.csv"] = _csv(cfg, "free-running torque-referred noise", {
        "f_hz": tq.freqs, "torque_asd_Nm_per_rtHz": amp})
    band = (tq.freqs >= 1.0) & (tq.freqs <= 5.0)
    slope = np.polyfit(np.log(tq.freqs[band]), np.log(tq.psd[band]), 1)[0]
    k = int(np.argmin(amp))
    checks["torque"] = {"min_f_hz": tq.freqs[k], "min_asd": amp[k], "slope_1_5Hz": slope}

    fom = fom_files(cfg, cfg.fom_table, "report/")
    files.update(fom)
    rows = json.loads(fom["report/fom.json"])["rows"]
    checks["fom_ranking"] = [r["label"] for r in rows[:3]]
    this = [r for r in rows if r["label"] == "This work"]
    if this:
        checks["fom_this_work_eta"] = this[0]["eta"]

    files.update(beam_files(cfg, cfg.beam_setup, "report/"))
    files.update(geometry_files(cfg, "report/"))
    files["report/checks.json"] = _json(cfg, "summary of headline checks", checks)
    return files


COMMANDS = {"simulate": cmd_simulate, "analyze": cmd_analyze, "coherence": cmd_coherence,
            "fom": cmd_fom, "beam": cmd_beam, "geometry": cmd_geometry, "report": cmd_report}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="mgtorsion", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)
    for name in SUBCOMMANDS:
        p = sub.add_parser(name)
        p.add_argument("config", nargs="?", help="JSON run config (default: shipped example)")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--band", help="analysis band 'f1,f2' in Hz")
        p.add_argument("--out", help="output directory (overrides the config)")
        if name == "analyze":
            p.add_argument("--input", help="spectrum CSV to analyse instead of simulating")
        if name == "fom":
            p.add_argument("--table", help="platform table JSON")
        if name == "beam":
            p.add_argument("--setup", help="optics setup JSON")
    return ap


def _fail(kind: str, message: str, command: str | None, out_dir: Path | None, code: int) -> int:
    err = {"error": kind, "message": message, "command": command, "exit_code": code}
    print(json.dumps(err, sort_keys=True), file=sys.stderr)
    if out_dir is not None:
        write_text(out_dir / FAILURE_MARKER, json.dumps(err, indent=2, sort_keys=True) + "\n")
    return code


def dispatch(command: str, args) -> int:
    out_dir = None
    try:
        band = _parse_band(args.band) if args.band else None
        cfg = load_config(args.config, args.seed, band)
        out_dir = Path(args.out).resolve() if args.out else cfg.outputs
        files = COMMANDS[command](cfg, args)
    except ConfigError as exc:
        return _fail("config", str(exc), command, None, EXIT_CONFIG)
    except (NumericalError, sa.FitError, ArithmeticError, RuntimeError, np.linalg.LinAlgError,
            ValueError) as exc:
        return _fail("numerical", f"{type(exc).__name__}: {exc}", command, out_dir, EXIT_NUMERICAL)
    marker = out_dir / FAILURE_MARKER
    if marker.exists():
        marker.unlink()
    for name, text in files.items():
        write_text(out_dir / name, text)
    print(json.dumps({"command": command, "outputs": str(out_dir), "files": sorted(files)},
                     sort_keys=True))
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return dispatch(args.command, args)


if __name__ == "__main__":
    sys.exit(main())
