"""Experiment orchestration: builds fields from a config, runs the selected
pipeline stage by stage, and emits CSVs plus a JSON manifest written last."""
from __future__ import annotations

import hashlib
import json
import os
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import __version__
from .config import ExperimentConfig, derive_seed, dump_config
from .diagnostics import (
    SweepThresholds,
    UnresolvedError,
    epsilon_sweep,
    strong_convergence_check,
    structure_function_exponent,
    yaglom_curve,
    yaglom_ratio_curve,
)
from .fields import (
    SpectrumConfig,
    amplitude_for_rms,
    cellular_flow,
    constant_flow,
    divergence_residual,
    sample_clebsch_3d,
    sample_stream_2d,
    shear_flow,
    velocity_from_clebsch,
    velocity_from_stream,
    zero_flow,
)
from .grid import GridField, resample
from .io import write_csv, write_field_binary
from .lagrangian import (
    NoiseMode,
    ParticleEnsemble,
    SDEConfig,
    dispersion_curve,
    dispersion_sweep,
    feynman_kac_check,
    pair_grid,
    richardson_verdict,
)
from .sard import (
    critical_value_measure,
    image_dimension_estimate,
    jet_grid,
    probe_for,
    rate_fit,
    weak_sard_proxy,
)
from .solver import SingleMode, SolverConfig, initial_data_from_dict, initialize, solve

DEFAULT_OUT_ENV = "SCALARLAB_OUT"
MANIFEST = "manifest.json"

STAGES = {
    "sample_field": ("field",),
    "solve": ("solve",),
    "sweep_dissipation": ("sweep",),
    "yaglom": ("sweep", "yaglom"),
    "richardson": ("richardson", "feynman_kac"),
    "boxdim": ("boxdim",),
    "morse_sard": ("morse_sard",),
    "full_report": ("field", "solve", "sweep", "yaglom", "richardson", "feynman_kac", "boxdim", "morse_sard"),
}


@dataclass
class OutputFile:
    """A CSV or binary table produced by a stage: header plus rows, or raw field."""

    name: str
    header: list | None = None
    rows: list | None = None
    field: GridField | None = None


@dataclass
class RunManifest:
    config: str
    seeds: dict
    version: str
    wall_times: dict = field(default_factory=dict)
    files: list = field(default_factory=list)
    results: dict = field(default_factory=dict)
    errors: list = field(default_factory=list)
    exit_code: int = 0

    def to_json(self) -> str:
        doc = {
            "version": self.version,
            "config": self.config,
            "seeds": self.seeds,
            "wall_times": self.wall_times,
            "files": self.files,
            "results": self.results,
            "errors": self.errors,
            "exit_code": self.exit_code,
        }
        return json.dumps(doc, indent=2, sort_keys=True, default=_jsonable) + "\n"


def _jsonable(x):
    if isinstance(x, (np.floating, np.integer, np.bool_)):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    return str(x)


def default_output_dir() -> str:
    return os.environ.get(DEFAULT_OUT_ENV, "scalarlab_out")


# --- fields ----------------------------------------------------------------------


def spectrum_for(cfg: ExperimentConfig, seed: int) -> SpectrumConfig:
    f = cfg.field
    d, n = f.dimension, f.resolution
    # Clebsch products stay orthogonal to grad phi only below N/4
    K = f.max_wavenumber or (n // 3 if d == 2 else n // 4 - 1)
    if f.modes is not None:
        modes = [tuple(int(c) for c in m) for m in f.modes]
        means = {m: complex(*a) if isinstance(a, list) else complex(a) for m, a in zip(modes, f.means or [])}
        std = dict(zip(modes, f.stddevs)) if f.stddevs is not None else {m: 0.0 for m in modes}
        return SpectrumConfig(d, K, n, mean=means, stddev=std, seed=seed)
    if f.decay_exponent is not None:
        spec = SpectrumConfig(d, K, n, decay_exponent=f.decay_exponent, amplitude=f.amplitude, seed=seed)
    else:
        alpha = 0.5 if f.alpha_target is None else f.alpha_target
        spec = SpectrumConfig.for_holder(d, alpha, n, K, amplitude=f.amplitude, seed=seed)
    if f.velocity_rms is not None:
        spec = replace(spec, amplitude=amplitude_for_rms(spec, f.velocity_rms))
    return spec


def build_fields(cfg: ExperimentConfig, seed: int):
    """(velocity, potentials or None).  Potentials stack the d-1 scalars phi."""
    f = cfg.field
    d, n = f.dimension, f.resolution
    if f.kind == "zero":
        return zero_flow(d, n), None
    if f.kind == "constant":
        return constant_flow(d, n, f.vector), None
    if f.kind == "shear":
        return shear_flow(n, f.amplitude), None
    if f.kind == "cellular":
        return cellular_flow(n, f.amplitude), None
    spec = spectrum_for(cfg, seed)
    if d == 2:
        phi = sample_stream_2d(spec)
        return velocity_from_stream(phi), phi
    pots = sample_clebsch_3d(spec)
    return velocity_from_clebsch(pots), pots.stacked()


def _solver_config(cfg: ExperimentConfig, epsilon=None) -> SolverConfig:
    s = cfg.solver
    return SolverConfig(
        s.epsilon if epsilon is None else epsilon, s.t_final, s.dt, s.cfl_safety, s.dealias, s.output_cadence
    )


def _initial(cfg: ExperimentConfig):
    i = cfg.initial
    return initial_data_from_dict({"kind": i.kind, "mode": i.mode, "cells": i.cells})


def _rms(v: GridField) -> float:
    return float(np.sqrt((v.real_values**2).sum(axis=0).mean()))


# --- stages ------------------------------------------------------------------------
# Each stage takes (cfg, context) and returns (outputs, results).  The context
# carries the realization's fields and the sweep shared by later stages.


def _stage_field(cfg, ctx):
    v = ctx["v"]
    out = [
        OutputFile("velocity.bin", field=v),
        OutputFile(
            "field.csv",
            ["dimension", "resolution", "velocity_rms", "divergence_residual"],
            [(v.dimension, v.resolution, _rms(v), divergence_residual(v))],
        ),
    ]
    if ctx["phi"] is not None:
        out.append(OutputFile("potentials.bin", field=ctx["phi"]))
    return out, {"velocity_rms": _rms(v), "divergence_residual": divergence_residual(v)}


def _stage_solve(cfg, ctx):
    v = ctx["v"]
    state0 = initialize(_initial(cfg), v.resolution, v.dimension)
    final, ledger = solve(state0, v, _solver_config(cfg))
    rows = ledger.rows()
    header = ["time", "variance", "dissipation_cumulative", "balance_residual"]
    return (
        [OutputFile("ledger.csv", header, rows), OutputFile("theta.bin", field=final.theta)],
        {
            "dissipation": ledger.dissipation_cumulative[-1],
            "max_balance_residual": max(abs(r) for r in ledger.balance_residual),
        },
    )


def _stage_sweep(cfg, ctx):
    s = cfg.sweep
    th = SweepThresholds(s.decrease_factor, s.plateau_tolerance, s.plateau_floor)
    res = epsilon_sweep(
        ctx["v"], _initial(cfg), s.epsilons, _solver_config(cfg),
        n_min=s.n_min, max_resolution=s.max_resolution, fit_tail=s.fit_tail,
        thresholds=th, workers=ctx["workers"],
    )
    ctx["sweep"] = res
    dist = strong_convergence_check(res.final_states)
    balance = [max(abs(r) for r in L.balance_residual) for L in res.ledgers]
    out = [
        OutputFile("sweep.csv", ["epsilon", "dissipation", "variance_deficit"], res.rows()),
        OutputFile(
            "convergence.csv",
            ["epsilon", "resolution", "l2_distance_to_smallest", "balance_residual"],
            list(zip(res.epsilons, res.resolutions, dist, balance)),
        ),
    ]
    return out, {
        "verdict": res.verdict.value,
        "fit_slope": res.fit_slope,
        "resolutions": res.resolutions,
        "max_balance_residual": max(balance),
    }


def _stage_yaglom(cfg, ctx):
    res, v = ctx.get("sweep"), ctx["v"]
    if res is None:
        raise RuntimeError("yaglom stage needs a completed sweep")
    q = cfg.yaglom.quadrature
    ratio = yaglom_ratio_curve(res, v, q=q)
    last = res.final_states[-1].theta
    curve = yaglom_curve(last, resample(v, last.resolution), cfg.yaglom.radii, q=q)
    betas, struct_rows = [], []
    for eps, st in zip(res.epsilons, res.final_states):
        beta, (radii, s2) = structure_function_exponent(st.theta, cfg.structure.radii, q=q)
        betas.append(beta)
        if st is res.final_states[-1]:
            struct_rows = list(zip(radii, s2))
    out = [
        OutputFile("yaglom.csv", ["r", "mean_S", "mean_S_over_r"], curve.rows()),
        OutputFile("yaglom_ratio.csv", ["epsilon", "ratio"], list(zip(ratio.epsilons, ratio.ratios))),
        OutputFile("structure.csv", ["r", "S2"], struct_rows),
        OutputFile("structure_exponents.csv", ["epsilon", "beta_hat"], list(zip(res.epsilons, betas))),
    ]
    return out, {"yaglom_decrease_factor": ratio.decrease_factor, "beta_hat": betas}


def _stage_richardson(cfg, ctx):
    lag = cfg.lagrangian
    eps = lag.epsilons if lag.epsilons is not None else cfg.sweep.epsilons
    sw = dispersion_sweep(
        ctx["v"], eps, dt=lag.dt, t_final=lag.t_final, cells_per_axis=lag.pair_grid,
        rho0=lag.rho0, realizations=lag.realizations, noise_mode=NoiseMode(lag.noise_mode),
        seed=ctx["seeds"]["noise"] % 2**63,
    )
    verdict = richardson_verdict(sw)
    rows = []
    for i, e in enumerate(sw.epsilons):
        for c in range(sw.means.shape[1]):
            rows.append((e, c, sw.means[i, c], sw.sems[i, c], sw.baseline[c]))
    flags = [(c, f) for c, f in enumerate(sw.cell_flags)]
    # time history over the whole pair grid at the smallest epsilon
    pts, ids, pairs, _ = pair_grid(ctx["v"].dimension, lag.pair_grid, lag.rho0, lag.realizations)
    mode = NoiseMode(lag.noise_mode)
    if mode is NoiseMode.INDEPENDENT:
        ids = np.arange(len(pts))
    sde = SDEConfig(min(eps), lag.dt, lag.t_final, len(pts), mode, ctx["seeds"]["noise"] % 2**63)
    history, _ = dispersion_curve(ParticleEnsemble.start(pts, ids), ctx["v"], sde, pairs, lag.times)
    out = [
        OutputFile("dispersion.csv", ["epsilon", "cell", "mean_d2", "sem", "baseline_d2"], rows),
        OutputFile("dispersion_cells.csv", ["cell", "flag"], flags),
        OutputFile("dispersion_t.csv", ["t", "mean_d2", "sem"], history),
    ]
    return out, {"richardson_verdict": verdict.value}


def _stage_feynman_kac(cfg, ctx):
    lag, v = cfg.lagrangian, ctx["v"]
    n, d = v.resolution, v.dimension
    # smooth terminal data: the spectral reference is exact only for band-limited f
    f = SingleMode((1,) + (0,) * (d - 1))
    probes = np.array([[(j * n // lag.fk_probes) / n] + [0.0] * (d - 1) for j in range(lag.fk_probes)])
    sde = SDEConfig(lag.fk_epsilon, lag.dt, lag.t_final, lag.n_particles, NoiseMode.INDEPENDENT,
                    ctx["seeds"]["fk"] % 2**63)
    rep = feynman_kac_check(v, f, sde, probes)
    rows = [tuple(x) + (mc, u, sem) for x, mc, u, sem in rep.rows]
    header = [f"x{a}" for a in range(d)] + ["mc", "spectral", "sem"]
    return [OutputFile("fk.csv", header, rows)], {
        "fk_ok": rep.ok, "fk_max_error": rep.max_error, "fk_bound": rep.bound,
    }


def _sard_jet(cfg, ctx):
    phi = ctx["phi"]
    if phi is None:
        raise ValueError("critical-set stages need a gaussian field")
    n = cfg.sard.resolution or phi.resolution
    jet = jet_grid(resample(phi, n))
    src = cfg.sard.alpha_source
    alpha = None if src == "estimated" else float(src.split(":", 1)[1])
    probe = probe_for(jet, cfg.sard.rank_bound, alpha=alpha, multiplier=cfg.sard.threshold_multiplier)
    return jet, probe


def _stage_boxdim(cfg, ctx):
    jet, probe = _sard_jet(cfg, ctx)
    img = image_dimension_estimate(jet, probe, cfg.sard.levels)
    dom = img.domain
    out = [
        OutputFile("boxcount.csv", ["level", "count"], dom.rows()),
        OutputFile("image_boxcount.csv", ["level", "count"], img.rows()),
    ]
    return out, {
        "holder_alpha": probe.holder_alpha,
        "holder_norm": probe.holder_norm,
        "fitted_dim": dom.fitted_dim,
        "theory_bound": dom.theory_bound,
        "dimension_flag": dom.flag,
        "image_dim": img.fitted,
        "image_bound": img.bound,
        "image_flag": img.flag,
    }


def _stage_morse_sard(cfg, ctx):
    jet, probe = _sard_jet(cfg, ctx)
    widths = sorted(cfg.sard.bin_widths, reverse=True)
    measures = [critical_value_measure(jet, bw, probe) for bw in widths]
    weak = weak_sard_proxy(jet, widths, probe)
    try:
        rate = rate_fit(widths, measures)
    except ValueError:
        rate = float("nan")
    out = [
        OutputFile("critical_values.csv", ["bin_width", "measure"], list(zip(widths, measures))),
        OutputFile(
            "weak_sard.csv", ["bin_width", "total_mass", "max_bin_mass", "z_fraction"],
            [(w.bin_width, w.total_mass, w.max_bin_mass, w.z_fraction) for w in weak],
        ),
    ]
    decreasing = all(b <= a for a, b in zip(measures, measures[1:]))
    return out, {"measure_rate": rate, "measure_nonincreasing": decreasing}


_STAGE_FN = {
    "field": _stage_field,
    "solve": _stage_solve,
    "sweep": _stage_sweep,
    "yaglom": _stage_yaglom,
    "richardson": _stage_richardson,
    "feynman_kac": _stage_feynman_kac,
    "boxdim": _stage_boxdim,
    "morse_sard": _stage_morse_sard,
}


# --- outputs -----------------------------------------------------------------------


def _digest(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def write_outputs(outputs, directory) -> list[dict]:
    """Write each output and return the inventory (relative path, bytes, sha256)."""
    directory = Path(directory)
    inventory = []
    for o in outputs:
        path = directory / o.name
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            if o.field is not None:
                write_field_binary(o.field, path)
            else:
                write_csv(path, o.header, o.rows)
        except OSError as exc:
            raise OSError(f"cannot write {path}: {exc}") from exc
        inventory.append({"path": o.name, "bytes": path.stat().st_size, "sha256": _digest(path)})
    return inventory


def _error_record(stage, realization, exc) -> dict:
    return {
        "stage": stage,
        "realization": realization,
        "type": type(exc).__name__,
        "message": str(exc),
    }


def run_experiment(cfg: ExperimentConfig, out_dir=None) -> RunManifest:
    """Run every stage of the selected experiment for each field realization.

    A failing stage is recorded and later stages still run; files written by
    completed stages are kept.  The manifest is written last.
    """
    out_dir = Path(out_dir or cfg.output_dir or default_output_dir())
    out_dir.mkdir(parents=True, exist_ok=True)
    n_real = cfg.field.realizations
    seeds = {
        r: {role: derive_seed(cfg.master_seed, cfg.experiment, r, role) for role in ("field", "noise", "fk")}
        for r in range(n_real)
    }
    manifest = RunManifest(dump_config(cfg), {str(r): s for r, s in seeds.items()}, __version__)
    for r in range(n_real):
        prefix = f"r{r}/" if n_real > 1 else ""
        tag = f"r{r}"
        t0 = time.perf_counter()
        try:
            v, phi = build_fields(cfg, seeds[r]["field"])
        except Exception as exc:  # recorded, the next realization proceeds
            manifest.errors.append(_error_record("build_fields", r, exc))
            continue
        manifest.wall_times[f"{tag}/build_fields"] = time.perf_counter() - t0
        ctx = {"v": v, "phi": phi, "seeds": seeds[r], "workers": cfg.workers or os.cpu_count() or 1}
        results = manifest.results.setdefault(tag, {})
        for stage in STAGES[cfg.experiment]:
            t0 = time.perf_counter()
            try:
                outputs, res = _STAGE_FN[stage](cfg, ctx)
                for o in outputs:
                    o.name = prefix + o.name
                manifest.files.extend(write_outputs(outputs, out_dir))
                results[stage] = res
            except Exception as exc:
                manifest.errors.append(_error_record(stage, r, exc))
            manifest.wall_times[f"{tag}/{stage}"] = time.perf_counter() - t0
    manifest.exit_code = exit_code_for(manifest.errors)
    (out_dir / MANIFEST).write_text(manifest.to_json())
    return manifest


def exit_code_for(errors) -> int:
    if not errors:
        return 0
    if any(e["type"] == UnresolvedError.__name__ for e in errors):
        return 3
    if any(e["type"] in ("ConfigurationError", "ConfigError") for e in errors):
        return 2
    return 4


def load_manifest(path) -> dict:
    return json.loads(Path(path).read_text())


def verify_manifest(directory) -> bool:
    """True when every listed file exists with the recorded digest."""
    directory = Path(directory)
    doc = load_manifest(directory / MANIFEST)
    return all(
        (directory / f["path"]).exists() and _digest(directory / f["path"]) == f["sha256"] for f in doc["files"]
    )
