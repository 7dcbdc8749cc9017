"""Experiment harness: guided sampling per sweep point, metrics and on-disk artifacts.

Output bundle (all deterministic given the config bytes):

* ``metrics.csv``: one row per sweep point
* ``samples_<run_id>.csv``: final states, columns ``x0..x{d-1}``
* ``heatmap_<run_id>.pgm``: binary 8-bit PGM of the sample histogram (d = 2)
* ``manifest.json``: config echo, version, status and per-run file list
* ``ablation_<axis>.csv``: comparison table written by :func:`ablate`
"""

from __future__ import annotations

import json
import logging
import os
from dataclasses import dataclass

import numpy as np

from . import __version__
from .analytic import AnalyticDenoiser, composed_log_density, composed_target
from .config import ExperimentConfig, expand_sweep_values, parse_config
from .diffusion import build_schedule, sample
from .errors import UnsupportedComposition, ValidationError
from .geometry import ManipulationMode
from .metrics import (
    component_mass,
    grid_from_log_density,
    grid_kl,
    grid_moments,
    histogram_grid,
    moment_report,
    neg_entropy,
    sliced_wasserstein,
)
from .mlp import MlpDenoiser, load_checkpoint

log = logging.getLogger(__name__)

METRIC_COLUMNS = (
    "run_id", "mode", "w1", "w2_base", "scheduler", "cfg", "steps",
    "grid_kl", "sliced_w", "mean_err", "cov_err", "clamped_count",
)
ABLATION_COLUMNS = METRIC_COLUMNS + ("axis", "value", "removed_mass", "sharpness", "rank")


def fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(path, header, rows):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(fmt(row.get(h)) for h in header) + "\n")


def write_samples(path, samples):
    d = samples.shape[1]
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(",".join(f"x{i}" for i in range(d)) + "\n")
        for row in samples:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


def write_pgm(path, grid):
    """8-bit binary PGM; top row is the largest y, contrast scaled to the max cell."""
    img = grid.prob.T[::-1]
    peak = img.max()
    px = np.zeros_like(img) if peak <= 0 else np.rint(255.0 * img / peak)
    h, w = px.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(px.astype(np.uint8).tobytes(order="C"))


@dataclass
class Target:
    mixture: object  # GaussianMixture or None when only a grid is available
    grid: object  # Grid2D or None when d != 2


def build_target(world, guidance, grid_spec):
    mode = ManipulationMode(guidance.mode)
    try:
        mix = composed_target(world, mode, guidance.src, guidance.tgt)
    except UnsupportedComposition:
        mix = None
    grid = None
    if world.dim == 2:
        grid = grid_from_log_density(
            lambda pts: composed_log_density(world, mode, guidance.src, guidance.tgt, pts), grid_spec)
    return Target(mix, grid)


def build_denoiser(cfg: ExperimentConfig, sched):
    world = cfg.world.data_world()
    if cfg.world.kind == "learned":
        net = load_checkpoint(cfg.world.checkpoint)
        missing = [c for c in (cfg.guidance.src, cfg.guidance.tgt) if c not in net.conditions]
        if missing:
            raise ValidationError("checkpoint", f"checkpoint lacks conditions {missing}")
        return MlpDenoiser(net), world
    return AnalyticDenoiser(world, sched), world


def _target_samples(target, n, seed, grid_spec):
    rng = np.random.default_rng([seed, 7])
    if target.mixture is not None:
        return target.mixture.sample(n, rng)
    # grid fallback: pick cells by mass, jitter uniformly inside the cell
    p = target.grid.prob.ravel()
    idx = rng.choice(p.size, size=n, p=p)
    ix, iy = np.unravel_index(idx, target.grid.prob.shape)
    dx = (grid_spec.x_max - grid_spec.x_min) / grid_spec.resolution
    dy = (grid_spec.y_max - grid_spec.y_min) / grid_spec.resolution
    u = rng.random((n, 2))
    return np.stack([grid_spec.x_min + (ix + u[:, 0]) * dx,
                     grid_spec.y_min + (iy + u[:, 1]) * dy], axis=1)


def evaluate_run(samples, target, world, guidance, cfg: ExperimentConfig):
    grid_spec = cfg.output.grid_spec()
    out = {"grid_kl": None, "clamped_count": 0, "removed_mass": None, "sharpness": None}
    hist = None
    if samples.shape[1] == 2:
        hist = histogram_grid(samples, grid_spec)
        out["grid_kl"] = grid_kl(hist, target.grid)
        out["clamped_count"] = hist.clamped
        out["sharpness"] = neg_entropy(hist)
        if ManipulationMode(guidance.mode) is ManipulationMode.REMOVAL:
            removed = world[guidance.tgt]
            out["removed_mass"] = component_mass(hist, removed.means[0], removed.variances[0])
    if target.mixture is not None:
        mean_err, cov_err = moment_report(samples, target.mixture)
    else:
        mu, cov = grid_moments(target.grid)
        mean_err = samples.mean(axis=0) - mu
        cov_err = float(np.linalg.norm(np.cov(samples, rowvar=False) - cov)) if len(samples) > 1 else float("nan")
    ref = _target_samples(target, len(samples), cfg.sampler.seed, grid_spec) if (
        target.mixture is not None or target.grid is not None) else None
    out["sliced_w"] = (sliced_wasserstein(samples, ref, cfg.output.n_projections, seed=cfg.sampler.seed)
                       if ref is not None else None)
    out["mean_err"] = float(np.max(np.abs(mean_err)))
    out["cov_err"] = cov_err
    return out, hist


def run(cfg: ExperimentConfig, workers=None):
    """Run every sweep point and write the artifact bundle; returns the metric rows."""
    out_dir = cfg.output.dir
    os.makedirs(out_dir, exist_ok=True)
    manifest = {
        "software": "gtf",
        "version": __version__,
        "config": cfg.to_dict(),
        "status": "incomplete",
        "runs": [],
    }
    manifest_path = os.path.join(out_dir, "manifest.json")
    rows = []
    try:
        sched = build_schedule(cfg.schedule.T, cfg.schedule.beta_start, cfg.schedule.beta_end)
        denoiser, world = build_denoiser(cfg, sched)
        for i, (axis, value, gparams) in enumerate(cfg.sweep_points()):
            run_id = f"run{i:03d}"
            log.info("%s: %s=%s", run_id, axis, value)
            gcfg = gparams.guidance_config()
            samples = sample(denoiser, sched, cfg.sampler.sampler_config(), gcfg,
                             gparams.src, gparams.tgt, cfg.sampler.n_samples, d=world.dim,
                             workers=workers)
            target = build_target(world, gparams, cfg.output.grid_spec())
            metrics, hist = evaluate_run(samples, target, world, gparams, cfg)
            files = {}
            if cfg.output.write_samples:
                files["samples"] = f"samples_{run_id}.csv"
                write_samples(os.path.join(out_dir, files["samples"]), samples)
            if hist is not None:
                files["heatmap"] = f"heatmap_{run_id}.pgm"
                write_pgm(os.path.join(out_dir, files["heatmap"]), hist)
            row = {
                "run_id": run_id, "mode": gparams.mode, "w1": gparams.w1, "w2_base": gparams.w2,
                "scheduler": gparams.scheduler, "cfg": gparams.cfg_scale, "steps": cfg.sampler.steps,
                "axis": axis, "value": value, **metrics,
            }
            rows.append(row)
            manifest["runs"].append({"run_id": run_id, "axis": axis, "value": value, "files": files})
        write_csv(os.path.join(out_dir, "metrics.csv"), METRIC_COLUMNS, rows)
        manifest["status"] = "complete"
    except Exception as exc:
        manifest["error"] = f"{type(exc).__name__}: {exc}"
        raise
    finally:
        with open(manifest_path, "w", encoding="utf-8", newline="\n") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True)
            fh.write("\n")
    return rows


def ablate(cfg: ExperimentConfig, axis: str, values, workers=None):
    """Sweep one axis and write ``ablation_<axis>.csv`` ranked by grid KL (1 = lowest)."""
    values = expand_sweep_values(axis, values)
    if len(values) < 2:
        raise ValidationError("values", "ablation needs at least two values")
    doc = cfg.to_dict()
    doc["sweep"] = {"axis": axis, "values": values}
    cfg = parse_config(doc)
    rows = run(cfg, workers=workers)
    keyed = [(r["grid_kl"] if r["grid_kl"] is not None else r["sliced_w"], i) for i, r in enumerate(rows)]
    for rank, (_, i) in enumerate(sorted(keyed), start=1):
        rows[i]["rank"] = rank
    write_csv(os.path.join(cfg.output.dir, f"ablation_{axis}.csv"), ABLATION_COLUMNS, rows)
    return rows
