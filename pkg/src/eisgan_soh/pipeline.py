"""Orchestration of the full study: per-stage GAN training, latent
extraction, GPR fitting (latent path and raw-EIS baseline), evaluation,
perturbation robustness, and plot-data emission.

Everything is driven by one PipelineConfig and one seed; two runs with the
same config produce byte-identical report files.
"""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field, replace

import numpy as np

from . import ecm, eisdata, eisgan, gpr
from .eisdata import Dataset, curve_to_array, fit_norm_stats, normalize
from .eisgan import GanConfig


class PipelineError(Exception):
    """Invalid configuration or missing inputs."""


#: sentinel for R^2 when the target series is constant (SS_tot = 0)
R2_UNDEFINED = float("nan")


def metrics(y, y_hat):
    """(MAE, RMSE, R^2); R^2 is NaN when y is constant and may be negative."""
    y = np.asarray(y, dtype=float).ravel()
    y_hat = np.asarray(y_hat, dtype=float).ravel()
    if len(y) == 0 or len(y) != len(y_hat):
        raise PipelineError(f"metric inputs misaligned: {len(y)} vs {len(y_hat)}")
    resid = y - y_hat
    mae = float(np.mean(np.abs(resid)))
    rmse = float(np.sqrt(np.mean(resid ** 2)))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    if ss_tot == 0.0:
        return mae, rmse, R2_UNDEFINED
    r2 = 1.0 - float(np.sum(resid ** 2)) / ss_tot
    return mae, rmse, r2


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SynthSettings:
    n_train_cells: int = 4
    n_test_cells: int = 4
    n_cycles: int = 120
    dc_noise_amp: float = 0.02
    meas_noise_ohm: float = 0.0002


@dataclass(frozen=True)
class GprSettings:
    restarts: int = 5
    max_iter: int = 100


@dataclass(frozen=True)
class PerturbSettings:
    sigmas: tuple[float, ...] = (0.001, 0.003, 0.005)
    n_samples: int = 100
    cell: str | None = None
    cycle: int = 100


@dataclass(frozen=True)
class PipelineConfig:
    eis_csv: str | None = None
    capacity_csv: str | None = None
    synth: SynthSettings | None = None
    stages: tuple[int, ...] = (3, 4, 5, 6, 7)
    train_cells: tuple[str, ...] = ()
    test_cells: tuple[str, ...] = ()
    gan: GanConfig = field(default_factory=GanConfig)
    gpr: GprSettings = field(default_factory=GprSettings)
    perturb: PerturbSettings = field(default_factory=PerturbSettings)
    out_dir: str = "out"
    seed: int = 0

    def __post_init__(self):
        if not set(self.stages) <= set(range(1, 10)):
            raise PipelineError(f"stages must lie in 1..9, got {self.stages}")
        if set(self.train_cells) & set(self.test_cells):
            raise PipelineError("train and test cells overlap")
        if self.synth is None and (self.eis_csv is None or self.capacity_csv is None):
            raise PipelineError("either synth settings or CSV paths are required")

    @staticmethod
    def from_dict(obj: dict) -> "PipelineConfig":
        kwargs = dict(obj)
        if "synth" in kwargs and kwargs["synth"] is not None:
            kwargs["synth"] = SynthSettings(**kwargs["synth"])
        if "gan" in kwargs:
            gan = dict(kwargs["gan"])
            for key in ("trunk_widths", "gen_widths"):
                if key in gan:
                    gan[key] = tuple(gan[key])
            kwargs["gan"] = GanConfig(**gan)
        if "gpr" in kwargs:
            kwargs["gpr"] = GprSettings(**kwargs["gpr"])
        if "perturb" in kwargs:
            pert = dict(kwargs["perturb"])
            if "sigmas" in pert:
                pert["sigmas"] = tuple(pert["sigmas"])
            kwargs["perturb"] = PerturbSettings(**pert)
        for key in ("stages", "train_cells", "test_cells"):
            if key in kwargs:
                kwargs[key] = tuple(kwargs[key])
        return PipelineConfig(**kwargs)

    @staticmethod
    def from_json_file(path: str) -> "PipelineConfig":
        with open(path, encoding="utf-8") as fh:
            return PipelineConfig.from_dict(json.load(fh))

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), indent=2, sort_keys=True)


def load_dataset(config: PipelineConfig) -> Dataset:
    """Synthesize or ingest the dataset declared by the config."""
    if config.synth is not None:
        s = config.synth
        return ecm.synth_dataset(s.n_train_cells, s.n_test_cells, s.n_cycles,
                                 config.stages, config.seed,
                                 dc_noise_amp=s.dc_noise_amp,
                                 meas_noise_ohm=s.meas_noise_ohm)
    curves = eisdata.load_eis_csv(config.eis_csv)
    caps = eisdata.load_capacity_csv(config.capacity_csv)
    curves = [c if c.n_points == eisdata.T_POINTS else eisdata.resample_log_grid(c)
              for c in curves]
    if not config.train_cells or not config.test_cells:
        raise PipelineError("train_cells and test_cells must be declared for CSV input")
    return Dataset(curves=curves, capacities=caps,
                   train_cells=config.train_cells, test_cells=config.test_cells)


# ---------------------------------------------------------------------------
# reports
# ---------------------------------------------------------------------------

@dataclass
class CellEval:
    stage: int
    cell_id: str
    mae_mah: float
    rmse_mah: float
    r2: float
    cycles: list[int]
    measured_mah: list[float]
    pred_mean_mah: list[float]
    pred_std_mah: list[float]


@dataclass
class EvalReport:
    path_name: str
    cells: list[CellEval] = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps({"path": self.path_name,
                           "cells": [dataclasses.asdict(c) for c in self.cells]},
                          indent=2, sort_keys=True)

    def cell(self, stage: int, cell_id: str) -> CellEval:
        for entry in self.cells:
            if entry.stage == stage and entry.cell_id == cell_id:
                return entry
        raise KeyError((stage, cell_id))


@dataclass
class PerturbEntry:
    stage: int
    sigma: float
    path_name: str
    deviations_mah: list[float]
    median: float
    q25: float
    q75: float
    whisker_lo: float
    whisker_hi: float
    outliers: list[float]


@dataclass
class PerturbReport:
    cell_id: str
    cycle: int
    entries: list[PerturbEntry] = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps({"cell_id": self.cell_id, "cycle": self.cycle,
                           "entries": [dataclasses.asdict(e) for e in self.entries]},
                          indent=2, sort_keys=True)


def box_stats(samples):
    """Median, quartiles, 1.5*IQR whiskers (clipped to data), and outliers."""
    arr = np.sort(np.asarray(samples, dtype=float))
    q25, med, q75 = (float(np.percentile(arr, p)) for p in (25, 50, 75))
    iqr = q75 - q25
    lo_fence, hi_fence = q25 - 1.5 * iqr, q75 + 1.5 * iqr
    inside = arr[(arr >= lo_fence) & (arr <= hi_fence)]
    whisker_lo = float(inside[0]) if len(inside) else q25
    whisker_hi = float(inside[-1]) if len(inside) else q75
    outliers = [float(v) for v in arr if v < lo_fence or v > hi_fence]
    return med, q25, q75, whisker_lo, whisker_hi, outliers


# ---------------------------------------------------------------------------
# per-stage artifacts
# ---------------------------------------------------------------------------

@dataclass
class StageArtifacts:
    stage: int
    stats: eisdata.NormStats
    nets: eisgan.Networks | None
    gpr_model: gpr.GprModel
    train_cells: tuple[str, ...]
    test_cells: tuple[str, ...]


def stage_partition(dataset: Dataset, stage: int):
    """Intersect the declared partition with the cells present in a stage."""
    present = dataset.stage_cells(stage)
    train = tuple(c for c in dataset.train_cells if c in present)
    test = tuple(c for c in dataset.test_cells if c in present)
    if not train or not test:
        raise PipelineError(
            f"stage {stage}: empty partition (train={train}, test={test})")
    return train, test


def _stage_gan_config(config: PipelineConfig, stage: int) -> GanConfig:
    # one independently seeded GAN per stage
    return replace(config.gan, seed=config.seed * 1000 + stage)


def train_stage_gan(dataset: Dataset, config: PipelineConfig, stage: int):
    """Fit NormStats on training cells, train the stage GAN on them."""
    train_cells, _ = stage_partition(dataset, stage)
    train_curves = dataset.curves_for(stage, train_cells)
    stats = fit_norm_stats(train_curves)
    arrays = np.stack([curve_to_array(c) for c in normalize(train_curves, stats)])
    nets, report = eisgan.train(arrays, _stage_gan_config(config, stage))
    return nets, stats, report


def _latents_and_targets(dataset, stage, cells, nets, stats):
    curves = dataset.curves_for(stage, cells)
    lat = np.stack([eisgan.extract_latents(nets, curve_to_array(c))
                    for c in normalize(curves, stats)])
    y = np.array([dataset.capacity(c.cell_id, c.cycle) for c in curves])
    return curves, lat, y


def _flat_and_targets(dataset, stage, cells, stats):
    curves = dataset.curves_for(stage, cells)
    flat = np.stack([curve_to_array(c).ravel() for c in normalize(curves, stats)])
    y = np.array([dataset.capacity(c.cell_id, c.cycle) for c in curves])
    return curves, flat, y


def _evaluate_cells(report, model, stage, curves, inputs, dataset):
    cells = sorted({c.cell_id for c in curves})
    for cell_id in cells:
        idx = [i for i, c in enumerate(curves) if c.cell_id == cell_id]
        mean, var = model.predict(inputs[idx])
        y = np.array([dataset.capacity(cell_id, curves[i].cycle) for i in idx])
        mae, rmse, r2 = metrics(y, mean)
        report.cells.append(CellEval(
            stage=stage, cell_id=cell_id, mae_mah=mae, rmse_mah=rmse, r2=r2,
            cycles=[curves[i].cycle for i in idx],
            measured_mah=[float(v) for v in y],
            pred_mean_mah=[float(v) for v in mean],
            pred_std_mah=[float(v) for v in np.sqrt(var)]))


def run_eisgan_path(dataset: Dataset, config: PipelineConfig,
                    trained: dict | None = None):
    """Latent path: GAN -> extract C_train/C_test -> GPR -> per-cell metrics.

    `trained` may carry {stage: (nets, stats)} to reuse existing GANs.
    Returns (EvalReport, {stage: StageArtifacts}).
    """
    report = EvalReport("eisgan")
    artifacts = {}
    for stage in config.stages:
        train_cells, test_cells = stage_partition(dataset, stage)
        if trained and stage in trained:
            nets, stats = trained[stage]
        else:
            nets, stats, _ = train_stage_gan(dataset, config, stage)
        _, c_train, y_train = _latents_and_targets(dataset, stage, train_cells, nets, stats)
        model = gpr.fit(c_train, y_train, restarts=config.gpr.restarts,
                        max_iter=config.gpr.max_iter, seed=config.seed)
        test_curves, c_test, _ = _latents_and_targets(dataset, stage, test_cells, nets, stats)
        _evaluate_cells(report, model, stage, test_curves, c_test, dataset)
        artifacts[stage] = StageArtifacts(stage, stats, nets, model,
                                          train_cells, test_cells)
    return report, artifacts


def run_baseline_path(dataset: Dataset, config: PipelineConfig,
                      norm_stats: dict | None = None):
    """Raw-EIS baseline: flatten each normalized curve to 2*T dims, same GPR."""
    report = EvalReport("baseline")
    artifacts = {}
    for stage in config.stages:
        train_cells, test_cells = stage_partition(dataset, stage)
        if norm_stats and stage in norm_stats:
            stats = norm_stats[stage]
        else:
            stats = fit_norm_stats(dataset.curves_for(stage, train_cells))
        _, x_train, y_train = _flat_and_targets(dataset, stage, train_cells, stats)
        model = gpr.fit(x_train, y_train, restarts=config.gpr.restarts,
                        max_iter=config.gpr.max_iter, seed=config.seed)
        test_curves, x_test, _ = _flat_and_targets(dataset, stage, test_cells, stats)
        _evaluate_cells(report, model, stage, test_curves, x_test, dataset)
        artifacts[stage] = StageArtifacts(stage, stats, None, model,
                                          train_cells, test_cells)
    return report, artifacts


def _predict_curve(curve, artifact: StageArtifacts, baseline: bool) -> float:
    norm = normalize([curve], artifact.stats)[0]
    if baseline:
        features = curve_to_array(norm).ravel()
    else:
        features = eisgan.extract_latents(artifact.nets, curve_to_array(norm))
    mean, _ = artifact.gpr_model.predict(features)
    return mean


def run_perturbation_study(dataset: Dataset, config: PipelineConfig,
                           eisgan_art: dict, baseline_art: dict) -> PerturbReport:
    """Gaussian-perturbation robustness: deviations of both paths per (stage, sigma)."""
    pert = config.perturb
    report = None
    for stage in config.stages:
        _, test_cells = stage_partition(dataset, stage)
        cell_id = pert.cell if pert.cell is not None else test_cells[0]
        stage_curves = dataset.curves_for(stage, [cell_id])
        if not stage_curves:
            raise PipelineError(f"stage {stage}: no curves for cell {cell_id}")
        cycles = [c.cycle for c in stage_curves]
        cycle = pert.cycle if pert.cycle in cycles else cycles[min(len(cycles) - 1, pert.cycle)]
        curve = next(c for c in stage_curves if c.cycle == cycle)
        if report is None:
            report = PerturbReport(cell_id=cell_id, cycle=cycle)

        for path_name, art in (("eisgan", eisgan_art[stage]),
                               ("baseline", baseline_art[stage])):
            clean_pred = _predict_curve(curve, art, path_name == "baseline")
            for sigma in pert.sigmas:
                rng = np.random.default_rng(
                    [config.seed, stage, int(round(sigma * 1e6)),
                     0 if path_name == "eisgan" else 1])
                devs = []
                for _ in range(pert.n_samples):
                    noisy = eisdata.perturb_curve(curve, sigma, rng)
                    devs.append(_predict_curve(noisy, art, path_name == "baseline")
                                - clean_pred)
                med, q25, q75, wlo, whi, outliers = box_stats(devs)
                report.entries.append(PerturbEntry(
                    stage=stage, sigma=sigma, path_name=path_name,
                    deviations_mah=[float(d) for d in devs],
                    median=med, q25=q25, q75=q75,
                    whisker_lo=wlo, whisker_hi=whi, outliers=outliers))
    return report


# ---------------------------------------------------------------------------
# plot-data emission
# ---------------------------------------------------------------------------

def _write_csv(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(repr(float(v)) if isinstance(v, (float, np.floating))
                              else str(v) for v in row) + "\n")


def emit_plot_data(outdir, dataset: Dataset, config: PipelineConfig,
                   eisgan_report: EvalReport, baseline_report: EvalReport | None,
                   perturb_report: PerturbReport | None,
                   artifacts: dict) -> list[str]:
    """Write CSV series for Nyquist curves, sweeps, latent traces, scatter,
    prediction bands, and perturbation box stats. Returns written paths."""
    os.makedirs(outdir, exist_ok=True)
    written = []

    def emit(name, header, rows):
        path = os.path.join(outdir, name)
        _write_csv(path, header, rows)
        written.append(path)

    for stage in config.stages:
        art = artifacts[stage]
        cell_id = art.test_cells[0]
        curves = dataset.curves_for(stage, [cell_id])

        # Nyquist traces across a handful of cycles
        n_show = min(5, len(curves))
        show = [curves[int(i)] for i in np.linspace(0, len(curves) - 1, n_show)]
        rows = [(c.cycle, i, c.freq_hz[i], c.re_z_ohm[i], c.im_z_ohm[i])
                for c in show for i in range(c.n_points)]
        emit(f"nyquist_stage{stage}_{cell_id}.csv",
             ["cycle", "point_index", "freq_hz", "re_z_ohm", "im_z_ohm"], rows)

        # latent sweeps for the top two selected dimensions
        _, lat, caps = _latents_and_targets(dataset, stage, [cell_id], art.nets, art.stats)
        sel = eisgan.align_and_select(lat, caps)
        grid = np.linspace(-2.0, 2.0, 9)
        for rank, dim in enumerate(sel.top2, start=1):
            swept = eisgan.latent_sweep(art.nets, dim, grid)
            rows = []
            freq = curves[0].freq_hz
            for value, arr in zip(grid, swept):
                re_z, im_z = eisdata.array_to_channels(arr, art.stats)
                rows.extend((value, i, freq[i], re_z[i], im_z[i])
                            for i in range(len(freq)))
            emit(f"sweep_stage{stage}_c{rank}.csv",
                 ["code_value", "point_index", "freq_hz", "re_z_ohm", "im_z_ohm"], rows)

        # aligned latent traces over cycles
        cycles = [c.cycle for c in curves]
        rows = [(cy, sel.aligned[i, sel.top2[0]], sel.aligned[i, sel.top2[1]])
                for i, cy in enumerate(cycles)]
        emit(f"latents_stage{stage}_{cell_id}.csv", ["cycle", "c1", "c2"], rows)

    # predicted vs measured scatter, and per-cell bands
    for report in filter(None, (eisgan_report, baseline_report)):
        rows = [(e.stage, e.cell_id, cy, m, p)
                for e in report.cells
                for cy, m, p in zip(e.cycles, e.measured_mah, e.pred_mean_mah)]
        emit(f"scatter_{report.path_name}.csv",
             ["stage", "cell_id", "cycle", "measured_mah", "predicted_mah"], rows)
        for e in report.cells:
            rows = [(cy, m, p, p - s, p + s)
                    for cy, m, p, s in zip(e.cycles, e.measured_mah,
                                           e.pred_mean_mah, e.pred_std_mah)]
            emit(f"band_{report.path_name}_stage{e.stage}_{e.cell_id}.csv",
                 ["cycle", "measured", "mean", "lower", "upper"], rows)

    if perturb_report is not None:
        rows = [(e.stage, e.sigma, e.path_name, e.median, e.q25, e.q75,
                 e.whisker_lo, e.whisker_hi, len(e.outliers))
                for e in perturb_report.entries]
        emit("perturb_box.csv",
             ["stage", "sigma", "path", "median", "q25", "q75",
              "whisker_lo", "whisker_hi", "n_outliers"], rows)

    return written


def write_summary(outdir, eisgan_report: EvalReport,
                  baseline_report: EvalReport | None) -> str:
    """Single structured-text summary keyed by (stage, cell)."""
    summary = {}
    for report in filter(None, (eisgan_report, baseline_report)):
        for e in report.cells:
            key = f"stage{e.stage}/{e.cell_id}"
            summary.setdefault(key, {})[report.path_name] = {
                "mae_mah": e.mae_mah, "rmse_mah": e.rmse_mah, "r2": e.r2}
    path = os.path.join(outdir, "summary.json")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(summary, indent=2, sort_keys=True))
    return path


def run_all(config: PipelineConfig) -> dict:
    """Execute the full study; writes reports and plot data to config.out_dir."""
    os.makedirs(config.out_dir, exist_ok=True)
    with open(os.path.join(config.out_dir, "resolved_config.json"), "w",
              encoding="utf-8") as fh:
        fh.write(config.to_json())

    dataset = load_dataset(config)
    if config.synth is not None:
        eisdata.save_eis_csv(os.path.join(config.out_dir, "eis.csv"), dataset.curves)
        eisdata.save_capacity_csv(os.path.join(config.out_dir, "capacity.csv"),
                                  dataset.capacities)

    eisgan_report, eisgan_art = run_eisgan_path(dataset, config)
    norm_stats = {s: a.stats for s, a in eisgan_art.items()}
    baseline_report, baseline_art = run_baseline_path(dataset, config, norm_stats)
    perturb_report = run_perturbation_study(dataset, config, eisgan_art, baseline_art)

    for name, report in (("evalreport_eisgan.json", eisgan_report),
                         ("evalreport_baseline.json", baseline_report),
                         ("perturbreport.json", perturb_report)):
        with open(os.path.join(config.out_dir, name), "w", encoding="utf-8") as fh:
            fh.write(report.to_json())
    emit_plot_data(config.out_dir, dataset, config, eisgan_report,
                   baseline_report, perturb_report, eisgan_art)
    write_summary(config.out_dir, eisgan_report, baseline_report)
    for stage, art in eisgan_art.items():
        eisgan.save_checkpoint(os.path.join(config.out_dir, f"gan_stage{stage}.npz"),
                               art.nets, art.stats)
    return {"dataset": dataset, "eisgan_report": eisgan_report,
            "baseline_report": baseline_report, "perturb_report": perturb_report,
            "eisgan_artifacts": eisgan_art, "baseline_artifacts": baseline_art}
