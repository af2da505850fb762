"""Command-line entry point: eisgan-soh <subcommand> --config <path>.

Subcommands: synth, train-gan, extract, fit-gpr, predict, evaluate,
baseline, perturb, sweep, run-all. Exit code 0 on success; on failure a
single machine-parsable JSON error line is printed to stderr.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys

import numpy as np

from . import ecm, eisdata, eisgan, gpr, pipeline
from .pipeline import PipelineConfig


def _load_config(args) -> PipelineConfig:
    if args.config:
        config = PipelineConfig.from_json_file(args.config)
    else:
        config = PipelineConfig(synth=pipeline.SynthSettings())
    if args.seed is not None:
        config = dataclasses.replace(config, seed=args.seed)
    if args.stage is not None:
        config = dataclasses.replace(config, stages=(args.stage,))
    if args.out is not None:
        config = dataclasses.replace(config, out_dir=args.out)
    return config


def _checkpoint_path(config, stage):
    return os.path.join(config.out_dir, f"gan_stage{stage}.npz")


def _latents_csv_path(config, stage):
    return os.path.join(config.out_dir, f"latents_stage{stage}.csv")


def cmd_synth(config: PipelineConfig):
    dataset = pipeline.load_dataset(config)
    os.makedirs(config.out_dir, exist_ok=True)
    eisdata.save_eis_csv(os.path.join(config.out_dir, "eis.csv"), dataset.curves)
    eisdata.save_capacity_csv(os.path.join(config.out_dir, "capacity.csv"),
                              dataset.capacities)
    print(f"wrote {len(dataset.curves)} curves for cells "
          f"{dataset.train_cells + dataset.test_cells} to {config.out_dir}")


def cmd_train_gan(config: PipelineConfig):
    dataset = pipeline.load_dataset(config)
    os.makedirs(config.out_dir, exist_ok=True)
    for stage in config.stages:
        nets, stats, report = pipeline.train_stage_gan(dataset, config, stage)
        path = _checkpoint_path(config, stage)
        eisgan.save_checkpoint(path, nets, stats)
        print(f"stage {stage}: trained {config.gan.epochs} epochs, "
              f"final loss_d={report.loss_d[-1]:.4f} -> {path}")


def cmd_extract(config: PipelineConfig):
    dataset = pipeline.load_dataset(config)
    for stage in config.stages:
        nets, stats = eisgan.load_checkpoint(_checkpoint_path(config, stage))
        curves = dataset.curves_for(stage)
        rows = []
        for curve in eisdata.normalize(curves, stats):
            lat = eisgan.extract_latents(nets, eisdata.curve_to_array(curve))
            rows.append([curve.cell_id, curve.stage, curve.cycle]
                        + [float(v) for v in lat])
        header = ["cell_id", "stage", "cycle"] + [
            f"c{i + 1}" for i in range(nets.config.latent_dim)]
        pipeline._write_csv(_latents_csv_path(config, stage), header, rows)
        print(f"stage {stage}: wrote {len(rows)} latent rows")


def _read_latents(path):
    rows = []
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
        dims = len(header) - 3
        for line in fh:
            parts = line.strip().split(",")
            rows.append((parts[0], int(parts[1]), int(parts[2]),
                         np.array([float(v) for v in parts[3:]])))
    return rows, dims


def cmd_fit_gpr(config: PipelineConfig):
    dataset = pipeline.load_dataset(config)
    for stage in config.stages:
        rows, _ = _read_latents(_latents_csv_path(config, stage))
        train_cells, _ = pipeline.stage_partition(dataset, stage)
        train_rows = [r for r in rows if r[0] in train_cells]
        c_train = np.stack([r[3] for r in train_rows])
        y_train = np.array([dataset.capacity(r[0], r[2]) for r in train_rows])
        model = gpr.fit(c_train, y_train, restarts=config.gpr.restarts,
                        max_iter=config.gpr.max_iter, seed=config.seed)
        path = os.path.join(config.out_dir, f"gpr_stage{stage}.json")
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(model.to_json())
        print(f"stage {stage}: GPR fit on {len(y_train)} points, "
              f"lml={model.lml:.3f} -> {path}")


def cmd_predict(config: PipelineConfig):
    dataset = pipeline.load_dataset(config)
    for stage in config.stages:
        with open(os.path.join(config.out_dir, f"gpr_stage{stage}.json"),
                  encoding="utf-8") as fh:
            model = gpr.GprModel.from_json(fh.read())
        rows, _ = _read_latents(_latents_csv_path(config, stage))
        _, test_cells = pipeline.stage_partition(dataset, stage)
        out_rows = []
        for cell_id, _, cycle, lat in rows:
            if cell_id not in test_cells:
                continue
            mean, var = model.predict(lat)
            out_rows.append((cell_id, stage, cycle, mean, float(np.sqrt(var))))
        path = os.path.join(config.out_dir, f"predictions_stage{stage}.csv")
        pipeline._write_csv(path, ["cell_id", "stage", "cycle",
                                   "pred_mean_mah", "pred_std_mah"], out_rows)
        print(f"stage {stage}: wrote {len(out_rows)} predictions")


def cmd_evaluate(config: PipelineConfig):
    dataset = pipeline.load_dataset(config)
    report, artifacts = pipeline.run_eisgan_path(dataset, config)
    os.makedirs(config.out_dir, exist_ok=True)
    with open(os.path.join(config.out_dir, "evalreport_eisgan.json"), "w",
              encoding="utf-8") as fh:
        fh.write(report.to_json())
    pipeline.emit_plot_data(config.out_dir, dataset, config, report,
                            None, None, artifacts)
    pipeline.write_summary(config.out_dir, report, None)
    for e in report.cells:
        print(f"stage {e.stage} {e.cell_id}: MAE={e.mae_mah:.4f} mAh "
              f"RMSE={e.rmse_mah:.4f} mAh R2={e.r2:.4f}")


def cmd_baseline(config: PipelineConfig):
    dataset = pipeline.load_dataset(config)
    report, _ = pipeline.run_baseline_path(dataset, config)
    os.makedirs(config.out_dir, exist_ok=True)
    with open(os.path.join(config.out_dir, "evalreport_baseline.json"), "w",
              encoding="utf-8") as fh:
        fh.write(report.to_json())
    for e in report.cells:
        print(f"stage {e.stage} {e.cell_id}: MAE={e.mae_mah:.4f} mAh "
              f"RMSE={e.rmse_mah:.4f} mAh R2={e.r2:.4f}")


def cmd_perturb(config: PipelineConfig):
    dataset = pipeline.load_dataset(config)
    _, eisgan_art = pipeline.run_eisgan_path(dataset, config)
    norm_stats = {s: a.stats for s, a in eisgan_art.items()}
    _, baseline_art = pipeline.run_baseline_path(dataset, config, norm_stats)
    report = pipeline.run_perturbation_study(dataset, config, eisgan_art, baseline_art)
    os.makedirs(config.out_dir, exist_ok=True)
    with open(os.path.join(config.out_dir, "perturbreport.json"), "w",
              encoding="utf-8") as fh:
        fh.write(report.to_json())
    for e in report.entries:
        print(f"stage {e.stage} sigma={e.sigma} {e.path_name}: "
              f"median={e.median:.5f} IQR=[{e.q25:.5f}, {e.q75:.5f}]")


def cmd_sweep(config: PipelineConfig):
    for stage in config.stages:
        nets, stats = eisgan.load_checkpoint(_checkpoint_path(config, stage))
        grid = np.linspace(-2.0, 2.0, 9)
        freq = eisdata.log_grid(ecm.F_MAX_HZ, ecm.F_MIN_HZ, nets.config.length)
        for dim in range(nets.config.latent_dim):
            rows = []
            for value, arr in zip(grid, eisgan.latent_sweep(nets, dim, grid)):
                re_z, im_z = eisdata.array_to_channels(arr, stats)
                rows.extend((value, i, freq[i], re_z[i], im_z[i])
                            for i in range(len(freq)))
            path = os.path.join(config.out_dir, f"sweep_stage{stage}_dim{dim}.csv")
            pipeline._write_csv(path, ["code_value", "point_index", "freq_hz",
                                       "re_z_ohm", "im_z_ohm"], rows)
        print(f"stage {stage}: wrote sweeps for {nets.config.latent_dim} dims")


def cmd_run_all(config: PipelineConfig):
    results = pipeline.run_all(config)
    for e in results["eisgan_report"].cells:
        print(f"stage {e.stage} {e.cell_id}: MAE={e.mae_mah:.4f} mAh "
              f"RMSE={e.rmse_mah:.4f} mAh R2={e.r2:.4f}")
    print(f"reports written to {config.out_dir}")


COMMANDS = {
    "synth": cmd_synth,
    "train-gan": cmd_train_gan,
    "extract": cmd_extract,
    "fit-gpr": cmd_fit_gpr,
    "predict": cmd_predict,
    "evaluate": cmd_evaluate,
    "baseline": cmd_baseline,
    "perturb": cmd_perturb,
    "sweep": cmd_sweep,
    "run-all": cmd_run_all,
}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="eisgan-soh",
        description="EIS latent extraction and battery capacity estimation")
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", help="JSON pipeline configuration file")
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--stage", type=int, default=None,
                        help="restrict the run to one stage")
    parser.add_argument("--out", default=None, help="output directory override")
    args = parser.parse_args(argv)
    try:
        COMMANDS[args.command](_load_config(args))
    except Exception as exc:  # single parsable error line, nonzero exit
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}),
              file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
