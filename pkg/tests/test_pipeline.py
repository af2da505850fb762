import json
import os

import numpy as np
import pytest

from eisgan_soh import cli, eisdata, eisgan, pipeline
from eisgan_soh.pipeline import (PerturbSettings, PipelineConfig, PipelineError,
                                 SynthSettings)


def tiny_config(out_dir, **overrides):
    base = dict(
        synth=SynthSettings(n_train_cells=2, n_test_cells=1, n_cycles=8),
        stages=(5,),
        gan=eisgan.GanConfig(epochs=2, batch_size=8, seed=0),
        gpr=pipeline.GprSettings(restarts=1, max_iter=20),
        perturb=PerturbSettings(sigmas=(0.003,), n_samples=5, cycle=3),
        out_dir=str(out_dir),
        seed=0)
    base.update(overrides)
    return PipelineConfig(**base)


# ---------------------------------------------------------------------------
# metrics and box stats
# ---------------------------------------------------------------------------

def test_metrics_hand_vector():
    # residuals (0, 1, -1): MAE=2/3... use (1,0,0) instead for clean fractions
    mae, rmse, r2 = pipeline.metrics([1.0, 2.0, 3.0], [2.0, 2.0, 3.0])
    assert mae == pytest.approx(1 / 3)
    assert rmse == pytest.approx(1 / np.sqrt(3))
    assert r2 == pytest.approx(0.5)  # SS_res=1, SS_tot=2


def test_metrics_perfect_prediction():
    mae, rmse, r2 = pipeline.metrics([1.0, 2.0], [1.0, 2.0])
    assert (mae, rmse, r2) == (0.0, 0.0, 1.0)


def test_metrics_mean_predictor_r2_zero():
    y = [1.0, 2.0, 3.0]
    _, _, r2 = pipeline.metrics(y, [2.0, 2.0, 2.0])
    assert r2 == pytest.approx(0.0)


def test_metrics_constant_target_r2_nan():
    _, _, r2 = pipeline.metrics([2.0, 2.0], [1.0, 3.0])
    assert np.isnan(r2)


def test_metrics_misaligned_inputs():
    with pytest.raises(PipelineError):
        pipeline.metrics([1.0], [1.0, 2.0])


def test_box_stats_no_outliers():
    med, q25, q75, wlo, whi, out = pipeline.box_stats([1.0, 2.0, 3.0, 4.0, 5.0])
    assert med == 3.0
    assert (q25, q75) == (2.0, 4.0)
    assert (wlo, whi) == (1.0, 5.0)  # whiskers clip to the data range
    assert out == []


def test_box_stats_flags_outlier():
    samples = [1.0, 2.0, 3.0, 4.0, 100.0]
    *_, whi, out = pipeline.box_stats(samples)
    assert out == [100.0]
    assert whi == 4.0


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

def test_config_rejects_bad_stage():
    with pytest.raises(PipelineError):
        PipelineConfig(synth=SynthSettings(), stages=(0,))


def test_config_rejects_overlapping_cells():
    with pytest.raises(PipelineError):
        PipelineConfig(synth=SynthSettings(), train_cells=("A",), test_cells=("A",))


def test_config_requires_data_source():
    with pytest.raises(PipelineError):
        PipelineConfig(synth=None)


def test_config_json_round_trip(tmp_path):
    cfg = tiny_config(tmp_path / "out", seed=7)
    path = tmp_path / "config.json"
    path.write_text(cfg.to_json())
    loaded = PipelineConfig.from_json_file(str(path))
    assert loaded == cfg


def test_config_from_dict_nested_sections():
    cfg = PipelineConfig.from_dict({
        "synth": {"n_train_cells": 1, "n_test_cells": 1, "n_cycles": 4},
        "stages": [3, 5],
        "gan": {"epochs": 1},
        "gpr": {"restarts": 2},
        "perturb": {"sigmas": [0.001], "n_samples": 3},
        "seed": 9})
    assert cfg.stages == (3, 5)
    assert cfg.gan.epochs == 1
    assert cfg.gan.latent_dim == 9
    assert cfg.perturb.sigmas == (0.001,)


# ---------------------------------------------------------------------------
# dataset loading and partitioning
# ---------------------------------------------------------------------------

def test_load_dataset_synth(tmp_path):
    cfg = tiny_config(tmp_path)
    ds = pipeline.load_dataset(cfg)
    assert len(ds.train_cells) == 2
    assert len(ds.test_cells) == 1
    assert {c.stage for c in ds.curves} == {5}


def test_load_dataset_csv_requires_partition(tmp_path):
    cfg = tiny_config(tmp_path)
    ds = pipeline.load_dataset(cfg)
    eis_path, cap_path = tmp_path / "eis.csv", tmp_path / "capacity.csv"
    eisdata.save_eis_csv(eis_path, ds.curves)
    eisdata.save_capacity_csv(cap_path, ds.capacities)
    with pytest.raises(PipelineError, match="train_cells"):
        pipeline.load_dataset(PipelineConfig(
            eis_csv=str(eis_path), capacity_csv=str(cap_path), stages=(5,)))
    loaded = pipeline.load_dataset(PipelineConfig(
        eis_csv=str(eis_path), capacity_csv=str(cap_path), stages=(5,),
        train_cells=ds.train_cells, test_cells=ds.test_cells))
    assert len(loaded.curves) == len(ds.curves)


def test_stage_partition_respects_missing_cells(tmp_path):
    cfg = tiny_config(tmp_path)
    ds = pipeline.load_dataset(cfg)
    # drop one train cell from the stage to mimic a reduced measurement set
    keep = [c for c in ds.curves if c.cell_id != ds.train_cells[0]]
    caps = ds.capacities
    reduced = eisdata.Dataset(keep, caps, ds.train_cells, ds.test_cells)
    train, test = pipeline.stage_partition(reduced, 5)
    assert train == ds.train_cells[1:]
    assert test == ds.test_cells


def test_stage_partition_empty_raises(tmp_path):
    ds = pipeline.load_dataset(tiny_config(tmp_path))
    keep = [c for c in ds.curves if c.cell_id not in ds.test_cells]
    reduced = eisdata.Dataset(keep, ds.capacities, ds.train_cells, ds.test_cells)
    with pytest.raises(PipelineError, match="empty partition"):
        pipeline.stage_partition(reduced, 5)


# ---------------------------------------------------------------------------
# end-to-end (tiny settings: exercises plumbing, not accuracy)
# ---------------------------------------------------------------------------

@pytest.fixture(scope="module")
def tiny_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    cfg = tiny_config(out)
    results = pipeline.run_all(cfg)
    return cfg, results


def test_run_all_writes_reports(tiny_run):
    cfg, _ = tiny_run
    for name in ("resolved_config.json", "eis.csv", "capacity.csv",
                 "evalreport_eisgan.json", "evalreport_baseline.json",
                 "perturbreport.json", "summary.json", "gan_stage5.npz",
                 "perturb_box.csv", "scatter_eisgan.csv", "scatter_baseline.csv"):
        assert os.path.exists(os.path.join(cfg.out_dir, name)), name


def test_run_all_reports_cover_test_cells(tiny_run):
    cfg, results = tiny_run
    ds = results["dataset"]
    report = results["eisgan_report"]
    assert {e.cell_id for e in report.cells} == set(ds.test_cells)
    entry = report.cell(5, ds.test_cells[0])
    assert entry.cycles == list(range(8))
    assert len(entry.pred_mean_mah) == 8
    assert all(s >= 0 for s in entry.pred_std_mah)


def test_run_all_eval_json_parses(tiny_run):
    cfg, results = tiny_run
    with open(os.path.join(cfg.out_dir, "evalreport_eisgan.json")) as fh:
        blob = json.load(fh)
    assert blob["path"] == "eisgan"
    assert len(blob["cells"]) == len(results["eisgan_report"].cells)


def test_run_all_perturb_report(tiny_run):
    cfg, results = tiny_run
    report = results["perturb_report"]
    # one entry per (stage, sigma, path)
    assert len(report.entries) == 2
    for e in report.entries:
        assert len(e.deviations_mah) == cfg.perturb.n_samples
        assert e.q25 <= e.median <= e.q75
    # requested cycle 3 exists in the 8-cycle run
    assert report.cycle == 3


def test_run_all_emitted_sweep_and_band_files(tiny_run):
    cfg, results = tiny_run
    ds = results["dataset"]
    cell = ds.test_cells[0]
    for name in (f"nyquist_stage5_{cell}.csv", "sweep_stage5_c1.csv",
                 "sweep_stage5_c2.csv", f"latents_stage5_{cell}.csv",
                 f"band_eisgan_stage5_{cell}.csv"):
        path = os.path.join(cfg.out_dir, name)
        assert os.path.exists(path), name
        header = open(path).readline().strip().split(",")
        assert len(header) >= 3


def test_run_all_summary_keys(tiny_run):
    cfg, results = tiny_run
    with open(os.path.join(cfg.out_dir, "summary.json")) as fh:
        summary = json.load(fh)
    cell = results["dataset"].test_cells[0]
    entry = summary[f"stage5/{cell}"]
    assert set(entry) == {"eisgan", "baseline"}
    assert set(entry["eisgan"]) == {"mae_mah", "rmse_mah", "r2"}


def test_emitted_eis_csv_reparses(tiny_run):
    cfg, results = tiny_run
    curves = eisdata.load_eis_csv(os.path.join(cfg.out_dir, "eis.csv"))
    assert len(curves) == len(results["dataset"].curves)


def test_checkpoint_reloads_from_run(tiny_run):
    cfg, results = tiny_run
    nets, stats = eisgan.load_checkpoint(os.path.join(cfg.out_dir, "gan_stage5.npz"))
    art = results["eisgan_artifacts"][5]
    assert stats == art.stats
    for pa, pb in zip(nets.all_params(), art.nets.all_params()):
        assert np.array_equal(pa.data, pb.data)


# ---------------------------------------------------------------------------
# CLI
# ---------------------------------------------------------------------------

def cli_config_file(tmp_path, **overrides):
    cfg = tiny_config(tmp_path / "out", **overrides)
    path = tmp_path / "config.json"
    path.write_text(cfg.to_json())
    return cfg, str(path)


def test_cli_synth_writes_csvs(tmp_path, capsys):
    cfg, path = cli_config_file(tmp_path)
    assert cli.main(["synth", "--config", path]) == 0
    assert os.path.exists(os.path.join(cfg.out_dir, "eis.csv"))
    assert os.path.exists(os.path.join(cfg.out_dir, "capacity.csv"))
    assert "wrote" in capsys.readouterr().out


def test_cli_stage_and_out_overrides(tmp_path):
    _, path = cli_config_file(tmp_path)
    alt = str(tmp_path / "alt")
    assert cli.main(["synth", "--config", path, "--out", alt]) == 0
    assert os.path.exists(os.path.join(alt, "eis.csv"))


def test_cli_train_extract_fit_predict_chain(tmp_path, capsys):
    cfg, path = cli_config_file(tmp_path)
    for command in ("train-gan", "extract", "fit-gpr", "predict"):
        assert cli.main([command, "--config", path]) == 0, command
    capsys.readouterr()
    assert os.path.exists(os.path.join(cfg.out_dir, "gan_stage5.npz"))
    assert os.path.exists(os.path.join(cfg.out_dir, "latents_stage5.csv"))
    assert os.path.exists(os.path.join(cfg.out_dir, "gpr_stage5.json"))
    pred_path = os.path.join(cfg.out_dir, "predictions_stage5.csv")
    with open(pred_path) as fh:
        header = fh.readline().strip().split(",")
        n_rows = sum(1 for _ in fh)
    assert header == ["cell_id", "stage", "cycle", "pred_mean_mah", "pred_std_mah"]
    assert n_rows == 8  # one test cell x eight cycles


def test_cli_sweep_from_checkpoint(tmp_path, capsys):
    cfg, path = cli_config_file(tmp_path)
    assert cli.main(["train-gan", "--config", path]) == 0
    assert cli.main(["sweep", "--config", path]) == 0
    capsys.readouterr()
    for dim in range(9):
        assert os.path.exists(os.path.join(cfg.out_dir, f"sweep_stage5_dim{dim}.csv"))


def test_cli_failure_prints_json_error_line(tmp_path, capsys):
    # extract before train-gan: missing checkpoint
    _, path = cli_config_file(tmp_path)
    assert cli.main(["extract", "--config", path]) == 1
    err = capsys.readouterr().err.strip()
    blob = json.loads(err)
    assert set(blob) == {"error", "message"}


def test_cli_seed_override_changes_synth(tmp_path):
    _, path = cli_config_file(tmp_path)
    out_a, out_b, out_c = (str(tmp_path / d) for d in ("a", "b", "c"))
    assert cli.main(["synth", "--config", path, "--seed", "1", "--out", out_a]) == 0
    assert cli.main(["synth", "--config", path, "--seed", "2", "--out", out_b]) == 0
    assert cli.main(["synth", "--config", path, "--seed", "1", "--out", out_c]) == 0
    read = lambda d: open(os.path.join(d, "eis.csv")).read()
    assert read(out_a) != read(out_b)
    assert read(out_a) == read(out_c)


def test_cli_rejects_unknown_command():
    with pytest.raises(SystemExit):
        cli.main(["frobnicate"])
