import numpy as np
import pytest

from dlczsim.analysis_io import export_timetags_binary, make_records
from dlczsim.cli import main, parse_targets_file
from dlczsim.config import default_config, canonical_text
from dlczsim.errors import ConfigError

US = 1e-6


def write_cfg(tmp_path, body, name="run.cfg"):
    path = tmp_path / name
    path.write_text(body)
    return str(path)


def fast_rephase_cfg(tmp_path, seed=4242, extra=""):
    # small scan and modest statistics so the CLI tests stay quick
    body = f"""
[run]
scenario = rephase
global_seed = {seed}
target_write_clicks = 1500

[ensemble]
atom_count = 4000

[scan]
background_start = 16 us
background_stop = 19 us
background_step = 1 us
peak_window = 0.6 us
peak_step = 50 ns
{extra}
"""
    return write_cfg(tmp_path, body)


def test_run_writes_artifacts_and_manifest(tmp_path, capsys):
    cfg = fast_rephase_cfg(tmp_path)
    out = tmp_path / "out"
    assert main(["run", cfg, "--out", str(out)]) == 0
    assert (out / "eta_vs_time.csv").exists()
    assert (out / "summary.csv").exists()
    manifest = (out / "manifest.txt").read_text()
    assert "config_sha256" in manifest
    assert "artifact eta_vs_time.csv sha256" in manifest


def test_rerun_with_same_seed_is_byte_identical(tmp_path):
    cfg = fast_rephase_cfg(tmp_path)
    out1, out2 = tmp_path / "a", tmp_path / "b"
    assert main(["run", cfg, "--out", str(out1)]) == 0
    assert main(["run", cfg, "--out", str(out2)]) == 0
    for name in ("eta_vs_time.csv", "summary.csv", "manifest.txt",
                 "resolved_config.cfg"):
        assert (out1 / name).read_bytes() == (out2 / name).read_bytes()


def test_seed_flag_changes_results(tmp_path):
    cfg = fast_rephase_cfg(tmp_path)
    out1, out2 = tmp_path / "a", tmp_path / "b"
    assert main(["run", cfg, "--out", str(out1), "--seed", "1"]) == 0
    assert main(["run", cfg, "--out", str(out2), "--seed", "2"]) == 0
    assert (out1 / "eta_vs_time.csv").read_bytes() != \
        (out2 / "eta_vs_time.csv").read_bytes()


def test_threads_do_not_change_results(tmp_path):
    cfg = fast_rephase_cfg(tmp_path)
    out1, out2 = tmp_path / "a", tmp_path / "b"
    assert main(["run", cfg, "--out", str(out1), "--threads", "1"]) == 0
    assert main(["run", cfg, "--out", str(out2), "--threads", "3"]) == 0
    assert (out1 / "eta_vs_time.csv").read_bytes() == \
        (out2 / "eta_vs_time.csv").read_bytes()


def test_config_error_exit_code_and_field_name(tmp_path, capsys):
    cfg = write_cfg(tmp_path, "[ensemble]\ntemperature = -5 uK\n")
    assert main(["run", cfg]) == 2
    err = capsys.readouterr().err
    assert "temperature" in err


def test_budget_error_exit_code(tmp_path):
    cfg = fast_rephase_cfg(tmp_path, extra="""
[emission]
excitation_probability = 0

[detection]
dark_rate = 0 Hz

[run]
max_trials_per_point = 10000
""")
    assert main(["run", cfg]) == 3


def test_unknown_key_exit_code(tmp_path):
    cfg = write_cfg(tmp_path, "[run]\nnope = 3\n")
    assert main(["run", cfg]) == 2


def test_help_lists_config_fields(capsys):
    assert main(["--help"]) == 0
    out = capsys.readouterr().out
    for key in ("reversal_latency", "coincidence_window", "gamma_eff",
                "write_offsets"):
        assert key in out


def test_write_config_roundtrip(tmp_path):
    path = tmp_path / "default.cfg"
    assert main(["write-config", str(path), "--scenario", "standard"]) == 0
    text = path.read_text()
    assert "[sequence]" in text
    out = tmp_path / "out"
    cfg_default = default_config().replace(run_scenario="standard")
    assert canonical_text(cfg_default) == text


def test_sweep_single_value_matches_run(tmp_path):
    cfg = fast_rephase_cfg(tmp_path)
    out_run = tmp_path / "single"
    out_sweep = tmp_path / "sweep"
    assert main(["run", cfg, "--out", str(out_run)]) == 0
    assert main(["sweep", cfg, "--axis", "run.target_write_clicks",
                 "--values", "1500", "--out", str(out_sweep)]) == 0
    assert (out_sweep / "value_0" / "eta_vs_time.csv").read_bytes() == \
        (out_run / "eta_vs_time.csv").read_bytes()
    assert (out_sweep / "summary.csv").exists()


def test_sweep_unknown_axis_rejected(tmp_path):
    cfg = fast_rephase_cfg(tmp_path)
    assert main(["sweep", cfg, "--axis", "run.bogus", "--values", "1"]) == 2


def test_calibrate_reports_and_writes_config(tmp_path, capsys):
    targets = tmp_path / "targets.txt"
    targets.write_text(
        "peak_time = 20.84 us tol 1 ns\n"
        "decay_time = 57 us tol 5 %\n"
        "fwhm = 150 ns tol 15 %\n"
        "relative_efficiency = 0.60 tol 0.05\n"
        "snr = 13.3 tol 0.5\n")
    out_cfg = tmp_path / "calibrated.cfg"
    assert main(["calibrate", str(targets), "--write-config", str(out_cfg)]) == 0
    report = capsys.readouterr().out
    assert "OK" in report and "kappa" in report
    assert out_cfg.exists()


def test_calibrate_nonconvergence_exit_code(tmp_path, capsys):
    targets = tmp_path / "targets.txt"
    targets.write_text("peak_time = 5 us tol 1 ns\n")
    assert main(["calibrate", str(targets)]) == 3


def test_targets_parser_rejects_unknown_name(tmp_path):
    targets = tmp_path / "targets.txt"
    targets.write_text("bogus = 1\n")
    with pytest.raises(ConfigError):
        parse_targets_file(targets)


def test_sweep_alpha_rises_with_excitation_probability(tmp_path):
    # alpha-scan with an empty pw list measures at the configured p
    body = """
[run]
scenario = alpha-scan
global_seed = 99

[ensemble]
atom_count = 3000

[scan]
pw_values =
alpha_budget_constant = 15000
alpha_min_trials = 10000000
"""
    cfg = write_cfg(tmp_path, body)
    out = tmp_path / "sweep"
    assert main(["sweep", cfg, "--axis", "emission.excitation_probability",
                 "--values", "0.02; 0.05; 0.105", "--out", str(out)]) == 0
    rows = (out / "summary.csv").read_text().splitlines()[1:]
    alphas = [float(r.split(",")[1]) for r in rows]
    assert alphas[0] < alphas[1] < alphas[2]


def test_sweep_selectivity_decreases_with_excitation_probability(tmp_path):
    body = """
[run]
scenario = multiplex
global_seed = 7
target_write_clicks = 6000

[ensemble]
atom_count = 3000

[scan]
background_start = 16 us
background_stop = 19 us
background_step = 1.5 us
peak_window = 0.5 us
multiplex_step = 250 ns
"""
    cfg = write_cfg(tmp_path, body)
    out = tmp_path / "sweep"
    assert main(["sweep", cfg, "--axis", "emission.excitation_probability",
                 "--values", "0.03; 0.105", "--out", str(out)]) == 0
    rows = (out / "summary.csv").read_text().splitlines()
    header = rows[0].split(",")
    i_sel = header.index("mean_selectivity")
    sels = [float(r.split(",")[i_sel]) for r in rows[1:]]
    assert sels[0] > sels[1]


def test_analyze_binary_stream(tmp_path):
    records = make_records([0, 100, 150, 10_000, 10_050],
                           [0, 1, 2, 0, 1])
    path = tmp_path / "tags.bin"
    export_timetags_binary(records, path)
    out = tmp_path / "out"
    assert main(["analyze", "--records", str(path), "--out", str(out),
                 "--window", "2e-7"]) == 0
    text = (out / "coincidences.csv").read_text().splitlines()
    header, row = text[0].split(","), text[1].split(",")
    got = dict(zip(header, row))
    assert got["n_starts"] == "2"
    assert got["n_wr1r2"] == "1"
