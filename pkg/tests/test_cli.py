import filecmp

import pytest

from wallrun.runner import io
from wallrun.runner.main import (
    EXIT_CONFIG, EXIT_IO, EXIT_NOT_CONVERGED, EXIT_OK, main
)

SMALL_RUN = """\
# small lambda = 1 collision that runs in seconds
lambda=1
x_min=-15
x_max=15
dx=0.1
dt=0.05
t_end=4
snapshot_stride=10
trials_per_stage=200
max_stages=2
flow_tol=1e-7
profile_half_width=8
profile_dx=0.1
x_left=-7
x_right=7
v_left=0.5
v_right=-0.5
heatmap_x_stride=2
"""

@pytest.fixture
def config_file(tmp_path):
    path = tmp_path / "small.txt"
    path.write_text(SMALL_RUN)
    return path

@pytest.fixture(scope="module")
def collide_run(tmp_path_factory):
    root = tmp_path_factory.mktemp("collide")
    config = root / "small.txt"
    config.write_text(SMALL_RUN)
    out = root / "run"
    code = main(["collide", "--config", str(config), "--out", str(out), "--log-level", "WARNING"])
    return code, out

def test_collide_writes_run_directory(collide_run):
    code, out = collide_run
    assert code == EXIT_OK
    for name in (io.CONFIG_FILE, io.TIMESERIES_FILE, io.HEATMAP_FILE, io.OUTCOME_FILE):
        assert (out / name).is_file()
    assert (out / io.PROFILE_DIR / "left.csv").is_file()
    assert len(list((out / io.SNAPSHOT_DIR).glob("snapshot_*.csv"))) == 9
    record = io.read_outcome((out / io.OUTCOME_FILE).read_text())
    assert record.velocity == 0.5
    assert record.initial_Q == 0.0

def test_analyze_reproduces_collide(collide_run):
    _, out = collide_run
    assert main(["analyze", str(out), "--log-level", "WARNING"]) == EXIT_OK
    analysis = out / "analysis"
    assert io.read_config((analysis / io.CONFIG_FILE).read_text()) == io.read_config((out / io.CONFIG_FILE).read_text())
    assert (analysis / io.OUTCOME_FILE).read_bytes() == (out / io.OUTCOME_FILE).read_bytes()
    assert (analysis / io.HEATMAP_FILE).read_bytes() == (out / io.HEATMAP_FILE).read_bytes()

def test_analyze_with_new_heatmap_settings(collide_run, tmp_path):
    _, out = collide_run
    code = main(["analyze", str(out), "--out", str(tmp_path / "energy"), "--set", "heatmap_quantity=energy_density",
                 "--set", "heatmap_x_stride=1", "--log-level", "WARNING"])
    assert code == EXIT_OK
    pixels = io.read_heatmap((tmp_path / "energy" / io.HEATMAP_FILE).read_bytes())
    assert pixels.shape[1] == 301

def test_analyze_missing_run(tmp_path):
    assert main(["analyze", str(tmp_path / "nothing"), "--out", str(tmp_path / "a")]) == EXIT_IO

def test_existing_output_needs_force(collide_run, config_file):
    _, out = collide_run
    assert main(["relax", "--config", str(config_file), "--out", str(out)]) == EXIT_IO

@pytest.mark.parametrize(
    "overrides",
    [
        ["dt=0.08"],
        ["x_left=-1", "x_right=1"],
        ["no_such_key=1"],
    ]
)
def test_configuration_errors(config_file, tmp_path, overrides):
    argv = ["collide", "--config", str(config_file), "--out", str(tmp_path / "out")]
    for item in overrides:
        argv += ["--set", item]
    assert main(argv) == EXIT_CONFIG

def test_relax_single_kind(config_file, tmp_path):
    out = tmp_path / "relax"
    code = main(["relax", "--config", str(config_file), "--out", str(out), "--set", "relax_kind=psi_plus",
                 "--seed", "3", "--log-level", "WARNING"])
    assert code == EXIT_OK
    assert (out / io.PROFILE_DIR / "psi_plus.csv").is_file()
    assert (out / "report.txt").read_text().startswith("psi_plus: E=")
    assert "rng_seed=3\n" in (out / io.CONFIG_FILE).read_text()

def test_relax_out_of_budget(config_file, tmp_path):
    out = tmp_path / "relax"
    code = main(["relax", "--config", str(config_file), "--out", str(out), "--set", "relax_kind=psi_minus",
                 "--set", "flow_max_iters=5", "--set", "polish_max_iters=0", "--log-level", "ERROR"])
    assert code == EXIT_NOT_CONVERGED
    assert (out / io.PROFILE_DIR / "psi_minus.csv").is_file()
    assert "converged=false" in (out / "report.txt").read_text()

def test_scan(config_file, tmp_path):
    out = tmp_path / "scan"
    code = main(["scan", "--config", str(config_file), "--out", str(out), "--set", "v_list=0.3,0.5",
                 "--workers", "1", "--log-level", "WARNING"])
    assert code == EXIT_OK
    lines = (out / "scan.csv").read_text().splitlines()
    assert lines[0].startswith("velocity,outcome,")
    assert [line.split(",")[0] for line in lines[1:3]] == ["0.3", "0.5"]
    assert (out / "outcomes" / "v_0.300000.txt").is_file()

def assert_same_files(first, second):
    names = sorted(p.relative_to(first) for p in first.rglob("*") if p.is_file())
    assert names == sorted(p.relative_to(second) for p in second.rglob("*") if p.is_file())
    for name in names:
        assert filecmp.cmp(first / name, second / name, shallow=False), name

def test_collide_is_reproducible(config_file, tmp_path):
    runs = []
    for name in ("first", "second"):
        out = tmp_path / name
        assert main(["collide", "--config", str(config_file), "--out", str(out), "--log-level", "WARNING"]) == EXIT_OK
        runs.append(out)
    assert_same_files(*runs)
    assert any(p.suffix == ".ppm" for p in runs[0].iterdir())

def test_written_config_replays_the_run(config_file, tmp_path):
    first = tmp_path / "first"
    replay = tmp_path / "replay"
    assert main(["collide", "--config", str(config_file), "--out", str(first), "--log-level", "WARNING"]) == EXIT_OK
    code = main(["collide", "--config", str(first / io.CONFIG_FILE), "--out", str(replay), "--log-level", "WARNING"])
    assert code == EXIT_OK
    assert_same_files(first, replay)

def test_parallel_scan_is_reproducible(config_file, tmp_path):
    runs = []
    for name in ("first", "second"):
        out = tmp_path / name
        code = main(["scan", "--config", str(config_file), "--out", str(out), "--set", "v_list=0.3,0.5",
                     "--workers", "2", "--log-level", "WARNING"])
        assert code == EXIT_OK
        runs.append(out)
    assert_same_files(*runs)
    serial = tmp_path / "serial"
    main(["scan", "--config", str(config_file), "--out", str(serial), "--set", "v_list=0.3,0.5",
          "--workers", "1", "--log-level", "WARNING"])
    assert filecmp.cmp(runs[0] / "scan.csv", serial / "scan.csv", shallow=False)
