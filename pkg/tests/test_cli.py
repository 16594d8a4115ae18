import json

import numpy as np
import pytest

from fwdbarrier import cli, storage
from fwdbarrier.config import RunConfig, reference_config


def small_config(out, **blocks) -> RunConfig:
    base = reference_config().replace(
        surface={"kind": "constant", "vol": 0.25},
        grid={"dk": 0.1, "dt": 0.005, "b_max": 110.0, "t_max": 0.5},
        backward={"dy": 0.25, "n_steps": 50},
        density={"dx": 0.5, "b_max": 200.0, "n_steps": 50, "export_stride": 4},
        mc={"paths": 20_000, "steps_per_year": 64, "chunk_size": 4096},
        recovery={"dk": 0.5, "dt": 0.02, "t_first": 0.2, "t_step": 0.02, "t_min": 0.3, "export_times": (0.4,)},
        experiment={"barrier": 110.0, "maturity": 0.5, "strikes": (0.0, 50.0, 90.0, 100.0, 110.0),
                    "reference": None, "panel_strikes": (0.0, 50.0, 95.0), "panel_barriers": (105.0, 110.0),
                    "panel_dy": 0.5, "panel_steps": 20, "convergence_dk": (2.0, 1.0, 0.5),
                    "convergence_dt": (0.1, 0.05, 0.025)},
        output=str(out))
    return base.replace(**blocks) if blocks else base


def _run(tmp_path, cfg, command, *extra):
    path = cfg.save(tmp_path / f"{command}.yaml")
    return cli.main([command, "--config", str(path), *extra])


def test_init_config(tmp_path):
    p = tmp_path / "ref.yaml"
    assert cli.main(["init-config", str(p)]) == cli.EXIT_OK
    assert RunConfig.load(p) == reference_config()


@pytest.mark.parametrize("command", ["price-forward", "price-backward", "mc", "density"])
def test_commands_pass_checks(tmp_path, command):
    out = tmp_path / "out"
    assert _run(tmp_path, small_config(out), command, "--check") == cli.EXIT_OK
    name = command.replace("-", "_")
    summary = json.loads((out / f"{name}_summary.json").read_text())
    assert summary["checks"] and all(c["pass"] for c in summary["checks"].values())
    kind, cols, rows = storage.read_csv(out / f"{name}.csv")
    assert kind == name and rows
    assert (out / f"{name}_timing.json").is_file()


def test_forward_outputs(tmp_path):
    out = tmp_path / "out"
    assert _run(tmp_path, small_config(out), "price-forward") == cli.EXIT_OK
    cube = storage.load_cube(out / "price_forward_cube.bin")
    _, cols, rows = storage.read_csv(out / "price_forward_cube.csv")
    assert cols == list(storage.CUBE_COLUMNS)
    assert len(rows) == sum(cube.grid.layer_size(j) - 1 for j in range(1, cube.grid.n_barrier + 1))
    _, cols, ladder = storage.read_csv(out / "price_forward.csv")
    assert ladder[-1][cols.index("price")] == 0.0


def test_minimal_grid_gives_zero_ladder(tmp_path):
    # one layer above S0; the ladder on the B = S0 layer is knocked out
    cfg = small_config(tmp_path / "out", grid={"dk": 0.5, "b_max": 100.5, "extrapolate": False},
                       experiment={"barrier": 100.0, "strikes": (0.0, 50.0, 99.5)})
    assert _run(tmp_path, cfg, "price-forward") == cli.EXIT_OK
    _, cols, rows = storage.read_csv(tmp_path / "out" / "price_forward.csv")
    assert all(r[cols.index("price")] == 0.0 for r in rows)


def test_tolerance_breach_exit_code(tmp_path):
    cfg = small_config(tmp_path / "out", experiment={"panel_avg_tol": 1e-12, "panel_max_tol": 1e-12})
    assert _run(tmp_path, cfg, "compare", "--check") == cli.EXIT_TOLERANCE
    assert _run(tmp_path, cfg, "compare") == cli.EXIT_OK


def test_recover_and_convergence_run(tmp_path):
    cfg = small_config(tmp_path / "out")
    assert _run(tmp_path, cfg, "recover") == cli.EXIT_OK
    assert _run(tmp_path, cfg, "convergence") == cli.EXIT_OK
    _, cols, rows = storage.read_csv(tmp_path / "out" / "convergence.csv")
    assert cols == ["parameter", "step", "max_mixed_error", "order"] and len(rows) == 6


def test_config_error_exit_code(tmp_path):
    bad = tmp_path / "bad.yaml"
    bad.write_text("grid:\n  dk: -1\n")
    assert cli.main(["price-forward", "--config", str(bad)]) == cli.EXIT_CONFIG
    assert cli.main(["price-forward", "--config", str(tmp_path / "missing.yaml")]) == cli.EXIT_CONFIG


def test_numerical_failure_exit_code(tmp_path):
    cfg = small_config(tmp_path / "out", density={"b_max": 101.0, "dx": 0.5})
    assert _run(tmp_path, cfg, "density") == cli.EXIT_NUMERICAL


@pytest.mark.parametrize("command", ["mc", "price-backward", "density"])
def test_reruns_are_byte_identical(tmp_path, command):
    name = command.replace("-", "_")
    outputs = []
    for k in range(2):
        out = tmp_path / f"run{k}"
        cfg = small_config(out)
        assert _run(tmp_path, cfg, command, "--seed", "5") == cli.EXIT_OK
        outputs.append(sorted(p for p in out.iterdir() if "timing" not in p.name))
    for a, b in zip(*outputs):
        assert a.name == b.name and a.read_bytes() == b.read_bytes()


def test_seed_flag_changes_mc(tmp_path):
    ests = []
    for seed in ("1", "2"):
        out = tmp_path / seed
        assert _run(tmp_path, small_config(out), "mc", "--seed", seed) == cli.EXIT_OK
        _, cols, rows = storage.read_csv(out / "mc.csv")
        ests.append(np.array([r[cols.index("estimate")] for r in rows]))
    assert not np.array_equal(*ests)
