import csv
import json
import statistics

import numpy as np
import pytest

from aais_pinn.cli import ConfigError, load_run_config, main
from aais_pinn.mixture import MixtureModel
from aais_pinn.pde import get_problem
from aais_pinn.pinn import MlpParams, init_params

SMALL_TRAIN = """
[train]
n_interior = 60
n_boundary = 20
n_adaptive = 20
iterations = 2
epochs_adam_pre = 3
epochs_opt_pre = 3
epochs_adam = 3
epochs_opt = 3
lr_adam = 1e-3
lr_opt = 1.0
n_test_uniform = 100
n_test_gauss = 20
"""


def write_config(tmp_path, body, name="run.toml"):
    path = tmp_path / name
    path.write_text(body)
    return str(path)


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


@pytest.fixture(scope="module")
def fit_runs(tmp_path_factory):
    out = tmp_path_factory.mktemp("fit")
    codes = [main(["fit", "--target", "two-peak-2d", "--seed", "1", "--out", str(out / name)])
             for name in ("a", "b")]
    return out, codes


def test_fit_writes_artifacts(fit_runs):
    out, codes = fit_runs
    assert codes == [0, 0]
    run = out / "a" / "two-peak-2d" / "1"
    model = MixtureModel.from_json((run / "mixture.json").read_text())
    trace = [json.loads(line) for line in (run / "trace.jsonl").read_text().splitlines()]
    best = max(r["ess_final"] for r in trace)
    assert best >= 0.8
    rows = read_rows(run / "samples.csv")
    assert rows[0] == ["x1", "x2"] and len(rows) == 1001
    assert model.dim == 2
    assert (run / "samples.png").stat().st_size > 0


def test_fit_idempotent(fit_runs):
    out, _ = fit_runs
    for name in ("mixture.json", "trace.jsonl", "samples.csv", "samples.png"):
        a = (out / "a" / "two-peak-2d" / "1" / name).read_bytes()
        b = (out / "b" / "two-peak-2d" / "1" / name).read_bytes()
        assert a == b, name


def test_fit_unknown_target(tmp_path, capsys):
    assert main(["fit", "--target", "nope", "--out", str(tmp_path)]) == 2
    assert "unknown target" in capsys.readouterr().err


def test_solve_three_seeds(tmp_path):
    cfg = write_config(tmp_path, f"""
experiment = "tiny"
problem = "poisson2d-1p"
seeds = [1, 2, 3]
layers = [2, 6, 1]
[sampler]
kind = "rad"
n_search = 200
{SMALL_TRAIN}""")
    out = tmp_path / "out"
    assert main(["solve", "--config", cfg, "--out", str(out)]) == 0
    finals = []
    for seed in (1, 2, 3):
        run = out / "tiny" / str(seed)
        lines = (run / "record.jsonl").read_text().splitlines()
        assert len(lines) == 3
        finals.append(json.loads(lines[-1])["e_r"])
        assert MlpParams.load(run / "checkpoint").layer_sizes == [2, 6, 1]
    summary = json.loads((out / "tiny" / "summary.json").read_text())
    assert summary["final"]["e_r"]["median"] == statistics.median(finals)
    assert summary["final"]["e_r"]["min"] == min(finals)
    assert (out / "tiny" / "convergence.png").exists()

    first = {p.relative_to(out): p.read_bytes() for p in out.rglob("*")
             if p.is_file() and p.name != "timing.jsonl"}
    assert main(["solve", "--config", cfg, "--out", str(out)]) == 0
    again = {p.relative_to(out): p.read_bytes() for p in out.rglob("*")
             if p.is_file() and p.name != "timing.jsonl"}
    assert first == again


def test_solve_aais_config(tmp_path):
    cfg = write_config(tmp_path, f"""
experiment = "tiny-aais"
problem = "poisson2d-1p"
seeds = [0]
layers = [2, 6, 1]
[sampler]
kind = "aais"
[aais]
n_search = 500
component = "gaussian"
sigma0_diag = 0.05
{SMALL_TRAIN}""")
    assert main(["solve", "--config", cfg, "--out", str(tmp_path / "o"), "--no-plot"]) == 0
    rec = (tmp_path / "o" / "tiny-aais" / "0" / "record.jsonl").read_text().splitlines()
    last = json.loads(rec[-1])
    assert last["proposal"]["kind"] == "gaussian" and last["components"] >= 1


@pytest.mark.parametrize("body,needle", [
    ('experiment = "x"\nproblem = "poisson2d-1p"\nseeds = [1]\nbogus = 1\n', "bogus"),
    ('experiment = "x"\nproblem = "poisson2d-1p"\nseeds = [1]\n[train]\nepochs = 3\n', "epochs"),
    ('experiment = "x"\nproblem = "nope"\nseeds = [1]\n', "problem"),
    ('experiment = "x"\nproblem = "poisson2d-1p"\n', "seeds"),
    ('experiment = "x"\nproblem = "poisson2d-1p"\nseeds = [1]\n[sampler]\nkind = "mcmc"\n', "mcmc"),
    ('experiment = "x"\nproblem = "poisson2d-1p"\nseeds = [1]\n[sampler]\nkind = "aais"\n'
     '[aais]\nt_merge = 2.0\n', "t_merge"),
    ('experiment = "x"\nproblem = "poisson2d-1p"\nseeds = [1]\nlayers = [3, 1]\n', "layers"),
    ('experiment = "x"\nproblem = \n', "line"),
])
def test_bad_configs(tmp_path, capsys, body, needle):
    cfg = write_config(tmp_path, body)
    with pytest.raises(ConfigError, match=needle):
        load_run_config(cfg)
    assert main(["solve", "--config", cfg, "--out", str(tmp_path)]) == 2
    assert "config error" in capsys.readouterr().err


def test_export_grid_exact(tmp_path):
    out = tmp_path / "grid.csv"
    assert main(["export-grid", "--ckpt", "exact", "--problem", "poisson2d-1p",
                 "--res", "101", "--out", str(out)]) == 0
    raw = out.read_bytes()
    assert b"\r\n" not in raw
    rows = read_rows(out)
    assert rows[0] == ["x1", "x2", "u", "u_exact", "abs_err", "residual"]
    assert len(rows) == 10202
    data = np.array(rows[1:], dtype=float)
    assert np.all(data[:, 4] < 1e-8)
    assert out.with_suffix(".png").exists()


def test_export_grid_checkpoint_residual(tmp_path):
    prob = get_problem("poisson5d-2p")
    params = init_params([5, 8, 1], np.random.default_rng(0))
    params.save(tmp_path / "net")
    out = tmp_path / "g.csv"
    assert main(["export-grid", "--ckpt", str(tmp_path / "net.bin"), "--problem", "poisson5d-2p",
                 "--res", "11", "--plane", "x2x4", "--fixed", "0.25", "--out", str(out),
                 "--no-plot"]) == 0
    rows = read_rows(out)
    assert rows[0][:2] == ["x2", "x4"]
    data = np.array(rows[1:], dtype=float)
    pts = np.full((data.shape[0], 5), 0.25)
    pts[:, 1], pts[:, 3] = data[:, 0], data[:, 1]
    # independent recomputation: Laplacian by central differences is too
    # coarse for 1e-12, so use the one-hidden-layer closed form instead
    W, b = params.weights[0], params.biases[0]
    t = np.tanh(pts @ W + b)
    v = params.weights[1][:, 0]
    lap = ((-2 * t * (1 - t * t)) * np.sum(W * W, axis=0)) @ v
    expected = (-lap - prob.source_term(pts)) ** 2
    np.testing.assert_allclose(data[:, 5], expected, rtol=1e-12, atol=1e-300)
    assert not out.with_suffix(".png").exists()


def test_export_grid_errors(tmp_path):
    assert main(["export-grid", "--ckpt", "exact", "--problem", "poisson2d-1p",
                 "--plane", "x1x3", "--out", str(tmp_path / "a.csv")]) == 2
    assert main(["export-grid", "--ckpt", str(tmp_path / "missing.bin"),
                 "--problem", "poisson2d-1p", "--out", str(tmp_path / "b.csv")]) == 1


def test_shipped_config_parses():
    from pathlib import Path
    path = Path(__file__).resolve().parents[1] / "configs" / "one-peak-desk.toml"
    cfg = load_run_config(path)
    assert cfg["seeds"] == [1, 2, 3] and cfg["layers"] == [2, 20, 20, 20, 20, 1]
    train = cfg["train"](1)
    assert train.sampler.cfg.kind.dof == 3.0 and train.iterations == 5
