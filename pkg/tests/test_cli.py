import json

import numpy as np
import pytest

from geoxray import cli
from geoxray import rays as ry
from geoxray import tensor as tn
from geoxray import xray as xr


SMALL = {"field_grid": {"n": 64}, "n_dir": 64,
         "ray_grid": {"n_beta": 64, "n_alpha": 64, "n_p": 64, "n_phi": 64},
         "experiment": {"trials": 3, "K": 4}}


@pytest.fixture
def config(tmp_path):
    def make(**over):
        cfg = json.loads(json.dumps(SMALL))
        for k, v in over.items():
            if isinstance(v, dict):
                cfg.setdefault(k, {}).update(v)
            else:
                cfg[k] = v
        path = tmp_path / "config.json"
        path.write_text(json.dumps(cfg))
        return str(path)
    return make


def run(capsys, *argv):
    code = cli.main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, (json.loads(out) if out.strip() else None), err


def test_field_round_trip(tmp_path, euclid):
    f = tn.random_bandlimited(tn.FieldGrid(64, 1.25), 5, 2, 2, euclid.tag)
    path = tmp_path / "f.gxr"
    cli.write_field(path, f)
    g = cli.read_field(path)
    assert g.order == 2 and g.metric_tag == euclid.tag
    assert g.data.tobytes() == f.data.tobytes()
    raw = path.read_bytes()
    assert raw.startswith(b"GXR1{")


def test_sinogram_round_trip(tmp_path, lam):
    for grid in (ry.fan_grid(lam, 32, 64), ry.parallel_grid(lam, 64, 32)):
        s = xr.Sinogram(grid, np.random.default_rng(0).standard_normal(
            grid.shape), 1, lam.tag, "1", True)
        path = tmp_path / "s.gxr"
        cli.write_sinogram(path, s)
        t = cli.read_sinogram(path, lam)
        assert t.values.tobytes() == s.values.tobytes()
        assert np.array_equal(t.grid.axes[0], grid.axes[0])
        assert np.array_equal(t.grid.axes[1], grid.axes[1])
        assert t.m == 1 and t.supported


def test_corrupt_files_are_refused(tmp_path, euclid):
    path = tmp_path / "f.gxr"
    cli.write_field(path, tn.zeros(1, tn.FieldGrid(32, 1.25), euclid.tag))
    raw = path.read_bytes()
    bad = [(b"XXXX" + raw[4:], "magic"), (raw[:-8], "shape"),
           (raw.replace(b'"field"', b'"other"'), "type")]
    for data, key in bad:
        path.write_bytes(data)
        with pytest.raises(cli.FormatError) as e:
            cli.read_field(path)
        assert e.value.key == key
    path.write_bytes(raw)
    with pytest.raises(cli.FormatError):
        cli.read_sinogram(path, euclid)


def test_config_validation(tmp_path, config):
    cfg = cli.load_config(config())
    assert cfg["field_grid"]["n"] == 64 and cfg["h"] == 1e-3
    for over, key in (({"field_grid": {"n": 100}}, "field_grid.n"),
                      ({"n_dir": 2048}, "n_dir"),
                      ({"h": -1}, "h"),
                      ({"solver": {"tol": 0}}, "solver.tol"),
                      ({"bogus": 1}, "bogus")):
        with pytest.raises(cli.ConfigError) as e:
            cli.load_config(config(**over))
        assert e.value.key == key
    (tmp_path / "bad.json").write_text("{not json")
    with pytest.raises(cli.ConfigError):
        cli.load_config(str(tmp_path / "bad.json"))


def test_errors_are_structured(tmp_path, capsys, config):
    code, _, err = run(capsys, "--config", config(field_grid={"n": 48}),
                       "gen", '{"kind": "disc"}')
    assert code == 2 and json.loads(err)["key"] == "field_grid.n"
    code, _, err = run(capsys, "--config", config(), "gen",
                       '{"kind": "random"}')
    assert code == 2 and json.loads(err)["key"] == "experiment.seed"


def test_pipeline_zero_order_identity(tmp_path, capsys, config):
    cfg = config()
    f = tmp_path / "f.gxr"
    code, out, _ = run(capsys, "--config", cfg, "--seed", 4, "gen",
                       '{"kind": "random", "m": 1, "K": 4}', "-o", f)
    assert code == 0 and out["m"] == 1
    s = tmp_path / "s.gxr"
    code, _, _ = run(capsys, "--config", cfg, "forward", f, "-o", s)
    assert code == 0
    code, out, _ = run(capsys, "--config", cfg, "norms", s, "--s", 0,
                       "--specs", "FULL", "OFFSET")
    norms = out["norms"]
    assert norms["FULL"] == pytest.approx(norms["l2_chart"], rel=1e-12)
    assert norms["OFFSET"] == pytest.approx(norms["l2_chart"], rel=1e-12)
    code, out, _ = run(capsys, "--config", cfg, "norms", s)
    assert out["norms"]["FULL"] > out["norms"]["l2_chart"]
    a = tmp_path / "a.gxr"
    code, out, _ = run(capsys, "--config", cfg, "adjoint", s, "-o", a)
    assert code == 0 and cli.read_field(a).support == "M1"
    code, out, _ = run(capsys, "--config", cfg, "normal", f, "-o",
                       tmp_path / "n.gxr")
    assert code == 0 and out["norm_h1_M1"] > 0


def test_decompose_flags_potentials(tmp_path, capsys, config):
    cfg = config()
    f = tmp_path / "pot.gxr"
    run(capsys, "--config", cfg, "--seed", 1, "gen",
        '{"kind": "potential", "m": 2}', "-o", f)
    code, out, _ = run(capsys, "--config", cfg, "decompose", f, "-o",
                       tmp_path / "dec")
    assert code == 3 and out["status"] == "potential"
    assert out["norm_fs"] <= 1e-6 * out["norm_f"]
    assert (tmp_path / "dec" / "pot.fs.gxr").exists()
    g = tmp_path / "rand.gxr"
    run(capsys, "--config", cfg, "--seed", 1, "gen",
        '{"kind": "random", "m": 2}', "-o", g)
    code, out, _ = run(capsys, "--config", cfg, "decompose", g, "-o",
                       tmp_path / "dec")
    assert code == 0 and out["status"] == "ok"


def test_metric_mismatch_is_refused(tmp_path, capsys, config):
    f = tmp_path / "f.gxr"
    run(capsys, "--config", config(), "gen", '{"kind": "disc"}', "-o", f)
    other = config(metric={"kind": "conformal-exp", "lambda": 0.1})
    code, _, err = run(capsys, "--config", other, "forward", f)
    assert code == 2 and json.loads(err)["key"] == "metric"


def test_experiments_are_byte_identical(tmp_path, capsys, config):
    cfg = config()
    texts = []
    for k in range(2):
        out_dir = tmp_path / f"run{k}"
        code, out, _ = run(capsys, "--config", cfg, "--seed", 9,
                           "--out", out_dir, "stability", "--m", 1)
        assert code == 0
        texts.append((out_dir / "stability_m1.csv").read_bytes())
        meta = json.loads((out_dir / "stability_m1.json").read_text())
        assert meta["config"]["experiment"]["seed"] == 9
    assert texts[0] == texts[1]
    code, _, _ = run(capsys, "--config", cfg, "--out", tmp_path, "stability")
    assert code == 2


def test_report_commands(tmp_path, capsys, config):
    cfg = config()
    code, out, _ = run(capsys, "--config", cfg, "--seed", 0, "--out",
                       tmp_path, "equivalence", "--m", 0)
    assert code == 0 and out["summary"]["spec_b"] == "OFFSET"
    code, out, _ = run(capsys, "--config", cfg, "--out", tmp_path, "cone")
    assert code == 0 and (tmp_path / "cone_disc.csv").exists()
    code, out, _ = run(capsys, "--config", cfg, "--out", tmp_path, "ndcheck",
                       "BOUNDARY", "--rays", 16)
    assert code == 0 and not out["passed"]
    code, out, _ = run(capsys, "--config", cfg, "--out", tmp_path, "ndcheck",
                       "PARALLEL_P", "--rays", 16)
    assert out["passed"] and out["minimum"] == pytest.approx(1.0)
    code, out, _ = run(capsys, "--config", cfg, "simplicity")
    assert code == 0 and out["passed"]
