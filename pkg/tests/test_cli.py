import json

import numpy as np
import pytest

from hemato.cli import CSV_HEADER, EXIT_INVALID, EXIT_IO, EXIT_SUITE_FAILED, HYPDEP_WARNING, main
from hemato.equilibrium import solve_equilibrium
from hemato.model import reference_params



def write_config(tmp_path, run="", model_over=None, extra=""):
    params = reference_params().as_dict()
    params.update(model_over or {})
    model = "\n".join(f"{k} = {float(v)!r}" for k, v in params.items())
    path = tmp_path / "cfg.toml"
    path.write_text(f"[model]\n{model}\n\n[run]\nK = [50]\nT = 2.0\ngrid_dt = 0.1\nn = 2\nseed = 7\n"
                    f"{run}\n{extra}")
    return path


def run(tmp_path, *args, cfg=None, out="out"):
    cfg = cfg or write_config(tmp_path)
    outdir = tmp_path / out
    outdir.mkdir(exist_ok=True)
    return main([*args, "--config", str(cfg), "--out", str(outdir), "--threads", "1"]), outdir


def only(outdir, pattern):
    files = sorted(outdir.glob(pattern))
    assert len(files) == 1, files
    return files[0]


def test_equilibrium_report(tmp_path, capsys):
    code, out = run(tmp_path, "equilibrium")
    assert code == 0
    rep = json.loads(only(out, "equilibrium-*-seed7.json").read_text())
    eq = solve_equilibrium(reference_params())
    np.testing.assert_allclose(rep["equilibrium"], eq.x, rtol=1e-12)
    assert rep["hypdep"] is True and rep["warnings"] == []
    assert rep["divergence_scan"]["negative"] is True
    assert json.loads(capsys.readouterr().out) == rep


def test_seed_flag_overrides_config(tmp_path):
    code, out = run(tmp_path, "equilibrium", "--seed", "3")
    assert code == 0 and only(out, "*seed3.json")


def test_hypdep_warning(tmp_path):
    cfg = write_config(tmp_path, model_over={"q3": 0.0, "c3": 0.0})
    code, out = run(tmp_path, "equilibrium", cfg=cfg)
    assert code == 0
    assert json.loads(only(out, "equilibrium-*.json").read_text())["warnings"] == [HYPDEP_WARNING]


@pytest.mark.parametrize("model_over,run_extra", [({"d": 0.0}, ""), ({"a": -1.0}, ""), ({}, "bogus = 1"),
                                                  ({}, "bins = [32, 32]"), ({}, "i0 = 2")])
def test_invalid_config(tmp_path, model_over, run_extra):
    cfg = write_config(tmp_path, run=run_extra, model_over=model_over)
    assert run(tmp_path, "equilibrium", cfg=cfg)[0] == EXIT_INVALID


def test_zero_replicates_invalid(tmp_path):
    cfg = write_config(tmp_path)
    cfg.write_text(cfg.read_text().replace("n = 2", "n = 0"))
    assert run(tmp_path, "simulate", cfg=cfg)[0] == EXIT_INVALID


def test_unparseable_and_missing(tmp_path):
    bad = tmp_path / "bad.toml"
    bad.write_text("[model\n")
    assert run(tmp_path, "equilibrium", cfg=bad)[0] == EXIT_INVALID
    assert run(tmp_path, "equilibrium", cfg=tmp_path / "missing.toml")[0] == EXIT_IO
    assert main(["frobnicate", "--config", "x"]) == EXIT_INVALID


@pytest.mark.parametrize("mode", ["pdmp", "ssa", "tau"])
def test_simulate_csv_layout(tmp_path, mode):
    code, out = run(tmp_path, "simulate", "--mode", mode, "--deterministic")
    assert code == 0
    manifest = json.loads(only(out, f"manifest-{mode}-*-seed7.json").read_text())
    assert "timing_s" not in manifest and len(manifest["files"]) == 2
    for name in manifest["files"]:
        lines = (out / name).read_text().splitlines()
        assert lines[0] == CSV_HEADER
        data = np.loadtxt(out / name, delimiter=",", skiprows=1)
        np.testing.assert_allclose(data[:, 0], np.arange(21) * 0.1, atol=1e-12)
        assert set(np.unique(data[:, 4])) <= {0.0, 1.0}


def test_simulate_pdmp_byte_identical(tmp_path):
    _, a = run(tmp_path, "simulate", "--deterministic", out="a")
    _, b = run(tmp_path, "simulate", "--deterministic", out="b")
    names = sorted(p.name for p in a.iterdir())
    assert names == sorted(p.name for p in b.iterdir())
    for n in names:
        assert (a / n).read_bytes() == (b / n).read_bytes()


def test_pdmp_starts_at_equilibrium_unless_x0(tmp_path):
    _, out = run(tmp_path, "simulate", "--deterministic")
    row = np.loadtxt(sorted(out.glob("pdmp-*.csv"))[0], delimiter=",", skiprows=1)[0]
    np.testing.assert_allclose(row[1:4], solve_equilibrium(reference_params()).x, rtol=1e-12)
    cfg = write_config(tmp_path, run="x0 = [0.45, 1.5, 0.5]\ni0 = 1")
    _, out = run(tmp_path, "simulate", "--deterministic", cfg=cfg, out="x0")
    row = np.loadtxt(sorted(out.glob("pdmp-*.csv"))[0], delimiter=",", skiprows=1)[0]
    np.testing.assert_allclose(row[1:], [0.45, 1.5, 0.5, 1])


def test_tau_large_leap_warns(tmp_path):
    cfg = write_config(tmp_path, run="leap_dt = 0.1", model_over={"d": 20.0})
    code, out = run(tmp_path, "simulate", "--mode", "tau", cfg=cfg)
    assert code == 0
    manifest = json.loads(only(out, "manifest-tau-*.json").read_text())
    assert max(manifest["clamp_fraction"]) > 0.01
    assert any("clamped" in w for w in manifest["warnings"])
    assert "timing_s" in manifest


def test_verify_box_passes(tmp_path, capsys):
    cfg = write_config(tmp_path, extra="[verify]\nn_random = 10\nbox_T = 5.0\nn_face = 10\nn_absorb = 5\n")
    code, out = run(tmp_path, "verify", "--suite", "box", "--deterministic", cfg=cfg)
    assert code == 0
    rep = json.loads(only(out, "verify-box-*.json").read_text())
    assert rep["passed"] and rep["failing"] == []
    assert capsys.readouterr().out.count("[PASS]") == 2


def test_verify_failure_exit_code(tmp_path, capsys):
    cfg = write_config(tmp_path, extra="[verify]\nn_random = 10\nbox_T = 5.0\nn_face = 10\n"
                                       "n_absorb = 5\nbox_inflate = -1.0\n")
    code, out = run(tmp_path, "verify", "--suite", "box", cfg=cfg)
    assert code == EXIT_SUITE_FAILED
    assert "failing: box:" in capsys.readouterr().err
    assert json.loads(only(out, "verify-box-*.json").read_text())["passed"] is False


def test_unknown_verify_key(tmp_path):
    cfg = write_config(tmp_path, extra="[verify]\nseed = 3\n")
    assert run(tmp_path, "verify", "--suite", "box", cfg=cfg)[0] == EXIT_INVALID


def test_unwritable_output(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("")
    cfg = write_config(tmp_path)
    assert main(["equilibrium", "--config", str(cfg), "--out", str(blocker / "sub")]) == EXIT_IO
