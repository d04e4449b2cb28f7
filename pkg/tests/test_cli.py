import json
from pathlib import Path

import numpy as np
import pytest

from linesig.cli import ConfigError, main, validate_config

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def run(args):
    return main([str(a) for a in args])


def test_schema_rejects_unknown_section(tmp_path):
    bad = tmp_path / "bad.toml"
    bad.write_text("[unknown]\nkey = 1\n")
    assert run(["criterion", bad]) == 2


def test_schema_rejects_unknown_key():
    with pytest.raises(ConfigError, match=r"\[driver\].bogus"):
        validate_config({"driver": {"bogus": 1}})
    with pytest.raises(ConfigError, match=r"\[criterion\].grid_shape"):
        validate_config({"criterion": {"grid_shape": "wrong"}})


def test_missing_system_section(tmp_path):
    cfg = tmp_path / "nosys.toml"
    cfg.write_text(
        '[criterion]\nregime = "elliptic"\n'
        "grid_bounds = [[-1.0, 1.0], [-1.0, 1.0]]\ngrid_shape = [10, 10]\n"
    )
    assert run(["criterion", cfg]) == 2


def test_criterion_satisfied(tmp_path):
    out = tmp_path / "out"
    code = run(["--output", out, "criterion", CONFIGS / "heisenberg_criterion.toml"])
    assert code == 0
    report = json.loads((out / "criterion.json").read_text())
    assert report["verdict"] == "satisfied"
    assert (out / "criterion_grid.csv").exists()
    manifest = json.loads((out / "manifest.json").read_text())
    assert len(manifest["config_sha256"]) == 64
    assert manifest["command"] == "criterion"


def test_criterion_violated_exit_code(tmp_path):
    out = tmp_path / "out"
    code = run(["--output", out, "criterion", CONFIGS / "closed_form_criterion.toml"])
    assert code == 1
    report = json.loads((out / "criterion.json").read_text())
    assert report["verdict"] == "violated"


def test_construct_roundtrip(tmp_path):
    out = tmp_path / "out"
    code = run(["--output", out, "construct", CONFIGS / "heisenberg_criterion.toml"])
    assert code == 0
    data = json.loads((out / "form.json").read_text())
    from linesig.expr import parse

    for comp in data["components"]:
        parse(comp)  # printable components parse back


def test_reconstruct_match(tmp_path):
    out = tmp_path / "out"
    code = run(["--output", out, "reconstruct", CONFIGS / "loop_reconstruct.toml"])
    assert code == 0
    report = json.loads((out / "route.json").read_text())
    assert report["match"] is True
    assert report["clean_crossing"] is True
    assert report["recovered"] == report["true_route"]


def test_simulate_outputs(tmp_path):
    out = tmp_path / "out"
    code = run(["--output", out, "simulate", CONFIGS / "heisenberg_simulate.toml"])
    assert code == 0
    lines = (out / "trajectory.csv").read_text().splitlines()
    assert lines[0].startswith("# config_hash=")
    assert lines[1] == "t,x1,x2,x3,detPhi"
    # the transport of the standard step-two pair is volume preserving
    det = np.array([float(row.split(",")[-1]) for row in lines[2:]])
    assert np.max(np.abs(det - 1.0)) < 1e-8


def test_density_small_run(tmp_path):
    cfg = tmp_path / "density.toml"
    cfg.write_text(
        "\n".join(
            [
                "[system]",
                'fields = [["1", "0"], ["0", "1"]]',
                "x0 = [0.0, 0.0]",
                "[driver]",
                "hurst = 0.5",
                "steps = 256",
                "substeps = 2",
                "seed = 5",
                "[form]",
                'components = ["flat(x, 1.0, 2, 0.0, -2.0)*bump(y)", "bump(x)*flat(y, 1.0, 2, 0.0, -2.0)"]',
                "[mc]",
                "replicates = 120",
                "chunk = 40",
                "[output]",
                'directory = "unused"',
            ]
        )
        + "\n"
    )
    out = tmp_path / "out"
    code = run(["--output", out, "density", cfg])
    # the exact-form contrast produces an atom: verdict-negative exit
    assert code == 1
    summary = json.loads((out / "summary.json").read_text())
    assert summary["replicates"] == 120
    assert summary["atoms"]
    csv_lines = (out / "samples.csv").read_text().splitlines()
    assert csv_lines[1] == "replicate,seed,F,event,kernel_sup"
    assert len(csv_lines) == 122


def test_density_reproducible_across_workers(tmp_path):
    cfg = tmp_path / "density.toml"
    cfg.write_text(
        "\n".join(
            [
                "[system]",
                'fields = [["1", "0"], ["0", "1"]]',
                "x0 = [0.0, 0.0]",
                "[driver]",
                "hurst = 0.5",
                "steps = 64",
                "substeps = 1",
                "seed = 9",
                "[form]",
                'components = ["-y/2", "x/2"]',
                "[mc]",
                "replicates = 50",
                "chunk = 50",
            ]
        )
        + "\n"
    )
    outs = []
    for workers in (1, 3, 7):
        out = tmp_path / f"out{workers}"
        code = run(["--output", out, "--workers", workers, "density", cfg])
        assert code == 0
        outs.append((out / "samples.csv").read_bytes())
    assert outs[0] == outs[1] == outs[2]


def test_repeat_runs_byte_identical(tmp_path):
    out1, out2 = tmp_path / "a", tmp_path / "b"
    for out in (out1, out2):
        assert run(["--output", out, "criterion", CONFIGS / "heisenberg_criterion.toml"]) == 0
    for name in ("criterion.json", "criterion_grid.csv", "manifest.json"):
        assert (out1 / name).read_bytes() == (out2 / name).read_bytes()


def test_env_var_output_dir(tmp_path, monkeypatch):
    target = tmp_path / "from_env"
    monkeypatch.setenv("LINESIG_OUTDIR", str(target))
    cfg = tmp_path / "c.toml"
    cfg.write_text(
        '[system]\nfields = [["1", "0"], ["0", "1"]]\nx0 = [0.0, 0.0]\n'
        '[form]\ncomponents = ["-y/2", "x/2"]\n'
        '[criterion]\nregime = "elliptic"\n'
        "grid_bounds = [[-1.0, 1.0], [-1.0, 1.0]]\ngrid_shape = [20, 20]\n"
    )
    assert run(["criterion", cfg]) == 0
    assert (target / "criterion.json").exists()


def test_selftest_passes(capsys):
    assert run(["selftest"]) == 0
    captured = capsys.readouterr()
    assert "all invariants hold" in captured.out
