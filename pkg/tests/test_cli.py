import argparse
import json

import numpy as np
import pytest

from chdg.cli import main, parse_boundary, parse_kappa
from chdg.mesh import BoundaryKind, build_box_mesh, write_msh


@pytest.mark.parametrize("text, value", [("2.1pi", 2.1 * np.pi), ("2.1*pi", 2.1 * np.pi), ("pi", np.pi),
                                         ("6.5", 6.5), ("1e1", 10.0)])
def test_parse_kappa(text, value):
    assert parse_kappa(text) == pytest.approx(value)


def test_parse_kappa_rejects_garbage():
    with pytest.raises(argparse.ArgumentTypeError):
        parse_kappa("fast")


def test_parse_boundary():
    assert parse_boundary("xmin=e") == ("xmin", BoundaryKind.E)
    for bad in ("xmin", "=E", "xmin=Q"):
        with pytest.raises(argparse.ArgumentTypeError):
            parse_boundary(bad)


def test_run_writes_outputs(tmp_path, capsys):
    out = tmp_path / "run"
    code = main(["run", "--benchmark", "plane-wave", "--mesh", "box:1", "--p", "2", "--solver", "cgnr-modal",
                 "--rtol", "1e-8", "--out", str(out), "--export-vtk", "--log-error-every", "5"])
    assert code == 0
    assert "converged" in capsys.readouterr().out
    for name in ("history.csv", "history.json", "fields.vtk", "fields_nodes.vtk"):
        assert (out / name).exists()
    doc = json.loads((out / "history.json").read_text())
    assert doc["solver"]["method"] == "cgnr_modal"


def test_run_msh_file(tmp_path):
    path = tmp_path / "box.msh"
    path.write_text(write_msh(build_box_mesh(1)))
    code = main(["run", "--benchmark", "custom", "--mesh", str(path), "--boundary", "all=I",
                 "--boundary", "xmin=H", "--p", "1", "--out", str(tmp_path / "o"), "--strict"])
    assert code == 0


def test_strict_nonconvergence(tmp_path):
    args = ["run", "--mesh", "box:1", "--solver", "fp", "--maxit", "2", "--rtol", "1e-12", "--out", str(tmp_path)]
    assert main(args) == 0
    assert main(args + ["--strict"]) != 0


@pytest.mark.parametrize("extra", [["--benchmark", "cavity", "--boundary", "xmin=I"], ["--p", "0"],
                                   ["--mesh", "missing.msh"], ["--kappa", "-1"]])
def test_configuration_errors(tmp_path, capsys, extra):
    assert main(["run", "--mesh", "box:1", "--out", str(tmp_path)] + extra) == 1
    assert capsys.readouterr().err.startswith("chdg: error:")
