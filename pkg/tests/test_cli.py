import hashlib
import json

import numpy as np
import pytest

from fourthnls.cli import main, run
from fourthnls.norms import linear_trace
from fourthnls.serialization import load_trace
from fourthnls.spectral import gaussian

SMALL_SOLVE = """
[grid]
dim = 1
points = 128
half_length = 10

[data]
kind = gaussian
width = 1.0
amplitude = {amplitude}

[solve]
nonlinearity = {source}
eps = -1
T = {T}
substeps = 16
method = picard
{extra}
"""


def write(tmp_path, text, name="c.ini"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


def solve_config(tmp_path, source="lap(u)*conj(lap(u))", amplitude=0.01, T=0.05, extra=""):
    return write(tmp_path, SMALL_SOLVE.format(source=source, amplitude=amplitude, T=T, extra=extra))


def test_identities_bundled(tmp_path):
    out = tmp_path / "o"
    assert run("identities", "identities", str(out)) == 0
    verdict = json.loads((out / "verdict.json").read_text())
    assert verdict["passed"] is True
    manifest = json.loads((out / "manifest.json").read_text())
    for name, digest in manifest["outputs"].items():
        assert hashlib.sha256((out / name).read_bytes()).hexdigest() == digest
    assert manifest["versions"]["fourthnls"]


def test_malformed_nonlinearity_reports_position(tmp_path, capsys):
    cfg = solve_config(tmp_path, source="u*+u")
    assert run("solve", cfg, str(tmp_path / "o")) == 2
    err = capsys.readouterr().err
    assert "position 2" in err


@pytest.mark.parametrize("text", ["[grid]\ndim = 1\npoints = 64\nhalf_length = 4\nbogus = 1\n[identities]\nts = 0\n",
                                  "[grid]\ndim = 1\npoints = 60\nhalf_length = 4\n[identities]\nts = 0\n",
                                  "no section header\n"])
def test_bad_configs_exit_two(tmp_path, text):
    assert run("identities", write(tmp_path, text), str(tmp_path / "o")) == 2


def test_unknown_key_named(tmp_path, capsys):
    cfg = solve_config(tmp_path, extra="frobnicate = 3")
    assert run("solve", cfg, str(tmp_path / "o")) == 2
    assert "frobnicate" in capsys.readouterr().err


def test_unknown_command_and_missing_file(tmp_path):
    assert run("nope", "identities", str(tmp_path / "o")) == 2
    assert run("solve", str(tmp_path / "missing.ini"), str(tmp_path / "o")) == 2


def test_zero_coefficient_solve_is_linear_flow(tmp_path):
    out = tmp_path / "o"
    assert run("solve", solve_config(tmp_path, source="0*u*u", T=0.3), str(out)) == 0
    trace, _ = load_trace(out / "solution_picard.fnls")
    u0 = gaussian(trace.grid, 1.0, amplitude=0.01)
    ref = linear_trace(u0, trace.times, -1)
    # stored as complex64; the comparison is at single precision
    assert np.max(np.abs(trace.samples - ref.samples)) <= 1e-7 * np.max(np.abs(ref.samples))
    verdict = json.loads((out / "verdict.json").read_text())
    names = {c["name"] for e in verdict["experiments"] for c in e["checks"]}
    assert any(n.startswith("linear_reference") for n in names)


def test_halving_exhaustion_exits_three(tmp_path):
    out = tmp_path / "o"
    cfg = solve_config(tmp_path, amplitude=50.0, T=1.0, extra="max_halvings = 2")
    assert run("solve", cfg, str(out)) == 3
    diag = json.loads((out / "diagnostic.json").read_text())
    assert diag["command"] == "solve"
    assert diag["error"] == "SolverError"


def test_solve_outputs(tmp_path):
    out = tmp_path / "o"
    assert run("solve", "solve", str(out)) == 0
    header = (out / "measurements.csv").read_text().splitlines()[0]
    assert header.startswith("experiment,")
    for name in ("manifest.json", "verdict.json", "solution_picard.fnls", "solution_splitstep.fnls"):
        assert (out / name).exists()
    dats = list(out.glob("*.dat"))
    assert dats
    for d in dats:
        assert np.loadtxt(d, ndmin=2).shape[1] == 2


def test_repeated_runs_byte_identical(tmp_path):
    runs = []
    for i in range(2):
        out = tmp_path / f"o{i}"
        assert run("maximal", "maximal", str(out), seed=11) == 0
        runs.append((out / "measurements.csv").read_bytes())
    assert runs[0] == runs[1]
    assert run("maximal", "maximal", str(tmp_path / "o2"), seed=12) in (0, 1)
    assert (tmp_path / "o2" / "measurements.csv").read_bytes() != runs[0]


def test_seed_override_recorded(tmp_path):
    assert run("maximal", "maximal", str(tmp_path / "a")) == 0
    assert run("maximal", "maximal", str(tmp_path / "b"), seed=3) == 0
    a = json.loads((tmp_path / "a" / "manifest.json").read_text())
    b = json.loads((tmp_path / "b" / "manifest.json").read_text())
    assert a["effective_seed"] == 7 and a["seed"] is None
    assert b["effective_seed"] == 3 and b["seed"] == 3
    assert a["config_sha256"] == b["config_sha256"]


def test_main_parses_arguments(tmp_path):
    assert main(["identities", "identities", "--output", str(tmp_path / "o"), "--seed", "1"]) == 0
    with pytest.raises(SystemExit):
        main(["bogus", "identities"])
