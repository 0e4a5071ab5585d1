import json
import math

import numpy as np
import pytest

from fiberent._io import dumps
from fiberent.cli import main
from fiberent.closed_form import RBlockLaw
from fiberent.constraints import FeatureSet, mean_features, symbol_indicator
from fiberent.core import block_law


@pytest.fixture
def files(tmp_path):
    def write(name, obj):
        p = tmp_path / name
        p.write_text(obj if isinstance(obj, str) else json.dumps(obj))
        return str(p)
    return write


def run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def test_solve_fixed_mean(files, capsys):
    f = files("f.json", mean_features(0.3).to_dict())
    code, out, _ = run(capsys, "solve", "--features", f)
    assert code == 0
    d = json.loads(out)
    assert d["status"] == "converged"
    assert np.allclose(d["u_star"]["probs"], [0.49, 0.21, 0.21, 0.09], atol=1e-10)
    assert d["value_nats"] == pytest.approx(-0.7 * math.log(0.7) - 0.3 * math.log(0.3), abs=1e-12)


def test_solve_infeasible_exit_2(files, capsys):
    bad = FeatureSet(2, 1, np.vstack([symbol_indicator(2, 1, 1)] * 2), [0.5, 0.7])
    code, out, _ = run(capsys, "solve", "--features", files("f.json", bad.to_dict()))
    assert code == 2 and json.loads(out)["status"] == "infeasible"


@pytest.mark.parametrize("payload,field", [
    ({"alphabet": 2, "r": 1, "features": [{"name": "x"}], "targets": [0.3]}, "table"),
    ({"alphabet": 2, "r": 1, "features": []}, "targets"),
    ("{not json", "not valid JSON"),
])
def test_malformed_input_exit_1(files, capsys, payload, field):
    code, _, err = run(capsys, "solve", "--features", files("f.json", payload))
    assert code == 1 and field in err


def test_bad_config_field(files, capsys):
    f = files("f.json", mean_features(0.3).to_dict())
    c = files("c.json", {"max_iter": 3})
    code, _, err = run(capsys, "solve", "--features", f, "--config", c)
    assert code == 1 and "max_iter" in err


def test_usage_error_exit_1(capsys):
    assert main(["no-such-command"]) == 1
    capsys.readouterr()


def test_oracle_flag(files, capsys):
    f = files("f.json", mean_features(0.5).to_dict())
    code, out, _ = run(capsys, "solve", "--features", f, "--oracle")
    d = json.loads(out)
    assert code == 0 and abs(d["oracle"]["value_difference"]) <= 1e-6


def test_determinism_and_out_dir(files, capsys, tmp_path):
    f = files("f.json", mean_features(0.37).to_dict())
    outs = []
    for k in range(2):
        d = tmp_path / f"o{k}"
        assert main(["solve", "--features", f, "--out", str(d), "--seed", "3"]) == 0
        outs.append((d / "solve.json").read_bytes())
    capsys.readouterr()
    assert outs[0] == outs[1]


def test_closed_form_and_gap(files, capsys):
    code, out, _ = run(capsys, "closed-form", "--pi", "0.7,0.3")
    assert code == 0 and json.loads(out)["value_nats"] == pytest.approx(0.610864, abs=1e-6)
    mu = files("mu.json", RBlockLaw(2, 1, [0.5, 0.5]).to_dict())
    law = files("u.json", block_law([0.45, 0.05, 0.05, 0.45], 2, 1).to_dict())
    code, out, _ = run(capsys, "gap", "--mu", mu, "--law", law)
    d = json.loads(out)
    assert code == 0 and d["gap"] == pytest.approx(0.368064, abs=1e-6)
    assert abs(d["gap"] - d["cmi"]) <= 1e-10
    bad_mu = files("bad.json", RBlockLaw(2, 2, [0.4, 0.3, 0.1, 0.2]).to_dict())
    code, _, err = run(capsys, "closed-form", "--mu", bad_mu)
    assert code == 1 and "mu not stationary" in err


def test_geometry_command(files, capsys):
    code, out, _ = run(capsys, "geometry", "--features", files("f.json", mean_features(0.3).to_dict()))
    d = json.loads(out)
    assert code == 0 and d["envelope_passed"] and d["DV"][0] == pytest.approx(0.8473, abs=1e-4)


def test_simulate_then_estimate(files, capsys, tmp_path):
    f = files("f.json", mean_features(0.3).to_dict())
    code, out, _ = run(capsys, "simulate", "--features", f, "--n", "20000", "--seed", "1", "--format", "text")
    assert code == 0
    p = files("p.txt", out)
    code, out, _ = run(capsys, "estimate", "--path", p, "--features", f)
    d = json.loads(out)
    assert code == 0 and d["result"]["status"] == "converged"
    assert d["b_hat"][0] == pytest.approx(0.3, abs=0.02)
    code, out, _ = run(capsys, "simulate", "--features", f, "--n", "200", "--seed", "1", "--thetas", "0,0",
                       "--format", "text")
    code2, out2, _ = run(capsys, "simulate", "--features", f, "--n", "200", "--seed", "1", "--format", "text")
    assert out == out2


def test_experiment_single_cell(files, capsys):
    c = files("c.json", {"n_grid": [2000], "seeds": 1})
    code, out, _ = run(capsys, "pipeline", "--config", c)
    d = json.loads(out)
    assert code == 0 and len(d["cells"]) == 1 and d["result"]["status"] == "converged"
    code, out2, _ = run(capsys, "experiment", "--config", c)
    assert out == out2


def test_alias_demo(capsys, tmp_path):
    code, out, _ = run(capsys, "alias-demo", "--m", "0.5")
    d = json.loads(out)
    assert code == 0 and d["q_star"] == 0.25 and d["h_star"] == pytest.approx(math.log(2))
    assert d["fiber"]["difference"] == pytest.approx(0.130812, abs=1e-6)
    code, out, _ = run(capsys, "alias-demo", "--m", "0.3", "--format", "text")
    assert "a* = 0.3" in out and "b* = 0.7" in out
    code, out, _ = run(capsys, "alias-demo", "--m", "0.3", "--plot", "--format", "csv")
    assert out.splitlines()[0] == "q,h" and len(out.splitlines()) == 201
    assert main(["alias-demo", "--m", "0.3", "--plot", "--out", str(tmp_path)]) == 0
    assert (tmp_path / "alias_curve.csv").exists() and (tmp_path / "alias_demo.json").exists()
    assert run(capsys, "alias-demo", "--m", "1.5")[0] == 1


def test_dumps_seventeen_digits():
    text = dumps({"x": 0.1, "y": [1, 2.5], "z": None, "b": True, "n": float("nan")})
    d = json.loads(text)
    assert "0.10000000000000001" in text and d["x"] == 0.1 and d["b"] is True
    assert math.isnan(d["n"])
