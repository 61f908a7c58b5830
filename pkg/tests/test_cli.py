import csv
import subprocess
import sys

import numpy as np
import pytest
import tomli_w

from switchcons.cli import main
from switchcons.config import reference_example


def read_summary(path):
    return dict(line.split("=", 1) for line in path.read_text().splitlines())


def read_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], np.array(rows[1:], dtype=float)


def write_config(tmp_path, data, name="exp.toml"):
    path = tmp_path / name
    path.write_text(tomli_w.dumps(data))
    return str(path)


@pytest.fixture
def example_config(tmp_path):
    return write_config(tmp_path, reference_example().to_dict())


def test_reproduce_example_bundle(tmp_path):
    out = tmp_path / "run"
    assert main(["reproduce-example", "--seed", "5", "--out", str(out)]) == 0
    s = read_summary(out / "summary.txt")
    assert s["phi_check"] == "true"
    assert float(s["phi_max_abs_error"]) < 1e-6
    assert float(s["initial_error"]) == 35.0
    assert float(s["error_ratio"]) < 1e-4
    assert s["seed"] == "5"
    assert s["nondecaying_error"] == "false"
    header, data = read_csv(out / "trajectory.csv")
    assert header[0] == "t" and header[-1] == "e"
    assert header[1] == "w1_1" and "eta4_2" in header
    assert data.shape[1] == len(header) == 1 + 16 + 1
    assert np.all(np.diff(data[:, 0]) > 0)
    assert data[-1, 0] == 30.0
    eh, err = read_csv(out / "error.csv")
    assert eh == ["t", "e"]
    assert np.array_equal(err[:, 1], data[:, -1])
    sh, sig = read_csv(out / "sigma.csv")
    assert sh == ["t", "sigma"]
    assert set(sig[:, 1]) <= {1, 2, 3, 4}
    assert np.all(np.diff(sig[:, 0]) > 0)


def test_same_seed_is_byte_identical(tmp_path):
    a, b, c = tmp_path / "a", tmp_path / "b", tmp_path / "c"
    for out, seed in ((a, "11"), (b, "11"), (c, "12")):
        assert main(["reproduce-example", "--seed", seed, "--out", str(out)]) == 0
    for name in ("trajectory.csv", "error.csv", "sigma.csv", "summary.txt"):
        assert (a / name).read_bytes() == (b / name).read_bytes()
    assert (a / "sigma.csv").read_bytes() != (c / "sigma.csv").read_bytes()


def test_csv_uses_crlf_records(tmp_path):
    main(["reproduce-example", "--out", str(tmp_path)])
    raw = (tmp_path / "sigma.csv").read_bytes()
    assert raw.startswith(b"t,sigma\r\n")


def test_synth_example_permissive_and_strict(tmp_path, example_config, capsys):
    assert main(["synth", "--config", example_config, "--out", str(tmp_path)]) == 0
    s = read_summary(tmp_path / "synth.txt")
    assert s["switching_pass"] == "true"
    assert s["K_hurwitz"] == "true"
    assert float(s["switching_threshold"]) == pytest.approx(0.1 / 0.14128865019262658, rel=1e-10)
    assert s["fixed_graph_pass"] == "[true, true, true, true]"
    assert "unstable_modes=2" in capsys.readouterr().out
    assert main(["synth", "--config", example_config, "--out", str(tmp_path),
                 "--strict-jordan", "on"]) == 0
    strict = read_summary(tmp_path / "synth.txt")
    assert strict["switching_pass"] == "false"
    assert strict["fixed_graph_pass"] == "[false, false, false, false]"


def test_synth_stable_agent_is_vacuous(tmp_path):
    d = reference_example().to_dict()
    d["model"] = {"A": [[-1.0, 0.0], [0.0, -2.0]], "B": [[1.0, 0.0], [0.0, 1.0]]}
    d["gains"] = {"K": [[-1.0, 0.0], [0.0, -1.0]]}
    assert main(["synth", "--config", write_config(tmp_path, d), "--out", str(tmp_path)]) == 0
    s = read_summary(tmp_path / "synth.txt")
    assert s["gamma"] == "[1.0, 1.0]"
    assert s["switching_vacuous"] == "true"
    assert s["unstable_modes"] == "0"


def test_synth_disconnected_mode_is_infeasible(tmp_path, capsys):
    d = reference_example().to_dict()
    d["gains"].pop("gamma")
    d["graphs"]["modes"][1]["edges"] = [[1, 2, 1.0], [3, 4, 1.0]]
    code = main(["synth", "--config", write_config(tmp_path, d), "--out", str(tmp_path)])
    assert code == 3
    assert "G2" in capsys.readouterr().err


def test_config_error_exit_code(tmp_path, capsys):
    d = reference_example().to_dict()
    d["schedule"]["dwell_low"] = 5.0
    assert main(["simulate", "--config", write_config(tmp_path, d)]) == 2
    assert "schedule" in capsys.readouterr().err
    assert main(["simulate", "--config", str(tmp_path / "nope.toml")]) == 2
    assert main(["simulate"]) == 2


def test_defective_model_without_basis_is_config_error(tmp_path, capsys):
    d = reference_example().to_dict()
    d["model"].pop("Q")
    assert main(["synth", "--config", write_config(tmp_path, d), "--out", str(tmp_path)]) == 2
    assert "model.Q" in capsys.readouterr().err


def test_simulate_consensus_initial_condition(tmp_path):
    d = reference_example().to_dict()
    d["initial"]["w0"] = [[1.0, -2.0]] * 4
    d["schedule"]["horizon"] = 3.0
    assert main(["simulate", "--config", write_config(tmp_path, d), "--out", str(tmp_path)]) == 0
    _, err = read_csv(tmp_path / "error.csv")
    assert np.all(err[:, 1] == 0.0)
    assert read_summary(tmp_path / "summary.txt")["nondecaying_error"] == "false"


def _boundary_config():
    """Scalar agents at the exact switching threshold on the worst example graph,
    started on its Fiedler vector."""
    cfg = reference_example()
    fam = cfg.build_family()
    lap = fam[fam.argmin_lambda2]
    vals, vecs = np.linalg.eigh(lap.L)
    d = cfg.to_dict()
    d["model"] = {"A": [[0.1]], "B": [[1.0]]}
    d["gains"] = {"K": [[-1.1]], "gamma": [0.1 / vals[1]]}
    d["graphs"]["modes"] = [d["graphs"]["modes"][fam.argmin_lambda2]]
    d["schedule"] = {"horizon": 40.0, "switch_times": [0.0], "modes": [1], "dwell_floor": 0.5}
    d["initial"] = {"w0": [[float(x)] for x in vecs[:, 1]], "eta": "zero"}
    return d


def test_simulate_flags_boundary_gain(tmp_path):
    path = write_config(tmp_path, _boundary_config())
    assert main(["simulate", "--config", path, "--out", str(tmp_path), "--engine", "both"]) == 0
    s = read_summary(tmp_path / "summary.txt")
    assert s["nondecaying_error"] == "true"
    assert float(s["engine_max_relative_difference"]) < 1e-6
    # a gain 50% above the boundary decays
    d = _boundary_config()
    d["gains"]["gamma"] = [1.5 * d["gains"]["gamma"][0]]
    assert main(["simulate", "--config", write_config(tmp_path, d, "above.toml"),
                 "--out", str(tmp_path / "above")]) == 0
    assert read_summary(tmp_path / "above" / "summary.txt")["nondecaying_error"] == "false"


def test_simulate_engines_agree_on_example(tmp_path, example_config):
    d = reference_example().to_dict()
    d["schedule"]["horizon"] = 10.0
    path = write_config(tmp_path, d)
    assert main(["simulate", "--config", path, "--out", str(tmp_path), "--engine", "both"]) == 0
    s = read_summary(tmp_path / "summary.txt")
    assert s["modal_method"] == "kronecker"
    assert float(s["engine_max_relative_difference"]) < 1e-6
    header, data = read_csv(tmp_path / "modal_trajectory.csv")
    assert header[:3] == ["t", "z1_1", "z1_2"] and header[-1] == "e_z"
    assert np.all(np.diff(data[:, 0]) > 0)


def test_simulate_modal_only(tmp_path):
    d = reference_example().to_dict()
    d["gains"]["gamma"] = [2.0, 2.0]
    d["schedule"]["horizon"] = 5.0
    path = write_config(tmp_path, d)
    assert main(["simulate", "--config", path, "--out", str(tmp_path), "--engine", "modal"]) == 0
    s = read_summary(tmp_path / "summary.txt")
    assert s["modal_method"] == "closed_form"
    assert not (tmp_path / "trajectory.csv").exists()


def test_simulate_divergence_exit_code(tmp_path):
    d = reference_example().to_dict()
    d["model"] = {"A": [[400.0]], "B": [[1.0]]}
    d["gains"] = {"K": [[-401.0]], "gamma": [1.0]}
    d["initial"] = {"w0": [[1.0], [2.0], [3.0], [4.0]]}
    d["schedule"]["horizon"] = 3.0
    assert main(["simulate", "--config", write_config(tmp_path, d), "--out", str(tmp_path)]) == 4
    s = read_summary(tmp_path / "summary.txt")
    assert s["diverged"] == "true"
    assert 0 < float(s["divergence_time"]) < 3.0


def test_verify_example(tmp_path, example_config):
    assert main(["verify", "--config", example_config, "--out", str(tmp_path)]) == 0
    s = read_summary(tmp_path / "verify.txt")
    assert s["bound_holds"] == "true"
    assert s["doubly_stochastic_pass"] == "true"
    assert float(s["d_equals_b_residual"]) < 1e-12
    assert float(s["factor_mismatch"]) < 1e-12
    assert float(s["rk4_vs_oracle"]) < 1e-6
    header, data = read_csv(tmp_path / "contraction.csv")
    assert header[:5] == ["k", "t_end", "h", "sigma", "factor"]
    f, ref = data[:, header.index("factor")], data[:, header.index("reference")]
    assert np.allclose(f, ref, rtol=1e-12)
    assert np.all(data[:, header.index("deviation")] <= data[:, header.index("deviation_bound")])


def test_verify_directed_cycle_sweep(tmp_path):
    d = reference_example().to_dict()
    d["model"] = {"A": [[0.2]], "B": [[1.0]]}
    d["gains"] = {"K": [[-1.2]], "gamma": [1.0]}
    d["graphs"]["modes"] = [
        {"name": "cw", "directed": True, "m": 3, "edges": [[1, 2, 1.0], [2, 3, 1.0], [3, 1, 1.0]]},
        {"name": "ccw", "directed": True, "m": 3, "edges": [[2, 1, 0.5], [3, 2, 0.5], [1, 3, 0.5]]},
    ]
    d["initial"] = {"w0": [[1.0], [-2.0], [0.5]]}
    d["schedule"]["horizon"] = 10.0
    assert main(["verify", "--config", write_config(tmp_path, d), "--out", str(tmp_path)]) == 0
    header, sweep = read_csv(tmp_path / "gamma_sweep.csv")
    assert list(sweep[:, 0]) == [1, 2, 4, 8, 16]
    assert np.all(np.diff(sweep[:, header.index("max_scaled_factor")]) < 0)
    assert sweep[-1, header.index("relative_final_deviation")] < 1e-4
    assert not (tmp_path / "doubly_stochastic.csv").exists()


def test_seed_validation():
    with pytest.raises(SystemExit) as info:
        main(["reproduce-example", "--seed", "-1"])
    assert info.value.code == 2


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "switchcons", "reproduce-example", "--out", str(tmp_path)],
                          capture_output=True, text=True, check=False)
    assert proc.returncode == 0
    assert "phi_check=true" in proc.stdout
