import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from switchcons.config import (ExperimentConfig, GainsSection, GraphMode, InitialSection, ModelSection,
                               RunSection, ScheduleSection, dumps, load_config, loads, reference_example,
                               parse_config)
from switchcons.errors import ConfigError

finite = st.floats(-50, 50, allow_nan=False, allow_infinity=False)


def test_example_round_trip():
    cfg = reference_example(seed=7)
    assert loads(dumps(cfg)) == cfg
    assert loads(dumps(loads(dumps(cfg)))) == cfg


def test_load_from_file(tmp_path):
    path = tmp_path / "exp.toml"
    path.write_text(dumps(reference_example()))
    cfg = load_config(path)
    assert cfg.n == 2 and cfg.m == 4
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.toml")


@st.composite
def configs(draw):
    n = draw(st.integers(1, 3))
    m = draw(st.integers(2, 4))
    mat = lambda r, c: [[draw(finite) for _ in range(c)] for _ in range(r)]  # noqa: E731
    v = draw(st.integers(1, 3))
    graphs = []
    for k in range(v):
        if draw(st.booleans()):
            edges = [[i + 1, i + 2, draw(st.floats(0.01, 5))] for i in range(m - 1)]
            graphs.append(GraphMode(m, f"g{k}", draw(st.booleans()), edges=edges))
        else:
            w = [[0.0 if i == j else draw(st.floats(0.01, 5)) for j in range(m)] for i in range(m)]
            graphs.append(GraphMode(m, f"g{k}", True, edges=None, weights=w))
    if draw(st.booleans()):
        low = draw(st.floats(0.1, 1.0))
        sched = ScheduleSection(horizon=draw(st.floats(2.0, 50.0)), seed=draw(st.integers(0, 2 ** 63)),
                                dwell_low=low, dwell_high=low + draw(st.floats(0.0, 1.0)))
    else:
        sched = ScheduleSection(horizon=5.0, seed=0, switch_times=[0.0, 1.0, 2.5],
                                modes=[draw(st.integers(1, v)) for _ in range(3)])
    gains = GainsSection(K=mat(n, n) if draw(st.booleans()) else None,
                         gamma=[draw(st.floats(0.1, 10)) for _ in range(n)] if draw(st.booleans()) else None,
                         design=draw(st.sampled_from(["uniform", "fixed"])),
                         margin=draw(st.floats(0.01, 2.0)), strict_jordan=draw(st.booleans()))
    initial = InitialSection(w0=mat(m, n), eta=draw(st.sampled_from(["zero", "scaled"])),
                             eta_scale=draw(st.floats(-2, 2)))
    return ExperimentConfig(ModelSection(A=mat(n, n), B=mat(n, n)), gains, graphs, sched, initial,
                            RunSection(engine=draw(st.sampled_from(["modal", "ode", "both"]))))


@settings(max_examples=60, deadline=None)
@given(cfg=configs())
def test_round_trip_property(cfg):
    text = dumps(cfg)
    again = loads(text)
    assert again == cfg
    assert dumps(again) == text


def _base():
    return reference_example().to_dict()


@pytest.mark.parametrize("mutate, field", [
    (lambda d: d["model"].pop("A"), "model.A"),
    (lambda d: d["model"].update(A=[[1.0, 2.0]]), "model.A"),
    (lambda d: d["model"].update(B=[[1.0], [2.0], [3.0]]), "model.B"),
    (lambda d: d["gains"].update(K=[[1.0, 2.0, 3.0]]), "gains.K"),
    (lambda d: d["gains"].update(gamma=[1.0]), "gains.gamma"),
    (lambda d: d["gains"].update(gamma=[1.0, -1.0]), "gains.gamma"),
    (lambda d: d["gains"].update(design="magic"), "gains.design"),
    (lambda d: d["gains"].update(H=[[1.0], [1.0]]), "gains.H"),
    (lambda d: d["schedule"].update(dwell_low=2.0), "schedule"),
    (lambda d: d["schedule"].update(dwell_low=0.0), "schedule.dwell_low"),
    (lambda d: d["schedule"].pop("horizon"), "schedule.horizon"),
    (lambda d: d["schedule"].update(seed=-1), "schedule.seed"),
    (lambda d: d["schedule"].update(switch_times=[0.0, 1.0], modes=[1, 9]), "schedule.modes"),
    (lambda d: d["schedule"].update(switch_times=[1.0, 0.5], modes=[1, 2]), "schedule.switch_times"),
    (lambda d: d["initial"].update(w0=[[1.0, 2.0]]), "initial.w0"),
    (lambda d: d["initial"].update(eta="explicit"), "initial.eta0"),
    (lambda d: d["graphs"]["modes"][1].update(m=5), "graphs.modes[1].m"),
    (lambda d: d["graphs"]["modes"][0].update(edges=[[1, 2]]), "graphs.modes[0].edges"),
    (lambda d: d["graphs"].update(modes=[]), "graphs.modes"),
    (lambda d: d["run"].update(engine="euler"), "run.engine"),
    (lambda d: d["run"].update(step=-0.1), "run.step"),
])
def test_field_level_errors(mutate, field):
    d = _base()
    mutate(d)
    with pytest.raises(ConfigError) as info:
        parse_config(d)
    assert info.value.field == field
    assert field in str(info.value)


def test_toml_syntax_error():
    with pytest.raises(ConfigError, match="TOML"):
        loads("[model\nA = 1")


def test_bad_edge_reported_at_build():
    d = _base()
    d["graphs"]["modes"][0]["edges"] = [[1, 7, 1.0]]
    cfg = parse_config(d)
    with pytest.raises(ConfigError, match=r"graphs.modes\[0\]"):
        cfg.build_family()


def test_runtime_objects():
    cfg = reference_example(seed=3)
    fam = cfg.build_family()
    assert [lap.name for lap in fam] == ["G1", "G2", "G3", "G4"]
    assert fam.all_undirected and fam.all_connected
    sched = cfg.build_schedule()
    assert sched.seed == 3 and sched.horizon == 30.0
    w0, eta0, wt0 = cfg.initial_states()
    assert np.array_equal(eta0, 0.5 * w0)
    assert np.array_equal(wt0, w0)
    assert cfg.with_seed(9).schedule.seed == 9


def test_explicit_schedule_is_one_based():
    d = _base()
    d["schedule"] = {"horizon": 3.0, "switch_times": [0.0, 1.0, 2.0], "modes": [1, 4, 2]}
    sched = parse_config(d).build_schedule()
    assert list(sched.modes) == [0, 3, 1]
    assert sched.dwell_floor == 1.0


def test_integer_matrices_normalised():
    d = _base()
    d["model"]["A"] = [[-1, 2], [0, 1]]
    cfg = parse_config(d)
    assert cfg.model.A == [[-1.0, 2.0], [0.0, 1.0]]
    assert isinstance(cfg.model.A[0][0], float)


def test_weights_matrix_graph():
    d = _base()
    d["graphs"]["modes"] = [{"name": "ring", "directed": True,
                             "weights": [[0, 1, 0], [0, 0, 1], [1, 0, 0]]}]
    d["initial"]["w0"] = [[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]]
    cfg = parse_config(d)
    assert cfg.m == 3
    fam = cfg.build_family()
    assert not fam.all_undirected and fam.all_strongly_connected
