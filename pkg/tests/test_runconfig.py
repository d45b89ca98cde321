import json
from pathlib import Path

import pytest

from nharm.manifolds import MapField, TargetManifold, build_torus_mesh
from nharm.runconfig import ConfigError, RunConfig


def _config(**changes):
    d = {
        "schema": 1,
        "mesh": {"kind": "torus2", "resolution": 8},
        "target": {"kind": "sphere", "dim": 2},
        "initial": {"kind": "constant", "value": [0, 0, 1]},
        "params": {"s": 1.0},
        "schedule": {"geometric": {"steps": 3, "p0": 2.2, "delta0": 0.1}},
        "diagnostics": {"bubbles": False},
        "output": "out",
    }
    d.update(changes)
    return d


def _error(d, tmp_path=None):
    with pytest.raises(ConfigError) as info:
        RunConfig.from_dict(d, tmp_path or ".")
    return info.value


def test_load_builds_everything(tmp_path):
    path = tmp_path / "run.json"
    path.write_text(json.dumps(_config()))
    cfg = RunConfig.load(path)
    assert len(cfg.schedule) == 3
    assert cfg.output_dir == tmp_path / "out"
    params = cfg.growth_params()
    assert (params.n, params.N, params.p, params.delta, params.s) == (2, 3, 2.2, 0.1, 1.0)
    field = cfg.build_initial()
    assert field.mesh.node_count == 64
    assert not cfg.diagnostics.bubbles
    assert cfg.diagnostics.chart_multiple == 8


def test_to_dict_reloads():
    cfg = RunConfig.from_dict(_config())
    again = RunConfig.from_dict(json.loads(cfg.to_json()))
    assert again.schedule == cfg.schedule
    assert again.solver == cfg.solver
    assert again.diagnostics == cfg.diagnostics


def test_error_paths():
    bad = _config(schedule={"p_list": [2.2, 3.5], "delta_list": [0.1, 0.05]})
    assert _error(bad).path == "schedule.p_list[1]"
    assert _error(_config(schema=2)).path == "schema"
    assert _error(_config(colour="red")).path == "colour"
    assert _error(_config(mesh={"kind": "klein"})).path == "mesh.kind"
    assert _error(_config(mesh={"kind": "torus2", "resolution": 8.5})).path == "mesh.resolution"
    assert _error(_config(params={"p": "big"})).path == "params.p"
    assert _error(_config(solver={"max_iters": 1.5})).path == "solver.max_iters"
    assert _error(_config(solver={"armijo_c": 2.0})).path == "solver"
    assert _error(_config(diagnostics={"chart_resolution": 7})).path == "diagnostics.chart_resolution"
    missing = _config()
    del missing["target"]
    assert _error(missing).path == "target"


def test_error_message_names_the_path():
    err = _error(_config(schedule={"p_list": [2.2], "delta_list": [0.0]}))
    assert str(err).startswith("schedule.delta_list[0]: ")


def test_missing_files(tmp_path):
    assert _error(_config(mesh={"file": "nowhere.json"}), tmp_path).path == "mesh.file"
    assert _error(_config(initial={"kind": "file", "path": "u.json"}), tmp_path).path == "initial.path"
    with pytest.raises(ConfigError) as info:
        RunConfig.load(tmp_path / "absent.json")
    assert info.value.path == "config"
    broken = tmp_path / "broken.json"
    broken.write_text("{")
    with pytest.raises(ConfigError):
        RunConfig.load(broken)


def test_field_file_initial(tmp_path):
    mesh = build_torus_mesh(2, 8)
    field = MapField.constant(mesh, TargetManifold.sphere(2), [0.0, 1.0, 0.0])
    (tmp_path / "u.json").write_text(field.to_json())
    cfg = RunConfig.from_dict(_config(initial={"kind": "file", "path": "u.json"}), tmp_path)
    assert (cfg.build_initial().values == field.values).all()

    other = _config(mesh={"kind": "torus2", "resolution": 4},
                    initial={"kind": "file", "path": "u.json"})
    cfg = RunConfig.from_dict(other, tmp_path)
    with pytest.raises(ConfigError) as info:
        cfg.build_initial()
    assert info.value.path == "initial.path"


def test_mesh_file(tmp_path):
    (tmp_path / "mesh.json").write_text(build_torus_mesh(2, 4).to_json())
    cfg = RunConfig.from_dict(_config(mesh={"file": "mesh.json"}), tmp_path)
    assert cfg.build_mesh().node_count == 16
    assert cfg.growth_params().n == 2


@pytest.mark.parametrize("name", ["bench_t2s2_degree1.json", "bench_s2s2_degree1.json",
                                  "constant_t2.json"])
def test_bundled_benchmarks_load(name):
    cfg = RunConfig.load(Path(__file__).resolve().parent.parent / "benchmarks" / name)
    assert len(cfg.schedule) >= 3
    assert cfg.growth_params().p == cfg.schedule.p_list[0]


@pytest.mark.parametrize("text", ["{", "[]", '{"mesh": 3}'])
def test_unreadable_field_file(tmp_path, text):
    (tmp_path / "u.json").write_text(text)
    cfg = RunConfig.from_dict(_config(initial={"kind": "file", "path": "u.json"}), tmp_path)
    with pytest.raises(ConfigError) as info:
        cfg.build_initial()
    assert info.value.path == "initial.path"


def test_unreadable_mesh_file(tmp_path):
    (tmp_path / "mesh.json").write_text("{")
    assert _error(_config(mesh={"file": "mesh.json"}), tmp_path).path == "mesh.file"


def test_field_file_with_another_target(tmp_path):
    field = MapField.constant(build_torus_mesh(2, 8), TargetManifold.flat_torus([1.0, 1.0]),
                              [0.5, 0.5])
    (tmp_path / "u.json").write_text(field.to_json())
    cfg = RunConfig.from_dict(_config(initial={"kind": "file", "path": "u.json"}), tmp_path)
    with pytest.raises(ConfigError) as info:
        cfg.build_initial()
    assert info.value.path == "initial.path"
