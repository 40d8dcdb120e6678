import copy
import json

import pytest

from idg.scenario import (
    BUNDLED, ONLINE_DEFAULTS, ScenarioError, apply_overrides, bundled_path, from_dict, load_scenario,
)


@pytest.fixture
def doc():
    return json.loads(bundled_path("errorfree").read_text())


@pytest.mark.parametrize("name", BUNDLED)
def test_bundled_load_and_validate(name):
    sc = load_scenario(bundled_path(name))
    assert sc.name == name
    assert sc.model.N == 2
    assert sc.diagnostics.ok
    assert isinstance(sc.seed, int)


def test_demo_plan(doc):
    sc = from_dict(doc)
    assert len(sc.demos.inits) == 8
    assert sc.demos.segment_T == 2.0
    assert sc.demos.h == 1e-3


@pytest.mark.parametrize("path, value, where", [
    ("dynamics.n", 3, "dynamics"),
    ("players.0.alpha", [1.0], "players"),
    ("players.0.phi", ["x1^2", "y"], "players.0.phi"),
    ("domain.step", [1.0], "domain"),
    ("demonstrations.h", -1, "demonstrations.h"),
    ("online.integrator", "midpoint", "online.integrator"),
    ("schema_version", 2, "schema_version"),
])
def test_errors_name_the_field(doc, path, value, where):
    with pytest.raises(ScenarioError) as info:
        from_dict(apply_overrides(doc, [f"{path}={json.dumps(value)}"]))
    assert where in str(info.value)


def test_unknown_key_rejected(doc):
    doc["bogus"] = 1
    with pytest.raises(ScenarioError):
        from_dict(doc)


def test_overrides_parse_json_and_fall_back_to_text(doc):
    out = apply_overrides(doc, ["online.tau=[1, 2]", "description=plain text", "offline.w=null"])
    assert out["online"]["tau"] == [1, 2]
    assert out["description"] == "plain text"
    assert out["offline"]["w"] is None
    assert doc["online"]["tau"] == 5  # the input is not modified
    with pytest.raises(ScenarioError):
        apply_overrides(doc, ["no_equals_sign"])


def test_seed_argument_overrides(tmp_path, doc):
    p = tmp_path / "s.json"
    p.write_text(json.dumps(doc))
    assert load_scenario(p, seed=123).seed == 123
    assert load_scenario(p, ["online.horizon=4"]).online["horizon"] == 4


def test_defaults_filled(doc):
    d = copy.deepcopy(doc)
    del d["online"]
    sc = from_dict(d)
    assert sc.online["tau"] == ONLINE_DEFAULTS["tau"]
    assert sc.online["membership_tol"] == 1e-3


def test_invalid_json(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text("{not json")
    with pytest.raises(ScenarioError, match="invalid JSON"):
        load_scenario(p)


def test_dumps_is_stable(doc):
    a, b = from_dict(doc), from_dict(copy.deepcopy(doc))
    assert a.dumps() == b.dumps()


@pytest.mark.parametrize("name", BUNDLED)
def test_bundled_name_resolves(name, tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    assert load_scenario(name).name == name
