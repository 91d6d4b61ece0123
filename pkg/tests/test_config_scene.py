import numpy as np
import pytest

from classroom_aerosol.config import ConfigError, config_from_document, default_config, load_config, mirror_config
from classroom_aerosol.scene import Box, Rect, UnknownOccupantError, build_scene, teacher_id
from classroom_aerosol.units import UnitError, parse_quantity, parse_vector


def test_units_convert_to_si():
    assert parse_quantity("6 L/min", "flow_rate") == pytest.approx(1e-4)
    assert parse_quantity("30 cm", "length") == pytest.approx(0.3)
    assert parse_vector("(1, 2, 3) m", "length") == (1.0, 2.0, 3.0)


def test_missing_unit_rejected():
    with pytest.raises(UnitError):
        parse_quantity(3.0, "length")


def test_unknown_key_rejected():
    with pytest.raises(ConfigError):
        config_from_document({"ambient": {"temprature": "300 K"}})


def test_wrong_dimension_rejected():
    with pytest.raises(ConfigError):
        config_from_document({"ambient": {"temperature": "3 m"}})


def test_scenario_file_overrides(tmp_path):
    p = tmp_path / "s.yaml"
    p.write_text("scenario:\n  intervention: screens\n  duration: 2 min\n")
    cfg = load_config(p, {"seed": 9})
    assert cfg.intervention == "screens" and cfg.duration == 120.0 and cfg.seed == 9
    assert cfg.ambient.temperature == pytest.approx(303.15)


def test_nested_update_and_digest():
    cfg = default_config()
    c2 = cfg.with_updates({"numerics.grid": (10, 10, 10)})
    assert c2.numerics.grid == (10, 10, 10) and cfg.numerics.grid != (10, 10, 10)
    assert c2.digest() != cfg.digest()
    assert default_config().digest() == cfg.digest()


def test_default_scene_layout():
    cfg = default_config()
    sc = build_scene(cfg)
    assert len(sc.occupants) == 25
    assert teacher_id(cfg) == 25
    assert len(sc.breathing_boxes) == 25
    for bb in sc.breathing_boxes:
        assert bb.volume == pytest.approx(0.036)
    assert {o.id for o in sc.occupants if o.infected} == {4, 14, 15, 20}
    assert sc.classify_point((2.5, 2.5, 2.5)) == "air"


def test_mouth_sits_on_head_face_inside_box():
    sc = build_scene(default_config())
    for o in sc.occupants:
        bb = sc.breathing_box_of(o.id)
        assert bb.box.contains(o.mouth_center)


def test_unknown_occupant():
    sc = build_scene(default_config())
    with pytest.raises(UnknownOccupantError):
        sc.occupant(99)


def test_intervention_surfaces():
    kinds = {}
    for iv in ("none", "shields", "screens"):
        sc = build_scene(default_config(intervention=iv))
        kinds[iv] = {s.kind for s in sc.surfaces}
    assert "desk_shield" in kinds["shields"] and "desk_shield" not in kinds["none"]
    assert "ceiling_screen" in kinds["screens"]


def test_low_screen_rejected():
    cfg = default_config(intervention="screens")
    scr = list(cfg.interventions.screens)
    import dataclasses
    scr[0] = dataclasses.replace(scr[0], z=(1.0, 3.0))
    bad = cfg.with_updates({"interventions.screens": tuple(scr)})
    with pytest.raises(ConfigError):
        build_scene(bad)


def test_mirror_layout_reflects_mouths():
    cfg = default_config()
    a, b = build_scene(cfg), build_scene(mirror_config(cfg))
    lx = cfg.room.extents[0]
    ma = sorted((round(lx - o.mouth_center[0], 9), round(o.mouth_center[1], 9)) for o in a.occupants)
    mb = sorted((round(o.mouth_center[0], 9), round(o.mouth_center[1], 9)) for o in b.occupants)
    assert ma == mb


def test_box_and_rect_geometry():
    b = Box((0, 0, 0), (1, 2, 3))
    assert b.volume == 6.0 and b.contains((0.5, 1, 1)) and not b.contains((2, 0, 0))
    r = Rect(2, 1.0, (0, 0), (2, 3))
    assert r.area == 6.0
    with pytest.raises(Exception):
        Box((1, 0, 0), (0, 1, 1))


def test_scene_serialises():
    sc = build_scene(default_config(intervention="shields"))
    d = sc.to_dict()
    assert len(d["occupants"]) == 25
    assert sc.to_json()
