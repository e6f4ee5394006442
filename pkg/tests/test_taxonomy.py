import pytest

from panvox import ClassEntry, ClassTaxonomy, semantic_kitti


def test_default_layout(taxonomy):
    assert len(taxonomy.entries) == 21
    assert taxonomy.free_id == 0
    assert taxonomy.unknown_id == 255
    assert taxonomy.thing_ids == (1, 2, 3, 4, 5, 6, 7, 8)
    assert taxonomy.stuff_ids == tuple(range(9, 20))
    assert taxonomy.semantic_ids == tuple(range(1, 20))


def test_default_names(taxonomy):
    assert taxonomy.name_of(1) == "car"
    assert taxonomy.name_of(4) == "truck"
    assert taxonomy.name_of(5) == "other-vehicle"
    assert taxonomy.name_of(9) == "road"
    assert taxonomy.name_of(19) == "traffic-sign"
    assert taxonomy.id_of("person") == 6
    assert taxonomy.id_of("unknown") == 255


def test_id_of_unknown_name_raises(taxonomy):
    with pytest.raises(ValueError):
        taxonomy.id_of("tree")


def test_kind_queries(taxonomy):
    assert taxonomy.kind_of(0) == "free"
    assert taxonomy.kind_of(3) == "thing"
    assert taxonomy.kind_of(15) == "stuff"
    assert taxonomy.is_thing(8)
    assert not taxonomy.is_thing(9)
    assert not taxonomy.is_thing(0)
    assert taxonomy.contains(255)
    assert not taxonomy.contains(20)


def test_thing_index_positions(taxonomy):
    for pos, cid in enumerate(taxonomy.thing_ids):
        assert taxonomy.thing_index(cid) == pos
    with pytest.raises(ValueError):
        taxonomy.thing_index(9)
    with pytest.raises(ValueError):
        taxonomy.thing_index(0)


def test_prediction_channels(taxonomy):
    # free channel first, then every semantic class in id order
    assert taxonomy.prediction_channels() == (0,) + tuple(range(1, 20))


def test_dict_round_trip(taxonomy):
    again = ClassTaxonomy.from_dict(taxonomy.to_dict())
    assert again == taxonomy
    assert again.thing_ids == taxonomy.thing_ids


def test_from_dict_rejects_extra_keys():
    payload = {"classes": [{"id": 0, "name": "free", "kind": "free", "color": "red"}]}
    with pytest.raises(ValueError):
        ClassTaxonomy.from_dict(payload)
    with pytest.raises(ValueError):
        ClassTaxonomy.from_dict({"labels": []})


def test_validation_errors():
    free = ClassEntry(0, "free", "free")
    with pytest.raises(ValueError):
        ClassTaxonomy([free, ClassEntry(0, "dup", "stuff")])
    with pytest.raises(ValueError):
        ClassTaxonomy([free, ClassEntry(1, "free", "stuff")])
    with pytest.raises(ValueError):
        ClassTaxonomy([ClassEntry(1, "road", "stuff")])  # no free class
    with pytest.raises(ValueError):
        ClassTaxonomy([free, ClassEntry(1, "also-free", "free")])
    with pytest.raises(ValueError):
        ClassTaxonomy([free, ClassEntry(1, "wall", "solid")])
    with pytest.raises(ValueError):
        ClassTaxonomy([free, ClassEntry(-1, "neg", "stuff")])
    with pytest.raises(ValueError):
        ClassTaxonomy([free, ClassEntry(255, "unknown", "unknown"),
                       ClassEntry(254, "unknown2", "unknown")])


def test_two_instances_equal():
    assert semantic_kitti() == semantic_kitti()
