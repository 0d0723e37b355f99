from __future__ import annotations

import random

import pytest

from capow.cluster_models import CentroidModel, FlowModel, TemporalModel
from capow.errors import ConfigError
from capow.flow_ingest import FeatureScaler, IpAttributeTable
from capow.persistence import (
    ModelBundle,
    dumps_model,
    load_bundle,
    loads_model,
    save_bundle,
    save_model,
)


def random_scaler(rng):
    n = rng.randint(1, 6)
    mins = [rng.uniform(-100, 100) for _ in range(n)]
    return FeatureScaler(
        mins=tuple(mins),
        maxs=tuple(m + rng.uniform(0, 50) for m in mins),
    )


def random_dabr(rng):
    n = rng.randint(1, 6)
    return CentroidModel(
        centroid=tuple(rng.uniform(0, 1) for _ in range(n)),
        delta_max=rng.uniform(0.1, 10),
        scale_i=10,
    )


def random_tam(rng):
    users = {}
    for u in range(rng.randint(1, 4)):
        edges = sorted(rng.uniform(0, 1439) for _ in range(rng.randint(1, 3) * 2))
        ivs = []
        prev_end = -1.0
        for i in range(0, len(edges), 2):
            start, end = edges[i], edges[i + 1]
            if start > prev_end:
                ivs.append((start, end))
                prev_end = end
        if ivs:
            users[f"user{u}"] = tuple(ivs)
    if not users:
        users = {"user0": ((10.0, 20.0),)}
    return TemporalModel(intervals=users, delta_max_min=rng.uniform(100, 720))


def random_flow(rng):
    n = rng.randint(1, 6)
    legit = tuple(rng.uniform(0, 1) for _ in range(n))
    malicious = tuple(x + rng.uniform(0.01, 1) for x in legit)
    return FlowModel(legit_centroid=legit, malicious_centroid=malicious)


def random_ip_table(rng):
    cols = tuple(f"a{i}" for i in range(rng.randint(1, 4)))
    rows = {
        f"10.0.{i}.{rng.randint(0, 255)}": tuple(rng.uniform(0, 100) for _ in cols)
        for i in range(rng.randint(1, 8))
    }
    return IpAttributeTable(rows, cols)


MAKERS = (random_scaler, random_dabr, random_tam, random_flow, random_ip_table)


def equivalent(a, b):
    if isinstance(a, IpAttributeTable):
        return a.rows == b.rows and a.columns == b.columns and a.fallback == b.fallback
    return a == b


def test_round_trip_every_model_kind():
    rng = random.Random(31)
    for maker in MAKERS:
        for _ in range(50):
            model = maker(rng)
            text = dumps_model(model)
            back = loads_model(text)
            assert type(back) is type(model)
            assert equivalent(model, back)
            assert dumps_model(back) == text  # canonical form is stable


def test_save_load_file(tmp_path):
    model = CentroidModel(centroid=(0.25, 0.75), delta_max=1.5)
    path = save_model(model, tmp_path / "dabr.json")
    text_1 = path.read_text()
    back = loads_model(text_1)
    assert back == model
    save_model(back, path)
    assert path.read_text() == text_1  # save -> load -> save is bit-identical


def test_loads_model_rejects_bad_documents():
    with pytest.raises(ConfigError):
        loads_model("{}")
    with pytest.raises(ConfigError):
        loads_model('{"format": "capow-model", "schema_version": 99, "kind": "dabr"}')
    with pytest.raises(ConfigError):
        loads_model('{"format": "capow-model", "schema_version": 1, "kind": "mystery"}')
    with pytest.raises(ConfigError):
        loads_model('{"format": "capow-model", "schema_version": 1, "kind": "dabr"}')


def test_bundle_round_trip(tmp_path, trained):
    directory = save_bundle(trained, tmp_path / "models")
    back = load_bundle(directory)
    assert back.scaler == trained.scaler
    assert back.tam == trained.tam
    assert back.flow == trained.flow
    assert back.dabr == trained.dabr
    assert equivalent(back.ip_table, trained.ip_table)
    assert back.flow_columns == trained.flow_columns
    assert back.contexts_enabled == trained.contexts_enabled


def test_partial_bundle_round_trip(tmp_path):
    bundle = ModelBundle(
        scaler=FeatureScaler(mins=(0.0,), maxs=(1.0,)),
        tam=TemporalModel(intervals={"u": ((1.0, 2.0),)}),
        contexts_enabled=frozenset({"tam"}),
    )
    back = load_bundle(save_bundle(bundle, tmp_path / "models"))
    assert back.flow is None
    assert back.dabr is None
    assert back.ip_table is None
    assert back.contexts_enabled == frozenset({"tam"})


def test_load_bundle_requires_manifest(tmp_path):
    with pytest.raises(ConfigError):
        load_bundle(tmp_path)


def test_bundle_embedder_fallback():
    bundle = ModelBundle(scaler=FeatureScaler(mins=(0.0,), maxs=(1.0,)))
    assert bundle.embedder()("10.0.0.1") == (10 / 255, 0.0, 0.0, 1 / 255)
