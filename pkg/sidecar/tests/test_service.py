import numpy as np
import pytest
from fastapi.testclient import TestClient

from embed_sidecar.app import create_app
from embed_sidecar.models import HashTrigramModel, ModelError, load_model

# cognate-shaped bilingual probe phrases: related languages sharing a
# script keep word stems and vary suffixes, which is what a character
# n-gram model can pick up on
PROBE_PAIRS = [
    ("paniyacha pramaan vaadhla aahe", "paniyache pramaan vaadhle aasa"),
    ("shaaleche vidyarthi khelat hote", "shaalechi vidyarthi khelta aasli"),
    ("bajarat bhaji mahag zaali", "bajaraant bhaji mahag zaaleli"),
    ("gaavat navin rasta banla", "gaavaant navo rasto banlo"),
    ("saagarat masemari suru aahe", "saagaraant masemari chalu aasa"),
    ("mulaanchi pariksha sampli aata", "mulaanchi parikshya sompli atam"),
    ("paavsamule shet harvale gele", "paavsan shet harvalem gelam"),
    ("mandirat utsav saajra zala", "mandiraant utsav saajro zalo"),
]
# measured once against the deployed hash backend at pin time:
# mean true-pair cosine 0.698, mean mismatched 0.032, margin 0.666
PINNED_MARGIN = 0.6


@pytest.fixture(scope="module")
def client():
    with TestClient(create_app("hash:128", batch_ceiling=256)) as c:
        yield c


def test_health_ready(client):
    payload = client.get("/health").json()
    assert payload["status"] == "ready"
    assert payload["dim"] == 128
    assert payload["model_id"] == "hash-trigram-128"
    assert payload["uptime_seconds"] >= 0


def test_health_dim_is_constant(client):
    dims = {client.get("/health").json()["dim"] for _ in range(3)}
    assert dims == {128}


def test_health_loading_before_startup():
    app = create_app("hash")
    bare = TestClient(app)  # no context manager: startup never ran
    payload = bare.get("/health").json()
    assert payload["status"] == "loading"
    resp = bare.post("/embed", json={"texts": ["hello"]})
    assert resp.status_code == 503


@pytest.mark.parametrize("size", [1, 2, 256])
def test_embed_contract_across_batch_sizes(client, size):
    texts = [f"probe sentence number {i}" for i in range(size)]
    payload = client.post("/embed", json={"texts": texts}).json()
    assert len(payload["vectors"]) == size
    assert payload["dim"] == 128
    for vec in payload["vectors"]:
        assert len(vec) == 128
        assert abs(np.linalg.norm(vec) - 1.0) <= 1e-5


def test_embed_order_preserving(client):
    texts = ["alpha text", "beta text", "gamma text"]
    vectors = client.post("/embed", json={"texts": texts}).json()["vectors"]
    singles = [client.post("/embed", json={"texts": [t]}).json()["vectors"][0]
               for t in texts]
    for batch_vec, single_vec in zip(vectors, singles):
        assert batch_vec == single_vec


def test_identical_texts_bit_identical(client):
    payload = client.post("/embed",
                          json={"texts": ["same text", "same text"]}).json()
    assert payload["vectors"][0] == payload["vectors"][1]
    again = client.post("/embed", json={"texts": ["same text"]}).json()
    assert again["vectors"][0] == payload["vectors"][0]


def test_oversize_batch_rejected(client):
    resp = client.post("/embed", json={"texts": ["x"] * 257})
    assert resp.status_code == 413


def test_empty_string_rejected_with_index(client):
    resp = client.post("/embed", json={"texts": ["ok", "   ", "also ok"]})
    assert resp.status_code == 422
    assert resp.json()["index"] == 1


def test_empty_batch_rejected(client):
    resp = client.post("/embed", json={"texts": []})
    assert resp.status_code == 422


def test_probe_set_margin(client):
    def vec(text):
        return np.asarray(
            client.post("/embed", json={"texts": [text]}).json()["vectors"][0])

    lefts = [l for l, _ in PROBE_PAIRS]
    rights = [r for _, r in PROBE_PAIRS]
    lv = [vec(t) for t in lefts]
    rv = [vec(t) for t in rights]
    true_cos = [float(a @ b) for a, b in zip(lv, rv)]
    mismatched = [float(lv[i] @ rv[j])
                  for i in range(len(lv)) for j in range(len(rv)) if i != j]
    margin = float(np.mean(true_cos) - np.mean(mismatched))
    assert margin >= PINNED_MARGIN, \
        f"true {np.mean(true_cos):.3f} vs mismatched {np.mean(mismatched):.3f}"


def test_restart_same_model_cosine_identical():
    probe = [l for l, _ in PROBE_PAIRS]
    with TestClient(create_app("hash:128")) as c1:
        first = c1.post("/embed", json={"texts": probe}).json()["vectors"]
    with TestClient(create_app("hash:128")) as c2:
        second = c2.post("/embed", json={"texts": probe}).json()["vectors"]
    for a, b in zip(first, second):
        assert abs(float(np.dot(a, b)) - 1.0) <= 1e-5


# --- backend unit behavior -----------------------------------------------------

def test_hash_model_rejects_tiny_dim():
    with pytest.raises(ModelError):
        HashTrigramModel(dim=4)


def test_load_model_specs():
    assert load_model("hash").dim == 256
    assert load_model("hash:64").dim == 64
