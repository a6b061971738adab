import numpy as np
import pytest
from fastapi.testclient import TestClient

from logits_bridge.server import build_app
from logits_bridge.toyhash import ToyHashModel

# Same frozen regression vector as the engine ships for (context=[1, 2],
# seed=7, vocab=8); both sides must reproduce it from the pinned constants.
HASH_FIXTURE = [
    -1.7036409378051758,
    3.6377735137939453,
    -4.820888519287109,
    -0.7896021008491516,
    -2.5060184001922607,
    2.368175745010376,
    -4.68179178237915,
    4.9458112716674805,
]

TOY_KW = dict(vocab_size=8, seed=7, m=8, eos_id=1, pad_id=0)


@pytest.fixture()
def client():
    app = build_app(ToyHashModel(**TOY_KW), max_batch=16)
    with TestClient(app, raise_server_exceptions=False) as c:
        yield c


class TestMeta:
    def test_meta_echoes_config(self, client):
        meta = client.get("/v1/meta").json()
        assert meta == {
            "vocab_size": 8,
            "eos_id": 1,
            "pad_id": 0,
            "supports_mask": True,
            "max_context": 1 << 16,
            "model": "toy-hash",
        }


class TestLogits:
    def test_dense_rows_order_preserving(self, client):
        resp = client.post("/v1/logits", json={"contexts": [[1, 2], [3]]})
        assert resp.status_code == 200
        rows = resp.json()["logits"]
        assert len(rows) == 2
        model = ToyHashModel(**TOY_KW)
        assert np.array_equal(np.float32(rows[0]), model.row([1, 2]))
        assert np.array_equal(np.float32(rows[1]), model.row([3]))

    def test_frozen_fixture_over_the_wire(self, client):
        rows = client.post("/v1/logits", json={"contexts": [[1, 2]]}).json()["logits"]
        assert np.array_equal(np.float32(rows[0]), np.float32(HASH_FIXTURE))

    def test_empty_context_allowed_for_toy_model(self, client):
        resp = client.post("/v1/logits", json={"contexts": [[]], "mask": [[]]})
        assert resp.status_code == 200
        dense = client.post("/v1/logits", json={"contexts": [[]]})
        assert dense.json()["logits"] == resp.json()["logits"]

    def test_masked_equals_stripped(self, client):
        masked = client.post("/v1/logits", json={
            "contexts": [[0, 0, 3, 4], [5, 6, 7, 2]],
            "mask": [[False, False, True, True], [True, True, True, True]],
        }).json()["logits"]
        plain = client.post("/v1/logits", json={"contexts": [[3, 4], [5, 6, 7, 2]]}).json()["logits"]
        assert masked == plain

    def test_identical_request_identical_body(self, client):
        body = {"contexts": [[4, 2, 6], [1]]}
        a = client.post("/v1/logits", json=body)
        b = client.post("/v1/logits", json=body)
        assert a.content == b.content

    def test_sparse_truncation_and_fill(self, client):
        dense = np.float32(
            client.post("/v1/logits", json={"contexts": [[1, 2]]}).json()["logits"][0]
        )
        sparse = client.post("/v1/logits", json={"contexts": [[1, 2]], "top": 3}).json()["sparse"][0]
        keep = sorted(range(8), key=lambda i: (-dense[i], i))[:3]
        assert sparse["ids"] == sorted(keep)
        for i, v in zip(sparse["ids"], sparse["values"]):
            assert np.float32(v) == dense[i]
        want_fill = np.float32(min(np.float32(v) for v in sparse["values"]) - np.float32(10))
        assert np.float32(sparse["fill"]) == want_fill

    def test_top_covering_vocab_matches_dense(self, client):
        dense = client.post("/v1/logits", json={"contexts": [[5]]}).json()["logits"][0]
        sparse = client.post("/v1/logits", json={"contexts": [[5]], "top": 99}).json()["sparse"][0]
        rebuilt = [None] * 8
        for i, v in zip(sparse["ids"], sparse["values"]):
            rebuilt[i] = v
        assert rebuilt == dense


class TestErrors:
    def _assert_envelope(self, resp, status, kind):
        assert resp.status_code == status
        err = resp.json()["error"]
        assert err["kind"] == kind
        assert isinstance(err["detail"], str)

    def test_invalid_json(self, client):
        resp = client.post("/v1/logits", content=b"{nope", headers={"Content-Type": "application/json"})
        self._assert_envelope(resp, 400, "bad_request")

    def test_missing_contexts(self, client):
        self._assert_envelope(client.post("/v1/logits", json={}), 400, "bad_request")

    def test_unknown_token_id(self, client):
        resp = client.post("/v1/logits", json={"contexts": [[99]]})
        self._assert_envelope(resp, 400, "bad_request")

    def test_mask_shape_mismatch(self, client):
        resp = client.post("/v1/logits", json={"contexts": [[1, 2]], "mask": [[True]]})
        self._assert_envelope(resp, 400, "bad_request")

    def test_all_false_mask_row(self, client):
        resp = client.post("/v1/logits", json={"contexts": [[0, 0]], "mask": [[False, False]]})
        self._assert_envelope(resp, 400, "bad_request")

    def test_bad_top(self, client):
        resp = client.post("/v1/logits", json={"contexts": [[1]], "top": 0})
        self._assert_envelope(resp, 400, "bad_request")

    def test_oversize_batch(self, client):
        resp = client.post("/v1/logits", json={"contexts": [[1]] * 17})
        self._assert_envelope(resp, 400, "bad_request")

    def test_oversize_context(self):
        app = build_app(ToyHashModel(max_context=3, **TOY_KW), max_batch=4)
        with TestClient(app, raise_server_exceptions=False) as client:
            resp = client.post("/v1/logits", json={"contexts": [[1, 2, 3, 4]]})
            self._assert_envelope(resp, 400, "bad_request")

    def test_at_capacity_returns_503(self, client):
        capacity = client.app.state.capacity
        assert capacity.acquire(15)
        try:
            resp = client.post("/v1/logits", json={"contexts": [[1], [2]]})
            self._assert_envelope(resp, 503, "overloaded")
        finally:
            capacity.release(15)
        assert client.post("/v1/logits", json={"contexts": [[1], [2]]}).status_code == 200
