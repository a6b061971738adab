"""Loopback conformance: the decoding engine driving this bridge over a real
socket must behave exactly like its in-process toy backend.

These tests exercise the wire protocol end to end and therefore use the
engine package (installed alongside in this repository) as the client.
"""

import threading
import time

import numpy as np
import pytest
import uvicorn

from ensdec import (
    HttpBackend,
    SamplingPolicy,
    StrategyConfig,
    StrategyKind,
    ToyHashBackend,
    Vocabulary,
    run_one_step,
    run_two_stage,
)
from ensdec.pipeline import PaddedBatch

from logits_bridge.server import build_app
from logits_bridge.toyhash import ToyHashModel

TOY = dict(vocab_size=32, seed=2024, m=6, force_after=9,
           delimiter_first_id=2, eos_id=1, pad_id=0)


@pytest.fixture(scope="module")
def bridge_url():
    app = build_app(ToyHashModel(**TOY), max_batch=64)
    config = uvicorn.Config(app, host="127.0.0.1", port=0, log_level="error")
    server = uvicorn.Server(config)
    thread = threading.Thread(target=server.run, daemon=True)
    thread.start()
    deadline = time.monotonic() + 10
    while not server.started:
        if time.monotonic() > deadline:
            raise RuntimeError("bridge server did not start")
        time.sleep(0.01)
    port = server.servers[0].sockets[0].getsockname()[1]
    yield f"http://127.0.0.1:{port}"
    server.should_exit = True
    thread.join(timeout=5)


@pytest.fixture(scope="module")
def http_backend(bridge_url):
    backend = HttpBackend(bridge_url)
    yield backend
    backend.close()


def local_backend():
    return ToyHashBackend(**TOY)


class TestVectorLoopback:
    def test_descriptor_matches_local(self, http_backend):
        d = http_backend.descriptor
        local = local_backend().descriptor
        assert (d.vocab_size, d.eos_id, d.pad_id, d.supports_mask) == (
            local.vocab_size, local.eos_id, local.pad_id, local.supports_mask,
        )

    def test_dense_vectors_exact(self, http_backend):
        rng = np.random.default_rng(60)
        for _ in range(25):
            contexts = [
                [int(t) for t in rng.integers(0, 32, int(rng.integers(0, 9)))]
                for _ in range(int(rng.integers(1, 5)))
            ]
            over = http_backend.next_logits(contexts)
            local = local_backend().next_logits(contexts)
            for a, b in zip(over, local):
                assert np.array_equal(a, b)

    def test_masked_vectors_exact(self, http_backend):
        batch = PaddedBatch(
            ((0, 0, 5, 9), (4, 4, 4, 4)),
            ((False, False, True, True), (True, True, True, True)),
            pad_id=0,
        )
        over = http_backend.next_logits_masked(batch)
        local = local_backend().next_logits_masked(batch)
        for a, b in zip(over, local):
            assert np.array_equal(a, b)

    def test_sparse_inflation_preserves_top(self, bridge_url):
        sparse = HttpBackend(bridge_url, top=5)
        dense = HttpBackend(bridge_url)
        s = sparse.next_logits([[7, 7]])[0]
        d = dense.next_logits([[7, 7]])[0]
        keep = sorted(range(32), key=lambda i: (-d[i], i))[:5]
        for i in keep:
            assert s[i] == d[i]
        assert int(np.argmax(s)) == int(np.argmax(d))
        sparse.close()
        dense.close()


class TestDecodeLoopback:
    VOCAB = Vocabulary(size=32, eos_id=1, pad_id=0, delimiter=(2,))

    def _strategy(self, k=2):
        return StrategyConfig(kind=StrategyKind.DIRECT_MERGE, k=k, n=k,
                              max_think_tokens=12, max_answer_tokens=8)

    def test_two_stage_transcripts_identical(self, http_backend):
        policy = SamplingPolicy(seed=4242, temp_think=0.9)
        over = run_two_stage([6, 3], self._strategy(), policy, http_backend,
                             vocab=self.VOCAB, prompt_id="loop")
        local = run_two_stage([6, 3], self._strategy(), policy, local_backend(),
                              vocab=self.VOCAB, prompt_id="loop")
        assert over.to_jsonl() == local.to_jsonl()

    def test_one_step_transcripts_identical(self, http_backend):
        policy = SamplingPolicy(seed=515, temp_think=1.1)
        over = run_one_step([8], self._strategy(3), policy, http_backend,
                            vocab=self.VOCAB, prompt_id="loop1")
        local = run_one_step([8], self._strategy(3), policy, local_backend(),
                             vocab=self.VOCAB, prompt_id="loop1")
        assert over.to_jsonl() == local.to_jsonl()

    def test_one_step_empty_prompt_identical(self, http_backend):
        # round 1 sends a zero-width masked batch; both sides must accept it
        policy = SamplingPolicy(seed=88, temp_think=1.0)
        over = run_one_step([], self._strategy(2), policy, http_backend,
                            vocab=self.VOCAB, prompt_id="empty")
        local = run_one_step([], self._strategy(2), policy, local_backend(),
                             vocab=self.VOCAB, prompt_id="empty")
        assert over.to_jsonl() == local.to_jsonl()
