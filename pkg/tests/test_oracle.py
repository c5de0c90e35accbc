import http.server
import json
import math
import threading

import numpy as np
import pytest

from neonbeam import (
    HttpOracle,
    Image,
    ProtocolError,
    ScoreVector,
    ToyOracle,
    TransportError,
    confidence,
    top1,
    toy_predict,
)
from neonbeam.oracle import OnnxOracle, _as_probs, http_timeout_seconds

from .conftest import solid_image
from .make_tiny_model import MODEL_PATH, TINY_BIAS, TINY_WEIGHT, write_model

cv2 = pytest.importorskip("cv2")


class TestScoreVector:
    def test_valid(self):
        sv = ScoreVector(np.array([0.25, 0.75]), ("a", "b"))
        assert sv.labels == ("a", "b")

    def test_rejects_negative(self):
        with pytest.raises(ValueError):
            ScoreVector(np.array([-0.1, 1.1]), ("a", "b"))

    def test_rejects_bad_sum(self):
        with pytest.raises(ValueError):
            ScoreVector(np.array([0.5, 0.6]), ("a", "b"))

    def test_rejects_label_mismatch(self):
        with pytest.raises(ValueError):
            ScoreVector(np.array([0.5, 0.5]), ("a",))

    def test_rejects_single_class(self):
        with pytest.raises(ValueError):
            ScoreVector(np.array([1.0]), ("a",))


class TestScoreOps:
    def test_confidence(self):
        sv = ScoreVector(np.array([0.1, 0.9]), ("a", "b"))
        assert confidence(sv, 1) == 0.9
        assert confidence(sv, 0) == pytest.approx(0.1)

    def test_confidence_uniform_thousand(self):
        sv = ScoreVector(np.full(1000, 1e-3), tuple(f"c{i}" for i in range(1000)))
        assert confidence(sv, 123) == pytest.approx(0.001)

    def test_confidence_out_of_range(self):
        sv = ScoreVector(np.array([0.5, 0.5]), ("a", "b"))
        with pytest.raises(IndexError):
            confidence(sv, 2)

    def test_top1(self):
        assert top1(ScoreVector(np.array([0.1, 0.7, 0.2]), ("a", "b", "c"))) == 1

    def test_top1_tie_breaks_low(self):
        assert top1(ScoreVector(np.array([0.5, 0.5]), ("a", "b"))) == 0


class TestToy:
    def test_pure_blue(self):
        sv = toy_predict(solid_image(8, 8, (0, 0, 1)))
        assert sv.labels[top1(sv)] == "blue"
        # closed form: e^10 / (e^10 + 2)
        assert confidence(sv, 2) == pytest.approx(0.9999092083843409, abs=1e-12)

    def test_uniform_gray(self):
        sv = toy_predict(solid_image(4, 4, (0.5, 0.5, 0.5)))
        assert np.allclose(sv.probs, 1.0 / 3.0)

    def test_red_leaning_means(self):
        # channel means (0.6, 0.5, 0.5): red prob = e / (e + 2)
        sv = toy_predict(solid_image(2, 2, (0.6, 0.5, 0.5)))
        assert confidence(sv, 0) == pytest.approx(0.5761168847658291, abs=1e-12)
        assert confidence(sv, 0) == pytest.approx(math.e / (math.e + 2.0), abs=1e-12)

    def test_probs_sum_tight(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            sv = toy_predict(Image(rng.random((5, 7, 3))))
            assert abs(float(sv.probs.sum()) - 1.0) < 1e-12

    def test_channel_permutation_equivariance(self):
        rng = np.random.default_rng(1)
        px = rng.random((6, 6, 3))
        base = toy_predict(Image(px)).probs
        for perm in ((1, 2, 0), (2, 1, 0), (0, 2, 1)):
            permuted = toy_predict(Image(px[:, :, perm])).probs
            assert np.allclose(permuted, base[list(perm)], atol=1e-12)

    def test_deterministic(self):
        img = solid_image(3, 3, (0.2, 0.4, 0.6))
        oracle = ToyOracle()
        a, b = oracle.predict(img), oracle.predict(img)
        assert (a.probs == b.probs).all() and a.labels == b.labels


class TestQueryCounting:
    def test_counts_every_predict(self):
        oracle = ToyOracle()
        img = solid_image(2, 2, (0, 0, 0))
        assert oracle.query_count == 0
        for i in range(5):
            oracle.predict(img)
            assert oracle.query_count == i + 1

    def test_concurrent_counting_is_exact(self):
        oracle = ToyOracle()
        img = solid_image(2, 2, (0.1, 0.1, 0.1))

        def worker():
            for _ in range(200):
                oracle.predict(img)

        threads = [threading.Thread(target=worker) for _ in range(8)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        assert oracle.query_count == 1600


class TestProbDetection:
    def test_probabilities_pass_through(self):
        probs = _as_probs(np.array([0.2, 0.3, 0.5]))
        assert np.allclose(probs, [0.2, 0.3, 0.5], atol=1e-12)

    def test_logits_get_softmaxed(self):
        probs = _as_probs(np.array([2.0, 1.0, -1.0]))
        assert probs.sum() == pytest.approx(1.0)
        assert probs[0] > probs[1] > probs[2]

    def test_negative_values_imply_logits(self):
        probs = _as_probs(np.array([-0.5, 0.5, 1.0]))
        assert probs.min() > 0.0


@pytest.fixture(scope="module")
def oracle():
    write_model(MODEL_PATH)  # regenerate to keep the bundled file honest
    return OnnxOracle(MODEL_PATH, input_size=None, mean=(0, 0, 0), std=(1, 1, 1))


class TestOnnxBackend:
    def pinned_input(self):
        px = np.arange(8 * 8 * 3, dtype=np.float64).reshape(8, 8, 3)
        return Image(px / (8 * 8 * 3 - 1))

    def test_golden_output(self, oracle):
        sv = oracle.predict(self.pinned_input())
        golden = np.array(
            [0.23914649066302168, 0.13761479587648176, 0.6232387134604965]
        )
        assert np.abs(sv.probs - golden).max() < 1e-4

    def test_matches_closed_form(self, oracle):
        img = self.pinned_input()
        sv = oracle.predict(img)
        means = img.pixels.mean(axis=(0, 1))
        logits = np.array(TINY_WEIGHT) @ means + np.array(TINY_BIAS)
        ref = np.exp(logits - logits.max())
        ref /= ref.sum()
        assert np.abs(sv.probs - ref).max() < 1e-6

    def test_default_labels(self, oracle):
        sv = oracle.predict(solid_image(8, 8, (0.5, 0.5, 0.5)))
        assert sv.labels == ("class_0", "class_1", "class_2")

    def test_resize_path(self):
        oracle = OnnxOracle(MODEL_PATH, input_size=(8, 8), mean=(0, 0, 0), std=(1, 1, 1))
        sv = oracle.predict(solid_image(30, 30, (0.2, 0.5, 0.8)))
        # a constant image stays constant under bilinear resize
        means = np.array([0.2, 0.5, 0.8])
        logits = np.array(TINY_WEIGHT) @ means + np.array(TINY_BIAS)
        ref = np.exp(logits - logits.max())
        ref /= ref.sum()
        assert np.abs(sv.probs - ref).max() < 1e-5

    def test_label_length_checked(self):
        oracle = OnnxOracle(MODEL_PATH, labels=("a", "b"), input_size=None,
                            mean=(0, 0, 0), std=(1, 1, 1))
        with pytest.raises(ProtocolError):
            oracle.predict(solid_image(8, 8, (0, 0, 0)))

    def test_missing_file(self):
        with pytest.raises(Exception):
            OnnxOracle("/nonexistent/model.onnx")


class _StubHandler(http.server.BaseHTTPRequestHandler):
    response: dict = {"probs": [0.2, 0.3, 0.5], "labels": ["a", "b", "c"]}
    status = 200
    raw_body: bytes | None = None
    seen: list = []

    def do_POST(self):
        length = int(self.headers.get("Content-Length", 0))
        type(self).seen.append(self.rfile.read(length)[:8])
        body = self.raw_body if self.raw_body is not None else json.dumps(
            self.response
        ).encode()
        self.send_response(self.status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def log_message(self, *args):
        pass


@pytest.fixture
def stub_server():
    _StubHandler.response = {"probs": [0.2, 0.3, 0.5], "labels": ["a", "b", "c"]}
    _StubHandler.status = 200
    _StubHandler.raw_body = None
    _StubHandler.seen = []
    server = http.server.ThreadingHTTPServer(("127.0.0.1", 0), _StubHandler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    yield f"http://127.0.0.1:{server.server_address[1]}"
    server.shutdown()


class TestHttpBackend:
    def test_pass_through(self, stub_server):
        oracle = HttpOracle(stub_server)
        sv = oracle.predict(solid_image(4, 4, (0.5, 0.5, 0.5)))
        assert np.allclose(sv.probs, [0.2, 0.3, 0.5])
        assert sv.labels == ("a", "b", "c")
        assert oracle.query_count == 1
        assert _StubHandler.seen[0].startswith(b"\x89PNG")

    def test_server_error_is_protocol_error(self, stub_server):
        _StubHandler.status = 500
        oracle = HttpOracle(stub_server)
        with pytest.raises(ProtocolError):
            oracle.predict(solid_image(2, 2, (0, 0, 0)))
        assert oracle.query_count == 1  # a spent query

    def test_malformed_json_is_protocol_error(self, stub_server):
        _StubHandler.raw_body = b"{not json"
        oracle = HttpOracle(stub_server)
        with pytest.raises(ProtocolError):
            oracle.predict(solid_image(2, 2, (0, 0, 0)))

    def test_invalid_probs_is_protocol_error(self, stub_server):
        _StubHandler.response = {"probs": [0.9, 0.9], "labels": ["a", "b"]}
        oracle = HttpOracle(stub_server)
        with pytest.raises(ProtocolError):
            oracle.predict(solid_image(2, 2, (0, 0, 0)))

    def test_connection_refused_is_transport_error(self):
        oracle = HttpOracle("http://127.0.0.1:1")  # nothing listens here
        with pytest.raises(TransportError):
            oracle.predict(solid_image(2, 2, (0, 0, 0)))
        assert oracle.query_count == 1  # still counted

    def test_timeout_env(self, monkeypatch):
        monkeypatch.setenv("NEONBEAM_HTTP_TIMEOUT_MS", "1500")
        assert http_timeout_seconds() == 1.5
        monkeypatch.setenv("NEONBEAM_HTTP_TIMEOUT_MS", "abc")
        with pytest.raises(ValueError):
            http_timeout_seconds()
