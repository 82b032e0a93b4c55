import json
import threading
from http.server import BaseHTTPRequestHandler, HTTPServer

import numpy as np
import pytest

from roomgroup.overlap import OverlapMatrix


@pytest.fixture
def matrix_from_array():
    def make(values, ids=None):
        values = np.asarray(values, dtype=np.float64)
        if ids is None:
            ids = tuple(f"i{j}" for j in range(values.shape[0]))
        return OverlapMatrix(ids=tuple(ids), scores=values)

    return make


def random_symmetric_overlap(rng, n):
    """Random valid overlap matrix: symmetric, unit diagonal, entries in [0, 1]."""
    W = rng.uniform(0.0, 1.0, size=(n, n))
    W = (W + W.T) / 2.0
    np.fill_diagonal(W, 1.0)
    return W


def planted_block_matrix(rng, sizes, lo_in=0.7, hi_in=1.0, lo_out=0.0, hi_out=0.3):
    """Block-structured overlap scores: strong within planted groups, weak across."""
    n = int(sum(sizes))
    labels = np.repeat(np.arange(len(sizes)), sizes)
    W = rng.uniform(lo_out, hi_out, size=(n, n))
    for b in range(len(sizes)):
        idx = np.flatnonzero(labels == b)
        W[np.ix_(idx, idx)] = rng.uniform(lo_in, hi_in, size=(len(idx), len(idx)))
    W = (W + W.T) / 2.0
    np.fill_diagonal(W, 1.0)
    return W, list(labels)


class StubHandler(BaseHTTPRequestHandler):
    """Scripted JSON endpoint for remote-predictor tests."""

    script = None  # list of callables(payload) -> (status, body)
    requests_seen = None

    def do_POST(self):
        length = int(self.headers["Content-Length"])
        payload = json.loads(self.rfile.read(length))
        type(self).requests_seen.append(payload)
        step = min(len(type(self).requests_seen) - 1, len(type(self).script) - 1)
        status, body = type(self).script[step](payload)
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.end_headers()
        self.wfile.write(json.dumps(body).encode())

    def log_message(self, *args):
        pass


@pytest.fixture
def stub_server():
    servers = []

    def start(script):
        handler = type("Handler", (StubHandler,), {"script": script, "requests_seen": []})
        server = HTTPServer(("127.0.0.1", 0), handler)
        thread = threading.Thread(target=server.serve_forever, daemon=True)
        thread.start()
        servers.append(server)
        return f"http://127.0.0.1:{server.server_port}/predict", handler

    yield start
    for server in servers:
        server.shutdown()
        server.server_close()
