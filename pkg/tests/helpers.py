import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import numpy as np

from amodalkit import synth


def oracle_registry(sample, **chat_kwargs):
    chat = synth.scripted_chat_for(sample, **chat_kwargs)
    return synth.oracle_backends(sample).replace(chat_small=chat, chat_large=chat)


def random_mask(rng, h, w, p=0.5):
    return rng.random((h, w)) < p


def random_box(rng, h, w):
    x0 = int(rng.integers(0, w))
    y0 = int(rng.integers(0, h))
    return (x0, y0, int(rng.integers(x0 + 1, w + 1)), int(rng.integers(y0 + 1, h + 1)))


def disc(h, w, cx, cy, r):
    yy, xx = np.mgrid[0:h, 0:w]
    return (xx - cx) ** 2 + (yy - cy) ** 2 <= r * r


def square_disc_sample(h=120, w=140, occluders=None):
    """A red square target at (40..80, 40..80) behind hand-built occluders (back to front)."""
    amodal = np.zeros((h, w), bool)
    amodal[40:80, 40:80] = True
    if occluders is None:
        occluders = [disc(h, w, 80, 60, 15)]
    covered = np.zeros_like(amodal)
    for occ in occluders:
        covered |= occ
    modal = amodal & ~covered
    gt_image = np.full((h, w, 3), 200, np.uint8)
    gt_image[amodal] = synth.PALETTE["red"][0]
    image = gt_image.copy()
    for i, occ in enumerate(occluders):
        image[occ] = synth.OCCLUDER_COLORS[i]
    from amodalkit.maskcore import occlusion_ratio
    return synth.SyntheticSample(image, gt_image, amodal, modal, list(occluders),
                                 occlusion_ratio(modal, amodal), 0, "red", "rect", "square")


class DeadInpainter:
    """Inpainter whose every call fails, for exit-code tests (bound through a python factory)."""

    def inpaint(self, image, region, prompt):
        from amodalkit.errors import BackendUnavailableError
        raise BackendUnavailableError("inpainter offline", 503)


def tree_bytes(root):
    """Map of relative path -> file bytes for every file under ``root``."""
    from pathlib import Path
    root = Path(root)
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def _completion(text):
    return {"choices": [{"message": {"role": "assistant", "content": text}}]}


class StubServer:
    """Local chat-completions endpoint.

    Replays queued ``(status, body)`` pairs; once the queue is empty it asks
    ``responder(request_body) -> text`` for a 200 answer, or fails with 500.
    Every request is recorded.
    """

    def __init__(self, responder=None):
        self.queue = []
        self.responder = responder
        self.lock = threading.Lock()
        self.requests = []
        stub = self

        class Handler(BaseHTTPRequestHandler):
            def do_POST(self):
                body = json.loads(self.rfile.read(int(self.headers["Content-Length"])))
                with stub.lock:
                    stub.requests.append({"body": body, "auth": self.headers.get("Authorization")})
                    queued = stub.queue.pop(0) if stub.queue else None
                if queued is not None:
                    status, payload = queued
                elif stub.responder is not None:
                    status, payload = 200, _completion(stub.responder(body))
                else:
                    status, payload = 500, {"error": "empty"}
                data = payload.encode() if isinstance(payload, str) else json.dumps(payload).encode()
                self.send_response(status)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(data)))
                self.end_headers()
                self.wfile.write(data)

            def log_message(self, *args):
                pass

        self.httpd = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
        self.url = f"http://127.0.0.1:{self.httpd.server_address[1]}/v1/chat/completions"
        self.thread = threading.Thread(target=self.httpd.serve_forever, daemon=True)
        self.thread.start()

    def reply(self, text):
        self.queue.append((200, _completion(text)))

    def close(self):
        self.httpd.shutdown()
        self.httpd.server_close()
