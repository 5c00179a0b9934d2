"""Worker transports and the newline-delimited JSON envelope codec."""
import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from typing import List, Optional, Sequence

import httpx
from pydantic import ValidationError

from .errors import ProtocolError
from .models import Envelope, GradientMessage, MessageType, ParamsPayload

logger = logging.getLogger(__name__)

NDJSON = "application/x-ndjson"


# ============ Envelope codec ============

def encode_envelope(kind: MessageType, iteration: int, payload: Optional[dict] = None) -> str:
    envelope = Envelope(type=kind, iteration=iteration, payload=payload or {})
    return envelope.model_dump_json() + "\n"


def decode_envelope(line: str) -> Envelope:
    text = line.strip()
    if not text or "\n" in text:
        raise ProtocolError("expected exactly one JSON envelope")
    try:
        return Envelope.model_validate(json.loads(text))
    except (json.JSONDecodeError, ValidationError) as e:
        raise ProtocolError(f"malformed envelope: {e}")


def params_envelope(payload: ParamsPayload) -> str:
    return encode_envelope(MessageType.params, payload.iteration, payload.model_dump(mode="json"))


def grad_envelope(message: GradientMessage) -> str:
    return encode_envelope(MessageType.grad, message.iteration, message.model_dump(mode="json"))


# ============ In-process ============

class InProcessTransport:
    """Hands the broadcast to local workers, optionally on a thread pool."""

    def __init__(self, workers: Sequence, threads: int = 1):
        self.workers = list(workers)
        self._pool = ThreadPoolExecutor(max_workers=threads) if threads > 1 else None

    def exchange(self, payload: ParamsPayload) -> List[GradientMessage]:
        if self._pool is None:
            return [worker.step(payload) for worker in self.workers]
        return list(self._pool.map(lambda worker: worker.step(payload), self.workers))

    def close(self) -> None:
        if self._pool is not None:
            self._pool.shutdown()


# ============ HTTP ============

class RemoteWorker:
    """Polls a parameter server over HTTP and answers each iteration with one gradient."""

    def __init__(self, worker, base_url: str, client: Optional[httpx.Client] = None,
                 poll_interval: float = 0.05, timeout: float = 30.0):
        self.worker = worker
        self.client = client or httpx.Client(base_url=base_url, timeout=timeout)
        self.poll_interval = poll_interval
        self._answered = None

    def poll(self) -> Envelope:
        response = self.client.get("/api/server/params", params={"node_id": self.worker.node_id})
        response.raise_for_status()
        return decode_envelope(response.text)

    def send(self, message: GradientMessage) -> dict:
        response = self.client.post(
            "/api/server/grad", content=grad_envelope(message), headers={"Content-Type": NDJSON}
        )
        if response.status_code == 409:
            logger.warning("gradient_rejected node=%d iteration=%d detail=%s",
                           message.node_id, message.iteration, response.json().get("detail"))
            return {}
        response.raise_for_status()
        return response.json()

    def run_once(self) -> bool:
        """Handle one poll. Returns False once the server reports convergence."""
        envelope = self.poll()
        if envelope.type == MessageType.converged:
            return False
        payload = ParamsPayload.model_validate(envelope.payload)
        key = (payload.iteration, payload.attempt)
        if key == self._answered:
            time.sleep(self.poll_interval)
            return True
        self.send(self.worker.step(payload))
        self._answered = key
        return True

    def run(self) -> None:
        logger.info("remote_worker_started node=%d", self.worker.node_id)
        while self.run_once():
            pass
        logger.info("remote_worker_finished node=%d", self.worker.node_id)
