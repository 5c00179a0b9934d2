import logging
from typing import Callable, Optional

from fastapi import APIRouter, HTTPException, Query, Request
from fastapi.responses import Response
from pydantic import ValidationError
from starlette.concurrency import run_in_threadpool

from ..errors import BarrierTimeout, ProtocolError, QShardError, SpecError
from ..models import GradientMessage, MessageType, RunResult
from ..transport import NDJSON, decode_envelope, encode_envelope, params_envelope

logger = logging.getLogger(__name__)

router = APIRouter(prefix="/api/server", tags=["parameter-server"])


def attach_server(app, server, on_finished: Optional[Callable[[RunResult], None]] = None) -> None:
    """Make a ParameterServer reachable from the routes below."""
    if server.config.auto_threshold_percentile is not None:
        raise SpecError("auto threshold is only available with the in-process transport")
    app.state.server = server
    app.state.on_finished = on_finished


def http_error(e: QShardError) -> HTTPException:
    if isinstance(e, ProtocolError):
        return HTTPException(status_code=409, detail=str(e))
    if isinstance(e, BarrierTimeout):
        return HTTPException(status_code=504, detail=str(e))
    return HTTPException(status_code=400, detail=str(e))


def _server(request: Request):
    server = getattr(request.app.state, "server", None)
    if server is None:
        raise HTTPException(status_code=404, detail="No training run attached")
    return server


# ============ Parameter Server Endpoints ============

@router.get("/params")
def get_params(request: Request, node_id: Optional[int] = Query(default=None, ge=0)):
    """Current parameters and schedule as one NDJSON envelope."""
    server = _server(request)
    try:
        server.check_deadline()
    except BarrierTimeout:
        pass  # a fresh attempt is broadcast below
    if server.finished:
        body = encode_envelope(MessageType.converged, server.iteration,
                               {"converged": server.converged, "iterations": server.iteration})
    else:
        body = params_envelope(server.broadcast())
    logger.debug("params_served node=%s iteration=%d attempt=%d", node_id, server.iteration, server.attempt)
    return Response(content=body, media_type=NDJSON)


def _accept_grad(request: Request, text: str) -> dict:
    server = _server(request)
    try:
        envelope = decode_envelope(text)
        if envelope.type != MessageType.grad:
            raise ProtocolError(f"expected a grad envelope, got {envelope.type.value}")
        try:
            message = GradientMessage.model_validate(envelope.payload)
        except ValidationError as e:
            raise ProtocolError(f"malformed gradient: {e}")
        complete = server.submit(message)
        row = server.step() if complete else None
    except QShardError as e:
        raise http_error(e)

    if row is not None and server.finished and request.app.state.on_finished:
        request.app.state.on_finished(server.result())
    return {
        "accepted": True,
        "iteration": server.iteration,
        "barrier_complete": complete,
        "pending": server.pending_nodes(),
        "finished": server.finished,
        "loss": row.loss if row else None,
    }


@router.post("/grad")
async def post_grad(request: Request):
    """Accept one gradient envelope; the update runs once every node has reported."""
    text = (await request.body()).decode("utf-8")
    # submit/step block on the server lock and the convergence test; never on the event loop
    return await run_in_threadpool(_accept_grad, request, text)


@router.get("/status")
def get_status(request: Request):
    server = _server(request)
    return {
        "iteration": server.iteration,
        "attempt": server.attempt,
        "pending": server.pending_nodes(),
        "converged": server.converged,
        "finished": server.finished,
        "nodes": server.config.nodes,
    }
