from .server import router as server_router
from .runs import router as runs_router

__all__ = ["server_router", "runs_router"]
