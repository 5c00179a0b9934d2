import logging

from fastapi import FastAPI

from .database import init_db, DATABASE_PATH
from .routes import server_router, runs_router

logger = logging.getLogger(__name__)

VERSION = "1.0.0"

# Initialize FastAPI app
app = FastAPI(
    title="QShard",
    description="Parameter-parallel training of a noisy variational classifier",
    version=VERSION
)

app.include_router(server_router)
app.include_router(runs_router)


# Health check (public)
@app.get("/health")
async def health_check():
    """Health check endpoint."""
    server = getattr(app.state, "server", None)
    return {
        "status": "healthy",
        "database": str(DATABASE_PATH),
        "training": None if server is None else {"iteration": server.iteration, "finished": server.finished},
    }


@app.get("/api/version")
async def get_version():
    """Return version info to verify deployment."""
    return {"version": VERSION}


# Startup event
@app.on_event("startup")
async def startup_event():
    """Initialize database on startup."""
    init_db()
    logger.info("database_initialized path=%s", DATABASE_PATH)
