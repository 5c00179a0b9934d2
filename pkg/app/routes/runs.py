from fastapi import APIRouter, UploadFile, File, HTTPException, Query
from fastapi.responses import Response
from pydantic import ValidationError
from typing import Optional, List
import json

from ..harness import artifact_json
from ..models import RunArtifact
from .. import crud

router = APIRouter(prefix="/api/runs", tags=["runs"])


# ============ Run Browsing ============

@router.get("", response_model=List[dict])
async def list_runs(
    name: Optional[str] = None,
    limit: int = Query(default=100, le=500),
    offset: int = Query(default=0, ge=0)
):
    """List stored experiments, newest first."""
    return crud.list_artifacts(name=name, limit=limit, offset=offset)


@router.get("/{config_hash}", response_model=dict)
async def get_run(config_hash: str):
    """Summary of one stored experiment."""
    artifact = crud.get_artifact_summary(config_hash)
    if not artifact:
        raise HTTPException(status_code=404, detail="Run not found")
    return artifact


@router.get("/{config_hash}/history", response_model=List[dict])
async def get_run_history(config_hash: str, run: Optional[int] = Query(default=None, ge=0)):
    if not crud.get_artifact_summary(config_hash):
        raise HTTPException(status_code=404, detail="Run not found")
    return crud.get_history(config_hash, run=run)


# ============ Export / Import ============

@router.get("/{config_hash}/export")
async def export_run(config_hash: str):
    """Export a full artifact as JSON - browser download."""
    artifact = crud.get_artifact(config_hash)
    if not artifact:
        raise HTTPException(status_code=404, detail="Run not found")

    filename = f"run_{config_hash[:12]}.json"
    return Response(
        content=artifact_json(artifact),
        media_type="application/json",
        headers={"Content-Disposition": f"attachment; filename={filename}"}
    )


@router.post("/import")
async def import_run(file: UploadFile = File(...)):
    """Import an artifact previously written by export or emit_results."""
    if not file.filename.endswith('.json'):
        raise HTTPException(status_code=400, detail="File must be a JSON file")

    content = await file.read()
    try:
        text = content.decode('utf-8')
    except UnicodeDecodeError:
        raise HTTPException(status_code=400, detail="File must be UTF-8 encoded")

    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise HTTPException(status_code=400, detail=f"Invalid JSON: {str(e)}")

    try:
        artifact = RunArtifact.model_validate(data)
    except ValidationError as e:
        raise HTTPException(status_code=400, detail=f"Invalid artifact: {e.error_count()} errors")

    if artifact.config.config_hash() != artifact.config_hash:
        raise HTTPException(status_code=400, detail="Config hash does not match config")

    return {"imported": crud.save_artifact(artifact)}


@router.delete("/{config_hash}")
async def delete_run(config_hash: str):
    if not crud.delete_artifact(config_hash):
        raise HTTPException(status_code=404, detail="Run not found")
    return {"deleted": config_hash}
