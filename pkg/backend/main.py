"""
FastAPI application for frugal-bench
"""
from fastapi import FastAPI, HTTPException, Query, BackgroundTasks
from fastapi.middleware.cors import CORSMiddleware
from typing import List, Optional, Dict, Any
import logging
from datetime import datetime

from database import DatabaseManager, init_database
from services.bench import config_digest, parse_config, run_experiment
from services.errors import ConfigError
from config import settings, BASE_DIR

logger = logging.getLogger(__name__)

# Initialize FastAPI app
app = FastAPI(
    title="frugal-bench API",
    description="Generalizability benchmarks for causal models under domain shift",
    version="1.0.0"
)

# Configure CORS
app.add_middleware(
    CORSMiddleware,
    allow_origins=["http://localhost:3000", "http://localhost:5173"],
    allow_credentials=True,
    allow_methods=["*"],
    allow_headers=["*"],
)


@app.on_event("startup")
def startup():
    init_database()


def _validate(document: Dict[str, Any]):
    try:
        return parse_config(document, BASE_DIR)
    except ConfigError as e:
        raise HTTPException(status_code=422, detail={"message": str(e), "problems": e.problems})


@app.get("/")
async def root():
    """Root endpoint with API information"""
    return {
        "message": "frugal-bench API",
        "version": "1.0.0",
        "status": "running",
        "endpoints": {
            "validate": "/configs/validate",
            "runs": "/runs",
            "docs": "/docs"
        }
    }


@app.get("/health")
async def health_check():
    """Health check endpoint"""
    return {
        "status": "healthy",
        "timestamp": datetime.now().isoformat(),
        "database": "connected",
        "workers": settings.WORKERS
    }


@app.post("/configs/validate", response_model=Dict[str, Any])
async def validate_config(document: Dict[str, Any]):
    """Validate an experiment config; relative paths resolve against the project root"""
    cfg = _validate(document)
    return {"valid": True, "config_digest": config_digest(cfg), "config": cfg.model_dump(mode="json")}


def execute_run(run_id: int, document: Dict[str, Any]):
    """Background task: run an experiment and store its rows"""
    with DatabaseManager() as db_manager:
        db_manager.mark_running(run_id)
        try:
            cfg = parse_config(document, BASE_DIR)
            table = run_experiment(cfg)
            db_manager.add_results(run_id, table)
            db_manager.mark_finished(
                run_id,
                wall_clock_seconds=table.metadata.get("wall_clock_seconds"),
                output_dir=table.metadata.get("output_dir")
            )
        except Exception as e:
            logger.error(f"Run {run_id} failed: {e}")
            db_manager.mark_failed(run_id, str(e))


@app.post("/runs", response_model=Dict[str, Any])
async def create_run(document: Dict[str, Any], background_tasks: BackgroundTasks):
    """Validate a config and launch it in the background"""
    cfg = _validate(document)
    with DatabaseManager() as db_manager:
        run = db_manager.create_run(cfg.name, cfg.mode, config_digest(cfg), cfg.model_dump(mode="json"))
        run_id = run.id

    background_tasks.add_task(execute_run, run_id, document)
    return {"run_id": run_id, "status": "pending"}


@app.get("/runs", response_model=List[Dict[str, Any]])
async def list_runs(status: Optional[str] = Query(None), limit: int = Query(50, le=200)):
    """List runs, newest first"""
    with DatabaseManager() as db_manager:
        return [run.to_dict() for run in db_manager.list_runs(status=status, limit=limit)]


@app.get("/runs/{run_id}", response_model=Dict[str, Any])
async def get_run(run_id: int):
    """Get a specific run"""
    with DatabaseManager() as db_manager:
        run = db_manager.get_run(run_id)
        if not run:
            raise HTTPException(status_code=404, detail="Run not found")
        return run.to_dict()


@app.get("/runs/{run_id}/results", response_model=List[Dict[str, Any]])
async def get_run_results(run_id: int, model: Optional[str] = Query(None)):
    """Result rows of a run"""
    with DatabaseManager() as db_manager:
        if not db_manager.get_run(run_id):
            raise HTTPException(status_code=404, detail="Run not found")
        return [record.to_dict() for record in db_manager.get_results(run_id, model=model)]


@app.get("/runs/{run_id}/summary", response_model=Dict[str, Any])
async def get_run_summary(run_id: int):
    """Percentage of p > 0.05 per model and test kind"""
    with DatabaseManager() as db_manager:
        run = db_manager.get_run(run_id)
        if not run:
            raise HTTPException(status_code=404, detail="Run not found")
        return {
            "run_id": run_id,
            "status": run.status,
            "summary": db_manager.pass_rate_summary(run_id)
        }


if __name__ == "__main__":
    import uvicorn
    uvicorn.run("main:app", host=settings.API_HOST, port=settings.API_PORT, reload=settings.DEBUG)
