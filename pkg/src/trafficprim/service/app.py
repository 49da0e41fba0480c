"""HTTP facade over the pipeline: one endpoint per pipeline stage.

The service and its clients share a filesystem; requests name catalog
directories and input files by path. Toolkit errors map to a JSON body
``{"error": <class>, "message": ...}`` whose class tag clients translate
to exit codes.
"""
from __future__ import annotations

from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse

from .. import pipeline
from ..errors import (
    CatalogLockedError,
    IntegrityError,
    NotFoundError,
    NumericError,
    ToolkitError,
)
from . import schemas

_STATUS_BY_CLASS = {
    NotFoundError.wire_class: 404,
    IntegrityError.wire_class: 409,
    CatalogLockedError.wire_class: 409,
    NumericError.wire_class: 500,
}


def create_app() -> FastAPI:
    app = FastAPI(title="trafficprim", version="0.1.0")

    @app.exception_handler(ToolkitError)
    async def toolkit_error(_: Request, exc: ToolkitError) -> JSONResponse:
        status = _STATUS_BY_CLASS.get(exc.wire_class, 400)
        return JSONResponse(
            status_code=status,
            content={"error": exc.wire_class, "message": str(exc)},
        )

    @app.exception_handler(RequestValidationError)
    async def validation_error(_: Request, exc: RequestValidationError) -> JSONResponse:
        return JSONResponse(
            status_code=422,
            content={"error": "usage", "message": str(exc.errors())},
        )

    @app.get("/health")
    def health() -> dict:
        return {"status": "ok"}

    @app.post("/ingest", response_model=schemas.IngestResponse)
    def ingest(req: schemas.IngestRequest):
        return pipeline.ingest_command(
            manifest_path=req.manifest_path,
            catalog_dir=req.catalog_dir,
            behavior=req.behavior,
            dataset=req.dataset,
        )

    @app.post("/segment", response_model=schemas.SegmentResponse)
    def segment(req: schemas.SegmentRequest):
        return pipeline.segment_command(
            catalog_dir=req.catalog_dir,
            bag_id=req.bag_id,
            behavior=req.behavior,
            config_path=req.config_path,
            seed=req.seed,
        )

    @app.post("/unify", response_model=schemas.UnifyResponse)
    def unify(req: schemas.UnifyRequest):
        return pipeline.unify_command(
            catalog_dir=req.catalog_dir,
            behavior=req.behavior,
            config_path=req.config_path,
        )

    @app.post("/query", response_model=schemas.QueryResponse)
    def query(req: schemas.QueryRequest):
        return pipeline.query_command(
            catalog_dir=req.catalog_dir,
            scenario=req.scenario,
            channels=req.channels,
            out_dir=req.out_dir,
        )

    @app.post("/synth", response_model=schemas.SynthResponse)
    def synth(req: schemas.SynthRequest):
        return pipeline.synth_command(
            states=req.states,
            dims=req.dims,
            frames=req.frames,
            seed=req.seed,
            out_dir=req.out_dir,
        )

    @app.post("/behaviors", response_model=schemas.BehaviorResponse)
    def behaviors(req: schemas.BehaviorRequest):
        return pipeline.behavior_command(
            catalog_dir=req.catalog_dir,
            name=req.name,
            channels=req.channels,
            target_rate_hz=req.target_rate_hz,
        )

    return app
