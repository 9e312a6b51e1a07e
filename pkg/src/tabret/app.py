"""HTTP surface: one POST endpoint per workflow handler."""

from __future__ import annotations

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from . import service
from .errors import FingerprintMismatchError, SchemaError


def create_app() -> FastAPI:
    app = FastAPI(title="tabret", version="0.1.0")

    @app.exception_handler(SchemaError)
    async def _schema_error(request: Request, exc: SchemaError) -> JSONResponse:
        return JSONResponse(status_code=422, content={"detail": str(exc)})

    @app.exception_handler(ValueError)
    async def _value_error(request: Request, exc: ValueError) -> JSONResponse:
        return JSONResponse(status_code=422, content={"detail": str(exc)})

    @app.exception_handler(FingerprintMismatchError)
    async def _fingerprint_error(
        request: Request, exc: FingerprintMismatchError
    ) -> JSONResponse:
        return JSONResponse(status_code=409, content={"detail": str(exc)})

    @app.exception_handler(FileNotFoundError)
    async def _missing_file(request: Request, exc: FileNotFoundError) -> JSONResponse:
        return JSONResponse(status_code=404, content={"detail": str(exc)})

    @app.exception_handler(OSError)
    async def _os_error(request: Request, exc: OSError) -> JSONResponse:
        return JSONResponse(status_code=400, content={"detail": str(exc)})

    @app.get("/health")
    def health() -> dict:
        return {"status": "ok"}

    @app.post("/synth")
    def synth(request: service.SynthRequest) -> service.SynthResponse:
        return service.run_synth(request)

    @app.post("/ingest")
    def ingest(request: service.IngestRequest) -> service.IngestResponse:
        return service.run_ingest(request)

    @app.post("/index/build")
    def build_index(request: service.BuildIndexRequest) -> service.BuildIndexResponse:
        return service.run_build_index(request)

    @app.post("/retrieve")
    def retrieve(request: service.RetrieveRequest) -> service.RetrieveResponse:
        return service.run_retrieve(request)

    @app.post("/train")
    def train(request: service.TrainRequest) -> service.TrainResponse:
        return service.run_train(request)

    @app.post("/eval")
    def evaluate(request: service.EvalRequest) -> service.EvalResponse:
        return service.run_eval(request)

    @app.post("/bench")
    def bench(request: service.BenchRequest) -> service.BenchResponse:
        return service.run_bench(request)

    @app.post("/explain")
    def explain(request: service.ExplainRequest) -> service.ExplainResponse:
        return service.run_explain(request)

    return app
