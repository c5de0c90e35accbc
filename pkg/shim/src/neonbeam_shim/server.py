"""The scoring service.

POST /score  binary PNG body -> {"probs": [...], "labels": [...]}
             400 {"error": ...} on an undecodable body, 500 on model failure
GET  /health -> {"model": ..., "num_classes": ...}, 503 until the model is
             loaded

One model per process; run several processes on distinct ports to serve
several models. Responses are deterministic for identical requests.
"""

from __future__ import annotations

import argparse
from contextlib import asynccontextmanager

from fastapi import FastAPI, Request, Response
from fastapi.responses import JSONResponse

from .models import ImageDecodeError, ServedModel, decode_png, load_model

PROB_SUM_TOL = 1e-5


def create_app(model_spec: str = "stub3") -> FastAPI:
    @asynccontextmanager
    async def lifespan(app: FastAPI):
        app.state.model = load_model(model_spec)
        yield
        app.state.model = None

    app = FastAPI(lifespan=lifespan)
    app.state.model = None

    @app.get("/health")
    def health(request: Request) -> Response:
        model: ServedModel | None = request.app.state.model
        if model is None:
            return JSONResponse({"error": "model not loaded"}, status_code=503)
        return JSONResponse({"model": model.name, "num_classes": model.num_classes})

    @app.post("/score")
    async def score(request: Request) -> Response:
        model: ServedModel | None = request.app.state.model
        if model is None:
            return JSONResponse({"error": "model not loaded"}, status_code=503)
        body = await request.body()
        try:
            pixels = decode_png(body)
        except ImageDecodeError as exc:
            return JSONResponse({"error": str(exc)}, status_code=400)
        try:
            probs = model.score(pixels)
        except Exception as exc:
            return JSONResponse({"error": f"model failure: {exc}"}, status_code=500)
        total = float(probs.sum())
        if probs.min() < 0.0 or abs(total - 1.0) > PROB_SUM_TOL:
            return JSONResponse(
                {"error": f"model produced an invalid distribution (sum {total})"},
                status_code=500,
            )
        return JSONResponse({"probs": probs.tolist(), "labels": list(model.labels)})

    return app


def main(argv: list[str] | None = None) -> None:
    import uvicorn

    parser = argparse.ArgumentParser(
        prog="neonbeam-shim",
        description="Serve a classifier behind POST /score and GET /health.",
    )
    parser.add_argument("--model", default="stub3",
                        help="stub3 or torchvision:<arch>, e.g. torchvision:resnet50")
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--port", type=int, default=8400)
    args = parser.parse_args(argv)
    uvicorn.run(create_app(args.model), host=args.host, port=args.port)


if __name__ == "__main__":
    main()
