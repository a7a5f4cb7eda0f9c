"""HTTP embedding service.

POST /embed  {"texts": [...], "language": "xx"}  ->  {"vectors": [[...]],
"dim": D, "model_id": "..."}; GET /health reports readiness. Vectors are
unit-norm and order-preserving; identical texts in one process give
bit-identical vectors.
"""

from __future__ import annotations

import argparse
import contextlib
import logging
import time

import numpy as np
from fastapi import FastAPI
from fastapi.responses import JSONResponse
from pydantic import BaseModel, Field

from .models import load_model

logger = logging.getLogger(__name__)

DEFAULT_BATCH_CEILING = 256


class EmbedRequest(BaseModel):
    texts: list[str] = Field(min_length=1)
    language: str | None = None


class EmbedResponse(BaseModel):
    vectors: list[list[float]]
    dim: int
    model_id: str


def create_app(model_spec: str = "hash",
               batch_ceiling: int = DEFAULT_BATCH_CEILING) -> FastAPI:
    state = {"model": None, "started": time.monotonic()}

    @contextlib.asynccontextmanager
    async def lifespan(_app):
        state["model"] = load_model(model_spec)
        logger.info("model %s ready (dim %d)", state["model"].model_id,
                    state["model"].dim)
        yield

    app = FastAPI(title="embed-sidecar", lifespan=lifespan)

    @app.get("/health")
    def health():
        model = state["model"]
        if model is None:
            return {"status": "loading", "model_id": model_spec, "dim": 0,
                    "uptime_seconds": round(time.monotonic() - state["started"], 3)}
        return {"status": "ready", "model_id": model.model_id, "dim": model.dim,
                "uptime_seconds": round(time.monotonic() - state["started"], 3)}

    @app.post("/embed")
    def embed(request: EmbedRequest):
        model = state["model"]
        if model is None:
            return JSONResponse(status_code=503,
                                content={"error": "model not loaded yet"})
        if len(request.texts) > batch_ceiling:
            return JSONResponse(
                status_code=413,
                content={"error": f"batch of {len(request.texts)} exceeds the "
                                  f"ceiling of {batch_ceiling}"})
        for i, text in enumerate(request.texts):
            if not text.strip():
                return JSONResponse(
                    status_code=422,
                    content={"error": "empty text in batch", "index": i})
        vectors = model.embed(request.texts, language=request.language)
        norms = np.linalg.norm(vectors, axis=1)
        if not np.allclose(norms, 1.0, atol=1e-5):
            return JSONResponse(status_code=500,
                                content={"error": "model returned non-unit vectors"})
        return EmbedResponse(vectors=[v.tolist() for v in vectors],
                             dim=model.dim, model_id=model.model_id)

    return app


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="embed-sidecar",
                                     description="sentence-embedding microservice")
    parser.add_argument("--port", type=int, default=8787)
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--model", default="hash",
                        help="'hash', 'hash:<dim>', or a sentence-transformers name")
    parser.add_argument("--batch-ceiling", type=int, default=DEFAULT_BATCH_CEILING)
    args = parser.parse_args(argv)

    import uvicorn

    uvicorn.run(create_app(args.model, args.batch_ceiling),
                host=args.host, port=args.port, log_level="info")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
