"""FastAPI app exposing the pipeline handlers.

Error mapping: bad input/config -> 400 (client error), numeric failures at
runtime -> 500. Both carry {"error": <type>, "detail": <message>}.
"""

from __future__ import annotations

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from .. import __version__
from ..errors import ConfigError, InputError, ZslkitError
from . import handlers, models


def create_app() -> FastAPI:
    app = FastAPI(title="zslkit", version=__version__)

    @app.exception_handler(ZslkitError)
    async def _zslkit_error(request: Request, exc: ZslkitError):
        status = 400 if isinstance(exc, (InputError, ConfigError)) else 500
        return JSONResponse(
            status_code=status,
            content={"error": type(exc).__name__, "detail": str(exc)},
        )

    @app.get("/health", response_model=models.HealthResponse)
    def health():
        return models.HealthResponse(status="ok", version=__version__)

    @app.post("/graph/build", response_model=models.BuildGraphResponse)
    def build_graph(req: models.BuildGraphRequest):
        return handlers.run_build_graph(req)

    @app.post("/train", response_model=models.TrainResponse)
    def train(req: models.TrainRequest):
        return handlers.run_train(req)

    @app.post("/eval", response_model=models.EvalResponse)
    def eval_(req: models.EvalRequest):
        return handlers.run_eval(req)

    @app.post("/gradcheck", response_model=models.GradCheckResponse)
    def gradcheck(req: models.GradCheckRequest):
        return handlers.run_gradcheck(req)

    @app.post("/synth", response_model=models.SynthResponse)
    def synth(req: models.SynthRequest):
        return handlers.run_synth(req)

    return app


app = create_app()
