"""FastAPI app exposing /score and /health for one loaded checkpoint."""
from __future__ import annotations

from fastapi import FastAPI, HTTPException
from pydantic import BaseModel, Field

from .model import BadRequestError, MaskScorer


class ScoreRequest(BaseModel):
    case_id: str
    sentence: str
    mask_token: str = "[MASK]"
    candidates: list[str] = Field(min_length=1)


class ScoreResponse(BaseModel):
    case_id: str
    scores: dict[str, float]
    warnings: list[str] = []


class HealthResponse(BaseModel):
    model_name: str
    mask_token: str
    ready: bool = True


def create_app(scorer: MaskScorer) -> FastAPI:
    app = FastAPI(title="fillmask-scorer")

    @app.get("/health", response_model=HealthResponse)
    def health() -> HealthResponse:
        return HealthResponse(model_name=scorer.model_name, mask_token=scorer.mask_token)

    @app.post("/score", response_model=ScoreResponse)
    def score(request: ScoreRequest) -> ScoreResponse:
        try:
            scores, warnings = scorer.score(
                request.sentence, request.candidates, request.mask_token
            )
        except BadRequestError as exc:
            raise HTTPException(status_code=400, detail=str(exc)) from exc
        return ScoreResponse(case_id=request.case_id, scores=scores, warnings=warnings)

    return app
