"""HTTP facade over the Turing-test store.

Thin by design: request parsing and status-code mapping live here, all
rules live in turing.py. Error statuses: unknown ids map to 404,
duplicate verdicts to 409, everything else invalid to 400.
"""

from __future__ import annotations

from pathlib import Path
from typing import Optional

from fastapi import FastAPI, HTTPException, Response
from pydantic import BaseModel

from .records import Stage
from .turing import (
    RegionAnnotation,
    TuringError,
    TuringStore,
    UnknownIdError,
    Verdict,
    VerdictConflict,
    create_session,
    export_annotations,
    next_image,
    report_for_pool,
    submit_verdict,
)


class SessionRequest(BaseModel):
    rater_id: str
    pool_id: str
    seed: Optional[int] = None


class RegionBody(BaseModel):
    x: float
    y: float
    w: float
    h: float
    note: Optional[str] = None


class VerdictBody(BaseModel):
    image_id: str
    judgment: str
    regions: list[RegionBody] = []
    comment: Optional[str] = None


def _http_error(exc: TuringError) -> HTTPException:
    if isinstance(exc, UnknownIdError):
        return HTTPException(status_code=404, detail=str(exc))
    if isinstance(exc, VerdictConflict):
        return HTTPException(status_code=409, detail=str(exc))
    return HTTPException(status_code=400, detail=str(exc))


def create_app(store_path: str | Path) -> FastAPI:
    store = TuringStore(store_path)
    app = FastAPI(title="embryo image Turing test")

    @app.post("/sessions", status_code=201)
    def open_session(body: SessionRequest) -> dict:
        try:
            session = create_session(store, body.pool_id, body.rater_id, seed=body.seed)
        except TuringError as exc:
            raise _http_error(exc)
        return {
            "session_id": session.session_id,
            "pool_id": session.pool_id,
            "rater_id": session.rater_id,
            "total": session.total,
        }

    @app.get("/sessions/{session_id}/next")
    def get_next(session_id: str) -> dict:
        try:
            payload = next_image(store, session_id)
        except TuringError as exc:
            raise _http_error(exc)
        if "image_id" in payload:
            payload["url"] = f"/pools/{payload['pool_id']}/images/{payload['image_id']}.png"
        return payload

    @app.post("/sessions/{session_id}/verdicts", status_code=201)
    def post_verdict(session_id: str, body: VerdictBody) -> dict:
        verdict = Verdict(
            session_id=session_id,
            image_id=body.image_id,
            judgment=body.judgment,
            regions=tuple(
                RegionAnnotation(x=r.x, y=r.y, w=r.w, h=r.h, note=r.note)
                for r in body.regions
            ),
            comment=body.comment,
        )
        try:
            session = submit_verdict(store, verdict)
        except TuringError as exc:
            raise _http_error(exc)
        return {
            "stored": True,
            "cursor": session.cursor,
            "total": session.total,
            "done": session.status == "complete",
        }

    @app.get("/pools/{pool_id}/images/{filename}")
    def get_image(pool_id: str, filename: str) -> Response:
        image_id = filename.removesuffix(".png")
        try:
            pool = store.load_pool(pool_id)
            path = pool.image_path(image_id)
        except TuringError as exc:
            raise _http_error(exc)
        if not path.is_file():
            raise HTTPException(status_code=404, detail=f"image file missing for {image_id!r}")
        return Response(content=path.read_bytes(), media_type="image/png")

    @app.get("/reports/turing")
    def get_report(pool: str) -> dict:
        try:
            return report_for_pool(store, pool).to_json()
        except TuringError as exc:
            raise _http_error(exc)

    @app.get("/reports/annotations")
    def get_annotations(
        pool: Optional[str] = None,
        source: Optional[str] = None,
        rater: Optional[str] = None,
        stage: Optional[str] = None,
    ) -> dict:
        try:
            rows = export_annotations(
                store,
                pool_id=pool,
                source=source,
                rater_id=rater,
                stage=Stage(stage) if stage else None,
            )
        except (TuringError, ValueError) as exc:
            raise HTTPException(status_code=400, detail=str(exc))
        return {"count": len(rows), "annotations": [row.to_json() for row in rows]}

    return app


def serve(store_path: str | Path, host: str = "127.0.0.1", port: int = 8000) -> None:
    """Run the service under uvicorn. Blocks until interrupted."""
    import uvicorn

    uvicorn.run(create_app(store_path), host=host, port=port)
