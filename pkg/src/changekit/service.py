"""HTTP session service: load a bitemporal pair once, re-select and query live.

Candidates (bidirectional, cosine scoring) are computed eagerly at session
creation so the threshold/k sliders re-rank a cached list instead of
re-pooling embeddings. Sessions are in-memory behind an LRU cap; all reads
are lock-free over immutable state.
"""

from __future__ import annotations

import io
import threading
import uuid
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from fastapi import FastAPI, HTTPException, Query, Request, Response
from fastapi.middleware.cors import CORSMiddleware
from PIL import Image

from .errors import EngineError, FormatError, UnresolvablePointError, ValidationError
from .images import render_overlay
from .interchange import ProposalRecord, RleMask, Session, SessionManifest, Time, load_session
from .matching import (
    Candidate,
    ChangeProposal,
    MatchConfig,
    PointQuery,
    PointResolver,
    compute_candidates,
    point_query_filter,
    select_candidates,
)
from .probe import fit_pca_auto, pca_rgb

DEFAULT_MAX_SESSIONS = 8


def bridge_point_resolver(bridge_url: str) -> PointResolver:
    """Resolve query points by asking a live mask-decoder bridge for the point's mask.

    The bridge (an exporter-side service) answers POST {x, y, time} with an
    RLE mask; the engine wraps it as a synthetic proposal. Falls back to the
    built-in rule is NOT performed: a configured bridge is authoritative.
    """
    import httpx  # optional dependency, needed only when a bridge is configured

    def resolver(point: tuple[float, float], time: Time, proposals) -> ProposalRecord:
        resp = httpx.post(
            bridge_url.rstrip("/") + "/decode",
            json={"x": point[0], "y": point[1], "time": time.value},
            timeout=30.0,
        )
        if resp.status_code != 200:
            raise UnresolvablePointError(f"bridge rejected point {point}: {resp.text}")
        obj = resp.json()
        mask = RleMask(size=tuple(obj["size"]), counts=tuple(obj["counts"]))
        return ProposalRecord(
            id=int(obj.get("id", -1)),
            mask=mask,
            predicted_iou=float(obj.get("predicted_iou", 1.0)),
            stability_score=float(obj.get("stability_score", 1.0)),
            source_time=time,
        )

    return resolver


@dataclass
class SessionState:
    """One loaded pair plus its immutable candidate cache."""

    session_id: str
    session: Session
    candidates: tuple[Candidate, ...]
    last_config: MatchConfig = field(default_factory=MatchConfig)


class SessionRegistry:
    """LRU-capped in-memory session store; creation/eviction serialized."""

    def __init__(self, max_sessions: int = DEFAULT_MAX_SESSIONS):
        self._lock = threading.Lock()
        self._store: OrderedDict[str, SessionState] = OrderedDict()
        self.max_sessions = max_sessions

    def add(self, state: SessionState) -> None:
        with self._lock:
            self._store[state.session_id] = state
            while len(self._store) > self.max_sessions:
                self._store.popitem(last=False)

    def get(self, session_id: str) -> SessionState:
        with self._lock:
            state = self._store.get(session_id)
            if state is None:
                raise KeyError(session_id)
            self._store.move_to_end(session_id)
            return state

    def delete(self, session_id: str) -> bool:
        with self._lock:
            return self._store.pop(session_id, None) is not None

    def __len__(self) -> int:
        with self._lock:
            return len(self._store)


def _proposal_payload(changes: Sequence[ChangeProposal]) -> list[dict]:
    return [
        {
            "id": c.proposal_id,
            "source_time": c.source_time.value,
            "size": list(c.mask.size),
            "counts": list(c.mask.counts),
            "score": c.score,
            "angle_deg": c.angle_deg,
        }
        for c in changes
    ]


def _select_by_params(
    candidates: Sequence[Candidate],
    mode: str,
    angle: Optional[float],
    k: Optional[int],
    dedupe_iou: Optional[float],
) -> tuple[list[Candidate], MatchConfig]:
    """Selection for the HTTP surface.

    The slider covers the closed range: angle=0 returns every candidate and
    angle=180 returns none (the engine config itself pins the open interval).
    """
    mode_map = {"threshold": "angle_threshold", "topk": "topk", "otsu": "auto_otsu"}
    if mode not in mode_map:
        raise ValidationError(f"unknown mode {mode!r} (expected threshold|topk|otsu)")
    if mode == "threshold":
        a = angle if angle is not None else 155.0
        if not (0.0 <= a <= 180.0):
            raise ValidationError(f"angle must lie in [0, 180], got {a}")
        if a >= 180.0:
            return [], MatchConfig()
        if a <= 0.0:
            cfg = MatchConfig(mode="topk", k=max(len(candidates), 1), dedupe_iou=dedupe_iou)
            return select_candidates(candidates, cfg), cfg
        cfg = MatchConfig(mode="angle_threshold", angle_threshold_deg=a, dedupe_iou=dedupe_iou)
        return select_candidates(candidates, cfg.validated()), cfg
    cfg = MatchConfig(mode=mode_map[mode], k=k, dedupe_iou=dedupe_iou).validated()
    return select_candidates(candidates, cfg), cfg


def _png_response(array: np.ndarray) -> Response:
    img = Image.fromarray(array)
    buf = io.BytesIO()
    img.save(buf, format="PNG")
    return Response(content=buf.getvalue(), media_type="image/png")


def create_app(
    session_dir: Optional[Path] = None,
    max_sessions: int = DEFAULT_MAX_SESSIONS,
    point_bridge_url: Optional[str] = None,
) -> FastAPI:
    """Build the service app. session_dir anchors relative manifest paths.

    point_bridge_url plugs a live mask-decoder bridge into point resolution.
    """
    app = FastAPI(title="changekit service")
    app.add_middleware(
        CORSMiddleware,
        allow_origins=["*"],
        allow_methods=["*"],
        allow_headers=["*"],
    )
    registry = SessionRegistry(max_sessions=max_sessions)
    app.state.registry = registry
    base_dir = Path(session_dir) if session_dir is not None else Path.cwd()
    resolver: Optional[PointResolver] = (
        bridge_point_resolver(point_bridge_url) if point_bridge_url else None
    )

    def get_state(session_id: str) -> SessionState:
        try:
            return registry.get(session_id)
        except KeyError:
            raise HTTPException(status_code=404, detail=f"unknown session {session_id}")

    @app.post("/sessions", status_code=201)
    async def create_session(request: Request):
        try:
            body = await request.json()
        except Exception:
            raise HTTPException(status_code=400, detail="request body must be a JSON object")
        if not isinstance(body, dict):
            raise HTTPException(status_code=400, detail="request body must be a JSON object")
        try:
            if "manifest_path" in body:
                path = Path(body["manifest_path"])
                if not path.is_absolute():
                    path = base_dir / path
                manifest = SessionManifest.from_file(path)
            elif "manifest" in body:
                manifest = SessionManifest.from_dict(body["manifest"], base_dir=base_dir)
            else:
                raise HTTPException(status_code=400, detail="provide manifest_path or an inline manifest")
        except HTTPException:
            raise
        except (FormatError, FileNotFoundError, TypeError) as exc:
            raise HTTPException(status_code=400, detail=f"manifest unreadable: {exc}")
        try:
            session = load_session(manifest)
            candidates = tuple(compute_candidates(session))
        except FileNotFoundError as exc:
            raise HTTPException(status_code=400, detail=f"missing artifact: {exc}")
        except FormatError as exc:
            raise HTTPException(status_code=400, detail=f"unparseable artifact: {exc}")
        except (ValidationError, EngineError) as exc:
            raise HTTPException(status_code=422, detail=str(exc))
        state = SessionState(
            session_id=uuid.uuid4().hex[:12],
            session=session,
            candidates=candidates,
        )
        registry.add(state)
        return {
            "session_id": state.session_id,
            "image_size": list(session.image_size),
            "n_t": len(session.proposals_t0),
            "n_t1": len(session.proposals_t1),
        }

    @app.delete("/sessions/{session_id}")
    def delete_session(session_id: str):
        if not registry.delete(session_id):
            raise HTTPException(status_code=404, detail=f"unknown session {session_id}")
        return {"deleted": session_id}

    @app.get("/sessions/{session_id}/changes")
    def get_changes(
        session_id: str,
        mode: str = Query(default="threshold"),
        angle: Optional[float] = Query(default=None),
        k: Optional[int] = Query(default=None),
        dedupe_iou: Optional[float] = Query(default=None),
    ):
        state = get_state(session_id)
        try:
            kept, config = _select_by_params(state.candidates, mode, angle, k, dedupe_iou)
        except ValidationError as exc:
            raise HTTPException(status_code=422, detail=str(exc))
        state.last_config = config
        return _proposal_payload([c.proposal for c in kept])

    @app.post("/sessions/{session_id}/query")
    async def query_session(session_id: str, request: Request):
        state = get_state(session_id)
        try:
            body = await request.json()
        except Exception:
            raise HTTPException(status_code=400, detail="request body must be a JSON object")
        points_raw = body.get("points")
        if not points_raw:
            raise HTTPException(status_code=400, detail="points must be a nonempty list")
        try:
            points = tuple(
                (float(p["x"]), float(p["y"]), Time(p["t"])) for p in points_raw
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise HTTPException(status_code=400, detail=f"bad point entry: {exc}")
        semantic_angle = float(body.get("semantic_angle", 60.0))
        mode = body.get("mode")
        try:
            if mode is not None:
                selected, _ = _select_by_params(
                    state.candidates, mode, body.get("angle"), body.get("k"), body.get("dedupe_iou")
                )
            else:
                selected = select_candidates(state.candidates, state.last_config)
            kept = [c.proposal for c in selected]
            query = PointQuery(points=points, semantic_angle_deg=semantic_angle)
            filtered = point_query_filter(kept, query, state.session, resolver=resolver)
        except UnresolvablePointError as exc:
            raise HTTPException(status_code=422, detail=str(exc))
        except ValidationError as exc:
            raise HTTPException(status_code=422, detail=str(exc))
        return _proposal_payload(filtered)

    @app.get("/sessions/{session_id}/overlay")
    def get_overlay(
        session_id: str,
        time: str = Query(default="T0"),
        ids: str = Query(default=""),
    ):
        state = get_state(session_id)
        try:
            t = Time(time)
        except ValueError:
            raise HTTPException(status_code=422, detail=f"time must be T0 or T1, got {time!r}")
        image_path = state.session.image_path(t)
        if image_path is None:
            raise HTTPException(status_code=422, detail=f"session has no {t.value} image")
        rgb = np.asarray(Image.open(image_path).convert("RGB"))
        masks: list[RleMask] = []
        if ids.strip():
            by_id = {p.id: p for p in state.session.proposals(t)}
            for token in ids.split(","):
                try:
                    pid = int(token)
                except ValueError:
                    raise HTTPException(status_code=422, detail=f"bad id {token!r}")
                if pid not in by_id:
                    raise HTTPException(status_code=404, detail=f"unknown proposal id {pid} at {t.value}")
                masks.append(by_id[pid].mask)
            rgb = render_overlay(rgb, masks)
        return _png_response(rgb)

    @app.get("/sessions/{session_id}/latent")
    def get_latent(session_id: str, time: str = Query(default="T0")):
        state = get_state(session_id)
        try:
            t = Time(time)
        except ValueError:
            raise HTTPException(status_code=422, detail=f"time must be T0 or T1, got {time!r}")
        grid = state.session.grid(t)
        try:
            basis = fit_pca_auto(grid, max_components=3)
        except ValidationError as exc:
            raise HTTPException(status_code=422, detail=str(exc))
        return _png_response(pca_rgb(grid, basis))

    return app


def mount_ui(app: FastAPI, ui_dir: Path) -> None:
    """Serve a built single-page UI from the service (static assets at /)."""
    from fastapi.staticfiles import StaticFiles

    app.mount("/", StaticFiles(directory=ui_dir, html=True), name="ui")
