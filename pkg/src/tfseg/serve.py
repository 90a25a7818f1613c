"""HTTP/WebSocket session service for the interactive annotation workflow.

Each session owns a volume + feature volume reference, an ordered set of
classes with annotations, and keeps the per-class low-resolution
similarity maps fresh: any annotation mutation recomputes the class's map
before the response is sent. Bilateral refinement runs on a background
worker (one job at a time per session) and is invalidated by any input
change. Clients get change notifications with content digests over the
events WebSocket and re-fetch images.
"""

from __future__ import annotations

import asyncio
import hashlib
import itertools
import json
import queue
import threading
import time
from dataclasses import replace
from pathlib import Path

import numpy as np
from fastapi import FastAPI, HTTPException, Response, WebSocket
from fastapi.websockets import WebSocketDisconnect

from . import bls3d, isoray, simquery, volgrid
from .errors import EmptySelection, OutOfBounds, TfsegError

PROTOCOL_VERSION = 1


class VolumeStore:
    """Read-mostly registry of volumes and their feature volumes."""

    def __init__(self):
        self._entries: dict[str, tuple[volgrid.Volume, volgrid.FeatureVolume]] = {}

    def register(self, volume_id: str, volume: volgrid.Volume,
                 fvol: volgrid.FeatureVolume) -> None:
        self._entries[volume_id] = (volume, fvol)

    def get(self, volume_id: str):
        if volume_id not in self._entries:
            raise KeyError(volume_id)
        return self._entries[volume_id]

    def ids(self):
        return sorted(self._entries)


def _digest(arr: np.ndarray) -> str:
    return hashlib.sha1(np.ascontiguousarray(arr).tobytes()).hexdigest()[:12]


class Session:
    """Single-writer session state; all mutations go through the lock."""

    def __init__(self, session_id: str, volume_id: str,
                 volume: volgrid.Volume, fvol: volgrid.FeatureVolume):
        self.id = session_id
        self.volume_id = volume_id
        self.volume = volume
        self.fvol = fvol
        self.classes: dict[int, simquery.ClassDef] = {}
        self.annotations: dict[int, simquery.AnnotationSet] = {}
        self.low: dict[int, volgrid.SimilarityVolume] = {}
        self.refined: dict[int, volgrid.SimilarityVolume] = {}
        self.solver_cfgs: dict[int, bls3d.RefineConfig] = {}
        self.camera = isoray.Camera(
            eye=(volume.dims[0] / 2, volume.dims[1] / 2,
                 -2.0 * max(volume.dims)),
            look_at=tuple(d / 2 for d in volume.dims),
        )
        self.created = time.time()
        self.modified = self.created
        self.lock = threading.RLock()
        self.events: list[dict] = []
        self.recompute_count = 0
        self._job_ids = itertools.count(1)
        self._refine_queue: queue.Queue = queue.Queue()
        self._worker = threading.Thread(target=self._refine_worker,
                                        daemon=True)
        self._worker.start()

    # -- events ------------------------------------------------------------

    def _emit(self, event: dict) -> None:
        event = {"v": PROTOCOL_VERSION, **event}
        self.events.append(event)

    # -- similarity bookkeeping ---------------------------------------------

    def _recompute_low(self, class_id: int) -> None:
        cdef = self.classes[class_id]
        aset = self.annotations.get(class_id)
        if aset is None or len(aset) == 0:
            self.low.pop(class_id, None)
            return
        sim = simquery.scaled_similarity(aset, self.fvol, cdef.proximity)
        self.low[class_id] = sim
        self.recompute_count += 1
        self._emit({
            "type": "similarity_updated",
            "class_id": class_id,
            "digest": _digest(sim.data),
        })

    def _invalidate_refined(self, class_id: int) -> None:
        self.refined.pop(class_id, None)

    def touch(self):
        self.modified = time.time()

    # -- refine worker -------------------------------------------------------

    def enqueue_refine(self, class_id: int) -> int:
        job_id = next(self._job_ids)
        self._refine_queue.put((job_id, class_id))
        return job_id

    def _refine_worker(self):
        while True:
            job_id, class_id = self._refine_queue.get()
            if job_id is None:
                return
            with self.lock:
                sim = self.low.get(class_id)
                cfg = self.solver_cfgs.get(class_id, bls3d.RefineConfig())
                volume = self.volume
            if sim is None:
                self._emit({"type": "refine_failed", "class_id": class_id,
                            "job_id": job_id,
                            "error": "no similarity map to refine"})
                continue
            try:
                refined = bls3d.refine(sim, volume, cfg)
            except TfsegError as e:
                self._emit({"type": "refine_failed", "class_id": class_id,
                            "job_id": job_id, "error": str(e)})
                continue
            with self.lock:
                # annotations may have changed while solving
                if self.low.get(class_id) is sim:
                    self.refined[class_id] = refined
                    self._emit({
                        "type": "refined_ready",
                        "class_id": class_id,
                        "job_id": job_id,
                        "digest": _digest(refined.data),
                    })

    # -- serialization --------------------------------------------------------

    def snapshot(self) -> dict:
        with self.lock:
            return {
                "v": PROTOCOL_VERSION,
                "id": self.id,
                "volume_id": self.volume_id,
                "dims": list(self.volume.dims),
                "feature_dims": list(self.fvol.dims),
                "classes": [class_to_dict(c, self.solver_cfgs.get(c.id))
                            for c in self.classes.values()],
                "annotations": {
                    str(cid): [list(p) for p in aset.points]
                    for cid, aset in self.annotations.items()
                },
                "similarities": {
                    str(cid): {
                        "low_digest": _digest(sv.data),
                        "refined": cid in self.refined,
                    }
                    for cid, sv in self.low.items()
                },
                "camera": self.camera.to_dict(),
                "created": self.created,
                "modified": self.modified,
            }


def class_to_dict(c: simquery.ClassDef,
                  cfg: bls3d.RefineConfig | None = None) -> dict:
    return {
        "v": PROTOCOL_VERSION,
        "id": c.id,
        "name": c.name,
        "color": list(c.color),
        "opacity": c.opacity,
        "iso_value": c.iso_value,
        "proximity": c.proximity,
        "use_solver": c.use_solver,
        "cc_filter": c.cc_filter,
        "solver_cfg": cfg.to_dict() if cfg else None,
    }


def class_from_dict(d: dict) -> tuple[simquery.ClassDef,
                                      bls3d.RefineConfig | None]:
    cdef = simquery.ClassDef(
        id=int(d["id"]),
        name=d.get("name", ""),
        color=tuple(d.get("color", (1.0, 0.5, 0.0))),
        opacity=float(d.get("opacity", 1.0)),
        iso_value=float(d.get("iso_value", 0.5)),
        proximity=float(d.get("proximity", 0.0)),
        use_solver=bool(d.get("use_solver", False)),
        cc_filter=bool(d.get("cc_filter", False)),
    )
    cfg = None
    if d.get("solver_cfg"):
        cfg = bls3d.RefineConfig.from_dict(d["solver_cfg"])
    return cdef, cfg


def save_session(session: Session, path) -> None:
    """Write session JSON plus one SVOL file per similarity map."""
    path = Path(path)
    with session.lock:
        doc = session.snapshot()
        doc["similarity_files"] = {}
        base = path.with_suffix("")
        for cid, sv in session.low.items():
            f = f"{base.name}.class{cid}.low.svol"
            volgrid.save_similarity_volume(sv, base.parent / f)
            doc["similarity_files"].setdefault(str(cid), {})["low"] = f
        for cid, sv in session.refined.items():
            f = f"{base.name}.class{cid}.refined.svol"
            volgrid.save_similarity_volume(sv, base.parent / f)
            doc["similarity_files"].setdefault(str(cid), {})["refined"] = f
        path.write_text(json.dumps(doc, indent=2))


def load_session(path, store: VolumeStore, session_id: str) -> Session:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(str(path))
    doc = json.loads(path.read_text())
    if doc.get("v") != PROTOCOL_VERSION:
        raise ValueError(f"unsupported session version {doc.get('v')}")
    volume, fvol = store.get(doc["volume_id"])
    s = Session(session_id, doc["volume_id"], volume, fvol)
    for cd in doc.get("classes", []):
        cdef, cfg = class_from_dict(cd)
        s.classes[cdef.id] = cdef
        if cfg:
            s.solver_cfgs[cdef.id] = cfg
    for cid_s, points in doc.get("annotations", {}).items():
        cid = int(cid_s)
        aset = simquery.AnnotationSet(class_id=cid)
        aset = simquery.add_annotations(aset, points, fvol, volume.dims)
        s.annotations[cid] = aset
    files = doc.get("similarity_files", {})
    for cid_s, entry in files.items():
        cid = int(cid_s)
        if "low" in entry:
            sv = volgrid.load_similarity_volume(path.parent / entry["low"])
            s.low[cid] = replace(sv, class_id=cid)
        if "refined" in entry:
            sv = volgrid.load_similarity_volume(
                path.parent / entry["refined"])
            s.refined[cid] = replace(sv, class_id=cid)
    for cid in s.annotations:
        if cid not in s.low:
            s._recompute_low(cid)
    s.camera = isoray.Camera.from_dict(doc["camera"])
    return s


def create_app(store: VolumeStore) -> FastAPI:
    app = FastAPI(title="tfseg session service")
    sessions: dict[str, Session] = {}
    session_counter = itertools.count(1)

    def get_session(session_id: str) -> Session:
        if session_id not in sessions:
            raise HTTPException(404, f"unknown session {session_id}")
        return sessions[session_id]

    def get_class(s: Session, class_id: int) -> simquery.ClassDef:
        if class_id not in s.classes:
            raise HTTPException(404, f"unknown class {class_id}")
        return s.classes[class_id]

    @app.post("/sessions")
    def create_session(body: dict):
        volume_id = body.get("volume_id")
        try:
            volume, fvol = store.get(volume_id)
        except KeyError:
            raise HTTPException(404, f"unknown volume {volume_id!r}")
        session_id = f"s{next(session_counter)}"
        sessions[session_id] = Session(session_id, volume_id, volume, fvol)
        return sessions[session_id].snapshot()

    @app.get("/sessions/{session_id}")
    def get_session_snapshot(session_id: str):
        return get_session(session_id).snapshot()

    @app.post("/sessions/{session_id}/classes")
    def upsert_class(session_id: str, body: dict):
        s = get_session(session_id)
        cdef, cfg = class_from_dict(body)
        with s.lock:
            s.classes[cdef.id] = cdef
            if cfg:
                s.solver_cfgs[cdef.id] = cfg
            s.touch()
        return class_to_dict(cdef, s.solver_cfgs.get(cdef.id))

    @app.patch("/sessions/{session_id}/classes/{class_id}")
    def patch_class(session_id: str, class_id: int, body: dict):
        s = get_session(session_id)
        with s.lock:
            cdef = get_class(s, class_id)
            fields = {}
            for key in ("name", "opacity", "iso_value", "proximity",
                        "use_solver", "cc_filter"):
                if key in body:
                    fields[key] = body[key]
            if "color" in body:
                fields["color"] = tuple(body["color"])
            updated = replace(cdef, **fields)
            s.classes[class_id] = updated
            if body.get("solver_cfg"):
                s.solver_cfgs[class_id] = bls3d.RefineConfig.from_dict(
                    body["solver_cfg"])
                s._invalidate_refined(class_id)
            # proximity is a similarity input; iso/opacity/color are not
            if "proximity" in fields and \
                    fields["proximity"] != cdef.proximity:
                s._recompute_low(class_id)
                s._invalidate_refined(class_id)
            s.touch()
        return class_to_dict(updated, s.solver_cfgs.get(class_id))

    @app.delete("/sessions/{session_id}/classes/{class_id}")
    def delete_class(session_id: str, class_id: int):
        s = get_session(session_id)
        with s.lock:
            get_class(s, class_id)
            del s.classes[class_id]
            s.annotations.pop(class_id, None)
            s.low.pop(class_id, None)
            s.refined.pop(class_id, None)
            s.solver_cfgs.pop(class_id, None)
            s.touch()
        return {"v": PROTOCOL_VERSION, "deleted": class_id}

    @app.post("/sessions/{session_id}/classes/{class_id}/annotations")
    def annotate(session_id: str, class_id: int, body: dict):
        s = get_session(session_id)
        points = body.get("points", [])
        with s.lock:
            get_class(s, class_id)
            aset = s.annotations.get(
                class_id, simquery.AnnotationSet(class_id=class_id))
            try:
                aset = simquery.add_annotations(aset, points, s.fvol,
                                                s.volume.dims)
            except OutOfBounds as e:
                raise HTTPException(422, str(e))
            s.annotations[class_id] = aset
            s._recompute_low(class_id)
            s._invalidate_refined(class_id)
            s.touch()
            sim = s.low.get(class_id)
        return {
            "v": PROTOCOL_VERSION,
            "class_id": class_id,
            "count": len(aset),
            "digest": _digest(sim.data) if sim is not None else None,
        }

    @app.post("/sessions/{session_id}/classes/{class_id}/erase")
    def erase(session_id: str, class_id: int, body: dict):
        s = get_session(session_id)
        point = body.get("point")
        radius = float(body.get("radius", 0.0))
        with s.lock:
            get_class(s, class_id)
            aset = s.annotations.get(
                class_id, simquery.AnnotationSet(class_id=class_id))
            aset = simquery.remove_annotations_near(aset, point, radius)
            s.annotations[class_id] = aset
            s._recompute_low(class_id)
            s._invalidate_refined(class_id)
            s.touch()
            sim = s.low.get(class_id)
        return {
            "v": PROTOCOL_VERSION,
            "class_id": class_id,
            "count": len(aset),
            "digest": _digest(sim.data) if sim is not None else None,
        }

    @app.post("/sessions/{session_id}/classes/{class_id}/refine")
    def refine_class(session_id: str, class_id: int):
        s = get_session(session_id)
        with s.lock:
            get_class(s, class_id)
            job_id = s.enqueue_refine(class_id)
        return {"v": PROTOCOL_VERSION, "job_id": job_id,
                "class_id": class_id}

    @app.get("/sessions/{session_id}/slice/{axis}/{index}")
    def get_slice(session_id: str, axis: int, index: int, overlay: int = 0):
        s = get_session(session_id)
        if axis not in (0, 1, 2):
            raise HTTPException(422, "axis must be 0, 1 or 2")
        if index < 0 or index >= s.volume.dims[axis]:
            raise HTTPException(422, f"slice {index} out of range")
        with s.lock:
            overlays = []
            if overlay:
                for cid, cdef in s.classes.items():
                    sim = s.low.get(cid)
                    if sim is None:
                        continue
                    overlays.append(
                        (cdef, sim, s.annotations.get(cid)))
            img = isoray.render_slice_overlay(s.volume, axis, index,
                                              overlays)
        return Response(isoray.image_to_png_bytes(img),
                        media_type="image/png")

    @app.get("/sessions/{session_id}/render")
    def render_frame(session_id: str, cam: str | None = None,
                     width: int | None = None, height: int | None = None):
        s = get_session(session_id)
        with s.lock:
            camera = s.camera
            if cam:
                try:
                    camera = isoray.Camera.from_dict(json.loads(cam))
                except (json.JSONDecodeError, KeyError) as e:
                    raise HTTPException(422, f"bad camera JSON: {e}")
                s.camera = camera
            if width and height:
                camera = replace(camera, width=width, height=height)
            classes = []
            for cid, cdef in s.classes.items():
                sim = s.refined.get(cid) or s.low.get(cid)
                if sim is not None:
                    classes.append((cdef, sim))
        if not classes:
            img = np.zeros((camera.height, camera.width, 4))
            img[..., 3] = 1.0
        else:
            img = isoray.render(classes, camera, bounds=s.volume.dims)
        return Response(isoray.image_to_png_bytes(img),
                        media_type="image/png")

    @app.post("/sessions/{session_id}/save")
    def save(session_id: str, body: dict):
        s = get_session(session_id)
        path = body.get("path")
        if not path:
            raise HTTPException(422, "missing path")
        save_session(s, path)
        return {"v": PROTOCOL_VERSION, "saved": str(path)}

    @app.post("/sessions/load")
    def load(body: dict):
        path = body.get("path")
        session_id = f"s{next(session_counter)}"
        try:
            s = load_session(path, store, session_id)
        except FileNotFoundError:
            raise HTTPException(404, f"no session file at {path}")
        except ValueError as e:
            raise HTTPException(422, str(e))
        sessions[session_id] = s
        return s.snapshot()

    @app.websocket("/sessions/{session_id}/events")
    async def events(ws: WebSocket, session_id: str):
        await ws.accept()
        if session_id not in sessions:
            await ws.close(code=4404)
            return
        s = sessions[session_id]
        cursor = 0
        try:
            while True:
                while cursor < len(s.events):
                    await ws.send_json(s.events[cursor])
                    cursor += 1
                await asyncio.sleep(0.01)
        except WebSocketDisconnect:
            return

    app.state.store = store
    app.state.sessions = sessions
    return app
