import time

import numpy as np
import pytest
from fastapi.testclient import TestClient

from tfseg import featpipe, serve, synthgen


@pytest.fixture()
def app_env(tmp_path):
    vol, labels = synthgen.gen_sphere(24, radius=8)
    plan = featpipe.plan_for(vol, resize_target=48, patch=8,
                             feature_dim=featpipe.TOY_FEATURE_DIM)
    fvol = featpipe.merge_stacks(*featpipe.toy_extract(vol, plan),
                                 plan.target_feature_dims)
    store = serve.VolumeStore()
    store.register("sphere", vol, fvol)
    app = serve.create_app(store)
    return TestClient(app), store, vol, labels, tmp_path


def _new_session(client):
    r = client.post("/sessions", json={"volume_id": "sphere"})
    assert r.status_code == 200
    return r.json()


def _add_class(client, sid, cid=1, **extra):
    body = {"id": cid, "name": f"c{cid}", **extra}
    r = client.post(f"/sessions/{sid}/classes", json=body)
    assert r.status_code == 200
    return r.json()


class TestSessions:
    def test_create_and_snapshot(self, app_env):
        client, _, vol, _, _ = app_env
        snap = _new_session(client)
        assert snap["v"] == 1
        assert snap["dims"] == list(vol.dims)
        r = client.get(f"/sessions/{snap['id']}")
        assert r.json()["id"] == snap["id"]

    def test_unknown_volume(self, app_env):
        client = app_env[0]
        r = client.post("/sessions", json={"volume_id": "nope"})
        assert r.status_code == 404

    def test_unknown_session(self, app_env):
        client = app_env[0]
        assert client.get("/sessions/zzz").status_code == 404


class TestClasses:
    def test_upsert_and_delete(self, app_env):
        client = app_env[0]
        sid = _new_session(client)["id"]
        c = _add_class(client, sid, 1, color=[1, 0, 0], iso_value=0.4)
        assert c["iso_value"] == 0.4
        snap = client.get(f"/sessions/{sid}").json()
        assert len(snap["classes"]) == 1
        r = client.delete(f"/sessions/{sid}/classes/1")
        assert r.status_code == 200
        assert client.get(f"/sessions/{sid}").json()["classes"] == []

    def test_patch_unknown_class(self, app_env):
        client = app_env[0]
        sid = _new_session(client)["id"]
        r = client.patch(f"/sessions/{sid}/classes/9", json={"opacity": 0.5})
        assert r.status_code == 404


class TestAnnotations:
    def test_batched_points_single_recompute(self, app_env):
        client, store, *_ = app_env
        sid = _new_session(client)["id"]
        _add_class(client, sid, 1)
        pts = [[12, 12, 12], [11, 12, 12], [12, 11, 12], [12, 12, 11]]
        r = client.post(f"/sessions/{sid}/classes/1/annotations",
                        json={"points": pts})
        assert r.status_code == 200
        doc = r.json()
        assert doc["count"] == 4
        assert doc["digest"]
        s = client.app.state.sessions[sid]
        # the whole brush stroke triggers exactly one similarity update
        assert s.recompute_count == 1

    def test_out_of_bounds_point(self, app_env):
        client = app_env[0]
        sid = _new_session(client)["id"]
        _add_class(client, sid, 1)
        r = client.post(f"/sessions/{sid}/classes/1/annotations",
                        json={"points": [[999, 0, 0]]})
        assert r.status_code == 422

    def test_erase_updates_similarity(self, app_env):
        client = app_env[0]
        sid = _new_session(client)["id"]
        _add_class(client, sid, 1)
        client.post(f"/sessions/{sid}/classes/1/annotations",
                    json={"points": [[12, 12, 12], [4, 4, 4]]})
        r = client.post(f"/sessions/{sid}/classes/1/erase",
                        json={"point": [4, 4, 4], "radius": 1.0})
        assert r.json()["count"] == 1

    def test_erase_all_clears_similarity(self, app_env):
        client = app_env[0]
        sid = _new_session(client)["id"]
        _add_class(client, sid, 1)
        client.post(f"/sessions/{sid}/classes/1/annotations",
                    json={"points": [[12, 12, 12]]})
        r = client.post(f"/sessions/{sid}/classes/1/erase",
                        json={"point": [12, 12, 12], "radius": 2.0})
        assert r.json()["count"] == 0
        assert r.json()["digest"] is None


class TestInvalidation:
    def _refined(self, client, sid, cid=1, timeout=10.0):
        client.post(f"/sessions/{sid}/classes/{cid}/refine")
        s = client.app.state.sessions[sid]
        deadline = time.time() + timeout
        while time.time() < deadline:
            if cid in s.refined or any(
                    e["type"] == "refine_failed" for e in s.events):
                return
            time.sleep(0.02)
        raise TimeoutError("refine never finished")

    def test_proximity_patch_recomputes_and_invalidates(self, app_env):
        client = app_env[0]
        sid = _new_session(client)["id"]
        _add_class(client, sid, 1)
        client.post(f"/sessions/{sid}/classes/1/annotations",
                    json={"points": [[12, 12, 12]]})
        s = client.app.state.sessions[sid]
        self._refined(client, sid)
        assert 1 in s.refined
        before = s.recompute_count
        d0 = serve._digest(s.low[1].data)
        client.patch(f"/sessions/{sid}/classes/1",
                     json={"proximity": 0.8})
        assert s.recompute_count == before + 1
        assert 1 not in s.refined
        assert serve._digest(s.low[1].data) != d0

    def test_iso_patch_keeps_similarity(self, app_env):
        client = app_env[0]
        sid = _new_session(client)["id"]
        _add_class(client, sid, 1)
        client.post(f"/sessions/{sid}/classes/1/annotations",
                    json={"points": [[12, 12, 12]]})
        s = client.app.state.sessions[sid]
        self._refined(client, sid)
        before = s.recompute_count
        client.patch(f"/sessions/{sid}/classes/1",
                     json={"iso_value": 0.7, "opacity": 0.3})
        assert s.recompute_count == before
        assert 1 in s.refined

    def test_new_annotation_invalidates_refined(self, app_env):
        client = app_env[0]
        sid = _new_session(client)["id"]
        _add_class(client, sid, 1)
        client.post(f"/sessions/{sid}/classes/1/annotations",
                    json={"points": [[12, 12, 12]]})
        s = client.app.state.sessions[sid]
        self._refined(client, sid)
        client.post(f"/sessions/{sid}/classes/1/annotations",
                    json={"points": [[11, 11, 11]]})
        assert 1 not in s.refined

    def test_refine_without_annotations_fails_gracefully(self, app_env):
        client = app_env[0]
        sid = _new_session(client)["id"]
        _add_class(client, sid, 1)
        client.post(f"/sessions/{sid}/classes/1/refine")
        s = client.app.state.sessions[sid]
        deadline = time.time() + 5.0
        while time.time() < deadline:
            if any(e["type"] == "refine_failed" for e in s.events):
                break
            time.sleep(0.02)
        assert any(e["type"] == "refine_failed" for e in s.events)


class TestImages:
    def test_slice_png(self, app_env):
        client = app_env[0]
        sid = _new_session(client)["id"]
        r = client.get(f"/sessions/{sid}/slice/2/10")
        assert r.status_code == 200
        assert r.headers["content-type"] == "image/png"
        assert r.content[:4] == b"\x89PNG"

    def test_slice_out_of_range(self, app_env):
        client = app_env[0]
        sid = _new_session(client)["id"]
        assert client.get(f"/sessions/{sid}/slice/0/99").status_code == 422
        assert client.get(f"/sessions/{sid}/slice/5/0").status_code == 422

    def test_slice_with_overlay(self, app_env):
        client = app_env[0]
        sid = _new_session(client)["id"]
        _add_class(client, sid, 1, color=[0, 1, 0])
        client.post(f"/sessions/{sid}/classes/1/annotations",
                    json={"points": [[12, 12, 10]]})
        plain = client.get(f"/sessions/{sid}/slice/2/10").content
        tinted = client.get(
            f"/sessions/{sid}/slice/2/10", params={"overlay": 1}).content
        assert plain != tinted

    def test_render_empty_session(self, app_env):
        client = app_env[0]
        sid = _new_session(client)["id"]
        r = client.get(f"/sessions/{sid}/render",
                       params={"width": 16, "height": 16})
        assert r.status_code == 200
        assert r.content[:4] == b"\x89PNG"

    def test_render_with_camera_json(self, app_env):
        client = app_env[0]
        sid = _new_session(client)["id"]
        _add_class(client, sid, 1, color=[1, 0, 0])
        client.post(f"/sessions/{sid}/classes/1/annotations",
                    json={"points": [[12, 12, 12]]})
        cam = ('{"eye": [12, 12, -40], "look_at": [12, 12, 12], '
               '"width": 24, "height": 24}')
        r = client.get(f"/sessions/{sid}/render", params={"cam": cam})
        assert r.status_code == 200

    def test_render_bad_camera(self, app_env):
        client = app_env[0]
        sid = _new_session(client)["id"]
        r = client.get(f"/sessions/{sid}/render", params={"cam": "{oops"})
        assert r.status_code == 422


class TestPersistence:
    def test_save_load_roundtrip(self, app_env):
        client, store, *_rest, tmp_path = app_env
        sid = _new_session(client)["id"]
        _add_class(client, sid, 1, color=[1, 0, 0], iso_value=0.45,
                   proximity=0.2)
        client.post(f"/sessions/{sid}/classes/1/annotations",
                    json={"points": [[12, 12, 12], [11, 11, 11]]})
        path = str(tmp_path / "sess.json")
        r = client.post(f"/sessions/{sid}/save", json={"path": path})
        assert r.status_code == 200

        r = client.post("/sessions/load", json={"path": path})
        assert r.status_code == 200
        snap = r.json()
        assert snap["id"] != sid
        assert snap["annotations"]["1"] == [[12, 12, 12], [11, 11, 11]]
        c = snap["classes"][0]
        assert c["iso_value"] == 0.45 and c["proximity"] == 0.2

        s_old = client.app.state.sessions[sid]
        s_new = client.app.state.sessions[snap["id"]]
        np.testing.assert_array_equal(s_new.low[1].data, s_old.low[1].data)

    def test_load_missing_file(self, app_env):
        client = app_env[0]
        r = client.post("/sessions/load", json={"path": "/no/such.json"})
        assert r.status_code == 404


class TestEvents:
    def test_ws_streams_similarity_updates(self, app_env):
        client = app_env[0]
        sid = _new_session(client)["id"]
        _add_class(client, sid, 1)
        client.post(f"/sessions/{sid}/classes/1/annotations",
                    json={"points": [[12, 12, 12]]})
        with client.websocket_connect(f"/sessions/{sid}/events") as ws:
            msg = ws.receive_json()
            assert msg["v"] == 1
            assert msg["type"] == "similarity_updated"
            assert msg["class_id"] == 1
            assert len(msg["digest"]) == 12

    def test_ws_unknown_session_closes(self, app_env):
        client = app_env[0]
        with pytest.raises(Exception):
            with client.websocket_connect("/sessions/none/events") as ws:
                ws.receive_json()
