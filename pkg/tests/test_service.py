import numpy as np
import pytest
from fastapi.testclient import TestClient

from deinker.core import save_raster
from deinker.service import create_app
from deinker.synth import synthesize_tissue


@pytest.fixture
def patch_dirs(tmp_path, rng):
    clean_dir = tmp_path / "clean"
    corrected_dir = tmp_path / "corrected"
    clean_dir.mkdir()
    corrected_dir.mkdir()
    for i in range(8):
        img, _ = synthesize_tissue(rng, 32, 32)
        save_raster(img, clean_dir / f"c{i:02d}.png")
        img2, _ = synthesize_tissue(rng, 32, 32)
        save_raster(img2, corrected_dir / f"r{i:02d}.png")
    return clean_dir, corrected_dir


def make_client(patch_dirs, tmp_path, token=None):
    clean_dir, corrected_dir = patch_dirs
    app = create_app(clean_dir, corrected_dir, tmp_path / "data", token=token)
    return TestClient(app)


def test_full_session_flow(patch_dirs, tmp_path):
    client = make_client(patch_dirs, tmp_path)
    created = client.post("/sessions", json={"n": 10, "patch_size": 32, "seed": 5})
    assert created.status_code == 200
    sid = created.json()["session_id"]

    items = client.get(f"/sessions/{sid}/items").json()
    assert len(items["items"]) == 10
    assert items["answered_count"] == 0
    assert "truth" not in items["items"][0]

    img = client.get(f"/items/{items['items'][0]['item_id']}/image")
    assert img.status_code == 200
    assert img.headers["content-type"] == "image/png"
    assert img.content[:8] == b"\x89PNG\r\n\x1a\n"

    for i, item in enumerate(items["items"]):
        resp = client.post(
            f"/items/{item['item_id']}/answer",
            json={"answer": "corrected" if i % 2 else "original_clean"},
        )
        assert resp.status_code == 200
    report = client.get(f"/sessions/{sid}/report")
    assert report.status_code == 200
    body = report.json()
    assert body["n"] == 10
    total = sum(sum(row.values()) for row in body["matrix"].values())
    assert total == 10


def test_double_answer_conflict_409(patch_dirs, tmp_path):
    client = make_client(patch_dirs, tmp_path)
    sid = client.post("/sessions", json={"n": 4, "seed": 1}).json()["session_id"]
    item = client.get(f"/sessions/{sid}/items").json()["items"][0]["item_id"]
    assert client.post(f"/items/{item}/answer", json={"answer": "corrected"}).status_code == 200
    assert client.post(f"/items/{item}/answer", json={"answer": "corrected"}).status_code == 409


def test_report_before_completion_409(patch_dirs, tmp_path):
    client = make_client(patch_dirs, tmp_path)
    sid = client.post("/sessions", json={"n": 4, "seed": 1}).json()["session_id"]
    assert client.get(f"/sessions/{sid}/report").status_code == 409
    assert client.get(f"/sessions/{sid}/report", params={"partial": "true"}).status_code == 200


def test_unknown_ids_404(patch_dirs, tmp_path):
    client = make_client(patch_dirs, tmp_path)
    assert client.get("/sessions/ghost/items").status_code == 404
    assert client.get("/items/ghost-0000/image").status_code == 404
    assert client.post("/items/ghost-0000/answer", json={"answer": "corrected"}).status_code == 404


def test_oversized_session_400(patch_dirs, tmp_path):
    client = make_client(patch_dirs, tmp_path)
    assert client.post("/sessions", json={"n": 100, "seed": 1}).status_code == 400
    assert client.post("/sessions", json={"n": 3, "seed": 1}).status_code == 400


def test_token_enforcement(patch_dirs, tmp_path):
    client = make_client(patch_dirs, tmp_path, token="hunter2")
    assert client.post("/sessions", json={"n": 4, "seed": 1}).status_code == 401
    ok = client.post("/sessions", json={"n": 4, "seed": 1}, headers={"X-Auth-Token": "hunter2"})
    assert ok.status_code == 200
    sid = ok.json()["session_id"]
    assert client.get(f"/sessions/{sid}/items").status_code == 401
    assert (
        client.get(f"/sessions/{sid}/items", headers={"X-Auth-Token": "hunter2"}).status_code
        == 200
    )


def test_sessions_survive_restart(patch_dirs, tmp_path):
    clean_dir, corrected_dir = patch_dirs
    client = make_client(patch_dirs, tmp_path)
    sid = client.post("/sessions", json={"n": 4, "seed": 2}).json()["session_id"]
    item = client.get(f"/sessions/{sid}/items").json()["items"][0]["item_id"]
    client.post(f"/items/{item}/answer", json={"answer": "corrected"})

    fresh_app = create_app(clean_dir, corrected_dir, tmp_path / "data")
    fresh = TestClient(fresh_app)
    items = fresh.get(f"/sessions/{sid}/items").json()
    assert items["answered_count"] == 1


def test_image_bytes_match_file(patch_dirs, tmp_path):
    clean_dir, corrected_dir = patch_dirs
    client = make_client(patch_dirs, tmp_path)
    sid = client.post("/sessions", json={"n": 8, "seed": 3}).json()["session_id"]
    items = client.get(f"/sessions/{sid}/items").json()["items"]
    served = {client.get(f"/items/{it['item_id']}/image").content for it in items}
    on_disk = {p.read_bytes() for p in list(clean_dir.glob("*.png")) + list(corrected_dir.glob("*.png"))}
    assert served <= on_disk
