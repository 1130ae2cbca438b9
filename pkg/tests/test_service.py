import base64
import threading

import pytest
from fastapi.testclient import TestClient

from sdrmri.harness import ExperimentConfig, generate_dataset
from sdrmri.recon import DcConfig
from sdrmri.sdr import SdrParams
from sdrmri.service import create_app


@pytest.fixture(scope="module")
def data_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("dataset")
    cfg = ExperimentConfig(image_size=64, n_phantoms=1, lesion_contrast=0.6,
                           master_seed=11,
                           sdr=SdrParams(dc=DcConfig(cg_iters=12, cg_tol=3e-5)))
    generate_dataset(out, cfg, n_slices=2, acceleration=4, lesion_contrast=0.6)
    return out


@pytest.fixture(scope="module")
def client(data_dir):
    app = create_app(data_dir, demo_mode=True, max_jobs=2, time_budget_s=30.0)
    with TestClient(app) as c:
        yield c


def _job(slice_id="slice000", **kw):
    body = {"slice_id": slice_id,
            "boxes": [{"x_min": 20, "y_min": 20, "x_max": 34, "y_max": 34}],
            "n_rec": 2, "n_opt": 2, "radius": 3.0, "seed": 5}
    body.update(kw)
    return body


class TestSlices:
    def test_listing(self, client):
        body = client.get("/slices").json()
        assert [s["slice_id"] for s in body] == ["slice000", "slice001"]
        for s in body:
            assert s["acceleration"] == 4.0
            assert base64.b64decode(s["thumbnail"])[:8] == b"\x89PNG\r\n\x1a\n"

    def test_listing_stable(self, client):
        assert client.get("/slices").content == client.get("/slices").content

    def test_get_slice(self, client):
        body = client.get("/slice/slice000").json()
        assert body["image_size"] == 64
        assert base64.b64decode(body["image"])[:8] == b"\x89PNG\r\n\x1a\n"
        assert "gt_boxes" in body  # demo mode on

    def test_unknown_slice_404(self, client):
        assert client.get("/slice/nope").status_code == 404

    def test_demo_mode_off_hides_truth(self, data_dir):
        app = create_app(data_dir, demo_mode=False)
        with TestClient(app) as c:
            body = c.get("/slice/slice000").json()
            assert "gt_boxes" not in body


class TestSdrEndpoint:
    def test_smoke_run(self, client):
        resp = client.post("/sdr", json=_job(n_rec=3))
        assert resp.status_code == 200, resp.text
        body = resp.json()
        assert len(body["reconstructions"]) == 3
        assert len(body["diversity_matrix"]) == 3
        for rec in body["reconstructions"]:
            assert rec["residual"] <= 1e-3
            assert rec["distance_to_initial"] <= 3.0 * (1 + 1e-6)
            assert base64.b64decode(rec["png_base64"])[:8] == b"\x89PNG\r\n\x1a\n"
        assert "seconds" in body["timing"]

    def test_identical_requests_identical_modulo_timing(self, client):
        a = client.post("/sdr", json=_job()).json()
        b = client.post("/sdr", json=_job()).json()
        a.pop("timing"), b.pop("timing")
        assert a == b

    def test_unknown_slice_404(self, client):
        assert client.post("/sdr", json=_job(slice_id="nope")).status_code == 404

    def test_empty_boxes_422(self, client):
        assert client.post("/sdr", json=_job(boxes=[])).status_code == 422

    def test_limits_enforced_422(self, client):
        assert client.post("/sdr", json=_job(n_rec=100)).status_code == 422
        assert client.post("/sdr", json=_job(n_opt=10_000)).status_code == 422
        assert client.post("/sdr", json=_job(radius=50)).status_code == 422

    def test_invalid_boxes_listed_422(self, client):
        bad = [{"x_min": 20, "y_min": 20, "x_max": 34, "y_max": 34},
               {"x_min": 50, "y_min": 50, "x_max": 90, "y_max": 90}]
        resp = client.post("/sdr", json=_job(boxes=bad))
        assert resp.status_code == 422
        detail = resp.json()["detail"]
        assert [b["index"] for b in detail["boxes"]] == [1]

    def test_budget_exceeded_408(self, data_dir):
        app = create_app(data_dir, time_budget_s=0.0)
        with TestClient(app) as c:
            resp = c.post("/sdr", json=_job(n_opt=5))
            assert resp.status_code == 408
            detail = resp.json()["detail"]
            assert detail["completed_sweeps"] < detail["total_sweeps"]

    def test_busy_pool_429(self, data_dir):
        app = create_app(data_dir, max_jobs=1, time_budget_s=30.0)
        with TestClient(app) as c:
            release = threading.Event()
            started = threading.Event()
            results = {}

            import sdrmri.service as service_mod

            original = service_mod.sdr_generate

            def slow_generate(*a, **kw):
                started.set()
                release.wait(timeout=10)
                return original(*a, **kw)

            service_mod.sdr_generate = slow_generate
            try:
                t = threading.Thread(
                    target=lambda: results.update(first=c.post("/sdr", json=_job())))
                t.start()
                assert started.wait(timeout=10)
                service_mod.sdr_generate = original
                second = c.post("/sdr", json=_job())
                assert second.status_code == 429
                release.set()
                t.join(timeout=30)
                assert results["first"].status_code == 200
            finally:
                service_mod.sdr_generate = original
                release.set()
