#!/usr/bin/env python3
"""Tests du serveur HTTP via httpx et le transport ASGI (pas de serveur à lancer)."""
import asyncio
import math
import os
import sys

import httpx
import pytest

# Add parent dir to path
sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from dictionary import DictionaryConfig, MotherFunction, rasterize_atom
from geometry import GroupKind, TransformParams
from imaging import encode_pgm
from main import app
from services import atoms_to_records
from sparse import SparseApprox, transform_approx


def _pgm(width=31, height=31, center=(15.0, 15.0)) -> bytes:
    cfg = DictionaryConfig(kind=GroupKind.SE2, mother=MotherFunction(nu=2.0), width=width, height=height)
    raster = rasterize_atom(TransformParams(*center, 1.0, math.pi / 4), cfg).raster
    return encode_pgm(raster.scaled(1.0 / raster.pixels.max()))


async def _request(method: str, url: str, **kwargs) -> httpx.Response:
    transport = httpx.ASGITransport(app=app)
    async with httpx.AsyncClient(transport=transport, base_url="http://test") as client:
        return await client.request(method, url, timeout=60.0, **kwargs)


def call(method: str, url: str, **kwargs) -> httpx.Response:
    return asyncio.run(_request(method, url, **kwargs))


def test_health():
    response = call("GET", "/health")
    assert response.status_code == 200
    body = response.json()
    assert body["status"] == "ok" and body["dictionary"]["group"] == "sim2"
    print("✅ /health")


def test_approximate_upload():
    files = {"image": ("atom.pgm", _pgm(), "image/x-portable-graymap")}
    response = call("POST", "/approximate", files=files, data={"K": "2", "nu": "2", "group": "se2"})
    assert response.status_code == 200, response.text
    body = response.json()
    assert (body["width"], body["height"]) == (31, 31)
    assert 1 <= len(body["atoms"]) <= 2
    assert body["trace"][-1] <= body["trace"][0]
    assert set(body["atoms"][0]) >= {"c", "bx", "by", "a", "theta"}
    print("✅ /approximate")


def test_approximate_rejects_bad_pgm():
    files = {"image": ("broken.pgm", b"P5\n3 3\n255\n\x00", "image/x-portable-graymap")}
    response = call("POST", "/approximate", files=files, data={"K": "2"})
    assert response.status_code == 422
    response = call("POST", "/approximate", files={"image": ("a.pgm", _pgm(), "image/x-portable-graymap")},
                    data={"group": "affine"})
    assert response.status_code == 400


def test_register_json():
    cfg = DictionaryConfig(kind=GroupKind.SE2, mother=MotherFunction(nu=4.0), width=75, height=75)
    p = SparseApprox((1.0, 0.5), (TransformParams(30.0, 30.0), TransformParams(40.0, 42.0, 1.0, math.pi / 4)), cfg)
    eta0 = TransformParams(3.0, 1.0, 1.0, math.pi / 8)
    q = transform_approx(p, eta0)
    payload = {"p": atoms_to_records(p), "q": atoms_to_records(q), "group": "se2", "nu": 4.0, "refine": True}
    response = call("POST", "/register", json=payload)
    assert response.status_code == 200, response.text
    body = response.json()
    assert body["d_a"] < 1e-6
    assert TransformParams.from_text(body["eta_hat"]).bx == pytest.approx(3.0, abs=1e-6)
    assert body["d_refined"] <= body["d_a"] + 1e-12
    print("✅ /register")


def test_register_errors():
    atom = {"c": 1.0, "bx": 30.0, "by": 30.0}
    assert call("POST", "/register", json={"p": [], "q": [atom], "group": "se2"}).status_code == 400
    assert call("POST", "/register", json={"p": [atom], "q": [atom], "group": "affine"}).status_code == 400
    negative = dict(atom, c=-1.0)
    assert call("POST", "/register", json={"p": [negative], "q": [atom], "group": "se2"}).status_code == 400
    assert call("POST", "/register", json={"p": [atom]}).status_code == 422


def test_distance_euclid():
    files = {"image1": ("a.pgm", _pgm(), "image/x-portable-graymap"),
             "image2": ("b.pgm", _pgm(center=(16.0, 15.0)), "image/x-portable-graymap")}
    response = call("POST", "/distance", files=files, data={"method": "euclid"})
    assert response.status_code == 200, response.text
    body = response.json()
    assert body["method"] == "euclid" and body["distance"] > 0.0 and body["eta"] is None

    files["image2"] = ("c.pgm", _pgm(width=21, height=21, center=(10.0, 10.0)), "image/x-portable-graymap")
    assert call("POST", "/distance", files=files, data={"method": "euclid"}).status_code == 400
    files["image2"] = ("b.pgm", _pgm(), "image/x-portable-graymap")
    assert call("POST", "/distance", files=files, data={"method": "sift"}).status_code == 400
    print("✅ /distance")


def test_distance_tangent_reports_rank():
    files = {"image1": ("a.pgm", _pgm(), "image/x-portable-graymap"),
             "image2": ("b.pgm", _pgm(), "image/x-portable-graymap")}
    body = call("POST", "/distance", files=files, data={"method": "tangent"}).json()
    # identical images give identical tangent planes, half the joint columns are redundant
    assert body["distance"] < 1e-9 and body["rank_deficient"] is True
    body = call("POST", "/distance", files=files, data={"method": "euclid"}).json()
    assert body["rank_deficient"] is None


if __name__ == "__main__":
    print("=" * 60)
    print("SERVER")
    print("=" * 60)
    test_health()
    test_approximate_upload()
    test_approximate_rejects_bad_pgm()
    test_register_json()
    test_register_errors()
    test_distance_euclid()
    test_distance_tangent_reports_rank()
    print("=" * 60)
