"""
Serveur HTTP : approximation parcimonieuse d'images PGM, recalage de motifs
et distances invariantes aux transformations.
"""
import logging
import os
import time
from contextlib import asynccontextmanager
from typing import List, Optional

from fastapi import FastAPI, File, Form, HTTPException, UploadFile
from fastapi.concurrency import run_in_threadpool
from fastapi.middleware.cors import CORSMiddleware
from pydantic import BaseModel

from dictionary import DictionaryConfig, MotherFunction, default_config
from errors import SparseRegError
from geometry import GroupKind
from imaging import parse_pgm
from registration import Objective
from services import (ApproximationService, DistanceService, RegistrationService, atoms_to_records,
                      records_to_atoms)

# Configuration
LOG_LEVEL = os.getenv("SPARSEREG_LOG_LEVEL", "INFO").upper()
HOST = os.getenv("SPARSEREG_HOST", "0.0.0.0")
PORT = int(os.getenv("SPARSEREG_PORT", "8003"))
MAX_UPLOAD_BYTES = int(os.getenv("SPARSEREG_MAX_UPLOAD_BYTES", str(4 * 1024 * 1024)))

logging.basicConfig(level=LOG_LEVEL)
logger = logging.getLogger(__name__)

approximation_service = ApproximationService()
registration_service = RegistrationService()
distance_service = DistanceService()


@asynccontextmanager
async def lifespan(app: FastAPI):
    cfg = approximation_service.cfg
    logger.info(f"🚀 Sparse registration server ready: default dictionary {cfg.kind.value} nu={cfg.nu:g}, "
                f"scales {', '.join(f'{a:.3g}' for a in cfg.scales)}")
    yield
    logger.info("👋 Server stopped")


app = FastAPI(title="sparse-registration", lifespan=lifespan)

# CORS
app.add_middleware(
    CORSMiddleware,
    allow_origins=["*"],
    allow_credentials=True,
    allow_methods=["*"],
    allow_headers=["*"],
)


class AtomModel(BaseModel):
    c: float
    bx: float
    by: float
    a: float = 1.0
    theta: float = 0.0
    norm: Optional[float] = None


class RegisterRequest(BaseModel):
    p: List[AtomModel]
    q: List[AtomModel]
    width: int = 75
    height: int = 75
    nu: float = 4.0
    group: str = "sim2"
    refine: bool = False
    objective: str = Objective.PLANE.value
    scales: Optional[List[float]] = None


def _http_error(e: SparseRegError) -> HTTPException:
    logger.error(f"❌ {type(e).__name__}: {e}")
    return HTTPException(status_code=e.http_status, detail=str(e))


def _dictionary(width: int, height: int, nu: float, group: str) -> DictionaryConfig:
    return default_config(width, height, nu=nu, kind=GroupKind.parse(group))


async def _read_pgm(upload: UploadFile):
    data = await upload.read()
    if len(data) > MAX_UPLOAD_BYTES:
        raise HTTPException(status_code=413, detail=f"upload exceeds {MAX_UPLOAD_BYTES} bytes")
    return parse_pgm(data)


@app.post("/approximate")
async def approximate_endpoint(
    image: UploadFile = File(...),
    K: int = Form(10),
    nu: float = Form(4.0),
    group: str = Form("sim2"),
    stop_threshold: float = Form(0.0),
):
    """NMP d'une image PGM : atomes {c, bx, by, a, theta} et trace du résidu."""
    start = time.time()
    try:
        img = await _read_pgm(image)
        cfg = _dictionary(img.width, img.height, nu, group)
        approx, trace = await run_in_threadpool(approximation_service.approximate, img, K, stop_threshold, cfg)
    except SparseRegError as e:
        raise _http_error(e)
    logger.info(f"⏱️ /approximate {image.filename}: {time.time() - start:.2f}s")
    return {"width": img.width, "height": img.height, "atoms": atoms_to_records(approx), "trace": trace}


@app.post("/register")
async def register_endpoint(req: RegisterRequest):
    """Recalage de deux motifs parcimonieux donnés par leurs atomes."""
    try:
        cfg = DictionaryConfig(kind=GroupKind.parse(req.group), mother=MotherFunction(nu=req.nu),
                               width=req.width, height=req.height,
                               scales=tuple(req.scales) if req.scales else (1.0,))
        p = records_to_atoms([a.model_dump() for a in req.p], cfg)
        q = records_to_atoms([a.model_dump() for a in req.q], cfg)
        if not len(p) or not len(q):
            raise HTTPException(status_code=400, detail="both patterns need at least one atom")
        result = await run_in_threadpool(registration_service.register, p, q, req.refine, Objective(req.objective))
    except SparseRegError as e:
        raise _http_error(e)
    except ValueError as e:
        raise HTTPException(status_code=400, detail=str(e))
    body = {"eta_hat": result.eta_hat.to_text(), "d_a": result.d_a, "candidates": len(result.candidates)}
    if result.refined:
        body.update({"eta_refined": result.eta_refined.to_text(), "d_refined": result.d_refined,
                     "metric_fallback": result.metric_fallback})
    return body


@app.post("/distance")
async def distance_endpoint(
    image1: UploadFile = File(...),
    image2: UploadFile = File(...),
    method: str = Form("sparse"),
    K: int = Form(10),
    refine: bool = Form(False),
):
    """Distance entre deux images PGM (euclid, tangent, gd ou sparse)."""
    start = time.time()
    try:
        img1, img2 = await _read_pgm(image1), await _read_pgm(image2)
        rank_deficient = None
        if method == "tangent":
            fit = await run_in_threadpool(distance_service.tangent, img1, img2)
            d, eta, rank_deficient = fit.distance, None, fit.rank_deficient
        else:
            d, eta = await run_in_threadpool(distance_service.distance, img1, img2, method, K, refine)
    except SparseRegError as e:
        raise _http_error(e)
    logger.info(f"⏱️ /distance {method}: {time.time() - start:.2f}s")
    return {"method": method, "distance": d, "eta": eta.to_text() if eta is not None else None,
            "rank_deficient": rank_deficient}


@app.get("/health")
def health():
    return {"status": "ok", "dictionary": approximation_service.cfg.to_mapping()}


if __name__ == "__main__":
    import uvicorn
    uvicorn.run(app, host=HOST, port=PORT)
