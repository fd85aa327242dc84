import asyncio
from contextlib import asynccontextmanager
from functools import partial
from typing import List, Union

from fastapi import FastAPI, File, Form, HTTPException, UploadFile, status
from fastapi.middleware.cors import CORSMiddleware

from app.core.config import get_settings
from app.core.log import configure_logging
from app.models.schemas import (
    AnalyzeRequest,
    AnalyzeRow,
    AttackRequest,
    AttackRow,
    CorrelationRow,
    FlowRow,
    Scheme,
    SweepRequest,
    SweepRow,
)
from app.services.experiment_service import ExperimentService
from app.services.network import load_topology


@asynccontextmanager
async def lifespan(app: FastAPI):
    """Lifespan context manager for startup and shutdown events."""
    configure_logging(get_settings().log_level)
    yield


app = FastAPI(
    title="LIPSIN Secure Attachment Lab",
    description="Bloom-filter forwarding, secured network attachment and attack analysis",
    version="1.0.0",
    lifespan=lifespan,
)

app.add_middleware(
    CORSMiddleware,
    allow_origins=["*"],
    allow_credentials=True,
    allow_methods=["*"],
    allow_headers=["*"],
)

experiment_service = ExperimentService()


async def _run(label: str, fn, *args, **kwargs):
    """Run a blocking service call off the event loop, mapping failures to HTTP errors."""
    timeout = get_settings().request_timeout_seconds
    try:
        return await asyncio.wait_for(asyncio.to_thread(partial(fn, *args, **kwargs)), timeout=timeout)
    except asyncio.TimeoutError:
        raise HTTPException(
            status_code=status.HTTP_408_REQUEST_TIMEOUT,
            detail=f"{label} exceeded {timeout} seconds"
        )
    except ValueError as e:
        raise HTTPException(status_code=status.HTTP_400_BAD_REQUEST, detail=str(e))
    except LookupError as e:
        raise HTTPException(status_code=status.HTTP_404_NOT_FOUND, detail=str(e))
    except Exception as e:
        raise HTTPException(
            status_code=status.HTTP_500_INTERNAL_SERVER_ERROR,
            detail=f"Failed to run {label}: {str(e)}"
        )


@app.get("/")
async def root():
    """Root endpoint with API information."""
    return {
        "name": "LIPSIN Secure Attachment Lab",
        "version": "1.0.0",
        "endpoints": {
            "analyze": "/analyze",
            "sweep": "/sweep",
            "attack": "/attack",
            "simulate": "/simulate"
        }
    }


@app.post("/analyze", response_model=List[AnalyzeRow])
async def analyze(request: AnalyzeRequest):
    """Closed-form attack probability table, one row per hop count."""
    return await _run("analysis", experiment_service.analyze, request)


@app.post("/sweep", response_model=List[SweepRow])
async def sweep(request: SweepRequest):
    """Attack probability of the secured scheme and plain LIPSIN per hop count."""
    return await _run("sweep", experiment_service.sweep, request)


@app.post("/attack", response_model=List[Union[AttackRow, CorrelationRow]])
async def attack(request: AttackRequest):
    """
    Run an attack campaign on a chain topology.

    Args:
        request: AttackRequest with mode, scheme, geometry, hop count and trials

    Returns:
        One AttackRow, or two CorrelationRows (raw and encrypted) for the correlation probe
    """
    return await _run("attack", experiment_service.attack, request)


@app.post("/simulate", response_model=List[FlowRow])
async def simulate(
    file: UploadFile = File(...),
    flows: int = Form(1),
    seed: int = Form(0),
    scheme: Scheme = Form(Scheme.EFID_SECURED),
    hash_bits: int = Form(64),
    epochs: int = Form(1),
    tamper: bool = Form(False),
):
    """
    Upload a JSON topology document and deliver seeded flows through it.

    Raises:
        HTTPException: 400 if the document does not validate
    """
    if not file.filename.endswith(".json"):
        raise HTTPException(
            status_code=status.HTTP_400_BAD_REQUEST,
            detail="Only JSON topology documents are supported"
        )
    text = (await file.read()).decode("utf-8", errors="replace")
    topo = await _run("topology validation", load_topology, text)
    return await _run(
        "simulation",
        experiment_service.simulate,
        topo,
        flows=flows,
        seed=seed,
        scheme=scheme,
        hash_bits=hash_bits,
        epochs=epochs,
        tamper=tamper,
        max_fill_drop=get_settings().max_fill_drop,
    )


@app.get("/health")
async def health_check():
    """Health check endpoint."""
    return {"status": "healthy"}


if __name__ == "__main__":
    import uvicorn
    uvicorn.run(app, host="0.0.0.0", port=8000)
