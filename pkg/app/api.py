"""
FastAPI service mirroring the CLI for batch use:
- /health          quick liveness check
- /plan-envelope   generate a road from a seed and return the planned envelope
- /simulate        schedule a scenario run in the background
- /runs/{name}     metrics of a finished run directory

Serve with: uvicorn app.api:app
Runs are written under ENVMPC_RUNS_DIR (default runs/).
"""

from __future__ import annotations

import asyncio
import re
from dataclasses import asdict
from typing import Optional

from fastapi import FastAPI, HTTPException
from loguru import logger
from pydantic import BaseModel, Field

from .envelope import envelope_text
from .errors import ConfigurationError, EnvelopeMpcError
from .pipeline import RECORD_FILE, load_record, run_scenario
from .planner import design_envelope
from .road import generate_road
from .scenario import load_scenario
from .settings import settings

app = FastAPI(title="Spatial Envelope MPC API")

NAME_RE = re.compile(r"^[A-Za-z0-9._\-]+$")


@app.get("/health")
def health():
    return {"ok": True}


class PlanBody(BaseModel):
    seed: int
    n_stations: int = Field(120, ge=3)
    width_min: float = 3.0
    width_max: float = 6.0
    curvature_scale: float = 0.02
    block_norm_p: int = 4
    rho_lse: float = -15.0


@app.post("/plan-envelope")
def plan_envelope_endpoint(body: PlanBody):
    try:
        road = generate_road(body.seed, body.n_stations, (body.width_min, body.width_max), body.curvature_scale)
        plan = design_envelope(road, body.block_norm_p, body.rho_lse)
    except ConfigurationError as e:
        raise HTTPException(status_code=422, detail=str(e))
    except EnvelopeMpcError as e:
        raise HTTPException(status_code=400, detail=str(e))
    return {
        "blocks": len(plan.designs),
        "epsilon0": plan.envelope.epsilon0,
        "envelope": envelope_text(plan.envelope),
        "reports": [asdict(r) for r in plan.reports],
    }


class SimulateBody(BaseModel):
    scenario: str
    name: Optional[str] = None
    deterministic: bool = False


def _validate_name(name: str) -> None:
    if not NAME_RE.match(name or ""):
        raise HTTPException(status_code=422, detail="Run names may only contain letters, digits, '.', '_' and '-'")


async def _run_in_background(scenario, name: str, deterministic: bool) -> None:
    try:
        await asyncio.to_thread(run_scenario, scenario, settings.runs_dir / name, deterministic=deterministic)
    except Exception as e:
        # Make background task failures explicit in logs
        logger.exception("Background run {} failed: {}", name, e)


@app.post("/simulate")
async def simulate(body: SimulateBody):
    try:
        scenario = load_scenario(body.scenario)
    except ConfigurationError as e:
        raise HTTPException(status_code=422, detail=str(e))
    name = body.name or scenario.name
    _validate_name(name)
    logger.info("Scheduling run {} for scenario {}", name, scenario.name)
    asyncio.create_task(_run_in_background(scenario, name, body.deterministic))
    return {"status": "accepted", "run": name, "message": f"Scenario '{scenario.name}' scheduled in background."}


@app.get("/runs/{name}")
def get_run(name: str):
    _validate_name(name)
    run_dir = settings.runs_dir / name
    if not (run_dir / RECORD_FILE).exists():
        raise HTTPException(status_code=404, detail=f"No finished run named {name!r}")
    record = load_record(run_dir)
    return {"name": record.name, "metrics": record.metrics(), "timing": record.timing()}
