import numpy as np
import pytest

from app.pipeline import RunRecord
from app.tracks import oval_track


@pytest.fixture
def make_record():
    """Synthetic run on the oval's bottom straight at constant speed."""

    def build(name="synthetic", ux=12.0, n=200, telemetry=None):
        t = np.arange(n) * 0.001
        states = np.zeros((n, 8))
        states[:, 0] = ux * t
        states[:, 1] = -35.0
        states[:, 5] = ux
        tele = telemetry if telemetry is not None else [
            {"status": "converged", "solve_time_ms": 20.0 + k, "iterations": 5} for k in range(3)
        ]
        return RunRecord(
            name=name,
            status="completed",
            reason="lap completed",
            times=t,
            states=states,
            membership=np.full(n, -0.5),
            a_long=np.zeros(n),
            a_lat=np.linspace(0.0, 3.0, n),
            progress=states[:, 0].copy(),
            controls=np.array([[0.1 * k, 0.0, 0.0] for k in range(len(tele))]).reshape(-1, 3),
            telemetry=tele,
            completion_time=float(t[-1]),
        )

    return build


@pytest.fixture(scope="session")
def oval():
    return oval_track()
