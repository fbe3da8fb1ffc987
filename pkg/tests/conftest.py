import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from gwharmonic import rde
from gwharmonic.rngs import task_stream


@pytest.fixture(scope="session")
def solved_cloud():
    """Shared fixed-point cloud at M=1e6 (solves in under a second)."""
    rng = task_stream(777, "rde", 0)
    res = rde.solve_fixpoint(10**6, 2e-3, 60, rng, seed=777)
    assert res.converged
    return res.cloud
