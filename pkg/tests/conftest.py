import hashlib
import os
from pathlib import Path

import numpy as np
import pytest

import maxid
from maxid.engine import ModelSpec, simulate_batch
from maxid.gaussian_fields import CorrelationModel, grid_sites
from maxid.measures import LocationMagnitudeMeasure, ScaleMagnitudeMeasure

# fixed once for the whole acceptance suite; never re-rolled
ACCEPTANCE_SEED = 20261016

SRC = Path(maxid.__file__).parent
SIMULATION_MODULES = ("_kernels.py", "engine.py", "gaussian_fields.py", "marginal.py", "measures.py", "samplers.py")
CACHE = Path(os.environ.get("MAXID_TEST_CACHE", Path.home() / ".cache" / "maxid-tests"))


def _source_digest() -> str:
    h = hashlib.sha256()
    for name in SIMULATION_MODULES:
        path = SRC / name
        h.update(path.name.encode())
        h.update(path.read_bytes())
    return h.hexdigest()[:16]


def cached_batch(spec: ModelSpec, coords, n: int, seed: int, method: str):
    """``simulate_batch`` values/profiles, cached on disk by source digest and arguments."""
    coords = np.asarray(coords, dtype=float)
    key = hashlib.sha256(
        "|".join([_source_digest(), repr(spec), coords.tobytes().hex(), str(n), str(seed), method]).encode()
    ).hexdigest()[:24]
    path = CACHE / f"{key}.npz"
    if path.exists():
        with np.load(path) as f:
            return f["values"], f["profiles"]
    batch = simulate_batch(spec, coords, n, seed, method=method)
    CACHE.mkdir(parents=True, exist_ok=True)
    np.savez(path, values=batch.values, profiles=batch.profiles)
    return batch.values, batch.profiles


PAPER_S4 = ModelSpec(
    ScaleMagnitudeMeasure(5.0, 2.0),
    CorrelationModel("nonstationary", nu=3.0, surface="probit-x"),
)
EXTREMAL_T = ModelSpec(
    ScaleMagnitudeMeasure(1.0, 0.0),
    CorrelationModel("nonstationary", nu=0.0, surface="constant", surface_value=0.5),
)
BROWN_RESNICK = ModelSpec(
    LocationMagnitudeMeasure(1.0, 1.0, 1.0), CorrelationModel("exponential", rate=2.0), sampler="mh"
)
LOCATION_SKEW = ModelSpec(
    LocationMagnitudeMeasure(1.0, 1.5, 0.5), CorrelationModel("exponential", rate=2.0), sampler="mh"
)
GRID49 = grid_sites(7)


@pytest.fixture(scope="session")
def paper_s4_data():
    """10^5 replicates on the 7x7 grid for the three methods."""
    return {
        m: cached_batch(PAPER_S4, GRID49, 100_000, ACCEPTANCE_SEED, m)[0]
        for m in ("exact-ars", "exact-mh", "naive:100")
    }


ACCEPTANCE_RESULTS: list[str] = []


def report(label: str, ok: bool, detail: str) -> bool:
    """Print and remember one PASS/FAIL line for the acceptance summary."""
    line = f"{'PASS' if ok else 'FAIL'}  {label}: {detail}"
    ACCEPTANCE_RESULTS.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_RESULTS:
            terminalreporter.write_line(line)
