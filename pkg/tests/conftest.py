"""Shared fixtures.  FEM runs are expensive, so they are cached per session."""

from pathlib import Path

import pytest

from xtherm import cli, heatsolve, xnet
from xtherm.fosterfit import GaConfig

DATA = Path(cli.__file__).parent / "data"


@pytest.fixture(scope="session")
def project_cfg():
    return {f: cli.load_project(DATA / f"{f}.json")[0] for f in ("nsfet", "cfet")}


@pytest.fixture(scope="session")
def fem_grid(project_cfg):
    return {f: cli._grid(cfg)[1] for f, cfg in project_cfg.items()}


@pytest.fixture(scope="session")
def fem_responses(project_cfg, fem_grid):
    """Four step responses per flavor from the bundled project configs."""
    out = {}
    for f, cfg in project_cfg.items():
        solver = heatsolve.SolverConfig(**cfg["solver"])
        out[f] = heatsolve.pair_responses(fem_grid[f], cfg["powers_W"], solver)
    return out


@pytest.fixture(scope="session")
def fem_models(project_cfg, fem_responses):
    """Pair models assembled from the FEM responses with the configured GA."""
    out = {}
    for f, cfg in project_cfg.items():
        ga = GaConfig(**{**cfg.get("ga", {}), "seed": cfg["seed"] + cli.SEED_OFFSETS["assemble"]})
        out[f] = xnet.assemble(fem_responses[f], ga=ga)
    return out


@pytest.fixture(scope="session")
def bundled_models():
    return {f: xnet.DevicePairThermalModel.load(DATA / f"pair_{f}.json") for f in ("nsfet", "cfet")}


# ------------------------------------------------------------------ acceptance report

_ACCEPTANCE: dict[int, str] = {}


@pytest.fixture
def criterion():
    """``criterion(n, ok, detail)`` records one pass/fail line and returns ``ok``."""

    def record(n: int, ok: bool, detail: str) -> bool:
        line = f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}"
        _ACCEPTANCE[n] = line
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(_ACCEPTANCE):
            terminalreporter.write_line(_ACCEPTANCE[n])
