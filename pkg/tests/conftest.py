from __future__ import annotations

import json

import pytest

import pdmp_avgctl as pa

BUNDLED = ["ctmdp_2state", "ctmdp_3state", "renewal_cycle", "drift_boundary_64", "decay_flow_16"]
TRIVIAL_FLOW_BUNDLED = ["ctmdp_2state", "ctmdp_3state"]


@pytest.fixture(scope="session")
def models() -> dict:
    return {name: pa.load_model(pa.bundled_model_path(name)) for name in BUNDLED}


@pytest.fixture(scope="session")
def workspaces(models) -> dict:
    out = {}
    for name, model in models.items():
        u0 = pa.FeedbackPolicy.lowest_feasible(model)
        out[name] = pa.refined_workspace(model, u0)
    return out


@pytest.fixture(scope="session")
def solved(models, workspaces) -> dict:
    """Converged PIA output per bundled model (shared across test modules)."""
    out = {}
    for name, model in models.items():
        u0 = pa.FeedbackPolicy.lowest_feasible(model)
        result, policy, trace = pa.run_pia(model, u0, workspace=workspaces[name])
        out[name] = (result, policy, trace)
    return out


@pytest.fixture
def write_model(tmp_path):
    def _write(doc: dict, name: str = "model"):
        path = tmp_path / f"{name}.json"
        path.write_text(json.dumps(doc))
        return path

    return _write
