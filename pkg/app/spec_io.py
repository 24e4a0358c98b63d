"""
Spec files, trajectory CSVs and plan CSVs.

A spec file is JSON with `"kind": "explicit"` (kernels, outcome means,
noise and initial distribution given in full) or `"kind": "benchmark"`
(parameters of the ride-sharing chain).
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Annotated, Any, Dict, List, Literal, Optional, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, TypeAdapter, ValidationError

from app.benchmark import BenchmarkParams, build_benchmark
from app.design import AssignmentPlan
from app.errors import InvalidInputError
from app.mdp import FiniteMdpSpec, Regime, Trajectory
from app.settings import DATA_DIR

DEFAULT_SPEC_FILE = DATA_DIR / "benchmark_spec.json"
TRAJECTORY_COLUMNS = ["t", "w", "s", "y"]
CSV_FLOAT_FORMAT = "%.17g"

Matrix = List[List[float]]


class RegimeDocument(BaseModel):
    model_config = ConfigDict(extra="forbid")

    start: int = Field(ge=2)
    kernel0: Matrix
    kernel1: Matrix
    outcome_mean: Matrix


class ExplicitSpecDocument(BaseModel):
    model_config = ConfigDict(extra="forbid")

    kind: Literal["explicit"] = "explicit"
    name: str = ""
    kernel0: Matrix
    kernel1: Matrix
    outcome_mean: Matrix
    noise_sd: float = Field(ge=0.0)
    initial_dist: List[float]
    noise_law: Literal["gaussian", "uniform"] = "gaussian"
    schedule: List[RegimeDocument] = Field(default_factory=list)


class BenchmarkSpecDocument(BaseModel):
    model_config = ConfigDict(extra="forbid")

    kind: Literal["benchmark"] = "benchmark"
    name: str = "benchmark"
    benchmark: BenchmarkParams = Field(default_factory=BenchmarkParams)


SpecDocument = Annotated[
    Union[ExplicitSpecDocument, BenchmarkSpecDocument], Field(discriminator="kind")
]
_SPEC_ADAPTER = TypeAdapter(SpecDocument)


def _validation_details(exc: ValidationError) -> List[str]:
    return [f"{'.'.join(str(p) for p in err['loc'])}: {err['msg']}" for err in exc.errors()]


def parse_spec_document(data: Any) -> Union[ExplicitSpecDocument, BenchmarkSpecDocument]:
    try:
        return _SPEC_ADAPTER.validate_python(data)
    except ValidationError as exc:
        raise InvalidInputError("Spec document failed validation.", {"errors": _validation_details(exc)})


def validate_spec_document(data: Any) -> List[str]:
    """Return every problem with a spec document; empty when it builds."""
    if not isinstance(data, dict):
        return ["Root JSON must be an object."]
    try:
        build_spec(parse_spec_document(data))
    except InvalidInputError as exc:
        return list(exc.details.get("errors", [exc.message]))
    return []


def build_spec(document: Union[ExplicitSpecDocument, BenchmarkSpecDocument]) -> FiniteMdpSpec:
    if isinstance(document, BenchmarkSpecDocument):
        return build_benchmark(document.benchmark)
    n = len(document.initial_dist)
    return FiniteMdpSpec(
        state_count=n,
        kernel0=document.kernel0,
        kernel1=document.kernel1,
        outcome_mean=document.outcome_mean,
        noise_sd=document.noise_sd,
        initial_dist=document.initial_dist,
        noise_law=document.noise_law,
        schedule=tuple(
            (r.start, Regime(np.array(r.kernel0), np.array(r.kernel1), np.array(r.outcome_mean)))
            for r in document.schedule
        ),
        name=document.name,
    )


def spec_to_document(spec: FiniteMdpSpec) -> Dict[str, Any]:
    """Explicit JSON-ready document for any spec."""
    return {
        "kind": "explicit",
        "name": spec.name,
        "kernel0": spec.kernel0.tolist(),
        "kernel1": spec.kernel1.tolist(),
        "outcome_mean": spec.outcome_mean.tolist(),
        "noise_sd": spec.noise_sd,
        "initial_dist": spec.initial_dist.tolist(),
        "noise_law": spec.noise_law,
        "schedule": [
            {
                "start": start,
                "kernel0": regime.kernel0.tolist(),
                "kernel1": regime.kernel1.tolist(),
                "outcome_mean": regime.outcome_mean.tolist(),
            }
            for start, regime in spec.schedule
        ],
    }


def read_json(path: Path) -> Any:
    path = Path(path)
    if not path.exists():
        raise InvalidInputError(f"File not found: {path}", {"path": str(path)})
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise InvalidInputError(f"{path} is not valid JSON: {exc}", {"path": str(path)})


def load_spec(path: Optional[Path] = None) -> FiniteMdpSpec:
    """Load a spec file; the bundled benchmark when no path is given."""
    return build_spec(parse_spec_document(read_json(Path(path) if path else DEFAULT_SPEC_FILE)))


def save_spec(spec: FiniteMdpSpec, path: Path) -> Path:
    out = Path(path)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(spec_to_document(spec), indent=2), encoding="utf-8")
    return out


def write_frame(frame: pd.DataFrame, path: Path, float_format: str = CSV_FLOAT_FORMAT) -> Path:
    out = Path(path)
    out.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(out, index=False, float_format=float_format, lineterminator="\n")
    return out


def write_trajectory_csv(trajectory: Trajectory, path: Path) -> Path:
    return write_frame(trajectory.to_frame(), path)


def read_trajectory_csv(path: Path) -> Trajectory:
    path = Path(path)
    if not path.exists():
        raise InvalidInputError(f"File not found: {path}", {"path": str(path)})
    frame = pd.read_csv(path)
    missing = [c for c in TRAJECTORY_COLUMNS if c not in frame.columns]
    if missing:
        raise InvalidInputError(f"Trajectory CSV lacks columns {missing}.", {"path": str(path)})
    frame = frame.sort_values("t")
    t = frame["t"].to_numpy()
    if t.size == 0 or not np.array_equal(t, np.arange(t[0], t[0] + t.size)):
        raise InvalidInputError("Trajectory periods must be consecutive.", {"path": str(path)})
    return Trajectory(
        horizon=int(t.size),
        treatments=frame["w"].to_numpy(dtype=np.int64),
        states=frame["s"].to_numpy(dtype=np.int64),
        outcomes=frame["y"].to_numpy(dtype=float),
        start_time=int(t[0]),
    )


def write_plan_csv(plan: AssignmentPlan, path: Path) -> Path:
    return write_frame(plan.to_frame(), path)
