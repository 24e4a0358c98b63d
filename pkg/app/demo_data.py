"""
Random spec generation for demos and tests.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import List

import numpy as np

from app.errors import InvalidInputError
from app.mdp import FiniteMdpSpec
from app.rng import derive_seed, make_generator
from app.settings import get_output_dir
from app.spec_io import spec_to_document

GENERATED_PREFIX = "random_spec_"


def default_spec_dir() -> Path:
    return get_output_dir() / "specs"


def random_spec(
    n_states: int,
    seed: int,
    noise_sd: float = 1.0,
    concentration: float = 1.0,
    mean_range: float = 5.0,
    noise_law: str = "gaussian",
) -> FiniteMdpSpec:
    """
    Dense random spec: Dirichlet kernel rows and initial distribution,
    outcome means uniform on [-mean_range, mean_range].

    Dirichlet rows are strictly positive, so both kernels mix in one step.
    """
    if n_states < 1:
        raise InvalidInputError("n_states must be positive.", {"n_states": n_states})
    rng = make_generator(derive_seed(seed, "random_spec", n_states))
    alpha = np.full(n_states, concentration)
    return FiniteMdpSpec(
        state_count=n_states,
        kernel0=rng.dirichlet(alpha, size=n_states),
        kernel1=rng.dirichlet(alpha, size=n_states),
        outcome_mean=rng.uniform(-mean_range, mean_range, size=(n_states, 2)),
        noise_sd=noise_sd,
        initial_dist=rng.dirichlet(alpha),
        noise_law=noise_law,
        name=f"random-{n_states}-{seed}",
    )


def _next_generated_id(spec_dir: Path) -> int:
    max_idx = 0
    for path in spec_dir.glob(f"{GENERATED_PREFIX}*.json"):
        try:
            max_idx = max(max_idx, int(path.stem.split("_")[-1]))
        except ValueError:
            continue
    return max_idx + 1


def generate_random_specs(
    spec_dir: Path,
    count: int = 5,
    n_states: int = 5,
    seed: int = 42,
    noise_sd: float = 1.0,
) -> List[Path]:
    """Write `count` random spec files and return their paths."""
    spec_dir.mkdir(parents=True, exist_ok=True)
    next_idx = _next_generated_id(spec_dir)
    written: List[Path] = []
    for i in range(count):
        spec = random_spec(n_states, seed + i, noise_sd=noise_sd)
        path = spec_dir / f"{GENERATED_PREFIX}{next_idx:03d}.json"
        next_idx += 1
        path.write_text(json.dumps(spec_to_document(spec), indent=2), encoding="utf-8")
        written.append(path)
    return written


def remove_generated_specs(spec_dir: Path) -> int:
    """Delete generated spec files and return delete count."""
    deleted = 0
    for path in spec_dir.glob(f"{GENERATED_PREFIX}*.json"):
        path.unlink(missing_ok=True)
        deleted += 1
    return deleted
