"""Configuration management for fibospec.

Settings come from environment variables (optionally loaded from a ``.env``
file). Numerical defaults are grouped into small dataclasses that the modules
receive explicitly.
"""

import os
from dataclasses import dataclass, field

from dotenv import load_dotenv

# No typing imports needed here due to Python 3.10+ syntax

TRUE_VALUES = ["true", "1", "yes", "y"]


@dataclass(frozen=True)
class EscapeParams:
    """Escape test for trace-map orbits."""

    radius: float = 10.0
    max_iter: int = 10_000
    # Consecutive growth steps required before an orbit counts as escaped
    growth_steps: int = 3


@dataclass(frozen=True)
class Budgets:
    """Work caps that turn runaway computations into BudgetExceeded."""

    node_limit: int = 2**20
    word_cap: int = 2**20
    term_budget: int = 300_000_000
    power_iterations: int = 5_000


@dataclass
class Settings:
    """Main configuration container."""

    output_dir: str = "artifacts"
    workers: int = field(default_factory=lambda: os.cpu_count() or 1)
    seed: int = 20240501
    log_level: str = "INFO"
    # Artifact format, json or csv
    output_format: str = "json"
    bracket_radius: float = 1e-2
    write_manifest: bool = True
    escape: EscapeParams = field(default_factory=EscapeParams)
    budgets: Budgets = field(default_factory=Budgets)


def _get_int(name: str, default: int) -> int:
    raw = os.getenv(name)
    if raw is None or raw == "":
        return default
    try:
        return int(float(raw))
    except ValueError as e:
        raise ValueError(f"Invalid integer for {name}: {raw!r}") from e


def _get_float(name: str, default: float) -> float:
    raw = os.getenv(name)
    if raw is None or raw == "":
        return default
    try:
        return float(raw)
    except ValueError as e:
        raise ValueError(f"Invalid number for {name}: {raw!r}") from e


def load_config(env_file: str | None = None) -> Settings:
    """Load configuration from environment variables.

    Args:
        env_file: Optional path to .env file

    Returns:
        Settings object with loaded values

    Raises:
        ValueError: If a variable holds a malformed value
    """
    if env_file:
        load_dotenv(env_file)
    else:
        # Try to load from default locations
        load_dotenv()

    output_format = os.getenv("FIBOSPEC_FORMAT", "json").lower()
    if output_format not in ("json", "csv"):
        raise ValueError(f"FIBOSPEC_FORMAT must be json or csv, got {output_format}")

    workers = _get_int("FIBOSPEC_WORKERS", os.cpu_count() or 1)
    if workers < 1:
        raise ValueError("FIBOSPEC_WORKERS must be at least 1")

    radius = _get_float("FIBOSPEC_ESCAPE_RADIUS", 10.0)
    max_iter = _get_int("FIBOSPEC_MAX_ITER", 10_000)

    write_manifest_str = os.getenv("FIBOSPEC_WRITE_MANIFEST", "true").lower()

    return Settings(
        output_dir=os.getenv("FIBOSPEC_OUTPUT_DIR", "artifacts"),
        workers=workers,
        seed=_get_int("FIBOSPEC_SEED", 20240501),
        log_level=os.getenv("FIBOSPEC_LOG_LEVEL", "INFO").upper(),
        output_format=output_format,
        bracket_radius=_get_float("FIBOSPEC_BRACKET_RADIUS", 1e-2),
        write_manifest=write_manifest_str in TRUE_VALUES,
        escape=EscapeParams(radius=radius, max_iter=max_iter),
        budgets=Budgets(
            node_limit=_get_int("FIBOSPEC_NODE_LIMIT", 2**20),
            word_cap=_get_int("FIBOSPEC_WORD_CAP", 2**20),
            term_budget=_get_int("FIBOSPEC_TERM_BUDGET", 300_000_000),
        ),
    )
