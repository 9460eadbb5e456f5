import json
import logging
import math
import os
import sys
from fractions import Fraction
from typing import Any, Union

import numpy as np
from pydantic import BaseModel
from xxhash import xxh64

Number = Union[int, float, Fraction]

LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"


class Settings(BaseModel):
    seed: int = 0
    tol: float = 1e-9
    log_level: str = "WARNING"

    @classmethod
    def from_env(cls) -> "Settings":
        # Expects load_dotenv() to have run already
        settings = cls()
        if os.getenv("DC_RATES_SEED"):
            settings.seed = int(os.environ["DC_RATES_SEED"])
        if os.getenv("DC_RATES_TOL"):
            settings.tol = float(os.environ["DC_RATES_TOL"])
        if os.getenv("DC_RATES_LOG_LEVEL"):
            settings.log_level = os.environ["DC_RATES_LOG_LEVEL"].upper()
        return settings


def setup_logging(level: str = "WARNING") -> None:
    logging.basicConfig(
        level=getattr(logging, level.upper(), logging.WARNING),
        format=LOG_FORMAT,
        stream=sys.stderr,
    )


def instance_hash(payload: dict) -> str:
    """Content id of an instance or run payload, independent of key order."""
    return xxh64(json.dumps(jsonable(payload), sort_keys=True)).hexdigest()


def parse_extended_real(text: Union[str, Number]) -> Number:
    """Parse a curvature value from the command line or a JSON file.

    Decimal strings become exact fractions, so "0.9" is 9/10 and certificate
    checks on CLI input run in exact arithmetic. "inf" and "+inf" map to
    math.inf; "-inf" is rejected because curvature lower bounds must be finite
    and no upper bound can be minus infinity.
    """
    if isinstance(text, (int, Fraction)):
        return text
    if isinstance(text, float):
        if math.isnan(text) or text == -math.inf:
            raise ValueError(f"Invalid curvature value: {text}")
        return text
    value = text.strip().lower()
    if value in ("inf", "+inf", "infinity", "+infinity"):
        return math.inf
    if value.startswith("-inf"):
        raise ValueError(f"Invalid curvature value: {text}")
    try:
        return Fraction(value)
    except ValueError:
        raise ValueError(f"Invalid curvature value: {text}")


def parse_vector(text: str) -> np.ndarray:
    try:
        return np.array([float(v) for v in text.split(",") if v.strip()], dtype=float)
    except ValueError:
        raise ValueError(f"Invalid vector: {text}")


def jsonable(value: Any) -> Any:
    """Convert numbers, arrays and enums to plain JSON types.

    Fractions become floats and infinities become the string "inf", matching
    the instance schema.
    """
    if isinstance(value, dict):
        return {str(k): jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return jsonable(value.tolist())
    if isinstance(value, (Fraction, np.floating)):
        value = float(value)
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, float) and math.isinf(value):
        return "inf" if value > 0 else "-inf"
    if hasattr(value, "value") and not isinstance(value, (int, float, str)):
        return value.value
    return value
