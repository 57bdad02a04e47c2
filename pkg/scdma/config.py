import math
import os
from dotenv import load_dotenv

load_dotenv()


def _env_float(name: str, default: float) -> float:
    value = os.getenv(name)
    return float(value) if value not in (None, "") else default


def _env_int(name: str, default: int) -> int:
    value = os.getenv(name)
    return int(value) if value not in (None, "") else default


class Config:
    # Exhaustive enumeration over the difference alphabet costs 9^K
    ENUMERATION_CAP = _env_int("SCDMA_ENUMERATION_CAP", 8)
    CHUNK_SIZE = _env_int("SCDMA_CHUNK_SIZE", 2 ** 18)
    THREADS = _env_int("SCDMA_THREADS", 1)

    # Tolerances
    DISTANCE_TOL = _env_float("SCDMA_DISTANCE_TOL", 1e-9)
    PHASE_TOL = _env_float("SCDMA_PHASE_TOL", 1e-9)
    TIE_TOL = _env_float("SCDMA_TIE_TOL", 1e-12)

    # Signature search
    GRID_STEP = _env_float("SCDMA_GRID_STEP", math.pi / 60)
    REFINE_TOL = _env_float("SCDMA_REFINE_TOL", 1e-5)
    MULTISTART = _env_int("SCDMA_MULTISTART", 8)
    # refinement evaluations that buy one more start beyond MULTISTART
    START_EVALS = _env_int("SCDMA_START_EVALS", 2000)
    # grid steps between any two starts
    START_SPACING = _env_int("SCDMA_START_SPACING", 3)
    RESTART_SCALE = _env_float("SCDMA_RESTART_SCALE", 4 * math.pi / 60)
    RESTART_PATIENCE = _env_int("SCDMA_RESTART_PATIENCE", 20)
    BUDGET_SMALL = _env_int("SCDMA_BUDGET_SMALL", 200_000)  # <= 5 free angles
    BUDGET_LARGE = _env_int("SCDMA_BUDGET_LARGE", 2_000_000)

    # Monte-Carlo
    TRIALS = _env_int("SCDMA_TRIALS", 100_000)
    EARLY_STOP_ERRORS = _env_int("SCDMA_EARLY_STOP_ERRORS", 400)
    BATCH_SIZE = _env_int("SCDMA_BATCH_SIZE", 1000)
    BP_ITERATIONS = _env_int("SCDMA_BP_ITERATIONS", 6)

    def default_budget(self, free_angles: int) -> int:
        """Evaluation budget for a search over `free_angles` dimensions"""
        return self.BUDGET_SMALL if free_angles <= 5 else self.BUDGET_LARGE

    def as_dict(self) -> dict:
        return {
            name: getattr(self, name)
            for name in dir(self)
            if name.isupper()
        }


config = Config()
