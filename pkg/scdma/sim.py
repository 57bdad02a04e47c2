"""
Seeded AWGN Monte-Carlo harness: word, symbol and bit error rates per
Eb/N0 point with the union bound alongside.

Trials are drawn in fixed-size batches; batch b of SNR point i uses the
generator default_rng([seed, i, b]), so results do not depend on how many
threads run the batches.
"""

from concurrent.futures import ThreadPoolExecutor
from datetime import datetime
import json
import logging
import math
import time
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel
from scipy.stats import norm

from scdma.config import config
from scdma.constellation import ALPHABET_SIZE, bit_errors, symbols_from_indices
from scdma.detect import DETECTORS, Observation, detect
from scdma.distance import check_cap, distance_enumerator, union_bound
from scdma.errors import EnumerationLimitError, InvalidInputError
from scdma.signature import SignatureMatrix

logger = logging.getLogger(__name__)

Z_95 = float(norm.ppf(0.975))


def transmit(matrix: SignatureMatrix, x, h: complex = 1.0, n0: float = 0.0,
             rng: Optional[np.random.Generator] = None) -> Observation:
    """
    y = h S x + z with z ~ CN(0, n0 I): variance n0 / 2 per real dimension.
    `x` holds symbol indices, shape (K,) or (B, K).
    """
    if n0 < 0:
        raise InvalidInputError("sim: noise variance must be non-negative")
    rng = np.random.default_rng() if rng is None else rng
    clean = h * matrix.encode(symbols_from_indices(x))
    if n0 > 0:
        scale = math.sqrt(n0 / 2.0)
        noise = scale * (rng.standard_normal(clean.shape) + 1j * rng.standard_normal(clean.shape))
        clean = clean + noise
    return Observation(clean, h, n0)


def energy_per_bit(matrix: SignatureMatrix) -> float:
    """E_b = sum_k w_k / (2K)"""
    return float(matrix.spreading_lengths.sum()) / (2.0 * matrix.n_cols)


def eb_n0_to_n0(matrix: SignatureMatrix, eb_n0_db):
    n0 = energy_per_bit(matrix) * np.power(10.0, -np.asarray(eb_n0_db, dtype=np.float64) / 10.0)
    return n0 if n0.ndim else float(n0)


def wilson_interval(errors: int, trials: int) -> Tuple[float, float]:
    """Wilson score 95% interval for an error probability"""
    if trials == 0:
        return 0.0, 1.0
    p = errors / trials
    z2 = Z_95 ** 2
    center = (p + z2 / (2 * trials)) / (1 + z2 / trials)
    half = Z_95 * math.sqrt(p * (1 - p) / trials + z2 / (4 * trials ** 2)) / (1 + z2 / trials)
    return max(0.0, center - half), min(1.0, center + half)


def parse_grid(text: str) -> List[float]:
    """'a:b:step' (inclusive of b) or a comma-separated list"""
    try:
        if ":" in text:
            parts = [float(p) for p in text.split(":")]
            if len(parts) != 3 or parts[2] <= 0:
                raise ValueError
            start, stop, step = parts
            n = int(math.floor((stop - start) / step + 1e-9)) + 1
            return [round(start + i * step, 10) for i in range(max(0, n))]
        return [float(p) for p in text.split(",") if p.strip()]
    except ValueError:
        raise InvalidInputError(f"sim: cannot read grid {text!r}; use a:b:step or a,b,c") from None


class SnrPoint(BaseModel):
    eb_n0_db: float
    n0: float
    trials: int
    word_errors: int
    symbol_errors: int
    bit_errors: int
    union_bound: Optional[float] = None
    stopped_early: bool = False

    @property
    def wer(self) -> float:
        return self.word_errors / self.trials if self.trials else 0.0

    @property
    def wer_interval(self) -> Tuple[float, float]:
        return wilson_interval(self.word_errors, self.trials)


class SimulationReport(BaseModel):
    matrix: dict
    detector: str
    iterations: Optional[int]
    seed: int
    trials: int
    early_stop: bool
    points: List[SnrPoint]
    settings: dict
    started_at: str
    elapsed_s: float

    def to_frame(self) -> pd.DataFrame:
        K = self.matrix["k"]
        rows = []
        for p in self.points:
            low, high = p.wer_interval
            rows.append({
                "eb_n0_db": p.eb_n0_db,
                "trials": p.trials,
                "word_errors": p.word_errors,
                "wer": p.wer,
                "wer_ci95": (high - low) / 2,
                "union_bound": p.union_bound,
                "wer_ci_low": low,
                "wer_ci_high": high,
                "ser": p.symbol_errors / (K * p.trials) if p.trials else 0.0,
                "ber": p.bit_errors / (2 * K * p.trials) if p.trials else 0.0,
                "n0": p.n0,
            })
        return pd.DataFrame(rows)

    def write(self, path: Union[str, Path]) -> Path:
        """CSV of the curve at `path` plus a JSON sidecar with the full record"""
        path = Path(path)
        self.to_frame().to_csv(path, index=False)
        sidecar = path.with_suffix(".json")
        sidecar.write_text(self.model_dump_json(indent=2) + "\n")
        logger.info(f"Wrote {len(self.points)} point(s) to {path} and {sidecar}")
        return sidecar


def _run_batch(matrix: SignatureMatrix, detector: str, iterations: Optional[int], n0: float,
               seed: int, snr_index: int, batch_index: int, size: int) -> Tuple[int, int, int]:
    rng = np.random.default_rng([seed, snr_index, batch_index])
    x = rng.integers(0, ALPHABET_SIZE, size=(size, matrix.n_cols))
    obs = transmit(matrix, x, 1.0, n0, rng)
    decided = detect(detector, matrix, obs, iterations, rng).indices
    wrong = decided != x
    return (
        int(wrong.any(axis=1).sum()),
        int(wrong.sum()),
        int(bit_errors(x, decided).sum()),
    )


def run_wer(matrix: SignatureMatrix, detector: str, eb_n0_grid: Sequence[float],
            trials: Optional[int] = None, seed: int = 0, iterations: Optional[int] = None,
            early_stop: bool = False, threads: Optional[int] = None) -> SimulationReport:
    """
    Simulate `trials` uniformly drawn symbol vectors per Eb/N0 point with
    h = 1. With `early_stop`, a point ends after the first batch that brings
    the word errors to EARLY_STOP_ERRORS.
    """
    if detector not in DETECTORS:
        raise InvalidInputError(f"sim: unknown detector {detector!r}; choose from {', '.join(DETECTORS)}")
    if detector == "ml":
        check_cap(matrix.n_cols)
    trials = config.TRIALS if trials is None else int(trials)
    if trials < 1:
        raise InvalidInputError("sim: need at least one trial per point")
    if detector != "ml":
        iterations = config.BP_ITERATIONS if iterations is None else iterations
    threads = config.THREADS if threads is None else threads
    grid = [float(g) for g in eb_n0_grid]
    n0_grid = [eb_n0_to_n0(matrix, g) for g in grid]

    try:
        bounds = np.atleast_1d(union_bound(distance_enumerator(matrix), n0_grid)).tolist()
    except EnumerationLimitError:
        logger.warning("Union bound skipped: too many users to enumerate")
        bounds = [None] * len(grid)

    started = datetime.now()
    t0 = time.perf_counter()
    sizes = [config.BATCH_SIZE] * (trials // config.BATCH_SIZE)
    if trials % config.BATCH_SIZE:
        sizes.append(trials % config.BATCH_SIZE)

    points = []
    for i, (eb_n0_db, n0) in enumerate(zip(grid, n0_grid)):
        done = words = symbols = bits = 0
        stopped = False
        # batches run in waves of `threads`; counts are merged in batch order
        wave = max(1, threads)
        for lo in range(0, len(sizes), wave):
            indices = range(lo, min(lo + wave, len(sizes)))

            def run(b):
                return _run_batch(matrix, detector, iterations, n0, seed, i, b, sizes[b])

            if wave > 1 and len(indices) > 1:
                with ThreadPoolExecutor(max_workers=wave) as pool:
                    results = list(pool.map(run, indices))
            else:
                results = [run(b) for b in indices]
            for b, (w, s, e) in zip(indices, results):
                done += sizes[b]
                words += w
                symbols += s
                bits += e
                if early_stop and words >= config.EARLY_STOP_ERRORS:
                    stopped = True
                    break
            if stopped:
                break

        point = SnrPoint(eb_n0_db=eb_n0_db, n0=n0, trials=done, word_errors=words,
                         symbol_errors=symbols, bit_errors=bits, union_bound=bounds[i],
                         stopped_early=stopped)
        points.append(point)
        logger.info(
            f"Eb/N0 {eb_n0_db:g} dB: WER {point.wer:.3e} ({words}/{done})"
            + (f", union bound {bounds[i]:.3e}" if bounds[i] is not None else "")
        )
        if stopped:
            logger.warning(f"Early stop after {done} trial(s) at {eb_n0_db:g} dB")

    return SimulationReport(
        matrix=matrix.to_dict(),
        detector=detector,
        iterations=iterations,
        seed=seed,
        trials=trials,
        early_stop=early_stop,
        points=points,
        settings=json.loads(json.dumps(config.as_dict(), default=str)),
        started_at=started.isoformat(timespec="seconds"),
        elapsed_s=round(time.perf_counter() - t0, 3),
    )
