"""
Tests for the AWGN Monte-Carlo harness
Run with: pytest tests/test_sim.py
The bound-tracking runs are marked slow: pytest -m slow tests/test_sim.py
"""

import json
import math

import numpy as np
import pandas as pd
import pytest

from scdma.config import config
from scdma.constellation import QPSK
from scdma.design import latin_baseline
from scdma.distance import distance_enumerator, min_distance, union_bound
from scdma.errors import InvalidInputError
from scdma.presets import get_preset
from scdma.signature import from_rows
from scdma.sim import (
    energy_per_bit,
    eb_n0_to_n0,
    parse_grid,
    run_wer,
    transmit,
    wilson_interval,
)

TWO_USER = from_rows([[0.0, "pi/6"]])
TWO_USER_PI4 = from_rows([[0.0, "pi/4"]])


def test_energy_per_bit():
    """E_b = sum of spreading lengths over 2K"""
    assert energy_per_bit(TWO_USER) == 0.5
    assert energy_per_bit(get_preset("opt4x6").matrix) == 1.0
    assert eb_n0_to_n0(TWO_USER, 0.0) == pytest.approx(0.5)
    assert eb_n0_to_n0(TWO_USER, 10.0) == pytest.approx(0.05)
    assert eb_n0_to_n0(TWO_USER, [0.0, 10.0]).tolist() == pytest.approx([0.5, 0.05])


def test_transmit_without_noise():
    """N0 = 0 returns the scaled codeword exactly"""
    x = np.array([[0, 3], [2, 1]])
    obs = transmit(TWO_USER, x, h=0.5j, n0=0.0)
    assert np.allclose(obs.y, 0.5j * TWO_USER.encode(QPSK[x]), rtol=0, atol=1e-15)
    with pytest.raises(InvalidInputError):
        transmit(TWO_USER, x, n0=-1.0)


def test_noise_statistics():
    """Complex noise has total variance N0 and uncorrelated resources"""
    rng = np.random.default_rng(10)
    m = get_preset("opt4x6").matrix
    n0 = 0.3
    x = rng.integers(0, 4, size=(250_000, m.n_cols))
    obs = transmit(m, x, 1.0, n0, rng)
    z = obs.y - m.encode(QPSK[x])
    power = np.mean(np.abs(z) ** 2)
    assert abs(power / n0 - 1) < 0.01
    cross = np.mean(z[:, 0] * np.conj(z[:, 1]))
    assert abs(cross) < 5 * n0 / math.sqrt(len(z))
    assert abs(np.mean(z.real ** 2) - n0 / 2) < 0.01 * n0


def test_parse_grid():
    """Ranges include both ends; lists are read as given"""
    assert parse_grid("0:14:2") == [0, 2, 4, 6, 8, 10, 12, 14]
    assert parse_grid("8,10,12") == [8, 10, 12]
    assert parse_grid("0:1:0.25") == [0, 0.25, 0.5, 0.75, 1.0]
    for bad in ("0:1", "0:1:0", "a,b"):
        with pytest.raises(InvalidInputError):
            parse_grid(bad)


def test_wilson_interval():
    """The interval contains the estimate and stays in [0, 1]"""
    low, high = wilson_interval(0, 100)
    assert low < 1e-12 and 0 < high < 0.05
    low, high = wilson_interval(30, 100)
    assert low < 0.3 < high
    assert wilson_interval(0, 0) == (0.0, 1.0)


def test_reproducible_across_threads():
    """Same seed gives the same counts whatever the thread count"""
    a = run_wer(TWO_USER, "ml", [4.0, 8.0], trials=5000, seed=7)
    b = run_wer(TWO_USER, "ml", [4.0, 8.0], trials=5000, seed=7, threads=3)
    c = run_wer(TWO_USER, "ml", [4.0, 8.0], trials=5000, seed=8)
    for p, q in zip(a.points, b.points):
        assert (p.word_errors, p.symbol_errors, p.bit_errors) == (q.word_errors, q.symbol_errors, q.bit_errors)
    assert [p.word_errors for p in a.points] != [p.word_errors for p in c.points]


def test_counts_are_consistent():
    """Word errors <= trials, symbol errors <= K * trials"""
    report = run_wer(get_preset("opt4x6").matrix, "bp", [0.0, 4.0], trials=2000, seed=1, iterations=4)
    for p in report.points:
        assert 0 <= p.word_errors <= p.trials == 2000
        assert p.word_errors <= p.symbol_errors <= 6 * p.trials
        assert p.symbol_errors <= p.bit_errors <= 12 * p.trials
        assert p.union_bound is not None
    assert report.iterations == 4


def test_early_stop():
    """At low SNR a point stops after the batch that reaches the error target"""
    report = run_wer(TWO_USER, "ml", [-5.0], trials=20_000, seed=2, early_stop=True)
    point = report.points[0]
    assert point.stopped_early
    assert point.word_errors >= config.EARLY_STOP_ERRORS
    assert point.trials < 20_000
    assert point.trials % config.BATCH_SIZE == 0


def test_no_errors_at_high_snr():
    """30 dB is error free for the optimal two-user code"""
    report = run_wer(TWO_USER, "ml", [30.0], trials=2000, seed=3)
    assert report.points[0].word_errors == 0


def test_ml_tracks_union_bound():
    """ML word error rate sits below the union bound and within a factor 2 of it"""
    report = run_wer(TWO_USER, "ml", [8.0, 10.0, 12.0], trials=100_000, seed=4)
    for p in report.points:
        assert p.word_errors > 0
        slack = 1 + 3 / math.sqrt(p.word_errors)
        assert p.wer <= p.union_bound * slack
        assert p.wer >= p.union_bound / 2


def test_report_files(tmp_path):
    """CSV with the curve columns plus a JSON sidecar; reruns are byte identical"""
    report = run_wer(TWO_USER, "ml", [6.0, 8.0], trials=3000, seed=5)
    first = tmp_path / "first.csv"
    second = tmp_path / "second.csv"
    report.write(first)
    run_wer(TWO_USER, "ml", [6.0, 8.0], trials=3000, seed=5).write(second)
    assert first.read_bytes() == second.read_bytes()

    frame = pd.read_csv(first)
    for column in ("eb_n0_db", "trials", "word_errors", "wer", "wer_ci95", "union_bound"):
        assert column in frame.columns
    sidecar = json.loads(first.with_suffix(".json").read_text())
    assert sidecar["seed"] == 5
    assert sidecar["detector"] == "ml"
    assert len(sidecar["points"]) == 2


def test_bad_arguments():
    with pytest.raises(InvalidInputError):
        run_wer(TWO_USER, "mmse", [0.0])
    with pytest.raises(InvalidInputError):
        run_wer(TWO_USER, "ml", [0.0], trials=0)


def _crossing(report, target):
    """Eb/N0 where log WER crosses `target`, interpolated between grid points"""
    db = [p.eb_n0_db for p in report.points]
    wer = [p.wer for p in report.points]
    for (d0, w0), (d1, w1) in zip(zip(db, wer), zip(db[1:], wer[1:])):
        if w0 >= target > w1 and w1 > 0:
            t = (math.log(w0) - math.log(target)) / (math.log(w0) - math.log(w1))
            return d0 + t * (d1 - d0)
    raise AssertionError(f"WER curve does not cross {target}")


def _bound_crossing(matrix, target):
    """Eb/N0 where the union bound first drops to `target`, on a 0.001 dB grid"""
    fine = np.arange(0.0, 25.0, 0.001)
    bound = union_bound(distance_enumerator(matrix), eb_n0_to_n0(matrix, fine))
    return float(fine[np.argmax(bound <= target)])


def test_wer_falls_with_eb_n0():
    """Word error rate and union bound both decrease along the grid"""
    report = run_wer(TWO_USER, "ml", [0.0, 4.0, 8.0], trials=4000, seed=2)
    wer = [p.wer for p in report.points]
    assert wer[0] > wer[1] > wer[2]
    assert np.all(np.diff([p.union_bound for p in report.points]) < 0)
    family = run_wer(get_preset("c1_4x6").matrix, "bp", [2.0, 6.0, 10.0], trials=1000, seed=2)
    wer = [p.wer for p in family.points]
    assert wer[0] > wer[1] > wer[2]


@pytest.mark.parametrize("target, gap", [(1e-3, 1.39), (1e-4, 1.54), (1e-5, 1.63)])
def test_pi6_over_pi4_union_bound_gap(target, gap):
    """The union bounds of the pi/6 and pi/4 codes are 1.4 to 1.6 dB apart"""
    assert _bound_crossing(TWO_USER_PI4, target) - _bound_crossing(TWO_USER, target) == pytest.approx(gap, abs=0.02)


def test_pi6_over_pi4_asymptotic_gain():
    """The distance ratio of the two codes is worth 1.94 dB at high SNR"""
    ratio = min_distance(TWO_USER).d_min / min_distance(TWO_USER_PI4).d_min
    assert 20 * math.log10(ratio) == pytest.approx(1.94, abs=0.01)
    assert 20 * math.log10(0.7321 / 0.5858) == pytest.approx(1.94, abs=0.01)


@pytest.mark.slow
def test_pi6_gain_over_pi4_tracks_union_bound():
    """At WER 1e-4 the simulated gain of the pi/6 code matches its union-bound gain"""
    grid = parse_grid("12:18:0.5")
    best = run_wer(TWO_USER, "ml", grid, trials=400_000, seed=6)
    worse = run_wer(TWO_USER_PI4, "ml", grid, trials=400_000, seed=6)
    gap = _crossing(worse, 1e-4) - _crossing(best, 1e-4)
    expected = _bound_crossing(TWO_USER_PI4, 1e-4) - _bound_crossing(TWO_USER, 1e-4)
    assert abs(gap - expected) < 0.3


@pytest.mark.slow
def test_bp_approaches_bound_on_family_code():
    """Six BP iterations on the 6-user family code stay within 0.3 dB of the union bound at WER 1e-3"""
    m = get_preset("c1_4x6").matrix
    at = _bound_crossing(m, 1e-3)
    report = run_wer(m, "bp", [at + 0.3], trials=50_000, seed=7, iterations=6)
    point = report.points[0]
    assert point.wer <= 1e-3 * (1 + 3 / math.sqrt(max(point.word_errors, 1)))


@pytest.mark.slow
def test_optimal_code_beats_latin_labeling():
    """Under ML the 1.3726 code has fewer word errors than the best Latin labeling of its graph"""
    optimal = get_preset("opt4x6").matrix
    latin = latin_baseline(optimal.graph).matrix
    at = [_bound_crossing(optimal, 1e-2)]
    assert union_bound(distance_enumerator(optimal), eb_n0_to_n0(optimal, at[0])) < \
        union_bound(distance_enumerator(latin), eb_n0_to_n0(latin, at[0]))
    ours = run_wer(optimal, "ml", at, trials=20_000, seed=8).points[0]
    theirs = run_wer(latin, "ml", at, trials=20_000, seed=8).points[0]
    assert ours.word_errors < theirs.word_errors


@pytest.mark.slow
def test_family_code_is_best_under_bp():
    """With six BP iterations the single-cycle family code beats both other 6-user codes"""
    family = get_preset("c1_4x6").matrix
    optimal = get_preset("opt4x6").matrix
    latin = latin_baseline(optimal.graph).matrix
    at = [_bound_crossing(family, 1e-3) + 0.3]
    errors = {
        name: run_wer(m, "bp", at, trials=20_000, seed=9, iterations=6).points[0].word_errors
        for name, m in (("family", family), ("optimal", optimal), ("latin", latin))
    }
    assert errors["family"] < errors["optimal"]
    assert errors["family"] < errors["latin"]


if __name__ == '__main__':
    pytest.main([__file__, '-v'])
