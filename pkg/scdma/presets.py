"""
Published signature designs shipped as named assets: single-resource optima
for K <= 6 users, the multi-resource optima of the worked examples, and the
suboptimal pi/4 two-user vector. Every preset carries its published minimum
distance. Indices are 0-based.
"""

import math
from typing import Dict, List, NamedTuple, Optional

from scdma.errors import InvalidInputError
from scdma.signature import SignatureMatrix, from_rows

PI = math.pi


class Preset(NamedTuple):
    name: str
    description: str
    matrix: SignatureMatrix
    d_min: float
    # how closely the stored phases reproduce the published d_min
    d_min_tol: float


# Single-resource optima: K -> (phases in units of pi, delta_K)
SINGLE_RESOURCE: Dict[int, tuple] = {
    1: ((0.0,), math.sqrt(2.0)),
    2: ((0.0, 1.0 / 6.0), math.sqrt(3.0) - 1.0),
    3: ((0.0, 0.09738, 0.40262), 0.4310),
    4: ((0.0, 0.0477, 0.0947, 0.1965), 0.2086),
    5: ((0.0, 0.0851, 0.1368, 0.1631, 0.1894), 0.1142),
    6: ((0.0, 0.02661, 0.06636, 0.16964, 0.47323, 0.48661), 0.0595),
}


def single_resource_deltas() -> Dict[int, float]:
    """delta_K, the best minimum distance of K users on one resource"""
    return {k: delta for k, (_, delta) in SINGLE_RESOURCE.items()}


def single_resource_vector(n_users: int) -> SignatureMatrix:
    if n_users not in SINGLE_RESOURCE:
        raise InvalidInputError(f"presets: no single-resource optimum for K={n_users}")
    phases, _ = SINGLE_RESOURCE[n_users]
    return from_rows([[p * PI for p in phases]])


def _optimal_4x6() -> SignatureMatrix:
    """Optimal labeling of the 6-user 4-resource graph with four length-6 cycles"""
    return from_rows([
        [0.0, 0.1431 * PI, 0.2021 * PI, None, None, None],
        [0.0, None, None, 0.3127 * PI, 0.3765 * PI, None],
        [None, 0.1431 * PI, None, 0.5736 * PI, None, 0.2667 * PI],
        [None, None, 0.2021 * PI, None, 0.3935 * PI, 0.3078 * PI],
    ])


def _family1_4x6() -> SignatureMatrix:
    """6-user 4-resource code from the single-cycle family (K=3, q=2)"""
    return from_rows([
        [0.0, None, PI / 6, None, None, PI / 6],
        [None, 0.0, None, PI / 6, PI / 3, None],
        [None, None, PI / 6, None, PI / 3, None],
        [None, None, None, PI / 6, None, PI],
    ])


def _family1_6x8() -> SignatureMatrix:
    """8-user 6-resource code from the single-cycle family (K=4, q=2)"""
    return from_rows([
        [0.0, None, PI / 6, None, None, None, None, PI / 6],
        [None, PI / 3, None, PI / 6, None, None, PI / 6, None],
        [None, None, PI / 6, None, PI / 3, None, None, None],
        [None, None, None, PI / 6, None, PI / 3, None, None],
        [None, None, None, None, PI / 3, None, PI / 6, None],
        [None, None, None, None, None, PI / 3, None, PI / 6],
    ])


# Column phases (units of pi) of the 8-user 4-resource optimum, users 1..7,
# and the phase of its single loop edge (2, 5)
_FAMILY2_COLUMNS = (0.2618, 0.1435, 0.1279, 0.2297, 0.3505, 0.3935, 0.361)
_FAMILY2_LOOP = 0.2269


def _family2_4x8() -> SignatureMatrix:
    """8-user 4-resource code from the banded family (K=4, q=2)"""
    t = [0.0] + [p * PI for p in _FAMILY2_COLUMNS]
    loop = _FAMILY2_LOOP * PI
    return from_rows([
        [t[0], None, t[2], None, t[4], None, None, None],
        [None, t[1], None, t[3], None, t[5], None, None],
        [None, None, t[2], None, None, loop, t[6], None],
        [None, None, None, t[3], t[4], None, None, t[7]],
    ])


def _registry() -> Dict[str, Preset]:
    presets = {}
    for k, (phases, delta) in SINGLE_RESOURCE.items():
        exact = k <= 2
        tol = 1e-9 if exact else 1e-4
        presets[f"single{k}"] = Preset(
            f"single{k}",
            f"{k}-user single-resource optimum",
            single_resource_vector(k),
            delta,
            tol,
        )
    presets["two_user_pi4"] = Preset(
        "two_user_pi4",
        "two-user vector [1, e^{i pi/4}] (suboptimal)",
        from_rows([[0.0, PI / 4]]),
        2.0 - math.sqrt(2.0),
        1e-9,
    )
    presets["opt4x6"] = Preset(
        "opt4x6", "6-user 4-resource optimum on the degree-3 regular graph",
        _optimal_4x6(), 1.3726, 1e-4,
    )
    presets["c1_4x6"] = Preset(
        "c1_4x6", "6-user 4-resource single-cycle family code (K=3, q=2)",
        _family1_4x6(), 1.2679, 1e-4,
    )
    presets["c1_6x8"] = Preset(
        "c1_6x8", "8-user 6-resource single-cycle family code (K=4, q=2)",
        _family1_6x8(), math.sqrt(2.0), 1e-9,
    )
    presets["c2_4x8"] = Preset(
        "c2_4x8", "8-user 4-resource banded family code (K=4, q=2)",
        _family2_4x8(), 0.8305, 1e-4,
    )
    return presets


PRESETS = _registry()


def get_preset(name: str) -> Preset:
    try:
        return PRESETS[name]
    except KeyError:
        raise InvalidInputError(
            f"presets: unknown preset {name!r}; choose from {', '.join(sorted(PRESETS))}"
        ) from None


def list_presets() -> List[Preset]:
    return [PRESETS[name] for name in sorted(PRESETS)]


def presets_on_graph(graph) -> List[Preset]:
    """Presets whose factor graph equals `graph`"""
    return [p for p in list_presets() if p.matrix.graph == graph]


def family_parameters(name: str) -> Optional[dict]:
    """Construction arguments that rebuild a family preset"""
    if name == "c1_4x6":
        return {
            "n_blocks": 3, "q": 2,
            "v": [[PI / 6, PI / 6], [PI / 3, PI / 6], [PI / 3, PI]],
        }
    if name == "c1_6x8":
        return {
            "n_blocks": 4, "q": 2,
            "v": [[PI / 6, PI / 6], [PI / 3, PI / 3], [PI / 6, PI / 6], [PI / 6, PI / 6]],
            "lead": [0.0, PI / 3],
        }
    if name == "c2_4x8":
        t = [0.0] + [p * PI for p in _FAMILY2_COLUMNS]
        return {
            "n_blocks": 4, "q": 2,
            "v": [[t[2], t[3]], [t[4], t[5]], [t[6], t[7]]],
            "w": [[t[4], _FAMILY2_LOOP * PI]],
            "lead": [0.0, t[1]],
        }
    return None
