"""Deterministic synthetic task programs.

Each bundled activity computes its outputs as a pure function of its input
fields, so a run is reproducible from the workload seed alone. Durations
are sampled per task from uniform(0.5*mean, 1.5*mean), keyed by
(workload seed, task id), and failures are drawn the same way so retries
behave identically across runs.
"""

from __future__ import annotations

import random
import zlib


def _r(x: float) -> float:
    return round(x, 6)


def fn_generic_map(fields: dict) -> list[dict]:
    """a,b,c -> x = a*b + c, y = a/c."""
    a, b, c = fields["a"], fields["b"], fields["c"]
    return [{"x": _r(a * b + c), "y": _r(a / c if c else 0.0)}]


def fn_refresh_inputs(fields: dict) -> list[dict]:
    """x,y -> fresh a,b,c so generic chains can alternate stages."""
    x, y = fields["x"], fields["y"]
    return [
        {
            "a": _r(abs(y) * 0.5 + 0.1),
            "b": _r(abs(x) * 0.2 + 5.0),
            "c": _r(abs(x) * 0.1 + 5.0),
        }
    ]


def fn_load_cases(fields: dict) -> list[dict]:
    a, b, c = fields["a"], fields["b"], fields["c"]
    return [{"wind": _r(a * b), "wave": _r(b + c), "depth": _r(a + c)}]


def fn_pre_processing(fields: dict) -> list[dict]:
    wind, wave, depth = fields["wind"], fields["wave"], fields["depth"]
    cx = _r(0.5 * wind + wave)
    cy = _r(0.5 * wave + depth)
    cz = _r(0.5 * depth + wind)
    token = zlib.crc32(f"{cx}|{cy}|{cz}".encode()) & 0xFFFFFFFF
    return [
        {
            "cx": cx,
            "cy": cy,
            "cz": cz,
            "raw_file_path": f"/data/raw/case_{token:08x}.dat",
            "size_bytes": int((cx + cy + cz) * 1024) + 1,
        }
    ]


def fn_stress_analysis(fields: dict) -> list[dict]:
    cx, cy, cz = fields["cx"], fields["cy"], fields["cz"]
    return [{"stress": _r(cx + cy + cz), "strain": _r(abs(cx - cy) + 1.0)}]


def fn_wear_and_tear(fields: dict) -> list[dict]:
    stress, strain = fields["stress"], fields["strain"]
    return [
        {
            "fl": _r((stress * 0.377 + strain * 0.113) % 1.0),
            "wear": _r(stress / (strain + 1.0)),
        }
    ]


def fn_analyze_risers(fields: dict) -> list[dict]:
    fl, wear = fields["fl"], fields["wear"]
    return [{"risk": _r(fl * 10.0), "margin": _r(wear - fl)}]


def fn_damp(fields: dict) -> list[dict]:
    """risk,margin -> risk,margin; padding stage for longer chains."""
    return [{"risk": _r(fields["risk"] * 0.9 + 1.0), "margin": _r(fields["margin"] * 0.9)}]


def fn_filter_positive_margin(fields: dict) -> list[dict]:
    if fields.get("margin", 0) > 0:
        return [{"risk": fields["risk"], "margin": fields["margin"]}]
    return []


def fn_reduce_summary(rows: list[dict]) -> list[dict]:
    total = 0.0
    for row in rows:
        for v in row.values():
            if isinstance(v, (int, float)) and not isinstance(v, bool):
                total += v
                break
    return [{"count": len(rows), "total": _r(total)}]


MAP_FUNCTIONS = {
    "generic_map": fn_generic_map,
    "refresh_inputs": fn_refresh_inputs,
    "load_cases": fn_load_cases,
    "pre_processing": fn_pre_processing,
    "stress_analysis": fn_stress_analysis,
    "wear_and_tear": fn_wear_and_tear,
    "analyze_risers": fn_analyze_risers,
    "damp": fn_damp,
    "filter_positive_margin": fn_filter_positive_margin,
}

REDUCE_FUNCTIONS = {
    "reduce_summary": fn_reduce_summary,
}


def task_rng(seed: int, task_id: int, salt: int = 0) -> random.Random:
    return random.Random((seed * 1_000_003 + task_id) * 31 + salt)


def sample_duration_ms(seed: int, task_id: int, mean_ms: int) -> float:
    if mean_ms <= 0:
        return 0.0
    rng = task_rng(seed, task_id, salt=1)
    return rng.uniform(0.5 * mean_ms, 1.5 * mean_ms)


def draw_failure(seed: int, task_id: int, trial: int, probability: float) -> bool:
    if probability <= 0:
        return False
    rng = task_rng(seed, task_id, salt=100 + trial)
    return rng.random() < probability
