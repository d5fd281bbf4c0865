from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import Tape


@dataclass
class GradCheckReport:
    max_rel_error: float
    per_param: dict
    passed: bool
    tolerance: float


def _rel(a, b):
    denom = max(np.linalg.norm(a), np.linalg.norm(b))
    if denom == 0.0:
        return 0.0
    return float(np.linalg.norm(a - b) / denom)


def grad_check(build, params: dict, tolerance: float = 1e-4, h: float = 1e-4,
               max_entries: int | None = None, rng=None) -> GradCheckReport:
    """Compare tape gradients with central finite differences.

    ``build()`` must rebuild the scalar loss from the current values of
    ``params`` (a dict of leaf tensors). With ``max_entries`` set, each
    parameter is probed on a random subset of that many entries.
    """
    with Tape() as tape:
        loss = build()
    analytic = tape.backward(loss, params)

    per_param = {}
    for name, p in params.items():
        flat = p.data.reshape(-1)
        idx = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            gen = rng if rng is not None else np.random.default_rng(0)
            idx = np.sort(gen.choice(flat.size, size=max_entries, replace=False))
        numeric = np.empty(len(idx))
        for k, i in enumerate(idx):
            orig = flat[i]
            flat[i] = orig + h
            up = float(build().data)
            flat[i] = orig - h
            down = float(build().data)
            flat[i] = orig
            numeric[k] = (up - down) / (2 * h)
        per_param[name] = _rel(analytic[name].reshape(-1)[idx], numeric)
    worst = max(per_param.values()) if per_param else 0.0
    return GradCheckReport(worst, per_param, worst <= tolerance, tolerance)
