"""Finite-difference verification of tape gradients.

Central differences with h = 1e-5 at float64; the reported figure is the
worst relative error |analytic - numeric| / max(|analytic|, |numeric|, 1e-8)
over all checked elements.  `max_elems_per_param` caps the number of perturbed
elements per tensor (uniform random without replacement) so whole-network
checks stay inside a time budget.
"""

from __future__ import annotations

import numpy as np

from .autodiff import Parameter, Tape


def grad_check(f, params: list[Parameter], h: float = 1e-5,
               max_elems_per_param: int | None = None,
               rng: np.random.Generator | None = None) -> float:
    for p in params:
        p.zero_grad()
    with Tape() as tape:
        loss = f()
        tape.backward(loss)
    analytic = []
    for p in params:
        analytic.append(p.grad.copy() if p.grad is not None else np.zeros_like(p.data))

    if rng is None:
        rng = np.random.default_rng(0)
    worst = 0.0
    for p, ana in zip(params, analytic):
        flat = p.data.reshape(-1)
        ana_flat = ana.reshape(-1)
        n = flat.size
        if max_elems_per_param is None or n <= max_elems_per_param:
            idxs = range(n)
        else:
            idxs = rng.choice(n, size=max_elems_per_param, replace=False)
        for i in idxs:
            orig = flat[i]
            flat[i] = orig + h
            fp = f().item()
            flat[i] = orig - h
            fm = f().item()
            flat[i] = orig
            numeric = (fp - fm) / (2.0 * h)
            a = ana_flat[i]
            rel = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
            if rel > worst:
                worst = rel
    return worst
