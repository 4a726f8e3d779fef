"""Adam update and finite-difference gradient checking."""

from __future__ import annotations

from typing import Any, Callable, Mapping

import numpy as np

BETA1, BETA2, EPS = 0.9, 0.999, 1e-8


def init_adam_state(params: Mapping[str, np.ndarray]) -> dict[str, Any]:
    return {
        "t": 0,
        "m": {k: np.zeros_like(v) for k, v in params.items()},
        "v": {k: np.zeros_like(v) for k, v in params.items()},
    }


def optimizer_step(params: Mapping[str, np.ndarray], grads: Mapping[str, np.ndarray], state: Mapping[str, Any],
                   lr: float) -> tuple[dict[str, np.ndarray], dict[str, Any]]:
    """One Adam step; returns new params and state, inputs untouched."""
    for name, g in grads.items():
        if name not in params:
            raise KeyError(f"gradient for unknown parameter {name!r}")
        if g.shape != params[name].shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {params[name].shape} for {name!r}")
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient in {name!r}")
    t = state["t"] + 1
    new_params, new_m, new_v = {}, {}, {}
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            new_params[name], new_m[name], new_v[name] = p, state["m"][name], state["v"][name]
            continue
        m = BETA1 * state["m"][name] + (1 - BETA1) * g
        v = BETA2 * state["v"][name] + (1 - BETA2) * g * g
        m_hat = m / (1 - BETA1**t)
        v_hat = v / (1 - BETA2**t)
        new_params[name] = p - lr * m_hat / (np.sqrt(v_hat) + EPS)
        new_m[name], new_v[name] = m, v
    return new_params, {"t": t, "m": new_m, "v": new_v}


LossFn = Callable[..., tuple[float, Mapping[str, np.ndarray]]]


def grad_check(loss_fn: LossFn, params: Mapping[str, np.ndarray], inputs: Any = None, h: float = 1e-5,
               n_samples: int = 200, seed: int = 0, floor: float = 1e-8) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``loss_fn(params, inputs)`` (or ``loss_fn(params)`` when ``inputs`` is
    None) returns ``(loss, grads)``. ``n_samples`` parameter entries are drawn
    uniformly over all entries (all of them if there are fewer). The relative
    error of one entry is ``|a - n| / max(|a|, |n|, floor)``.
    """
    call = (lambda p: loss_fn(p)) if inputs is None else (lambda p: loss_fn(p, inputs))
    loss0, grads = call(params)
    if not np.isfinite(loss0):
        raise FloatingPointError("loss is not finite")
    names = sorted(params)
    sizes = np.array([params[k].size for k in names])
    total = int(sizes.sum())
    rng = np.random.default_rng(seed)
    flat = np.arange(total) if total <= n_samples else np.sort(rng.choice(total, n_samples, replace=False))
    bounds = np.cumsum(sizes)
    work = {k: v.copy() for k, v in params.items()}
    worst = 0.0
    for f in flat:
        which = int(np.searchsorted(bounds, f, side="right"))
        name = names[which]
        local = int(f - (bounds[which - 1] if which else 0))
        arr = work[name].reshape(-1)
        orig = arr[local]
        arr[local] = orig + h
        lp = call(work)[0]
        arr[local] = orig - h
        lm = call(work)[0]
        arr[local] = orig
        if not (np.isfinite(lp) and np.isfinite(lm)):
            raise FloatingPointError(f"loss not finite while perturbing {name!r}")
        numeric = (lp - lm) / (2 * h)
        analytic = float(np.asarray(grads[name]).reshape(-1)[local]) if name in grads else 0.0
        err = abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)
        worst = max(worst, err)
    return worst
