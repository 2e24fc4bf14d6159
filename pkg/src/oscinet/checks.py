"""Self-verification routines behind ``oscinet verify``."""
from __future__ import annotations

import math

import numpy as np

from .scattering import Mesh1D, ScatteringProblem, slab_analytic, solve_scattering
from .tensor import ACTIVATIONS, Tensor, activation_forward, affine_forward, grad_check, mul, total


def slab_error(k: float, a0: float, n_elements: int) -> float:
    """Relative L2 error of the nodal scattered field against the exact slab."""
    problem = ScatteringProblem(k, lambda x: np.full_like(x, a0), Mesh1D.uniform(n_elements))
    sol = solve_scattering(problem)
    exact = slab_analytic(k, a0).scattered(sol.nodes)
    return float(np.linalg.norm(sol.nodal - exact) / np.linalg.norm(exact))


def observed_orders(errors, ratio: float = 2.0) -> list[float]:
    return [math.log(e0 / e1) / math.log(ratio) for e0, e1 in zip(errors[:-1], errors[1:])]


def _act_ld(z, kind):
    if kind == "tanh":
        return np.tanh(z)
    if kind == "relu":
        return np.maximum(z, 0)
    if kind == "sin":
        return np.sin(z)
    return np.where((z > 0) & (z < 1), z * (1 - z), 0)


def random_mlp_case(seed: int, activation: str, max_layers: int = 3, max_width: int = 64, batch: int = 3):
    """A random MLP, its tensor loss closure and an extended-precision twin."""
    rng = np.random.default_rng(seed)
    n_layers = int(rng.integers(1, max_layers + 1))
    widths = [int(w) for w in rng.integers(2, max_width + 1, size=n_layers + 1)]
    params = []
    for a, b in zip(widths[:-1], widths[1:]):
        params.append(Tensor(rng.uniform(-1, 1, (a, b)) / math.sqrt(a), requires_grad=True))
        params.append(Tensor(rng.uniform(-0.5, 0.5, b), requires_grad=True))
    x = rng.uniform(-1, 1, (batch, widths[0]))
    r = rng.normal(size=(batch, widths[-1]))
    xt, rt = Tensor(x), Tensor(r)

    def loss():
        h = xt
        for i in range(0, len(params), 2):
            h = affine_forward(h, params[i], params[i + 1])
            if i < len(params) - 2:
                h = activation_forward(h, activation)
        return total(mul(h, rt))

    x_ld, r_ld = x.astype(np.longdouble), r.astype(np.longdouble)

    def reference(arrays):
        h = x_ld
        for i in range(0, len(arrays), 2):
            h = h @ arrays[i] + arrays[i + 1]
            if i < len(arrays) - 2:
                h = _act_ld(h, activation)
        return (h * r_ld).sum()

    return widths, params, loss, reference


def gradient_suite(n_models: int = 20, seed: int = 0, h: float = 1e-5) -> list[tuple[str, list[int], float]]:
    out = []
    for i in range(n_models):
        act = ACTIVATIONS[i % len(ACTIVATIONS)]
        widths, params, loss, reference = random_mlp_case(seed + i, act)
        out.append((act, widths, grad_check(loss, params, h, reference=reference)))
    return out
