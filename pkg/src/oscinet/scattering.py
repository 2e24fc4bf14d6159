"""Random Fourier media, the closed-form nonlinear map, and a 1-D Helmholtz
scattering solver (Nystrom discretisation of the volume integral equation).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .linalg import lu_factor, lu_solve

GAUSS_NODES = np.array([-1.0, 1.0]) / math.sqrt(3.0)
GAUSS_WEIGHTS = np.array([1.0, 1.0])


class MeshError(ValueError):
    pass


class PhysicalValidityError(ValueError):
    pass


# ---------------------------------------------------------------- input media

@dataclass(frozen=True)
class FourierField:
    """``c * (b_0 + sum_j b_j sin(j pi x) + c_j cos(j pi x))`` on [-1, 1]."""

    b: np.ndarray
    c_coef: np.ndarray
    amplitude: float = 1.0

    @property
    def M(self) -> int:
        return len(self.c_coef)

    def __call__(self, x) -> np.ndarray:
        return eval_field(self, x)


def sample_fourier_field(M: int, amplitude: float, rng: np.random.Generator) -> FourierField:
    if M < 0:
        raise ValueError(f"mode count must be >= 0, got {M}")
    if not amplitude > 0:
        raise ValueError(f"amplitude must be positive, got {amplitude}")
    b = rng.uniform(-1.0, 1.0, size=M + 1)
    c = rng.uniform(-1.0, 1.0, size=M)
    return FourierField(b, c, float(amplitude))


def eval_field(field: FourierField, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if field.M == 0:
        return np.full(x.shape, field.amplitude * field.b[0])
    arg = np.multiply.outer(x, np.pi * np.arange(1, field.M + 1))
    series = field.b[0] + np.sin(arg) @ field.b[1:] + np.cos(arg) @ field.c_coef
    return field.amplitude * series


def nonlinear_map_eval(K: int, A, B, a_values) -> np.ndarray:
    """``sum_{n=0}^K A_n sin(n a) + B_n cos(n a)`` elementwise."""
    A = np.asarray(A, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    if A.shape != (K + 1,) or B.shape != (K + 1,):
        raise ValueError(f"coefficient arrays must have length K+1={K + 1}")
    a = np.asarray(a_values, dtype=np.float64)
    arg = np.multiply.outer(a, np.arange(K + 1, dtype=np.float64))
    return np.sin(arg) @ A + np.cos(arg) @ B


# ---------------------------------------------------------------- Helmholtz

def greens_function(k: float, x, xp) -> np.ndarray:
    """Outgoing 1-D kernel ``(i / 2k) exp(i k |x - x'|)``."""
    if not k > 0:
        raise ValueError(f"wave number must be positive, got {k}")
    d = np.abs(np.asarray(x, dtype=np.float64) - np.asarray(xp, dtype=np.float64))
    return (0.5j / k) * np.exp(1j * k * d)


@dataclass(frozen=True)
class Mesh1D:
    nodes: np.ndarray

    def __post_init__(self):
        nodes = np.asarray(self.nodes, dtype=np.float64)
        object.__setattr__(self, "nodes", nodes)
        if nodes.ndim != 1 or nodes.size < 2:
            raise MeshError("a mesh needs at least two nodes")
        h = np.diff(nodes)
        if np.any(h <= 0):
            e = int(np.argmax(h <= 0))
            raise MeshError(f"degenerate element {e}: width {h[e]}")
        if nodes[0] != -1.0 or nodes[-1] != 1.0:
            raise MeshError(f"mesh must span [-1, 1], got [{nodes[0]}, {nodes[-1]}]")

    @classmethod
    def uniform(cls, n_elements: int) -> "Mesh1D":
        return cls(np.linspace(-1.0, 1.0, int(n_elements) + 1))

    @property
    def widths(self) -> np.ndarray:
        return np.diff(self.nodes)

    @property
    def n_elements(self) -> int:
        return self.nodes.size - 1


def default_mesh_elements(k: float) -> int:
    return max(400, math.ceil(20.0 * k / math.pi))


def plane_wave(k: float) -> Callable[[np.ndarray], np.ndarray]:
    def u_inc(x):
        return np.exp(1j * k * np.asarray(x, dtype=np.float64))
    return u_inc


def _restricted(medium: Callable) -> Callable:
    def a(x):
        x = np.asarray(x, dtype=np.float64)
        return np.where(np.abs(x) <= 1.0, medium(x), 0.0)
    return a


@dataclass
class ScatteringProblem:
    """``u'' + k^2 (1 + a) u = 0`` with a rightward plane wave incident.

    ``medium`` is any callable returning ``a(x)``; it is treated as zero
    outside [-1, 1].
    """

    k: float
    medium: Callable[[np.ndarray], np.ndarray]
    mesh: Mesh1D
    incident: Callable[[np.ndarray], np.ndarray] | None = None
    _cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if not self.k > 0:
            raise ValueError(f"wave number must be positive, got {self.k}")
        if self.incident is None:
            self.incident = plane_wave(self.k)

    def quadrature(self):
        """Gauss points (n_elements, 2), Jacobians h/2, and a, g at the points."""
        if "quad" not in self._cache:
            nodes = self.mesh.nodes
            h = np.diff(nodes)
            if np.any(h <= 0):
                raise MeshError("degenerate element")
            mid = 0.5 * (nodes[:-1] + nodes[1:])
            X = mid[:, None] + np.outer(0.5 * h, GAUSS_NODES)
            a = _restricted(self.medium)(X)
            g = -self.k ** 2 * a * self.incident(X)
            self._cache["quad"] = (X, 0.5 * h, a, g)
        return self._cache["quad"]

    def source(self, x) -> np.ndarray:
        return -self.k ** 2 * _restricted(self.medium)(x) * self.incident(x)


def _operator_rows(problem: ScatteringProblem, points: np.ndarray, chunk: int = 512):
    """Discrete kernel rows and right-hand side at arbitrary collocation points.

    The kernel ``G`` satisfies ``G'' + k^2 G = -delta``, so the scattered
    field obeys ``u_sc + K[u_sc] = N[g]`` with ``K[u] = -k^2 int G a u`` and
    ``N[g] = -int G g``.  Returns the (p, N+1) matrix of ``K`` acting on nodal
    values and the length-p vector ``N[g]``.
    """
    k = problem.k
    X, jac, a, g = problem.quadrature()
    n_el = X.shape[0]
    phi_left = 0.5 * (1.0 - GAUSS_NODES) * GAUSS_WEIGHTS
    phi_right = 0.5 * (1.0 + GAUSS_NODES) * GAUSS_WEIGHTS
    wa = -(k ** 2) * jac[:, None] * a
    wg = -jac[:, None] * g * GAUSS_WEIGHTS
    p = points.size
    K = np.zeros((p, n_el + 1), dtype=np.complex128)
    rhs = np.empty(p, dtype=np.complex128)
    for s in range(0, p, chunk):
        xi = points[s:s + chunk]
        G = greens_function(k, xi[:, None, None], X[None, :, :])
        Ga = G * wa
        K[s:s + chunk, :-1] += Ga @ phi_left
        K[s:s + chunk, 1:] += Ga @ phi_right
        rhs[s:s + chunk] = np.einsum("peq,eq->p", G, wg)
    return K, rhs


def assemble_nystrom(problem: ScatteringProblem) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(I + K, N[g])`` collocated at the mesh nodes."""
    K, rhs = _operator_rows(problem, problem.mesh.nodes)
    K[np.diag_indices_from(K)] += 1.0
    return K, rhs


@dataclass
class ScatteringSolution:
    problem: ScatteringProblem
    nodal: np.ndarray

    @property
    def nodes(self) -> np.ndarray:
        return self.problem.mesh.nodes

    def total(self) -> np.ndarray:
        return self.nodal + self.problem.incident(self.nodes)

    def at(self, points) -> np.ndarray:
        """Scattered field at arbitrary points via the Nystrom interpolant."""
        pts = np.asarray(points, dtype=np.float64).reshape(-1)
        K, rhs = _operator_rows(self.problem, pts)
        return rhs - K @ self.nodal


def solve_scattering(problem: ScatteringProblem) -> ScatteringSolution:
    matrix, rhs = assemble_nystrom(problem)
    lu, perm = lu_factor(matrix)
    return ScatteringSolution(problem, lu_solve(lu, perm, rhs))


# ---------------------------------------------------------------- slab oracle

@dataclass(frozen=True)
class SlabSolution:
    k: float
    a0: float
    R: complex
    T: complex

    @property
    def index(self) -> float:
        return math.sqrt(1.0 + self.a0)

    def total(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        k, kappa = self.k, self.k * self.index
        u_l = np.exp(-1j * k) + self.R * np.exp(1j * k)
        du_l = 1j * k * (np.exp(-1j * k) - self.R * np.exp(1j * k))
        s = x + 1.0
        inside = np.cos(kappa * s) * u_l + np.sin(kappa * s) / kappa * du_l
        left = np.exp(1j * k * x) + self.R * np.exp(-1j * k * x)
        right = self.T * np.exp(1j * k * x)
        return np.where(x < -1.0, left, np.where(x > 1.0, right, inside))

    def scattered(self, x) -> np.ndarray:
        return self.total(x) - np.exp(1j * self.k * np.asarray(x, dtype=np.float64))


def slab_analytic(k: float, a0: float) -> SlabSolution:
    """Homogeneous slab ``1 + a0`` on [-1, 1] under ``exp(ikx)`` incidence.

    Propagates ``(u, u')`` across the slab with its 2x2 transfer matrix and
    matches to ``e^{ikx} + R e^{-ikx}`` on the left and ``T e^{ikx}`` on the
    right.
    """
    if a0 <= -1.0:
        raise PhysicalValidityError(f"1 + a0 must be positive, got a0={a0}")
    if not k > 0:
        raise ValueError(f"wave number must be positive, got {k}")
    kappa = k * math.sqrt(1.0 + a0)
    d = 2.0
    M = np.array([[math.cos(kappa * d), math.sin(kappa * d) / kappa],
                  [-kappa * math.sin(kappa * d), math.cos(kappa * d)]])
    inc = np.array([np.exp(-1j * k), 1j * k * np.exp(-1j * k)])
    refl = np.array([np.exp(1j * k), -1j * k * np.exp(1j * k)])
    trans = np.array([np.exp(1j * k), 1j * k * np.exp(1j * k)])
    lhs = np.column_stack([M @ refl, -trans])
    R, T = np.linalg.solve(lhs, -(M @ inc))
    return SlabSolution(float(k), float(a0), complex(R), complex(T))
