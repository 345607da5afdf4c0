"""Independent reference implementations shared by the tests.

Nothing here reuses the package's operator construction: Hamiltonians and
jump operators are assembled as full ``2**N`` matrices from their textbook
definitions, and the Lindbladian superoperator from Kronecker products.
"""

from __future__ import annotations

import itertools
import sys
import math

import numpy as np
import pytest

SX = np.array([[0, 1], [1, 0]], dtype=complex)
SY = np.array([[0, -1j], [1j, 0]], dtype=complex)
SZ = np.array([[1, 0], [0, -1]], dtype=complex)
PAULIS = {"x": SX, "y": SY, "z": SZ}


def site_op(op: np.ndarray, i: int, n: int) -> np.ndarray:
    out = np.ones((1, 1), dtype=complex)
    for j in range(n):
        out = np.kron(out, op if j == i else np.eye(2))
    return out


def ring_distance(i: int, j: int, n: int) -> int:
    d = abs(i - j) % n
    return min(d, n - d)


def torus_distance(i: int, j: int, lx: int, ly: int) -> float:
    dx = abs(i % lx - j % lx) % lx
    dy = abs(i // lx - j // lx) % ly
    return math.sqrt(min(dx, lx - dx) ** 2 + min(dy, ly - dy) ** 2)


def weight(d: float, alpha: float) -> float:
    if math.isinf(alpha):
        return 1.0 if abs(d - 1) < 1e-12 else 0.0
    return d ** (-alpha)


def model_hamiltonian(params) -> np.ndarray:
    """Dense Hamiltonian of a ModelParams, straight from the model formulas."""
    lat = params.lattice
    n = lat.n_sites
    if hasattr(lat, "lx"):
        dist = lambda i, j: torus_distance(i, j, lat.lx, lat.ly)  # noqa: E731
    else:
        dist = lambda i, j: ring_distance(i, j, n)  # noqa: E731
    sign = 1.0 if params.sign_convention == "sm_plus" else -1.0
    pair_factor = 2.0 if params.pair_counting == "ordered" else 1.0
    dim = 2**n
    h = np.zeros((dim, dim), dtype=complex)
    xyz = params.kind == "xyz_long_range"
    for c in params.couplings:
        kac = sum(weight(dist(0, j), c.alpha) for j in range(1, n)) if params.kac else 1.0
        for i, j in itertools.combinations(range(n), 2):
            d = dist(i, j)
            if xyz and d > params.r_trunc + 1e-12:
                continue
            w = pair_factor * weight(d, c.alpha) / kac
            if w == 0:
                continue
            if xyz:
                for comp, axis in enumerate("xyz"):
                    p = PAULIS[axis]
                    h += c.strength[comp] * w * site_op(p, i, n) @ site_op(p, j, n)
            else:
                h += c.strength * w * site_op(SZ, i, n) @ site_op(SZ, j, n)
    field = SZ if xyz else SX
    for i in range(n):
        h += params.h * site_op(field, i, n)
    return sign * h


def model_jump(params) -> np.ndarray:
    g = math.sqrt(params.gamma)
    if params.jump_kind == "spin_decay_xy":
        return g * np.array([[0, 0], [1, 0]], dtype=complex)
    return 0.5 * g * (SZ - 1j * SY)


def kron_superoperator(h: np.ndarray, jumps: list[np.ndarray]) -> np.ndarray:
    """Row-major vectorized Lindbladian: ``vec(A rho B) = kron(A, B.T) vec(rho)``."""
    dim = h.shape[0]
    eye = np.eye(dim)
    lind = -1j * (np.kron(h, eye) - np.kron(eye, h.T))
    for g in jumps:
        gg = g.conj().T @ g
        lind += np.kron(g, g.conj()) - 0.5 * (np.kron(gg, eye) + np.kron(eye, gg.T))
    return lind


def model_superoperator(params) -> np.ndarray:
    n = params.lattice.n_sites
    jumps = []
    if params.gamma:
        jumps = [site_op(model_jump(params), i, n) for i in range(n)]
    return kron_superoperator(model_hamiltonian(params), jumps)


def to_site_layout(vec_full: np.ndarray, n: int) -> np.ndarray:
    """Row-major ``vec(rho)`` of the full matrix to the per-site ``(s, s')`` layout."""
    t = vec_full.reshape((2,) * (2 * n))
    perm = [k for j in range(n) for k in (j, n + j)]
    return t.transpose(perm).reshape(-1)


def from_site_layout(vec_site: np.ndarray, n: int) -> np.ndarray:
    t = vec_site.reshape((2, 2) * n)
    perm = list(range(0, 2 * n, 2)) + list(range(1, 2 * n, 2))
    return t.transpose(perm).reshape(-1)


def random_density_matrix(n: int, rng: np.random.Generator) -> np.ndarray:
    dim = 2**n
    a = rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))
    rho = a @ a.conj().T
    return rho / np.trace(rho)


def enumerate_amplitudes(tensors: np.ndarray, n: int) -> np.ndarray:
    """``<x|rho>`` for every configuration by explicit matrix products."""
    unit, d2, chi, _ = tensors.shape
    out = np.empty(d2**n, dtype=complex)
    for idx, x in enumerate(itertools.product(range(d2), repeat=n)):
        m = np.eye(chi, dtype=complex)
        for j, s in enumerate(x):
            m = m @ tensors[j % unit, s]
        out[idx] = np.trace(m)
    return out


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    acceptance = sys.modules.get("test_acceptance")
    results = getattr(acceptance, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for key in sorted(results, key=lambda k: int(k[1:])):
            terminalreporter.write_line(results[key])
