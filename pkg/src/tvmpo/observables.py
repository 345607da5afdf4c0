"""Exact contractions of physical quantities.

Every quantity is available for the MPO ansatz (by transfer-matrix
contraction) and for dense reference states. Expectation values are divided
by the trace, so they are meaningful for unnormalized states too. Hermitian
observables come out as complex numbers whose imaginary part is a health
metric of the (not structurally Hermitian) ansatz.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Literal, Sequence

import numpy as np

from .ansatz import (
    MpoAnsatz,
    reconstruct_dense,
    trace_of_rho,
    trace_vector,
    transfer_matrices,
)
from .errors import InvalidInputError, NonPhysicalStateError
from .exact import DenseState, ExactLindbladian
from .liouvillian import PAULI, LindbladianSpec

SiteOps = Sequence[tuple[int, np.ndarray]]


def operator_weights(op: np.ndarray) -> np.ndarray:
    """``w[x] = op[sp, s]`` so that ``sum_x w[x] rho[x] = tr(op rho)`` on one site."""
    return np.asarray(op, dtype=np.complex128).T.reshape(-1)


def _check_sites(site_ops: SiteOps, n: int) -> dict[int, np.ndarray]:
    ops = {}
    for site, op in site_ops:
        if not 0 <= site < n:
            raise InvalidInputError(f"site {site} outside [0, {n})")
        if site in ops:
            raise InvalidInputError(f"site {site} appears twice")
        ops[site] = op
    return ops


# ---------------------------------------------------------------------------
# MPO ansatz


def expect_product(ansatz: MpoAnsatz, site_ops: SiteOps) -> complex:
    """``tr(O rho) / tr(rho)`` for a product operator ``O``."""
    ops = _check_sites(site_ops, ansatz.n_sites)
    plain = transfer_matrices(ansatz, trace_vector(ansatz.d))
    prod = np.eye(ansatz.chi, dtype=np.complex128)
    for j in range(ansatz.n_sites):
        cell = j % ansatz.unit_cell
        if j in ops:
            t = np.einsum("s,sab->ab", operator_weights(ops[j]), ansatz.tensors[cell])
        else:
            t = plain[cell]
        prod = prod @ t
    return complex(np.trace(prod)) / trace_of_rho(ansatz)


def magnetization(ansatz: MpoAnsatz, axis: str) -> complex:
    """Site-averaged ``<sigma^axis>``."""
    op = PAULI[axis]
    vals = [expect_product(ansatz, [(i, op)]) for i in range(ansatz.unit_cell)]
    return complex(np.mean(vals))


def correlator_value(ansatz: MpoAnsatz, axis: str, distance: int, connected: bool) -> complex:
    n = ansatz.n_sites
    if not 1 <= distance <= n // 2:
        raise InvalidInputError(f"distance must lie in [1, {n // 2}], got {distance}")
    op = PAULI[axis]
    vals = []
    # the ansatz is invariant under translation by the unit cell
    for i in range(ansatz.unit_cell):
        j = (i + distance) % n
        c = expect_product(ansatz, [(i, op), (j, op)])
        if connected:
            c -= expect_product(ansatz, [(i, op)]) * expect_product(ansatz, [(j, op)])
        vals.append(c)
    return complex(np.mean(vals))


def correlator(ansatz: MpoAnsatz, axis: str, distance: int, connected: bool = True) -> float:
    """Translation-averaged ``<s_i s_{i+d}>`` (minus ``<s_i><s_{i+d}>`` if connected)."""
    return correlator_value(ansatz, axis, distance, connected).real


def correlation_matrix(ansatz: MpoAnsatz, axis: str = "z") -> np.ndarray:
    """Non-connected ``<s_n s_m>`` for all site pairs, ones on the diagonal."""
    n, cell = ansatz.n_sites, ansatz.unit_cell
    op = PAULI[axis]
    c = np.eye(n, dtype=np.complex128)
    for a in range(cell):
        for m in range(n):
            if m != a:
                c[a, m] = expect_product(ansatz, [(a, op), (m, op)])
    for a in range(cell, n):
        base = a % cell
        shift = a - base
        c[a] = np.roll(c[base], shift)
    return c


def _fourier(c: np.ndarray, q: float) -> complex:
    n = c.shape[0]
    phase = np.exp(1j * q * np.arange(n))
    return complex(phase @ c @ phase.conj()) / n**2


def structure_factor_value(ansatz: MpoAnsatz, q: float, axis: str = "z") -> complex:
    return _fourier(correlation_matrix(ansatz, axis), q)


def structure_factor(ansatz: MpoAnsatz, q: float, axis: str = "z") -> float:
    """``(1/N^2) sum_{n,m} exp(iq(n-m)) <s_n s_m>``."""
    return structure_factor_value(ansatz, q, axis).real


def purity_value(ansatz: MpoAnsatz) -> complex:
    """``tr(rho^2) / tr(rho)^2`` through the doubled transfer matrix."""
    d, chi = ansatz.d, ansatz.chi
    swap = np.arange(d * d).reshape(d, d).T.reshape(-1)
    a = ansatz.tensors
    # E_r = sum_x A_r[x] (x) A_r[swap(x)], indices (a c),(b e)
    e = np.einsum("rxab,rxce->racbe", a, a[:, swap]).reshape(ansatz.unit_cell, chi * chi, chi * chi)
    prod = np.eye(chi * chi, dtype=np.complex128)
    for j in range(ansatz.n_sites):
        prod = prod @ e[j % ansatz.unit_cell]
    return complex(np.trace(prod)) / trace_of_rho(ansatz) ** 2


def renyi2(ansatz: MpoAnsatz) -> float:
    p = purity_value(ansatz).real
    if p <= 0:
        raise NonPhysicalStateError(f"tr(rho^2) = {p:.3e} is not positive")
    return -math.log(p)


def min_eigenvalue(ansatz: MpoAnsatz) -> float:
    """Smallest eigenvalue of the Hermitian part of the trace-normalized ``rho``."""
    rho = reconstruct_dense(ansatz)
    rho = rho / np.trace(rho)
    return float(np.linalg.eigvalsh(0.5 * (rho + rho.conj().T))[0])


def rho_dot_cost(l2: float, n_sites: int) -> float:
    """``|d rho / dt|^2 / N`` from the sampled ``E[|L_loc|^2]``."""
    return l2 / n_sites


# ---------------------------------------------------------------------------
# dense states


def dense_expect_product(state: DenseState, site_ops: SiteOps) -> complex:
    ops = _check_sites(site_ops, state.n_sites)
    d = state.d
    t = state.vec.reshape((d * d,) * state.n_sites)
    plain = trace_vector(d)
    for j in range(state.n_sites):
        w = operator_weights(ops[j]) if j in ops else plain
        t = np.tensordot(w, t, axes=(0, 0))
    return complex(t) / state.trace()


def dense_magnetization(state: DenseState, axis: str) -> complex:
    op = PAULI[axis]
    return complex(np.mean([dense_expect_product(state, [(i, op)]) for i in range(state.n_sites)]))


def dense_correlator_value(state: DenseState, axis: str, distance: int, connected: bool) -> complex:
    n = state.n_sites
    if not 1 <= distance <= n // 2:
        raise InvalidInputError(f"distance must lie in [1, {n // 2}], got {distance}")
    op = PAULI[axis]
    vals = []
    for i in range(n):
        j = (i + distance) % n
        c = dense_expect_product(state, [(i, op), (j, op)])
        if connected:
            c -= dense_expect_product(state, [(i, op)]) * dense_expect_product(state, [(j, op)])
        vals.append(c)
    return complex(np.mean(vals))


def dense_correlation_matrix(state: DenseState, axis: str = "z") -> np.ndarray:
    n = state.n_sites
    op = PAULI[axis]
    c = np.eye(n, dtype=np.complex128)
    for a in range(n):
        for b in range(a + 1, n):
            c[a, b] = c[b, a] = dense_expect_product(state, [(a, op), (b, op)])
    return c


def dense_structure_factor_value(state: DenseState, q: float, axis: str = "z") -> complex:
    return _fourier(dense_correlation_matrix(state, axis), q)


def dense_purity_value(state: DenseState) -> complex:
    rho = state.matrix()
    return complex(np.trace(rho @ rho)) / state.trace() ** 2


def dense_min_eigenvalue(state: DenseState) -> float:
    rho = state.matrix() / state.trace()
    return float(np.linalg.eigvalsh(0.5 * (rho + rho.conj().T))[0])


def dense_rho_dot_cost(spec: LindbladianSpec, state: DenseState) -> float:
    """``||L rho||^2 / ||rho||^2 / N``, the exact value of the sampled cost."""
    lv = ExactLindbladian(spec)(state.vec)
    return float(np.vdot(lv, lv).real / np.vdot(state.vec, state.vec).real / state.n_sites)


# ---------------------------------------------------------------------------
# requests

Kind = Literal[
    "magnetization", "correlator", "structure_factor", "renyi2", "purity", "min_eigenvalue", "rho_dot_cost"
]
KINDS = ("magnetization", "correlator", "structure_factor", "renyi2", "purity", "min_eigenvalue", "rho_dot_cost")


@dataclass(frozen=True)
class ObservableRequest:
    """One measured quantity; ``k`` selects ``q = 2 pi k / N`` for structure factors."""

    kind: Kind
    axis: str = "z"
    distance: int = 1
    connected: bool = True
    k: int = 0

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise InvalidInputError(f"unknown observable kind {self.kind!r}")
        if self.axis not in PAULI:
            raise InvalidInputError(f"axis must be x, y or z, got {self.axis!r}")

    @property
    def name(self) -> str:
        if self.kind == "magnetization":
            return f"magnetization_{self.axis}"
        if self.kind == "correlator":
            tag = "connected" if self.connected else "full"
            return f"correlator_{self.axis}{self.axis}_d{self.distance}_{tag}"
        if self.kind == "structure_factor":
            return f"structure_factor_{self.axis}{self.axis}_k{self.k}"
        return self.kind

    def validate(self, n_sites: int) -> None:
        if self.kind == "correlator" and not 1 <= self.distance <= n_sites // 2:
            raise InvalidInputError(f"{self.name}: distance must lie in [1, {n_sites // 2}]")


def measure(
    request: ObservableRequest,
    source: MpoAnsatz | DenseState,
    l2: float | None = None,
    spec: LindbladianSpec | None = None,
) -> complex:
    """Evaluate a request on an ansatz or a dense state.

    ``rho_dot_cost`` needs the sampled ``l2`` for an ansatz and ``spec`` for a
    dense state; it is NaN when the input is missing.
    """
    dense = isinstance(source, DenseState)
    n = source.n_sites
    kind = request.kind
    if kind == "magnetization":
        return dense_magnetization(source, request.axis) if dense else magnetization(source, request.axis)
    if kind == "correlator":
        fn = dense_correlator_value if dense else correlator_value
        return fn(source, request.axis, request.distance, request.connected)
    if kind == "structure_factor":
        q = 2 * math.pi * request.k / n
        fn = dense_structure_factor_value if dense else structure_factor_value
        return fn(source, q, request.axis)
    if kind == "purity":
        return dense_purity_value(source) if dense else purity_value(source)
    if kind == "renyi2":
        p = dense_purity_value(source) if dense else purity_value(source)
        if p.real <= 0:
            raise NonPhysicalStateError(f"tr(rho^2) = {p.real:.3e} is not positive")
        return complex(-math.log(p.real), p.imag)
    if kind == "min_eigenvalue":
        return dense_min_eigenvalue(source) if dense else min_eigenvalue(source)
    if kind == "rho_dot_cost":
        if dense:
            return dense_rho_dot_cost(spec, source) if spec is not None else complex("nan")
        return rho_dot_cost(l2, n) if l2 is not None else complex("nan")
    raise InvalidInputError(f"unknown observable kind {kind!r}")
