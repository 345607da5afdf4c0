"""Vectorized Lindbladians for dissipative spin lattices.

A Lindbladian is split into

* a diagonal part ``D(x)`` (Ising couplings of any range plus the diagonal of
  every single-site superoperator), evaluated directly per configuration, and
* a list of span terms, each a product of single-site superoperators on a few
  sites of the chain, contracted against the MPO.

Superoperators act on the row-major vectorization ``x = s * d + sp`` of
``|s><sp|``, under which ``A rho B`` maps to ``kron(A, B.T)``.

Pauli matrices use ``sigma_z |up> = +|up>`` with ``up`` as basis index 0.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Literal

import numpy as np

from .errors import InvalidInputError

SIGMA_X = np.array([[0, 1], [1, 0]], dtype=np.complex128)
SIGMA_Y = np.array([[0, -1j], [1j, 0]], dtype=np.complex128)
SIGMA_Z = np.array([[1, 0], [0, -1]], dtype=np.complex128)
IDENTITY = np.eye(2, dtype=np.complex128)
SIGMA_MINUS = np.array([[0, 0], [1, 0]], dtype=np.complex128)
PAULI = {"x": SIGMA_X, "y": SIGMA_Y, "z": SIGMA_Z}


# ---------------------------------------------------------------------------
# lattices


@dataclass(frozen=True)
class Ring:
    n: int

    @property
    def n_sites(self) -> int:
        return self.n

    @property
    def row_length(self) -> int:
        return 1


@dataclass(frozen=True)
class Torus:
    """``ly`` rows of ``lx`` sites, periodic in both directions, row-major."""

    lx: int
    ly: int

    @property
    def n_sites(self) -> int:
        return self.lx * self.ly

    @property
    def row_length(self) -> int:
        return self.lx

    def coords(self, site: int) -> tuple[int, int]:
        return site % self.lx, site // self.lx

    def site(self, col: int, row: int) -> int:
        return (row % self.ly) * self.lx + col % self.lx


Lattice = Ring | Torus


def distance_pbc(i, j, lattice: Lattice) -> float:
    """Minimal-image Euclidean distance between sites.

    On a ring, ``i`` and ``j`` are site indices. On a torus they may be site
    indices or ``(col, row)`` pairs.
    """
    if isinstance(lattice, Ring):
        delta = abs(int(i) - int(j)) % lattice.n
        return float(min(delta, lattice.n - delta))
    ci, ri = i if isinstance(i, tuple) else lattice.coords(i)
    cj, rj = j if isinstance(j, tuple) else lattice.coords(j)
    dx = abs(ci - cj) % lattice.lx
    dy = abs(ri - rj) % lattice.ly
    return math.hypot(min(dx, lattice.lx - dx), min(dy, lattice.ly - dy))


def distance_table(lattice: Lattice) -> np.ndarray:
    n = lattice.n_sites
    return np.array([[distance_pbc(i, j, lattice) for j in range(n)] for i in range(n)])


def power_law(dist: np.ndarray | float, alpha: float) -> np.ndarray:
    """``dist**-alpha`` with ``alpha = inf`` meaning nearest neighbours only.

    Zero distance maps to zero.
    """
    dist = np.asarray(dist, dtype=float)
    out = np.zeros_like(dist)
    nonzero = dist > 0
    if math.isinf(alpha):
        out[np.isclose(dist, 1.0)] = 1.0
    else:
        out[nonzero] = dist[nonzero] ** (-alpha)
    return out


def kac_factor(alpha: float, lattice: Lattice) -> float:
    """``sum_{j != i} d_ij**-alpha`` seen from site 0."""
    dist = np.array([distance_pbc(0, j, lattice) for j in range(1, lattice.n_sites)])
    return float(power_law(dist, alpha).sum())


def map_2d_to_chain(lattice: Torus) -> tuple[np.ndarray, np.ndarray, int]:
    """Row-major chain ordering of a torus.

    Returns ``(order, distances, unit_cell)`` where ``order[k]`` is the
    ``(col, row)`` of chain site ``k``, ``distances`` are torus (not chain)
    distances between chain sites and the unit cell is one row.
    """
    order = np.array([lattice.coords(k) for k in range(lattice.n_sites)])
    return order, distance_table(lattice), lattice.lx


# ---------------------------------------------------------------------------
# superoperator pieces


def vectorize_hamiltonian_factor(op: np.ndarray, side: Literal["left", "right"]) -> np.ndarray:
    """Single-site superoperator of ``op @ rho`` (left) or ``rho @ op`` (right)."""
    op = np.asarray(op, dtype=np.complex128)
    eye = np.eye(op.shape[0], dtype=np.complex128)
    if side == "left":
        return np.kron(op, eye)
    if side == "right":
        return np.kron(eye, op.T)
    raise InvalidInputError(f"side must be 'left' or 'right', got {side!r}")


def commutator_superop(h: np.ndarray) -> np.ndarray:
    """``-i [h, .]`` acting on one vectorized site."""
    return -1j * (vectorize_hamiltonian_factor(h, "left") - vectorize_hamiltonian_factor(h, "right"))


def dissipator_superop(jump: np.ndarray) -> np.ndarray:
    """``G . G^+ - {G^+ G, .} / 2`` acting on one vectorized site."""
    jump = np.asarray(jump, dtype=np.complex128)
    gg = jump.conj().T @ jump
    eye = np.eye(jump.shape[0])
    return np.kron(jump, jump.conj()) - 0.5 * (np.kron(gg, eye) + np.kron(eye, gg.T))


@dataclass(frozen=True)
class SpanTerm:
    """``coefficient * prod_k factor_k`` on sites ``anchor + offset_k`` (mod N).

    Sites inside the span without a factor are identity pass-throughs.
    """

    anchor: int
    offsets: tuple[int, ...]
    factors: tuple[np.ndarray, ...]
    coefficient: complex = 1.0

    def __post_init__(self) -> None:
        if len(self.offsets) != len(self.factors) or not self.offsets:
            raise InvalidInputError("a span term needs one factor per offset")
        if self.offsets[0] != 0 or any(b <= a for a, b in zip(self.offsets, self.offsets[1:])):
            raise InvalidInputError(f"offsets must start at 0 and increase, got {self.offsets}")

    @property
    def span(self) -> int:
        return self.offsets[-1] + 1

    def sites(self, n_sites: int) -> list[int]:
        return [(self.anchor + o) % n_sites for o in self.offsets]


@dataclass
class DiagonalTerm:
    """``D(x) = -i sum_{i<j} g_ij (z_i z_j - z'_i z'_j) + sum_i site_diag[i, x_i]``.

    ``z_i = +-1`` is the sigma_z eigenvalue of the ket (``s``) index at site ``i``
    and ``z'_i`` that of the bra (``sp``) index, so the first sum is the
    commutator ``-i [sum_{i<j} g_ij Z_i Z_j, rho]``.
    """

    pair_couplings: np.ndarray
    site_diag: np.ndarray

    def evaluate(self, x: np.ndarray) -> np.ndarray:
        """``D(x)`` for a batch of configurations ``(B, N)``."""
        x = np.atleast_2d(x)
        d = int(round(math.sqrt(self.site_diag.shape[1])))
        s, sp = np.divmod(x, d)
        z = 1.0 - 2.0 * s
        zp = 1.0 - 2.0 * sp
        g = self.pair_couplings
        # z g z counts each unordered pair twice
        ising = 0.5 * (np.einsum("bi,ij,bj->b", z, g, z) - np.einsum("bi,ij,bj->b", zp, g, zp))
        local = self.site_diag[np.arange(x.shape[1]), x].sum(axis=1)
        return -1j * ising + local


@dataclass
class LindbladianSpec:
    n_sites: int
    diagonal: DiagonalTerm
    span_terms: list[SpanTerm] = field(default_factory=list)
    period: int = 1
    d: int = 2


# ---------------------------------------------------------------------------
# models

ModelKind = Literal["tfi_long_range", "xyz_long_range"]
JumpKind = Literal["spin_decay_xy", "z_minus_y"]
SignConvention = Literal["main_text_minus", "sm_plus"]
PairCounting = Literal["unordered", "ordered"]


@dataclass(frozen=True)
class Coupling:
    """Power-law coupling ``J d**-alpha``; ``strength`` is a scalar (Ising) or a 3-vector (XYZ)."""

    strength: float | tuple[float, float, float]
    alpha: float


@dataclass(frozen=True)
class ModelParams:
    kind: ModelKind
    lattice: Lattice
    couplings: tuple[Coupling, ...]
    h: float = 0.0
    gamma: float = 1.0
    jump_kind: JumpKind = "spin_decay_xy"
    sign_convention: SignConvention = "sm_plus"
    pair_counting: PairCounting = "unordered"
    kac: bool = False
    r_trunc: int = 1

    def __post_init__(self) -> None:
        for c in self.couplings:
            if not c.alpha > 0:
                raise InvalidInputError(f"exponent alpha must be > 0 or inf, got {c.alpha}")
        if self.r_trunc < 1:
            raise InvalidInputError("r_trunc must be >= 1")

    @property
    def n_sites(self) -> int:
        return self.lattice.n_sites


def jump_operator(kind: JumpKind, gamma: float) -> np.ndarray:
    """Single-site jump operator; both kinds carry rate ``gamma``."""
    if kind == "spin_decay_xy":
        return 0.5 * math.sqrt(gamma) * (SIGMA_X - 1j * SIGMA_Y)
    if kind == "z_minus_y":
        return 0.5 * math.sqrt(gamma) * (SIGMA_Z - 1j * SIGMA_Y)
    raise InvalidInputError(f"unsupported jump kind {kind!r}")


def _sign(params: ModelParams) -> float:
    if params.sign_convention == "sm_plus":
        return 1.0
    if params.sign_convention == "main_text_minus":
        return -1.0
    raise InvalidInputError(f"unknown sign convention {params.sign_convention!r}")


def coupling_matrix(params: ModelParams, component: int | None = None) -> np.ndarray:
    """Symmetric ``g_ij`` multiplying ``s^a_i s^a_j`` over unordered pairs.

    Includes sign convention, Kac normalization and pair counting. ``component``
    selects x/y/z (0/1/2) for vector couplings.
    """
    lat = params.lattice
    dist = distance_table(lat)
    g = np.zeros_like(dist)
    for c in params.couplings:
        j = c.strength if component is None else c.strength[component]
        if j == 0:
            continue
        weight = power_law(dist, c.alpha)
        if params.kac:
            weight = weight / kac_factor(c.alpha, lat)
        g += j * weight
    if params.pair_counting == "ordered":
        g *= 2.0
    elif params.pair_counting != "unordered":
        raise InvalidInputError(f"unknown pair counting {params.pair_counting!r}")
    np.fill_diagonal(g, 0.0)
    return _sign(params) * g


def _split_local(n: int, local: np.ndarray) -> tuple[np.ndarray, list[SpanTerm]]:
    """Diagonal of a per-site superoperator plus 1-site span terms for the rest."""
    diag = np.tile(np.diag(local), (n, 1)).astype(np.complex128)
    offdiag = local - np.diag(np.diag(local))
    terms = []
    if np.any(offdiag != 0):
        terms = [SpanTerm(j, (0,), (offdiag,)) for j in range(n)]
    return diag, terms


def _local_superop(params: ModelParams, field_axis: str) -> np.ndarray:
    h_local = _sign(params) * params.h * PAULI[field_axis]
    out = commutator_superop(h_local)
    if params.gamma != 0:
        out = out + dissipator_superop(jump_operator(params.jump_kind, params.gamma))
    return out


def build_tfi(params: ModelParams) -> LindbladianSpec:
    """Long-range transverse-field Ising model.

    ``H = s * (sum_n J_n sum_{i<j} d_ij^-alpha_n Z_i Z_j + h sum_i X_i)`` with
    ``s = +1`` (``sm_plus``) or ``-1`` (``main_text_minus``); all Ising couplings
    are kept at full range in the diagonal term.
    """
    if params.kind != "tfi_long_range":
        raise InvalidInputError(f"build_tfi got model kind {params.kind!r}")
    jump_operator(params.jump_kind, 1.0)
    n = params.n_sites
    site_diag, terms = _split_local(n, _local_superop(params, "x"))
    return LindbladianSpec(
        n_sites=n,
        diagonal=DiagonalTerm(coupling_matrix(params), site_diag),
        span_terms=terms,
        period=params.lattice.row_length,
    )


def _truncated_pairs(params: ModelParams) -> list[tuple[int, int]]:
    """Unordered pairs within ``r_trunc`` as ``(anchor, chain offset)``, shortest chain arc."""
    lat = params.lattice
    n = lat.n_sites
    pairs = []
    for i, j in itertools.combinations(range(n), 2):
        dist = distance_pbc(i, j, lat)
        if dist > params.r_trunc + 1e-12:
            continue
        fwd = (j - i) % n
        if fwd <= n - fwd:
            pairs.append((i, fwd))
        else:
            pairs.append((j, n - fwd))
    return pairs


def build_xyz(params: ModelParams) -> LindbladianSpec:
    """Long-range XYZ model truncated at distance ``r_trunc``.

    ``H = s * (sum_n sum_a J_n^a sum_{i<j, d_ij <= r} d_ij^-alpha_n S^a_i S^a_j + h sum_i Z_i)``.
    The x and y couplings become two-site span terms, the z couplings and the
    field go to the diagonal term.
    """
    if params.kind != "xyz_long_range":
        raise InvalidInputError(f"build_xyz got model kind {params.kind!r}")
    n = params.n_sites
    if params.r_trunc >= n:
        raise InvalidInputError(f"r_trunc={params.r_trunc} must be smaller than N={n}")
    jump_operator(params.jump_kind, 1.0)
    for c in params.couplings:
        if np.ndim(c.strength) != 1 or len(c.strength) != 3:
            raise InvalidInputError("XYZ couplings need (Jx, Jy, Jz) vectors")

    dist = distance_table(params.lattice)
    keep = dist <= params.r_trunc + 1e-12
    site_diag, terms = _split_local(n, _local_superop(params, "z"))
    gz = np.where(keep, coupling_matrix(params, 2), 0.0)

    pairs = _truncated_pairs(params)
    for axis, comp in (("x", 0), ("y", 1)):
        g = coupling_matrix(params, comp)
        left = vectorize_hamiltonian_factor(PAULI[axis], "left")
        right = vectorize_hamiltonian_factor(PAULI[axis], "right")
        for anchor, offset in pairs:
            c = g[anchor, (anchor + offset) % n]
            if c == 0:
                continue
            terms.append(SpanTerm(anchor, (0, offset), (left, left), -1j * c))
            terms.append(SpanTerm(anchor, (0, offset), (right, right), 1j * c))
    return LindbladianSpec(
        n_sites=n,
        diagonal=DiagonalTerm(gz, site_diag),
        span_terms=terms,
        period=params.lattice.row_length,
    )


def build_lindbladian(params: ModelParams) -> LindbladianSpec:
    if params.kind == "tfi_long_range":
        return build_tfi(params)
    if params.kind == "xyz_long_range":
        return build_xyz(params)
    raise InvalidInputError(f"unknown model kind {params.kind!r}")
