"""Periodic matrix-product-operator density matrix.

The density matrix is vectorized site by site: the bra/ket pair ``(s, sp)`` of
one site is merged into a single index ``x = s * d + sp`` so that ``rho`` becomes
a periodic matrix product state over ``d**2``-dimensional sites,

    <x_0 ... x_{N-1}|rho> = tr(A[0 % D][x_0] @ A[1 % D][x_1] @ ... ).

Sites are 0-based throughout the package. For a configuration ``x`` the cached
partial products are

    left[k]  = A(x_0) @ ... @ A(x_{k-1})        k = 0..N, left[0] = 1
    right[k] = A(x_k) @ ... @ A(x_{N-1})        k = 0..N, right[N] = 1

so the environment of site ``j`` is ``left[j]`` and ``right[j + 1]``.

Most functions accept a single configuration of shape ``(N,)`` or a batch of
shape ``(B, N)``; batch results carry a leading ``B`` axis.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    CapacityError,
    DegenerateAmplitudeError,
    DegenerateTraceError,
    InvalidInputError,
)

AMPLITUDE_FLOOR = 1e-300
TRACE_FLOOR = 1e-300
MAX_DENSE_SITES = 10


@dataclass(frozen=True)
class MpoAnsatz:
    """Unit-cell tensors of a translationally periodic MPO.

    ``tensors`` has shape ``(D, d**2, chi, chi)``; site ``j`` uses
    ``tensors[j % D]``.
    """

    n_sites: int
    tensors: np.ndarray
    d: int = 2

    def __post_init__(self) -> None:
        t = np.asarray(self.tensors, dtype=np.complex128)
        if t.ndim != 4 or t.shape[2] != t.shape[3]:
            raise InvalidInputError(f"tensors must have shape (D, d^2, chi, chi), got {t.shape}")
        if t.shape[1] != self.d * self.d:
            raise InvalidInputError(f"physical dimension {t.shape[1]} != d^2 = {self.d ** 2}")
        if self.n_sites < 1 or self.n_sites % t.shape[0] != 0:
            raise InvalidInputError(f"N={self.n_sites} is not a positive multiple of D={t.shape[0]}")
        if not np.all(np.isfinite(t)):
            raise InvalidInputError("tensor entries must be finite")
        object.__setattr__(self, "tensors", t)

    @property
    def unit_cell(self) -> int:
        return self.tensors.shape[0]

    @property
    def chi(self) -> int:
        return self.tensors.shape[2]

    @property
    def local_dim(self) -> int:
        """Dimension of the vectorized site index, ``d**2``."""
        return self.tensors.shape[1]

    @property
    def n_params(self) -> int:
        return self.tensors.size

    @property
    def cells(self) -> np.ndarray:
        """Unit-cell index used at every site."""
        return np.arange(self.n_sites) % self.unit_cell

    def flat(self) -> np.ndarray:
        return self.tensors.reshape(-1)

    def with_flat(self, params: np.ndarray) -> MpoAnsatz:
        return MpoAnsatz(self.n_sites, np.asarray(params).reshape(self.tensors.shape), self.d)

    def scaled(self, factor: complex) -> MpoAnsatz:
        return MpoAnsatz(self.n_sites, self.tensors * factor, self.d)


@dataclass
class PartialProducts:
    """Cached prefix/suffix products for a batch of configurations.

    ``left`` and ``right`` both have shape ``(B, N + 1, chi, chi)``. Either one
    may be ``None`` while a sweep has only produced the other.
    """

    left: np.ndarray | None
    right: np.ndarray | None

    def environments(self) -> np.ndarray:
        """``right[j + 1] @ left[j]`` for every site, shape ``(B, N, chi, chi)``.

        The trace of ``A(x_j) @ env[j]`` is the amplitude, and ``env[j].T`` is
        the gradient of the amplitude with respect to ``A(x_j)``.
        """
        if self.left is None or self.right is None:
            raise InvalidInputError("both left and right products are required")
        return self.right[:, 1:] @ self.left[:, :-1]


def _as_batch(ansatz: MpoAnsatz, x) -> tuple[np.ndarray, bool]:
    arr = np.asarray(x)
    single = arr.ndim == 1
    arr = np.atleast_2d(arr).astype(np.intp, copy=False)
    if arr.ndim != 2 or arr.shape[1] != ansatz.n_sites:
        raise InvalidInputError(
            f"configuration shape {np.shape(x)} does not match N={ansatz.n_sites}"
        )
    if arr.size and (arr.min() < 0 or arr.max() >= ansatz.local_dim):
        raise InvalidInputError(f"configuration entries must lie in [0, {ansatz.local_dim})")
    return arr, single


def site_matrices(ansatz: MpoAnsatz, x: np.ndarray, site: int) -> np.ndarray:
    """``A(x_site)`` for every configuration of a batch, shape ``(B, chi, chi)``."""
    return ansatz.tensors[site % ansatz.unit_cell, x[:, site]]


def amplitude(ansatz: MpoAnsatz, x) -> complex | np.ndarray:
    """Trace of the cyclic matrix product selected by ``x``."""
    xb, single = _as_batch(ansatz, x)
    prod = site_matrices(ansatz, xb, 0)
    for j in range(1, ansatz.n_sites):
        prod = prod @ site_matrices(ansatz, xb, j)
    amp = np.trace(prod, axis1=1, axis2=2)
    return complex(amp[0]) if single else amp


def left_products(ansatz: MpoAnsatz, x: np.ndarray) -> np.ndarray:
    batch, n, chi = x.shape[0], ansatz.n_sites, ansatz.chi
    left = np.empty((batch, n + 1, chi, chi), dtype=np.complex128)
    left[:, 0] = np.eye(chi)
    for j in range(n):
        left[:, j + 1] = left[:, j] @ site_matrices(ansatz, x, j)
    return left


def right_products(ansatz: MpoAnsatz, x: np.ndarray) -> np.ndarray:
    batch, n, chi = x.shape[0], ansatz.n_sites, ansatz.chi
    right = np.empty((batch, n + 1, chi, chi), dtype=np.complex128)
    right[:, n] = np.eye(chi)
    for j in range(n - 1, -1, -1):
        right[:, j] = site_matrices(ansatz, x, j) @ right[:, j + 1]
    return right


def partial_products(ansatz: MpoAnsatz, x) -> PartialProducts:
    """Both prefix and suffix products of ``x`` (always batched)."""
    xb, _ = _as_batch(ansatz, x)
    return PartialProducts(left_products(ansatz, xb), right_products(ansatz, xb))


def check_amplitudes(amp: np.ndarray) -> None:
    if np.any(np.abs(amp) < AMPLITUDE_FLOOR):
        raise DegenerateAmplitudeError("amplitude magnitude below 1e-300; resample")


def log_derivative(
    ansatz: MpoAnsatz,
    x,
    pp: PartialProducts,
    amp: np.ndarray | None = None,
    env: np.ndarray | None = None,
) -> np.ndarray:
    """Logarithmic derivative of the amplitude w.r.t. every tensor entry.

    Returns an array shaped like ``ansatz.tensors`` (with a leading batch axis
    when ``x`` is a batch). Entry ``[r, s, u, v]`` is
    ``sum_j [j % D == r][x_j == s] (right[j+1] @ left[j])[v, u] / amp``.
    """
    xb, single = _as_batch(ansatz, x)
    if env is None:
        env = pp.environments()
    if amp is None:
        amp = np.trace(pp.left[:, -1], axis1=1, axis2=2)
    amp = np.asarray(amp)
    check_amplitudes(amp)
    batch = xb.shape[0]
    delta = np.zeros((batch,) + ansatz.tensors.shape, dtype=np.complex128)
    rows = np.arange(batch)
    cells = ansatz.cells
    for j in range(ansatz.n_sites):
        # (row, cell, x_j) is unique across rows at fixed j, so += is safe
        delta[rows, cells[j], xb[:, j]] += env[:, j].transpose(0, 2, 1)
    delta /= amp[:, None, None, None, None]
    return delta[0] if single else delta


def trace_vector(d: int) -> np.ndarray:
    """Weights ``t[x] = delta(s, sp)`` contracting one vectorized site to its trace."""
    return np.eye(d, dtype=np.complex128).reshape(-1)


def transfer_matrices(ansatz: MpoAnsatz, weights: np.ndarray) -> np.ndarray:
    """``sum_x weights[x] A_r[x]`` for every unit-cell tensor, shape ``(D, chi, chi)``."""
    return np.einsum("s,rsab->rab", weights, ansatz.tensors)


def trace_of_rho(ansatz: MpoAnsatz) -> complex:
    cell = transfer_matrices(ansatz, trace_vector(ansatz.d))
    prod = np.eye(ansatz.chi, dtype=np.complex128)
    for j in range(ansatz.n_sites):
        prod = prod @ cell[j % ansatz.unit_cell]
    return complex(np.trace(prod))


def renormalize_trace(ansatz: MpoAnsatz) -> MpoAnsatz:
    """Rescale every tensor by the principal ``(tr rho)**(-1/N)``."""
    tr = trace_of_rho(ansatz)
    if abs(tr) < TRACE_FLOOR:
        raise DegenerateTraceError(f"|tr rho| = {abs(tr):.3e} cannot be renormalized")
    factor = np.exp(-np.log(tr) / ansatz.n_sites)
    return ansatz.scaled(factor)


def _half_chain(ansatz: MpoAnsatz, start: int, stop: int) -> np.ndarray:
    """Products over sites ``start..stop-1`` for every sub-configuration, ``(s**k, chi, chi)``."""
    prod = np.eye(ansatz.chi, dtype=np.complex128)[None]
    for j in range(start, stop):
        a = ansatz.tensors[j % ansatz.unit_cell]
        prod = np.einsum("pab,sbc->psac", prod, a).reshape(-1, ansatz.chi, ansatz.chi)
    return prod


def all_amplitudes(ansatz: MpoAnsatz) -> np.ndarray:
    """Amplitudes of every configuration, indexed by ``x`` with site 0 most significant."""
    n = ansatz.n_sites
    if n > MAX_DENSE_SITES:
        raise CapacityError(f"dense reconstruction limited to N <= {MAX_DENSE_SITES}, got {n}")
    half = n // 2
    left = _half_chain(ansatz, 0, half)
    right = _half_chain(ansatz, half, n)
    return np.einsum("pab,qba->pq", left, right).reshape(-1)


def reconstruct_dense(ansatz: MpoAnsatz) -> np.ndarray:
    """Dense ``d**N x d**N`` density matrix with rows ``s`` and columns ``sp``."""
    n, d = ansatz.n_sites, ansatz.d
    amps = all_amplitudes(ansatz).reshape((d, d) * n)
    perm = list(range(0, 2 * n, 2)) + list(range(1, 2 * n, 2))
    return amps.transpose(perm).reshape(d**n, d**n)


def init_product(
    n_sites: int,
    unit_cell: int,
    chi: int,
    single_site_rho: np.ndarray,
    noise: float = 0.0,
    rng: np.random.Generator | None = None,
) -> MpoAnsatz:
    """Product state ``rho_1 (x) ... (x) rho_1`` in the (0, 0) bond entry.

    All other bond entries are zero unless ``noise > 0``, in which case they are
    filled with complex Gaussian entries of that scale. The (0, 0) entries stay
    exact, so the state differs from the product state only at second order.
    """
    rho1 = np.asarray(single_site_rho, dtype=np.complex128)
    if rho1.ndim != 2 or rho1.shape[0] != rho1.shape[1]:
        raise InvalidInputError("single-site density matrix must be square")
    if not np.allclose(rho1, rho1.conj().T, atol=1e-12):
        raise InvalidInputError("single-site density matrix must be Hermitian")
    if abs(np.trace(rho1) - 1) > 1e-12:
        raise InvalidInputError(f"single-site density matrix has trace {np.trace(rho1)}, expected 1")
    if chi < 1:
        raise InvalidInputError("bond dimension must be >= 1")
    d = rho1.shape[0]
    tensors = np.zeros((unit_cell, d * d, chi, chi), dtype=np.complex128)
    if noise > 0 and chi > 1:
        rng = rng if rng is not None else np.random.default_rng()
        tensors += noise * (
            rng.standard_normal(tensors.shape) + 1j * rng.standard_normal(tensors.shape)
        ) / np.sqrt(2)
    tensors[:, :, 0, 0] = rho1.reshape(-1)
    return MpoAnsatz(n_sites, tensors, d)


def random_ansatz(
    n_sites: int,
    unit_cell: int,
    chi: int,
    rng: np.random.Generator,
    d: int = 2,
) -> MpoAnsatz:
    """Complex Gaussian tensors; used by tests and benchmarks."""
    shape = (unit_cell, d * d, chi, chi)
    t = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    return MpoAnsatz(n_sites, t / np.sqrt(2 * chi), d)


# Checkpoint layout: four little-endian int64 (N, D, d, chi), then the tensors in
# row-major (D, d^2, chi, chi) order as interleaved little-endian float64 (re, im).
_HEADER = struct.Struct("<4q")


def save_checkpoint(ansatz: MpoAnsatz, path: str | Path) -> None:
    header = _HEADER.pack(ansatz.n_sites, ansatz.unit_cell, ansatz.d, ansatz.chi)
    body = np.ascontiguousarray(ansatz.tensors).astype("<c16").tobytes()
    Path(path).write_bytes(header + body)


def load_checkpoint(path: str | Path) -> MpoAnsatz:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise InvalidInputError(f"{path}: truncated checkpoint header")
    n, unit_cell, d, chi = _HEADER.unpack_from(raw)
    shape = (unit_cell, d * d, chi, chi)
    expected = _HEADER.size + 16 * int(np.prod(shape))
    if len(raw) != expected:
        raise InvalidInputError(f"{path}: expected {expected} bytes, found {len(raw)}")
    tensors = np.frombuffer(raw, dtype="<c16", offset=_HEADER.size).reshape(shape)
    return MpoAnsatz(n, tensors.astype(np.complex128), d)
