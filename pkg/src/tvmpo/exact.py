"""Exact small-system reference dynamics and the mean-field baseline.

The dense state is the vectorized density matrix as a tensor with one
``d**2``-dimensional axis per site (site 0 first), the same layout the MPO
amplitudes use. The Lindbladian is applied term by term and never stored as a
matrix.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator

import numpy as np
from scipy.integrate import solve_ivp

from .errors import CapacityError, InvalidInputError
from .liouvillian import LindbladianSpec

MAX_EXACT_SITES = 8


@dataclass
class DenseState:
    vec: np.ndarray
    n_sites: int
    d: int = 2

    def __post_init__(self) -> None:
        if self.n_sites > MAX_EXACT_SITES:
            raise CapacityError(f"exact states limited to N <= {MAX_EXACT_SITES}, got {self.n_sites}")
        self.vec = np.asarray(self.vec, dtype=np.complex128).reshape(-1)
        if self.vec.size != self.d ** (2 * self.n_sites):
            raise InvalidInputError(f"vector length {self.vec.size} != d^(2N)")

    @classmethod
    def from_matrix(cls, rho: np.ndarray, n_sites: int, d: int = 2) -> DenseState:
        """Vectorize a ``d**N x d**N`` matrix into the per-site ``(s, sp)`` layout."""
        t = np.asarray(rho).reshape((d,) * (2 * n_sites))
        perm = [k for j in range(n_sites) for k in (j, n_sites + j)]
        return cls(t.transpose(perm).reshape(-1), n_sites, d)

    @classmethod
    def product(cls, single_site_rho: np.ndarray, n_sites: int) -> DenseState:
        v = np.asarray(single_site_rho, dtype=np.complex128).reshape(-1)
        out = np.ones(1, dtype=np.complex128)
        for _ in range(n_sites):
            out = np.kron(out, v)
        return cls(out, n_sites, int(round(np.sqrt(v.size))))

    def matrix(self) -> np.ndarray:
        n, d = self.n_sites, self.d
        t = self.vec.reshape((d, d) * n)
        perm = list(range(0, 2 * n, 2)) + list(range(1, 2 * n, 2))
        return t.transpose(perm).reshape(d**n, d**n)

    def trace(self) -> complex:
        n, d = self.n_sites, self.d
        t = self.vec.reshape((d * d,) * n)
        w = np.eye(d).reshape(-1)
        for _ in range(n):
            t = np.tensordot(w, t, axes=(0, 0))
        return complex(t)


def _apply_site(t: np.ndarray, op: np.ndarray, site: int) -> np.ndarray:
    return np.moveaxis(np.tensordot(op, t, axes=(1, site)), 0, site)


class ExactLindbladian:
    """Matrix-free action of a :class:`LindbladianSpec` on dense states."""

    def __init__(self, spec: LindbladianSpec):
        n, d = spec.n_sites, spec.d
        if n > MAX_EXACT_SITES:
            raise CapacityError(f"exact dynamics limited to N <= {MAX_EXACT_SITES}, got {n}")
        self.spec = spec
        self.shape = (d * d,) * n
        configs = np.indices(self.shape).reshape(n, -1).T
        self.diag = np.zeros(configs.shape[0], dtype=np.complex128)
        for chunk in range(0, configs.shape[0], 8192):
            self.diag[chunk:chunk + 8192] = spec.diagonal.evaluate(configs[chunk:chunk + 8192])
        self.diag = self.diag.reshape(self.shape)

    def __call__(self, vec: np.ndarray) -> np.ndarray:
        t = vec.reshape(self.shape)
        out = self.diag * t
        n = self.spec.n_sites
        for term in self.spec.span_terms:
            tmp = t
            for site, op in zip(term.sites(n), term.factors):
                tmp = _apply_site(tmp, op, site)
            out = out + term.coefficient * tmp
        return out.reshape(-1)


def apply_lindbladian(spec: LindbladianSpec, state: DenseState) -> DenseState:
    return DenseState(ExactLindbladian(spec)(state.vec), state.n_sites, state.d)


def rk4_evolve(
    spec: LindbladianSpec,
    rho0: DenseState,
    t_end: float,
    dt: float = 1e-3,
    record_every: int = 1,
) -> Iterator[tuple[float, DenseState]]:
    """Classical fourth-order Runge-Kutta; yields ``(t, state)`` every ``record_every`` steps.

    The initial state is always yielded; the last step is shortened to land on ``t_end``.
    """
    if dt <= 0:
        raise InvalidInputError("dt must be positive")
    lind = ExactLindbladian(spec)
    v = rho0.vec.copy()
    t = 0.0
    step = 0
    yield t, DenseState(v.copy(), rho0.n_sites, rho0.d)
    while t < t_end - 1e-12 * max(1.0, t_end):
        t_next = min((step + 1) * dt, t_end)
        h = t_next - t
        k1 = lind(v)
        k2 = lind(v + 0.5 * h * k1)
        k3 = lind(v + 0.5 * h * k2)
        k4 = lind(v + h * k3)
        v = v + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        t = t_next
        step += 1
        if step % record_every == 0 or t >= t_end - 1e-12 * max(1.0, t_end):
            yield t, DenseState(v.copy(), rho0.n_sites, rho0.d)


# ---------------------------------------------------------------------------
# mean field


@dataclass(frozen=True)
class MeanFieldState:
    mx: float
    my: float
    mz: float

    def as_array(self) -> np.ndarray:
        return np.array([self.mx, self.my, self.mz])


def meanfield_rhs(state: MeanFieldState, jsum: float, h: float, gamma: float) -> MeanFieldState:
    """Time derivatives of the magnetizations for the Kac-normalized Ising chain.

    ``jsum`` is the summed normalized coupling ``sum_n J_n / K(alpha_n)``.
    """
    x, y, z = state.mx, state.my, state.mz
    return MeanFieldState(
        2.0 * jsum * y * z + gamma * (1.0 - x),
        -2.0 * jsum * x * z + 2.0 * h * z - 0.5 * gamma * y,
        -2.0 * h * y - 0.5 * gamma * z,
    )


def meanfield_evolve(
    state: MeanFieldState,
    jsum: float,
    h: float,
    gamma: float,
    times: np.ndarray,
) -> np.ndarray:
    """Magnetizations at ``times`` (shape ``(len(times), 3)``)."""

    def rhs(_t, m):
        return meanfield_rhs(MeanFieldState(*m), jsum, h, gamma).as_array()

    times = np.asarray(times, dtype=float)
    sol = solve_ivp(
        rhs, (times[0], times[-1]), state.as_array(), t_eval=times,
        method="DOP853", rtol=1e-11, atol=1e-13,
    )
    return sol.y.T
