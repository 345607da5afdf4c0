"""Sequential single-site Metropolis sampling of ``|<x|rho>|**2``.

A :class:`Sample` holds ``B`` independent Markov chains that are advanced in
lock step, so each proposal costs one batched ``chi x chi`` product. With
``B = 1`` this is the textbook sequential sweep.

A left-to-right sweep consumes the suffix products of the current state and
emits the prefix products of the new one; a right-to-left sweep does the
converse. Consecutive sweeps alternate direction so that no products have to be
recomputed between sweeps.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Iterator, Literal

import numpy as np

from .ansatz import MpoAnsatz, PartialProducts, left_products, right_products
from .errors import DegenerateDistributionError, InvalidInputError

Direction = Literal["right", "left"]
INIT_REDRAWS = 100


@dataclass(frozen=True)
class SamplerConfig:
    """``n_samples`` configurations per gradient evaluation and worker.

    Samples are drawn ``n_chains`` at a time, so the number actually produced
    is ``n_chains * ceil(n_samples / n_chains)``.
    """

    n_samples: int = 5000
    sweeps_between: int = 5
    burn_in: int = 5
    n_chains: int = 100
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n_samples < 1:
            raise InvalidInputError("n_samples must be >= 1")
        if self.sweeps_between < 1:
            raise InvalidInputError("sweeps_between must be >= 1")
        if self.burn_in < 0:
            raise InvalidInputError("burn_in must be >= 0")
        if self.n_chains < 1:
            raise InvalidInputError("n_chains must be >= 1")

    @property
    def rounds(self) -> int:
        return math.ceil(self.n_samples / self.n_chains)


@dataclass
class Sample:
    """Configurations of ``B`` chains with their amplitudes and cached products."""

    x: np.ndarray
    amp: np.ndarray
    pp: PartialProducts
    n_proposals: int = 0
    n_accepted: int = 0
    sweeps: int = 0
    next_direction: Direction = "right"
    _stuck: np.ndarray | None = field(default=None, repr=False)

    @property
    def batch(self) -> int:
        return self.x.shape[0]

    @property
    def acceptance_rate(self) -> float:
        return self.n_accepted / self.n_proposals if self.n_proposals else float("nan")

    def complete(self, ansatz: MpoAnsatz) -> Sample:
        """Fill in whichever product set the last sweep left stale."""
        left, right = self.pp.left, self.pp.right
        if left is None:
            left = left_products(ansatz, self.x)
        if right is None:
            right = right_products(ansatz, self.x)
        return replace(self, pp=PartialProducts(left, right))


def sample_from(ansatz: MpoAnsatz, x: np.ndarray) -> Sample:
    """Sample with freshly computed products for given configurations."""
    x = np.atleast_2d(np.asarray(x, dtype=np.intp)).copy()
    right = right_products(ansatz, x)
    amp = np.trace(right[:, 0], axis1=1, axis2=2)
    return Sample(x=x, amp=amp, pp=PartialProducts(None, right))


def initial_sample(ansatz: MpoAnsatz, n_chains: int, rng: np.random.Generator) -> Sample:
    """Uniformly random start, redrawing chains with zero amplitude."""
    x = rng.integers(0, ansatz.local_dim, size=(n_chains, ansatz.n_sites))
    state = sample_from(ansatz, x)
    for _ in range(INIT_REDRAWS):
        dead = state.amp == 0
        if not dead.any():
            break
        x[dead] = rng.integers(0, ansatz.local_dim, size=(int(dead.sum()), ansatz.n_sites))
        state = sample_from(ansatz, x)
    return state


def metropolis_sweep(
    ansatz: MpoAnsatz,
    state: Sample,
    rng: np.random.Generator,
    direction: Direction = "right",
) -> Sample:
    """One Metropolis update per site, in chain order for ``direction='right'``.

    Proposals are uniform over all ``d**2`` local states (self-proposals
    included) and are accepted with probability ``min(1, |q'/q|**2)``.
    Rightward sweeps need ``state.pp.right`` and return fresh ``left`` products;
    leftward sweeps the converse.
    """
    n, chi, batch = ansatz.n_sites, ansatz.chi, state.batch
    x = state.x.copy()
    stuck = np.zeros(batch, dtype=np.intp) if state._stuck is None else state._stuck.copy()
    accepted = 0

    if direction == "right":
        env_src = state.pp.right
        if env_src is None:
            raise InvalidInputError("a rightward sweep needs right products")
        built = np.empty((batch, n + 1, chi, chi), dtype=np.complex128)
        built[:, 0] = np.eye(chi)
        sites = range(n)
    elif direction == "left":
        env_src = state.pp.left
        if env_src is None:
            raise InvalidInputError("a leftward sweep needs left products")
        built = np.empty((batch, n + 1, chi, chi), dtype=np.complex128)
        built[:, n] = np.eye(chi)
        sites = range(n - 1, -1, -1)
    else:
        raise InvalidInputError(f"direction must be 'right' or 'left', got {direction!r}")

    rows = np.arange(batch)
    for j in sites:
        if direction == "right":
            env = env_src[:, j + 1] @ built[:, j]
        else:
            env = built[:, j + 1] @ env_src[:, j]
        tensors = ansatz.tensors[j % ansatz.unit_cell]
        # q_all[b, s] = tr(A_s env_b) for every local state in one GEMM
        q_all = env.transpose(0, 2, 1).reshape(batch, chi * chi) @ tensors.reshape(-1, chi * chi).T
        q = q_all[rows, x[:, j]]
        proposal = rng.integers(0, ansatz.local_dim, size=batch)
        q_new = q_all[rows, proposal]
        num = np.abs(q_new) ** 2
        den = np.abs(q) ** 2
        u = rng.random(batch)
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(den > 0, num / den, np.where(num > 0, np.inf, 0.0))
        accept = u < ratio
        x[accept, j] = proposal[accept]
        accepted += int(accept.sum())

        zero = den == 0
        stuck = np.where(zero & ~accept, stuck + 1, 0)
        if np.any(stuck > 10 * n):
            raise DegenerateDistributionError(
                f"more than {10 * n} consecutive rejections from zero-amplitude states"
            )

        a = tensors[x[:, j]]
        if direction == "right":
            built[:, j + 1] = built[:, j] @ a
        else:
            built[:, j] = a @ built[:, j + 1]

    if direction == "right":
        pp = PartialProducts(built, None)
        amp = np.trace(built[:, n], axis1=1, axis2=2)
        following: Direction = "left"
    else:
        pp = PartialProducts(None, built)
        amp = np.trace(built[:, 0], axis1=1, axis2=2)
        following = "right"
    return Sample(
        x=x,
        amp=amp,
        pp=pp,
        n_proposals=state.n_proposals + n * batch,
        n_accepted=state.n_accepted + accepted,
        sweeps=state.sweeps + 1,
        next_direction=following,
        _stuck=stuck,
    )


def sweep(ansatz: MpoAnsatz, state: Sample, rng: np.random.Generator) -> Sample:
    """Sweep in whichever direction the cached products allow."""
    direction = state.next_direction
    if direction == "right" and state.pp.right is None:
        direction = "left"
    elif direction == "left" and state.pp.left is None:
        direction = "right"
    return metropolis_sweep(ansatz, state, rng, direction)


def draw_batch(
    ansatz: MpoAnsatz,
    cfg: SamplerConfig,
    init: Sample,
    rng: np.random.Generator,
) -> Iterator[Sample]:
    """Burn in, then yield ``cfg.rounds`` samples ``sweeps_between`` sweeps apart.

    Every yielded sample carries both product sets. The chain state after the
    last yield is the final yielded sample.
    """
    state = init
    for _ in range(cfg.burn_in):
        state = sweep(ansatz, state, rng)
    for _ in range(cfg.rounds):
        for _ in range(cfg.sweeps_between):
            state = sweep(ansatz, state, rng)
        state = state.complete(ansatz)
        yield state
