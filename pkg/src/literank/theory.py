"""Numerical checks of the dual-encoder rank limit and scorer permutation behaviour.

The universe is every binary P x L matrix. With the ground-truth score
``K*(X, Y) = tr(X^T Y)`` the full score matrix is ``U U^T`` where ``U`` stacks
the flattened universe, so its spectrum equals that of the PL x PL matrix
``U^T U = 2^(PL-2) (I + J)``. Truncating that spectrum gives the best score
matrix any O-dimensional dot-product encoder pair can produce.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from literank.errors import ContractError, ShapeError
from literank.nn import diagonal_selector, flat_lite_forward
from literank.scorers import similarity_matrix
from literank.tensor import as_matrix, symmetric_eigenvalues

MAX_PL = 16
EXPLICIT_GRAM_MAX_PL = 8
SPECTRUM_RTOL = 1e-9
BOUND_ATOL = 1e-9
TRACE_ATOL = 1e-12


def groundtruth_score(x, y) -> float:
    """``tr(X^T Y)``, i.e. the elementwise dot product of two P x L matrices."""
    x = as_matrix(x, "X")
    y = as_matrix(y, "Y")
    if x.shape != y.shape:
        raise ShapeError(f"ground-truth score needs equal shapes, got {x.shape} and {y.shape}")
    return float(np.sum(x * y))


def phi_tau(z: float, tau: float) -> float:
    """Continuous ramp replacing the hard 1/2-threshold quantizer."""
    if not 0.0 < tau <= 0.5:
        raise ContractError(f"tau must lie in (0, 1/2], got {tau}")
    if z <= 0.5 - tau:
        return 0.0
    if z >= 0.5 + tau:
        return 1.0
    return 0.5 + (z - 0.5) / (2.0 * tau)


def smoothed_groundtruth_score(x, y, tau: float) -> float:
    """``tr(phi(X)^T phi(Y))`` with ``phi_tau`` applied entrywise."""
    ramp = np.vectorize(lambda v: phi_tau(v, tau), otypes=[float])
    return groundtruth_score(ramp(as_matrix(x)), ramp(as_matrix(y)))


def binary_universe(p: int, l: int) -> np.ndarray:
    """All 2^(PL) binary P x L matrices, flattened row-major, one per row."""
    pl = p * l
    if p < 1 or l < 1:
        raise ContractError(f"P and L must be >= 1, got {p}, {l}")
    if pl > MAX_PL:
        raise ContractError(f"P*L = {pl} exceeds the enumeration cap of {MAX_PL}")
    return np.array(list(itertools.product((0.0, 1.0), repeat=pl)))


def expected_spectrum(p: int, l: int) -> list[float]:
    pl = p * l
    base = 2.0 ** (pl - 2)
    return [base * (pl + 1)] + [base] * (pl - 1)


@dataclass
class TheoryInstance:
    p: int
    l: int
    universe: np.ndarray
    gram_eigenvalues: list[float]

    @property
    def pl(self) -> int:
        return self.p * self.l

    @property
    def size(self) -> int:
        return self.universe.shape[0]


def build_gram_spectrum(p: int, l: int) -> TheoryInstance:
    u = binary_universe(p, l)
    return TheoryInstance(p, l, u, symmetric_eigenvalues(u.T @ u))


def explicit_score_spectrum(instance: TheoryInstance) -> list[float]:
    """Eigenvalues of the full 2^(PL) x 2^(PL) score matrix (PL <= 8 only)."""
    if instance.pl > EXPLICIT_GRAM_MAX_PL:
        raise ContractError(f"explicit score matrix only formed for PL <= {EXPLICIT_GRAM_MAX_PL}")
    u = instance.universe
    return symmetric_eigenvalues(u @ u.T)


def best_rank_o_error(instance: TheoryInstance, o: int) -> float:
    """Smallest mean squared error of any rank-``o`` approximation of the score matrix.

    Eckart-Young: the squared eigenvalues beyond the top ``o``, divided by the
    number of (query, document) pairs.
    """
    if not 0 <= o <= instance.pl:
        raise ContractError(f"O must lie in [0, {instance.pl}], got {o}")
    tail = np.array(instance.gram_eigenvalues[o:])
    return float((tail**2).sum() / float(instance.size) ** 2)


def flat_lite_trace_error(p: int, l: int, trials: int = 1000, seed: int = 0, binary: bool = False) -> float:
    """Max |flat LITE(S) - tr(X^T Y)| for identity encoders, over random pairs."""
    head = diagonal_selector(l)
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        if binary:
            x = rng.integers(0, 2, size=(p, l)).astype(float)
            y = rng.integers(0, 2, size=(p, l)).astype(float)
        else:
            x = rng.normal(size=(p, l))
            y = rng.normal(size=(p, l))
        got, _ = flat_lite_forward(similarity_matrix(x, y), head)
        worst = max(worst, abs(got - groundtruth_score(x, y)))
    return worst


# -- permutation behaviour --------------------------------------------------------


@dataclass
class PermutationReport:
    trials: int
    max_delta: float
    witness: dict | None = field(default=None)

    @property
    def invariant(self) -> bool:
        return self.max_delta == 0.0


def check_permutation_invariance(
    scorer: Callable[[np.ndarray], float],
    trials: int = 1000,
    seed: int = 0,
    shape: tuple[int, int] = (4, 6),
) -> PermutationReport:
    """Largest score change under random column (document-token) permutations of S.

    The witness records the S, permutation and both scores for the largest
    change seen.
    """
    rng = np.random.default_rng(seed)
    worst = 0.0
    witness = None
    for _ in range(trials):
        s = rng.normal(size=shape)
        perm = rng.permutation(shape[1])
        a = scorer(s)
        b = scorer(s[:, perm])
        delta = abs(a - b)
        if delta > worst:
            worst = delta
            witness = {"s": s, "perm": perm, "score": a, "permuted_score": b}
    return PermutationReport(trials, worst, witness)


# -- report ------------------------------------------------------------------------


@dataclass
class RankLimitReport:
    p: int
    l: int
    o: int
    eigenvalues: list[float]
    expected: list[float]
    rank_errors: list[float]
    explicit_eigenvalues: list[float] | None
    trace_error: float
    checks: dict[str, bool]

    @property
    def passed(self) -> bool:
        return all(self.checks.values())

    def format(self) -> str:
        fmt = lambda xs: " ".join(f"{x:.9f}" for x in xs)  # noqa: E731
        pl = self.p * self.l
        lines = [
            f"rank-limit P={self.p} L={self.l} PL={pl} universe={2 ** pl}",
            f"eigenvalues: {fmt(self.eigenvalues)}",
            f"expected:    {fmt(self.expected)}",
        ]
        if self.explicit_eigenvalues is not None:
            lines.append(f"score-matrix top eigenvalues: {fmt(self.explicit_eigenvalues[:pl])}")
        for o, err in enumerate(self.rank_errors):
            lines.append(f"rank-{o} normalized error {err:.10f}")
        lines.append(f"selected O={self.o} normalized error {self.rank_errors[self.o]:.10f} (DE floor 0.0625)")
        lines.append(f"flat LITE trace max |error| {self.trace_error:.3e}")
        for name, ok in self.checks.items():
            lines.append(f"{'PASS' if ok else 'FAIL'} {name}")
        lines.append(f"RESULT {'PASS' if self.passed else 'FAIL'}")
        return "\n".join(lines) + "\n"


def verify_rank_limit(p: int, l: int, o: int | None = None, trace_trials: int = 1000) -> RankLimitReport:
    """Check the spectrum, the 1/16 floor at O = PL - 1, and the flat LITE contrast."""
    if l < 2:
        raise ContractError(f"the rank limit needs L >= 2 tokens, got L={l}")
    inst = build_gram_spectrum(p, l)
    pl = inst.pl
    o = pl - 1 if o is None else o
    if not 0 <= o <= pl:
        raise ContractError(f"O must lie in [0, {pl}], got {o}")
    expected = expected_spectrum(p, l)
    ev = inst.gram_eigenvalues
    spectrum_ok = all(abs(a - b) <= SPECTRUM_RTOL * b for a, b in zip(ev, expected)) and len(ev) == pl
    errors = [best_rank_o_error(inst, k) for k in range(pl + 1)]
    checks = {
        "spectrum": spectrum_ok,
        f"rank-{pl - 1} error == 1/16": abs(errors[pl - 1] - 1.0 / 16.0) <= BOUND_ATOL,
        f"rank-{o} error >= 1/16" if o < pl else f"rank-{o} error == 0": (
            errors[o] >= 1.0 / 16.0 - BOUND_ATOL if o < pl else errors[o] <= BOUND_ATOL
        ),
    }
    explicit = None
    if pl <= 4:
        # small enough to form the full score matrix inside the time budget
        explicit = explicit_score_spectrum(inst)
        checks["explicit score matrix"] = all(abs(a - b) <= 1e-8 * max(1.0, b) for a, b in zip(explicit[:pl], ev)) and all(
            abs(x) <= 1e-8 for x in explicit[pl:]
        )
    trace_err = flat_lite_trace_error(p, l, trace_trials)
    checks["flat LITE trace"] = trace_err < TRACE_ATOL
    return RankLimitReport(p, l, o, ev, expected, errors, explicit, trace_err, checks)
