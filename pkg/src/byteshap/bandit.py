"""LinUCB scoring of family byte positions.

Each byte position is an arm. The context for a seed is the cosine
similarity between its execution path and a small set of mutually distant
"center" paths. Rewards are the Shapley increments a position earned.
"""

from __future__ import annotations

import math
from collections.abc import Sequence
from dataclasses import dataclass, field

import numpy as np

DEFAULT_CENTERS = 10
DEFAULT_ALPHA = 0.5
SELECTION_EPS = 1e-6


def cosine(a: frozenset[int], b: frozenset[int]) -> float:
    """|a & b| / sqrt(|a| |b|); 1.0 for two empty paths, 0.0 if only one is empty."""
    if not a and not b:
        return 1.0
    if not a or not b:
        return 0.0
    return len(a & b) / math.sqrt(len(a) * len(b))


@dataclass
class CenterSet:
    seed_ids: list[int] = field(default_factory=list)
    paths: list[frozenset[int]] = field(default_factory=list)
    k: int = DEFAULT_CENTERS

    def __len__(self) -> int:
        return len(self.paths)


def select_centers(corpus_paths: Sequence[tuple[int, frozenset[int]]], k: int = DEFAULT_CENTERS) -> CenterSet:
    """Greedy farthest-point selection under distance 1 - cosine.

    Starts from the largest path. Ties, both for the first pick and the
    max-min picks after it, go to the larger path and then the lower id.
    """
    if not corpus_paths:
        raise ValueError("cannot select centers from an empty corpus")
    if k < 1:
        raise ValueError(f"number of centers must be positive, got {k}")
    pool = sorted(corpus_paths, key=lambda item: (-len(item[1]), item[0]))
    chosen = [pool[0]]
    remaining = pool[1:]
    min_dist = [1.0 - cosine(path, chosen[0][1]) for _, path in remaining]
    while len(chosen) < k and remaining:
        # pool order already encodes the tie-break
        best = max(range(len(remaining)), key=lambda i: (min_dist[i], -i))
        pick = remaining.pop(best)
        min_dist.pop(best)
        chosen.append(pick)
        min_dist = [min(d, 1.0 - cosine(path, pick[1])) for d, (_, path) in zip(min_dist, remaining)]
    return CenterSet([sid for sid, _ in chosen], [path for _, path in chosen], k)


def featurize(seed_path: frozenset[int], centers: CenterSet) -> np.ndarray:
    f = np.zeros(centers.k, dtype=np.float64)
    if not seed_path:
        return f
    for i, center in enumerate(centers.paths):
        f[i] = cosine(seed_path, center)
    return f


@dataclass
class ArmState:
    A: np.ndarray
    b: np.ndarray
    pulls: int = 0

    @classmethod
    def fresh(cls, k: int = DEFAULT_CENTERS) -> ArmState:
        return cls(np.eye(k, dtype=np.float64), np.zeros(k, dtype=np.float64))

    @property
    def dim(self) -> int:
        return len(self.b)

    def copy(self) -> ArmState:
        return ArmState(self.A.copy(), self.b.copy(), self.pulls)


def _check_dim(arm: ArmState, f: np.ndarray) -> np.ndarray:
    f = np.asarray(f, dtype=np.float64)
    if f.shape != (arm.dim,):
        raise ValueError(f"feature vector shape {f.shape} does not match arm dimension {arm.dim}")
    return f


def expected_and_bonus(arm: ArmState, f: np.ndarray) -> tuple[float, float]:
    """Ridge estimate f . A^-1 b and confidence width sqrt(f . A^-1 f)."""
    f = _check_dim(arm, f)
    # A = I + sum f f^T is SPD, so Cholesky never fails
    chol = np.linalg.cholesky(arm.A)
    y = np.linalg.solve(chol, f)
    z = np.linalg.solve(chol, arm.b)
    expected = float(y @ z)
    width = math.sqrt(max(float(y @ y), 0.0))
    return expected, width


def score(arm: ArmState, f: np.ndarray, alpha: float = DEFAULT_ALPHA) -> float:
    expected, width = expected_and_bonus(arm, f)
    return expected + alpha * width


def update_arm(arm: ArmState, f: np.ndarray, phi_reward: float) -> ArmState:
    """Return the arm after observing reward ``phi_reward`` in context ``f``."""
    f = _check_dim(arm, f)
    if not math.isfinite(phi_reward):
        raise ValueError(f"reward must be finite, got {phi_reward}")
    return ArmState(arm.A + np.outer(f, f), arm.b + phi_reward * f, arm.pulls + 1)


def score_many(arms: Sequence[ArmState], f: np.ndarray, alpha: float = DEFAULT_ALPHA) -> np.ndarray:
    """``score`` for several arms sharing one context, in a single batched solve."""
    if not arms:
        return np.zeros(0)
    f = _check_dim(arms[0], f)
    A = np.stack([arm.A for arm in arms])
    rhs = np.stack([np.column_stack((arm.b, f)) for arm in arms])
    sol = np.linalg.solve(A, rhs)  # columns: A^-1 b, A^-1 f
    expected = sol[:, :, 0] @ f
    width = np.sqrt(np.clip(sol[:, :, 1] @ f, 0.0, None))
    return expected + alpha * width


def selection_distribution(scores: Sequence[float], eps: float = SELECTION_EPS) -> np.ndarray:
    """Shift scores to a zero minimum, add ``eps`` everywhere, normalize."""
    s = np.asarray(scores, dtype=np.float64)
    if s.size == 0:
        raise ValueError("cannot build a distribution over zero arms")
    if not np.all(np.isfinite(s)):
        raise ValueError("scores must be finite")
    w = s - s.min() + eps
    return w / w.sum()
