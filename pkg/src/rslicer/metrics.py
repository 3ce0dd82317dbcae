"""Evaluation metrics and the deterministic 2D projection used for plots."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateVariance, EmptyInput, LengthMismatch, NoPositives

# Fixed internal seed for the power-iteration start vectors; project_2d has
# no seed parameter and must be reproducible.
_PROJECTION_SEED = 20260811
_POWER_ITERS = 200


@dataclass
class EvalReport:
    task: str
    precision: float
    recall: float
    f1: float
    mrr: float | None
    tp: int
    fp: int
    fn: int
    n: int

    def row(self) -> str:
        mrr = f"{self.mrr:.4f}" if self.mrr is not None else "-"
        return (f"task={self.task} precision={self.precision:.4f} "
                f"recall={self.recall:.4f} f1={self.f1:.4f} mrr={mrr} "
                f"tp={self.tp} fp={self.fp} fn={self.fn} n={self.n}")


def precision_recall_f1(predictions: list[bool],
                        truth: list[bool]) -> tuple[float, float, float]:
    """Binary precision/recall/F1; no predicted positives yields P = 0."""
    if len(predictions) != len(truth):
        raise LengthMismatch(f"{len(predictions)} predictions vs {len(truth)} truths")
    if not any(truth):
        raise NoPositives("no positive examples in truth")
    tp = sum(1 for p, t in zip(predictions, truth) if p and t)
    fp = sum(1 for p, t in zip(predictions, truth) if p and not t)
    fn = sum(1 for p, t in zip(predictions, truth) if not p and t)
    precision = tp / (tp + fp) if tp + fp > 0 else 0.0
    recall = tp / (tp + fn)
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return precision, recall, f1


def mrr(ranked_lists: list[list], truths: list) -> float:
    """Mean reciprocal rank (1-based); a truth absent from its list scores 0."""
    if not ranked_lists or len(ranked_lists) != len(truths):
        raise EmptyInput("need one non-empty ranked list per truth")
    total = 0.0
    for ranking, truth in zip(ranked_lists, truths):
        try:
            total += 1.0 / (ranking.index(truth) + 1)
        except ValueError:
            pass
    return total / len(truths)


def _power_iteration(cov: np.ndarray, rng: np.random.Generator) -> tuple[np.ndarray, float]:
    d = cov.shape[0]
    v = rng.normal(size=d)
    v /= np.linalg.norm(v)
    for _ in range(_POWER_ITERS):
        w = cov @ v
        norm = float(np.linalg.norm(w))
        if norm < 1e-300:
            break  # deflated to (numerically) nothing; eigenvalue is 0
        v = w / norm
    # Fix the sign: the largest-magnitude loading is positive.
    peak = int(np.abs(v).argmax())
    if v[peak] < 0:
        v = -v
    lam = float(v @ cov @ v)
    return v, lam


def project_2d(embeddings) -> tuple[list[tuple[float, float]], tuple[float, float]]:
    """Project onto the top-2 principal directions (power iteration with
    deflation) and report the explained-variance fractions.
    """
    x = np.asarray([getattr(e, "vector", e) for e in embeddings], dtype=float)
    if x.ndim != 2 or x.shape[0] < 2:
        raise EmptyInput("need at least 2 embeddings")
    centered = x - x.mean(axis=0)
    cov = centered.T @ centered
    total = float(np.trace(cov))
    if total == 0.0:
        raise DegenerateVariance("all points identical")
    rng = np.random.Generator(np.random.PCG64(_PROJECTION_SEED))
    v1, lam1 = _power_iteration(cov, rng)
    deflated = cov - lam1 * np.outer(v1, v1)
    v2, lam2 = _power_iteration(deflated, rng)
    xs = centered @ v1
    ys = centered @ v2
    points = [(float(a), float(b)) for a, b in zip(xs, ys)]
    return points, (lam1 / total, lam2 / total)
