"""Unsupervised salient-region discovery by a normalized cut over patches.

Patches become graph nodes. Appearance and flow similarities are averaged
and thresholded into a two-level edge matrix, the generalized eigensystem
(D - W) x = lambda D x is solved for its second-smallest eigenpair, and the
Fiedler vector is thresholded at its mean to split the patches in two. The
foreground side is the one holding the strongest eigenvector response,
unless the total-degree cue disagrees, in which case the side with less
total connectivity wins.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.sparse.linalg

logger = logging.getLogger(__name__)

EDGE_EPSILON = 1e-5
EDGE_TAU_DEFAULT = 0.2

# Above this many nodes the dense generalized solver gives way to
# shift-inverted Lanczos on the normalized Laplacian.
DENSE_SOLVER_LIMIT = 512


class DegenerateGraphError(ValueError):
    """All patches are mutually indistinguishable; no cut is defined."""


class EigenSolverError(RuntimeError):
    """Iterative eigensolver failed to converge; carries iteration count."""

    def __init__(self, message: str, iterations: int):
        self.iterations = int(iterations)
        super().__init__(f"{message} (after {iterations} iterations)")


def cosine_similarity_matrix(features: np.ndarray) -> np.ndarray:
    """Pairwise cosine similarity of K row vectors, clipped to [-1, 1].

    Zero vectors get similarity 0 against everything, themselves included;
    their presence is logged because they usually mean degenerate input.
    """
    feats = np.asarray(features, dtype=np.float64)
    if feats.ndim != 2:
        raise ValueError("features must be (K, D)")
    norms = np.linalg.norm(feats, axis=1)
    zero = norms == 0
    if np.any(zero):
        logger.warning("%d of %d feature vectors are zero", zero.sum(), zero.size)
    unit = np.divide(feats, norms[:, None], out=np.zeros_like(feats), where=~zero[:, None])
    sim = np.clip(unit @ unit.T, -1.0, 1.0)
    np.fill_diagonal(sim, np.where(zero, 0.0, 1.0))
    return sim


@dataclass(frozen=True)
class SimilarityGraph:
    """Fully connected patch graph with edges in {1, epsilon}."""

    weights: np.ndarray
    tau: float
    epsilon: float


def build_graph(
    w_image: np.ndarray,
    w_flow: np.ndarray,
    tau: float = EDGE_TAU_DEFAULT,
    epsilon: float = EDGE_EPSILON,
) -> SimilarityGraph:
    """Threshold the averaged similarities into strong/weak edges.

    An edge is 1 where (w_image + w_flow) / 2 >= tau and epsilon otherwise;
    the diagonal is forced to 1.
    """
    if not -1.0 <= tau <= 1.0:
        raise ValueError("tau must lie in [-1, 1]")
    if not 0.0 < epsilon < 1.0:
        raise ValueError("epsilon must lie in (0, 1)")
    w_image = np.asarray(w_image, dtype=np.float64)
    w_flow = np.asarray(w_flow, dtype=np.float64)
    if w_image.shape != w_flow.shape or w_image.ndim != 2:
        raise ValueError("similarity matrices must share a (K, K) shape")
    if w_image.shape[0] != w_image.shape[1]:
        raise ValueError("similarity matrices must be square")
    for name, w in (("image", w_image), ("flow", w_flow)):
        if not np.allclose(w, w.T, atol=1e-8):
            raise ValueError(f"{name} similarity matrix is not symmetric")
    avg = 0.5 * (w_image + w_flow)
    edges = np.where(avg >= tau, 1.0, epsilon)
    edges = np.maximum(edges, edges.T)
    np.fill_diagonal(edges, 1.0)
    return SimilarityGraph(weights=edges, tau=float(tau), epsilon=float(epsilon))


@dataclass(frozen=True)
class NCutResult:
    fiedler: np.ndarray
    lambda2: float
    partition: np.ndarray  # True where fiedler >= its mean
    foreground: np.ndarray  # True on the salient side


def _fiedler_dense(weights: np.ndarray, degrees: np.ndarray):
    laplacian = np.diag(degrees) - weights
    vals, vecs = scipy.linalg.eigh(laplacian, np.diag(degrees))
    return float(vals[1]), vecs[:, 1]


def _fiedler_iterative(weights: np.ndarray, degrees: np.ndarray):
    d_isqrt = 1.0 / np.sqrt(degrees)
    sym = -(d_isqrt[:, None] * weights * d_isqrt[None, :])
    np.fill_diagonal(sym, sym.diagonal() + 1.0)
    sym = 0.5 * (sym + sym.T)
    try:
        # Shift-invert just below zero separates the small, clustered
        # eigenvalues that plain Lanczos struggles with on epsilon graphs.
        vals, vecs = scipy.sparse.linalg.eigsh(sym, k=2, sigma=-1e-6, which="LM")
    except scipy.sparse.linalg.ArpackNoConvergence as exc:
        raise EigenSolverError(
            "Lanczos iteration did not converge", getattr(exc, "iterations", -1)
        ) from exc
    order = np.argsort(vals)
    lam = float(vals[order[1]])
    x = d_isqrt * vecs[:, order[1]]
    return lam, x


def ncut_bipartition(
    graph: SimilarityGraph, dense_limit: int = DENSE_SOLVER_LIMIT
) -> NCutResult:
    """Two-way normalized cut of the patch graph.

    Solves (D - W) x = lambda D x for the Fiedler pair, thresholds x at its
    mean, and picks the foreground side (strongest |x| response, overridden
    by the smaller-total-degree side when the two cues disagree).
    """
    weights = graph.weights
    k = weights.shape[0]
    if k < 2:
        raise ValueError("need at least two patches to cut")
    off = weights[~np.eye(k, dtype=bool)]
    # A two-node graph has exactly one bipartition, so its Fiedler pair is
    # unique up to sign; the all-equal ambiguity only exists from K = 3 up.
    if k > 2 and np.ptp(off) <= 1e-12:
        raise DegenerateGraphError(
            "all off-diagonal edges are equal; the cut is undefined"
        )
    degrees = weights.sum(axis=1)
    if k <= dense_limit:
        lambda2, fiedler = _fiedler_dense(weights, degrees)
    else:
        lambda2, fiedler = _fiedler_iterative(weights, degrees)
    norm = np.linalg.norm(fiedler)
    if norm > 0:
        fiedler = fiedler / norm
    if np.ptp(fiedler) <= 1e-12:
        raise DegenerateGraphError("Fiedler vector is constant; no partition")
    partition = fiedler >= fiedler.mean()

    peak_side = bool(partition[np.argmax(np.abs(fiedler))])
    deg_true = degrees[partition].sum()
    deg_false = degrees[~partition].sum()
    if deg_true == deg_false:
        fg_side = peak_side
    else:
        fg_side = bool(deg_true < deg_false)
    foreground = partition == fg_side
    return NCutResult(
        fiedler=fiedler,
        lambda2=lambda2,
        partition=partition,
        foreground=foreground,
    )


def ncut_cost(weights: np.ndarray, side: np.ndarray) -> float:
    """Normalized-cut objective of a bipartition (used by tests as oracle)."""
    side = np.asarray(side, dtype=bool)
    if not side.any() or side.all():
        raise ValueError("both sides of the cut must be nonempty")
    cut = weights[side][:, ~side].sum()
    assoc_a = weights[side].sum()
    assoc_b = weights[~side].sum()
    return float(cut / assoc_a + cut / assoc_b)


def mask_from_partition(
    foreground: np.ndarray,
    grid_shape: tuple[int, int],
    patch_size: int,
    height: int,
    width: int,
) -> np.ndarray:
    """Paint per-patch labels onto pixels; remainder pixels copy the nearest
    patch so the mask always covers the full sensor."""
    h_p, w_p = grid_shape
    fg = np.asarray(foreground, dtype=bool).reshape(h_p, w_p)
    rows = np.minimum(np.arange(height) // patch_size, h_p - 1)
    cols = np.minimum(np.arange(width) // patch_size, w_p - 1)
    return fg[np.ix_(rows, cols)]
