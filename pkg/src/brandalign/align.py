"""Post-hoc alignment of two frozen embedding spaces.

Two fitters: unconstrained least squares (min ||S W - T||_F^2, minimum-norm
solution on rank deficiency) and orthogonal Procrustes (W = U V^T from the
SVD of S^T T). Both consume only exported embeddings plus the brand mapping,
never model parameters.
"""

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .data import BrandMapping
from .model import EmbeddingSpace

ORTHO_TOL = 1e-8


@dataclass
class ProjectionMatrix:
    w: np.ndarray            # d_s x d_t
    kind: str                # "least_squares" | "orthogonal"
    fit_residual: float      # ||S W - T||_F over the common rows
    degenerate: bool = False


def common_rows(source: EmbeddingSpace, target: EmbeddingSpace,
                mapping: BrandMapping):
    """Stack the vectors of mapped hotels present in both spaces.

    Returns (S, T, ids, excluded_count); rows follow ascending source id.
    """
    if len(mapping) == 0:
        raise ValueError("empty mapping: no common rows")
    s_rows, t_rows, ids = [], [], []
    excluded = 0
    for src_id in sorted(mapping.pairs):
        tgt_id = mapping.pairs[src_id]
        if src_id in source.vectors and tgt_id in target.vectors:
            s_rows.append(source.vectors[src_id])
            t_rows.append(target.vectors[tgt_id])
            ids.append((src_id, tgt_id))
        else:
            excluded += 1
    if not s_rows:
        raise ValueError("zero common rows between the two spaces")
    return np.stack(s_rows), np.stack(t_rows), ids, excluded


def fit_linear_projection(s: np.ndarray, t: np.ndarray) -> ProjectionMatrix:
    """Least-squares W = argmin ||S W - T||_F^2 via a pivoted factorization;
    minimum-Frobenius-norm solution when S is rank deficient."""
    if s.shape[0] < 1 or s.shape[0] != t.shape[0]:
        raise ValueError("S and T must have the same positive row count")
    w, _, _, _ = scipy.linalg.lstsq(s, t, lapack_driver="gelsd")
    residual = float(np.linalg.norm(s @ w - t, "fro"))
    return ProjectionMatrix(w=w, kind="least_squares", fit_residual=residual)


def fit_procrustes(s: np.ndarray, t: np.ndarray) -> ProjectionMatrix:
    """Orthogonal W = U V^T from SVD(S^T T); minimizes ||S W - T||_F over
    orthogonal matrices."""
    if s.shape != t.shape:
        raise ValueError("Procrustes needs equal-shape S and T")
    u, sigma, vt = np.linalg.svd(s.T @ t)
    w = u @ vt
    # repeated or zero singular values leave the minimizer non-unique
    degenerate = bool(np.min(sigma) < 1e-10
                      or np.min(np.abs(np.diff(sigma))) < 1e-10) if len(sigma) > 1 \
        else bool(sigma[0] < 1e-10)
    residual = float(np.linalg.norm(s @ w - t, "fro"))
    return ProjectionMatrix(w=w, kind="orthogonal", fit_residual=residual,
                            degenerate=degenerate)


def apply_projection(space: EmbeddingSpace, proj: ProjectionMatrix) -> EmbeddingSpace:
    """Map every vector through W; the result is tagged as projected."""
    if space.dim != proj.w.shape[0]:
        raise ValueError(f"space dim {space.dim} != projection rows {proj.w.shape[0]}")
    vectors = {hid: v @ proj.w for hid, v in space.vectors.items()}
    return EmbeddingSpace(dim=proj.w.shape[1],
                          brand=f"{space.brand}-projected", vectors=vectors)


# ---------------------------------------------------------------------------
# projection file: "<d_s> <d_t> <kind>" header then d_s rows of d_t floats

def write_projection(proj: ProjectionMatrix, path):
    d_s, d_t = proj.w.shape
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{d_s} {d_t} {proj.kind}\n")
        for row in proj.w:
            fh.write(" ".join(repr(float(x)) for x in row) + "\n")


def read_projection(path) -> ProjectionMatrix:
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().split()
        if len(header) != 3:
            raise ValueError(f"{path}: bad header")
        d_s, d_t, kind = int(header[0]), int(header[1]), header[2]
        rows = [np.array([float(x) for x in line.split()]) for line in fh if line.strip()]
    w = np.stack(rows)
    if w.shape != (d_s, d_t):
        raise ValueError(f"{path}: expected {d_s}x{d_t} matrix, got {w.shape}")
    return ProjectionMatrix(w=w, kind=kind, fit_residual=float("nan"))
