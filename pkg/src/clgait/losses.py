"""Training objectives: cross-modality triplet, combined fine-tuning loss,
and the symmetric contrastive loss (global and part-level variants).

All functions accept Vars (differentiable) or plain arrays and return a
scalar Var.
"""

import numpy as np

from . import numcore as nc

DIST_EPS = 1e-12  # inside the sqrt of pairwise distances


def pairwise_distances(a, b):
    """Euclidean distance matrix between rows of a (N, D) and b (M, D)."""
    a, b = nc.as_var(a), nc.as_var(b)
    if a.data.shape[1] != b.data.shape[1]:
        raise nc.ShapeError("pairwise_distances", "b", b.data.shape,
                            f"(M, {a.data.shape[1]})")
    a2 = nc.vsum(nc.mul(a, a), axis=1, keepdims=True)         # (N, 1)
    b2 = nc.reshape(nc.vsum(nc.mul(b, b), axis=1), (1, -1))   # (1, M)
    cross = nc.matmul(a, nc.transpose(b, (1, 0)))
    sq = nc.add(nc.sub(a2, nc.mul(cross, 2.0)), b2)
    return nc.sqrt(nc.add(nc.relu(sq), DIST_EPS))


def cross_modality_triplet(sil_emb, pc_emb, sil_ids, pc_ids, margin=0.2):
    """Batch-all triplet where anchors from one modality draw positives and
    negatives exclusively from the other; both directions averaged."""
    sil_ids = np.asarray(sil_ids)
    pc_ids = np.asarray(pc_ids)

    def one_direction(anchors, a_ids, others, o_ids):
        d = pairwise_distances(anchors, others)               # (A, G)
        pos = a_ids[:, None] == o_ids[None, :]
        neg = ~pos
        n_trip = int((pos.sum(axis=1) * neg.sum(axis=1)).sum())
        if n_trip == 0:
            return None, 0
        # term[a, p, n] = margin + d[a, p] - d[a, n] over valid (p, n)
        dp = nc.reshape(d, (d.data.shape[0], -1, 1))
        dn = nc.reshape(d, (d.data.shape[0], 1, -1))
        term = nc.relu(nc.add(nc.sub(dp, dn), margin))
        mask = (pos[:, :, None] & neg[:, None, :]).astype(d.data.dtype)
        total = nc.vsum(nc.mul(term, mask))
        return total, n_trip

    t1, n1 = one_direction(pc_emb, pc_ids, sil_emb, sil_ids)
    t2, n2 = one_direction(sil_emb, sil_ids, pc_emb, pc_ids)
    if n1 == 0 or n2 == 0:
        raise ValueError("cross_modality_triplet: degenerate batch (no valid triplet)")
    return nc.mul(nc.add(nc.mul(t1, 1.0 / n1), nc.mul(t2, 1.0 / n2)), 0.5)


def identity_ce(logits, ids):
    """Mean per-part cross entropy; logits (B, n_h, K), ids length B."""
    b, n_h, k = logits.data.shape
    flat = nc.reshape(logits, (b * n_h, k))
    targets = np.repeat(np.asarray(ids), n_h)
    return nc.softmax_cross_entropy(flat, targets)


def combined_loss(sil_emb, pc_emb, sil_ids, pc_ids, logits, logit_ids,
                  gamma=1.0, margin=0.2):
    """Triplet + gamma * identity cross entropy."""
    trip = cross_modality_triplet(sil_emb, pc_emb, sil_ids, pc_ids, margin)
    if gamma == 0.0:
        return trip
    return nc.add(trip, nc.mul(identity_ce(logits, logit_ids), gamma))


def contrastive_loss(s, p, tau=1.0):
    """Symmetric cross entropy over the cosine similarity matrix of N
    aligned (silhouette, point) embedding pairs."""
    s, p = nc.as_var(s), nc.as_var(p)
    if s.data.shape != p.data.shape:
        raise nc.ShapeError("contrastive_loss", "p", p.data.shape, s.data.shape)
    m = nc.matmul(nc.l2_normalize(s, axis=1), nc.transpose(nc.l2_normalize(p, axis=1), (1, 0)))
    logits = nc.mul(m, 1.0 / tau)
    targets = np.arange(s.data.shape[0])
    ce_rows = nc.softmax_cross_entropy(logits, targets)
    ce_cols = nc.softmax_cross_entropy(nc.transpose(logits, (1, 0)), targets)
    return nc.mul(nc.add(ce_rows, ce_cols), 0.5)


def part_contrastive_loss(s_parts, p_parts, tau=1.0):
    """Part-level variant: (sample, part) rows match only their exact
    counterpart in the other modality."""
    s_parts, p_parts = nc.as_var(s_parts), nc.as_var(p_parts)
    n, n_h, d = s_parts.data.shape
    return contrastive_loss(
        nc.reshape(s_parts, (n * n_h, d)),
        nc.reshape(p_parts, (n * n_h, d)),
        tau,
    )


def alignment_metric(s: np.ndarray, p: np.ndarray) -> float:
    """Mean diagonal minus mean off-diagonal of the cross-modality cosine
    similarity matrix (higher = better aligned)."""
    s = np.asarray(s, dtype=np.float64)
    p = np.asarray(p, dtype=np.float64)
    sn = s / np.linalg.norm(s, axis=1, keepdims=True)
    pn = p / np.linalg.norm(p, axis=1, keepdims=True)
    m = sn @ pn.T
    n = m.shape[0]
    diag = np.trace(m) / n
    off = (m.sum() - np.trace(m)) / (n * n - n) if n > 1 else 0.0
    return float(diag - off)
