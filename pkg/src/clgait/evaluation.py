"""Cross-view, cross-modality gallery/probe retrieval evaluation.

Gallery = normal-condition sequences, probe = variant-condition sequences.
Direction L_to_C: point-cloud probes against silhouette gallery; C_to_L
reversed. Scores are rank-k accuracies per (probe-view, gallery-view) cell,
averaged over nonempty cells (same-view pairs included by default).
"""

import csv
import json
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import network as netmod

DIRECTIONS = ("L_to_C", "C_to_L")
RANKS = (1, 3, 5)


@dataclass
class EvalReport:
    direction: str
    cells: dict = field(default_factory=dict)   # (probe_view, gallery_view) -> metrics
    averages: dict = field(default_factory=dict)
    warnings: list = field(default_factory=list)

    def to_dict(self):
        return {
            "direction": self.direction,
            "cells": {
                f"{pv}-{gv}": m for (pv, gv), m in sorted(self.cells.items())
            },
            "averages": self.averages,
            "warnings": self.warnings,
        }

    def write_json(self, path):
        with open(path, "w", encoding="utf-8") as f:
            json.dump(self.to_dict(), f, indent=1, sort_keys=True)

    def write_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as f:
            w = csv.writer(f)
            w.writerow(["direction", "k", "accuracy"])
            for k in RANKS:
                w.writerow([self.direction, k, f"{self.averages[f'rank{k}']:.4f}"])


def build_gallery_probe(dataset, split, direction):
    """Split records into (gallery, probe) per the retrieval direction.

    Returns lists of (record, modality) pairs; identities missing from the
    gallery are excluded from probing with a recorded warning.
    """
    if direction not in DIRECTIONS:
        raise ValueError(f"unknown direction '{direction}'")
    records = dataset.split_records(split)
    if not records:
        raise ValueError(f"split '{split}' is empty")
    gallery_recs = [r for r in records if r.condition == "normal"]
    probe_recs = [r for r in records if r.condition != "normal"]
    if not probe_recs:
        raise ValueError("no variant probes: dataset has only normal conditions")
    if not gallery_recs:
        raise ValueError("empty gallery: dataset has no normal conditions")
    probe_mod = "pointcloud" if direction == "L_to_C" else "silhouette"
    gallery_mod = "silhouette" if direction == "L_to_C" else "pointcloud"
    gallery_ids = {r.identity for r in gallery_recs}
    notes = []
    kept_probes = []
    for r in probe_recs:
        if r.identity not in gallery_ids:
            notes.append(f"identity {r.identity} has no gallery sequence; excluded")
        else:
            kept_probes.append(r)
    gallery = [(r, gallery_mod) for r in gallery_recs]
    probes = [(r, probe_mod) for r in kept_probes]
    return gallery, probes, notes


def distance_matrix(probe_emb: np.ndarray, gallery_emb: np.ndarray) -> np.ndarray:
    """Euclidean distances between concatenated part embeddings."""
    p = np.asarray(probe_emb, dtype=np.float64)
    g = np.asarray(gallery_emb, dtype=np.float64)
    if p.shape[1] != g.shape[1]:
        raise ValueError(
            f"distance_matrix: dim mismatch {p.shape[1]} vs {g.shape[1]}"
        )
    p2 = (p * p).sum(axis=1)[:, None]
    g2 = (g * g).sum(axis=1)[None, :]
    sq = np.maximum(p2 + g2 - 2.0 * (p @ g.T), 0.0)
    return np.sqrt(sq)


def rank_k(distances, probe_ids, gallery_ids, k):
    """Percent of probes with a same-identity gallery entry in the k nearest
    (stable ascending-distance sort, ties by gallery index)."""
    if k < 1:
        raise ValueError("rank_k: k must be >= 1")
    d = np.asarray(distances)
    if d.shape[1] == 0:
        raise ValueError("rank_k: empty gallery")
    gallery_ids = np.asarray(gallery_ids)
    probe_ids = np.asarray(probe_ids)
    hits = 0
    for i in range(d.shape[0]):
        order = np.argsort(d[i], kind="stable")
        if np.any(gallery_ids[order[:k]] == probe_ids[i]):
            hits += 1
    return 100.0 * hits / d.shape[0] if d.shape[0] else 0.0


def embed_records(net: netmod.CLGaitNetwork, pairs, z_near, z_far,
                  eval_frames=None, jobs=1):
    """Embed (record, modality) pairs -> (N, n_h*d) matrix, parallel-safe."""
    from concurrent.futures import ThreadPoolExecutor

    from . import geometry

    def frames_for(rec, modality):
        if modality == "silhouette":
            return netmod.sil_to_channels(rec.sil)
        chans = np.stack(
            [geometry.depth_to_channels(d, z_near, z_far) for d in rec.depth]
        ).astype(np.float32)
        return chans

    def one(pair):
        rec, modality = pair
        frames = frames_for(rec, modality)
        if eval_frames is not None and len(frames) > eval_frames:
            idx = np.linspace(0, len(frames) - 1, eval_frames).round().astype(int)
            frames = frames[idx]
        return net.embed_sequence(frames, modality)

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            embs = list(pool.map(one, pairs))
    else:
        embs = [one(p) for p in pairs]
    return np.stack(embs)


def cross_view_report(dataset, net, direction, split="train",
                      z_near=None, z_far=None, eval_frames=None,
                      include_same_view=True, jobs=1) -> EvalReport:
    """Rank-1/3/5 per (probe-view, gallery-view) cell plus cell averages."""
    from . import geometry
    if z_near is None:
        z_near = geometry.PIPELINE_Z_NEAR
    if z_far is None:
        z_far = geometry.PIPELINE_Z_FAR
    gallery, probes, notes = build_gallery_probe(dataset, split, direction)
    g_emb = embed_records(net, gallery, z_near, z_far, eval_frames, jobs)
    p_emb = embed_records(net, probes, z_near, z_far, eval_frames, jobs)
    g_ids = np.array([r.identity for r, _ in gallery])
    p_ids = np.array([r.identity for r, _ in probes])
    g_views = np.array([r.view for r, _ in gallery])
    p_views = np.array([r.view for r, _ in probes])
    d = distance_matrix(p_emb, g_emb)

    report = EvalReport(direction=direction, warnings=notes)
    sums = {k: 0.0 for k in RANKS}
    n_cells = 0
    for pv in sorted(set(p_views)):
        for gv in sorted(set(g_views)):
            if not include_same_view and pv == gv:
                continue
            pi = np.nonzero(p_views == pv)[0]
            gi = np.nonzero(g_views == gv)[0]
            if len(pi) == 0 or len(gi) == 0:
                continue
            cell = {
                "probes": int(len(pi)),
                "gallery": int(len(gi)),
            }
            for k in RANKS:
                cell[f"rank{k}"] = rank_k(
                    d[np.ix_(pi, gi)], p_ids[pi], g_ids[gi], k
                )
            report.cells[(int(pv), int(gv))] = cell
            for k in RANKS:
                sums[k] += cell[f"rank{k}"]
            n_cells += 1
    report.averages = {f"rank{k}": sums[k] / n_cells for k in RANKS}
    return report
