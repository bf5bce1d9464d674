"""Paired gait dataset: generation, on-disk layout, manifest, round-trip IO.

Layout:
    <root>/manifest.json
    <root>/<id>/<seq-id>/sil/%04d.pgm     8-bit, 64x64
    <root>/<id>/<seq-id>/pcd/%04d.ply     ASCII x y z
    <root>/<id>/<seq-id>/depth/%04d.pgm   16-bit millimeters, 64x64

Silhouette and point-cloud frames with the same index derive from the same
walker pose; depth/ holds the projected-and-interpolated representation of
the point cloud that the network consumes.
"""

import hashlib
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .. import formats, geometry
from ..numcore import rng as rngmod
from . import walker as wk

VIEWS = tuple(range(0, 360, 45))
INTERP_RADIUS = 2


@dataclass
class GaitSequence:
    identity: str
    view: int
    condition: str
    modality: str               # "silhouette" or "pointcloud"
    frames: list                # per-frame payloads
    timestamps: list

    def __post_init__(self):
        if not self.frames:
            raise ValueError("GaitSequence: frames must be nonempty")
        if list(self.timestamps) != sorted(set(self.timestamps)):
            raise ValueError("GaitSequence: timestamps must be strictly increasing")


@dataclass
class SequenceRecord:
    """One paired capture loaded in memory (both modalities, frame-aligned)."""

    identity: str
    seq_id: str
    view: int
    condition: str
    frames: int
    sil: np.ndarray             # (T, 64, 64) float32 mask in [0, 1]
    depth: np.ndarray           # (T, 64, 64) float32 meters (0 = empty)
    path: Path = None

    def load_clouds(self):
        return [
            formats.read_ply(self.path / "pcd" / f"{i:04d}.ply")
            for i in range(self.frames)
        ]


@dataclass
class Dataset:
    root: Path
    seed: int
    identities: list
    records: list               # list[SequenceRecord]
    splits: dict                # split name -> list of identity labels

    def split_records(self, split):
        ids = set(self.splits.get(split, []))
        return [r for r in self.records if r.identity in ids]


def synth_walker(params, view, condition, T, seed,
                 cfg: wk.SensorConfig = wk.SensorConfig()):
    """Render one paired (silhouette, point cloud) sequence.

    Returns (sil_seq, pcd_seq, depth_frames) where depth_frames holds the
    normalized projected depth images used as the network's point-cloud
    representation.
    """
    if T < 8:
        raise ValueError(f"synth_walker: T={T} < 8")
    if condition not in wk.CONDITIONS:
        raise ValueError(f"unknown condition '{condition}'")
    sil_frames, clouds, depth_frames, ts = [], [], [], []
    for i in range(T):
        t = i / wk.FPS
        segs = wk.skeleton_segments(params, t, condition)
        raw_sil = wk.render_silhouette(segs, view, cfg)
        sil_frames.append(geometry.normalize_crop(raw_sil))
        noise_rng = rngmod.stream(seed, "range-noise", i)
        cloud, _, K = wk.sensor_capture(segs, view, cfg, noise_rng)
        clouds.append(cloud)
        sparse = geometry.project_points(cloud, K, (cfg.sensor_px, cfg.sensor_px))
        dense = geometry.interpolate_depth(sparse, INTERP_RADIUS)
        depth_frames.append(geometry.normalize_crop(dense))
        ts.append(t)
    ident = f"id{seed:08x}"
    sil_seq = GaitSequence(ident, view, condition, "silhouette", sil_frames, ts)
    pcd_seq = GaitSequence(ident, view, condition, "pointcloud", clouds, ts)
    return sil_seq, pcd_seq, depth_frames


def _sequence_plan(num_ids, seqs_per_id, views, conditions):
    """Deterministic (view, condition, rep) assignment per sequence slot."""
    combos = [(v, c) for c in conditions for v in views]
    plan = []
    for s in range(seqs_per_id):
        v, c = combos[s % len(combos)]
        plan.append((v, c, s // len(combos)))
    return plan


def _file_checksum(path: Path) -> str:
    return hashlib.blake2b(path.read_bytes(), digest_size=16).hexdigest()


def generate_dataset(root, num_ids, seqs_per_id, frames, seed,
                     views=(0, 90), conditions=("normal", "bag"),
                     split_fractions=(1.0, 0.0, 0.0), jobs=1,
                     cfg: wk.SensorConfig = wk.SensorConfig()) -> dict:
    """Synthesize and write a paired dataset; returns the manifest dict.

    Sequences are seeded per (identity, view, condition, rep), so jobs > 1
    produces bit-identical files to a serial run.
    """
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    identities = [f"{i:03d}" for i in range(num_ids)]
    plan = _sequence_plan(num_ids, seqs_per_id, views, conditions)

    tasks = []
    for ident in identities:
        params = wk.sample_identity(seed, ident)
        for view, cond, rep in plan:
            seq_id = f"{cond}-{view:03d}-{rep:02d}"
            seq_seed = rngmod.derive_key(seed, "sequence", ident, view, cond, rep)
            tasks.append((ident, params, seq_id, view, cond, seq_seed))

    def build(task):
        ident, params, seq_id, view, cond, seq_seed = task
        sil_seq, pcd_seq, depth_frames = synth_walker(
            params, view, cond, frames, seq_seed, cfg
        )
        seq_dir = root / ident / seq_id
        for sub in ("sil", "pcd", "depth"):
            (seq_dir / sub).mkdir(parents=True, exist_ok=True)
        for i in range(frames):
            formats.write_pgm(
                seq_dir / "sil" / f"{i:04d}.pgm",
                (sil_seq.frames[i] > 0.5).astype(np.uint8) * 255,
            )
            formats.write_ply(seq_dir / "pcd" / f"{i:04d}.ply", pcd_seq.frames[i])
            formats.write_pgm(
                seq_dir / "depth" / f"{i:04d}.pgm",
                formats.depth_to_pgm16(depth_frames[i]),
            )
        return {
            "identity": ident,
            "seq_id": seq_id,
            "view": view,
            "condition": cond,
            "frames": frames,
            "modalities": ["silhouette", "pointcloud"],
            "dir": f"{ident}/{seq_id}",
        }

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            entries = list(pool.map(build, tasks))
    else:
        entries = [build(t) for t in tasks]

    n_train = int(round(split_fractions[0] * num_ids))
    n_val = int(round(split_fractions[1] * num_ids))
    splits = {
        "train": identities[:n_train],
        "val": identities[n_train : n_train + n_val],
        "test": identities[n_train + n_val :],
    }

    checksums = {}
    for e in entries:
        seq_dir = root / e["dir"]
        for sub in ("sil", "pcd", "depth"):
            for i in range(e["frames"]):
                ext = "ply" if sub == "pcd" else "pgm"
                rel = f"{e['dir']}/{sub}/{i:04d}.{ext}"
                checksums[rel] = _file_checksum(root / rel)

    manifest = {
        "seed": seed,
        "identities": identities,
        "sequences": entries,
        "splits": splits,
        "checksums": checksums,
    }
    with open(root / "manifest.json", "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=1, sort_keys=True)
    return manifest


def read_dataset(root, verify=True) -> Dataset:
    """Load manifest + frames; checksum failures name the offending file."""
    root = Path(root)
    mpath = root / "manifest.json"
    if not mpath.exists():
        raise FileNotFoundError(f"missing manifest: {mpath}")
    manifest = json.loads(mpath.read_text(encoding="utf-8"))
    if verify:
        for rel, expect in manifest["checksums"].items():
            p = root / rel
            if not p.exists():
                raise FileNotFoundError(f"missing dataset file: {p}")
            if _file_checksum(p) != expect:
                raise ValueError(f"checksum mismatch: {p}")
    records = []
    for e in manifest["sequences"]:
        seq_dir = root / e["dir"]
        sil = np.stack(
            [
                formats.read_pgm(seq_dir / "sil" / f"{i:04d}.pgm")
                for i in range(e["frames"])
            ]
        ).astype(np.float32) / 255.0
        depth = np.stack(
            [
                formats.pgm16_to_depth(
                    formats.read_pgm(seq_dir / "depth" / f"{i:04d}.pgm")
                )
                for i in range(e["frames"])
            ]
        ).astype(np.float32)
        records.append(
            SequenceRecord(
                identity=e["identity"],
                seq_id=e["seq_id"],
                view=e["view"],
                condition=e["condition"],
                frames=e["frames"],
                sil=sil,
                depth=depth,
                path=seq_dir,
            )
        )
    return Dataset(
        root=root,
        seed=manifest["seed"],
        identities=manifest["identities"],
        records=records,
        splits=manifest["splits"],
    )
