"""Training orchestration: deterministic config, batch sampling, CSPP
pre-training, cross-modality fine-tuning, checkpoint/resume.

Every random decision is drawn from a counter-based stream keyed by
(seed, phase, iteration), so runs are reproducible and resuming from a
checkpoint replays the uninterrupted trajectory bit-for-bit.
"""

import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from . import geometry, losses
from . import network as netmod
from . import numcore as nc
from .numcore import adam as adammod
from .numcore import rng as rngmod
from .numcore import weights_io


@dataclass
class TrainConfig:
    seed: int = 0
    iterations_pretrain: int = 1000
    iterations_finetune: int = 2000
    batch_p: int = 4                 # identities per fine-tuning batch
    batch_k: int = 2                 # sequences per identity
    pretrain_batch: int = 16         # frame pairs per pre-training batch
    frames_per_seq: int = 2          # frames sampled per sequence per iteration
    lr: float = 1e-3                 # fine-tuning step size
    lr_pretrain: float = 3e-5        # contrastive pre-training step size
    beta1: float = 0.9
    beta2: float = 0.999
    gamma: float = 1.0               # CE weight in the combined loss
    margin: float = 0.2
    tau: float = 0.07                # contrastive temperature; at 1.0 the
                                     # near-uniform softmax pressure on the
                                     # highly correlated early features kills
                                     # whole ReLU bands
    n_h: int = 8
    embed_dim: int = 64
    granularity: str = "part"        # contrastive granularity: part | global
    train_conditions: tuple = ("normal",)
    z_near: float = geometry.PIPELINE_Z_NEAR
    z_far: float = geometry.PIPELINE_Z_FAR
    checkpoint_interval: int = 500
    ema_decay: float = 0.9975        # weight moving average (0 disables)
    eval_frames: int = 8             # frames per sequence at evaluation time

    def __post_init__(self):
        if self.batch_p < 2 or self.batch_k < 1:
            raise ValueError("TrainConfig: need batch_p >= 2 and batch_k >= 1")
        if self.lr <= 0 or self.lr_pretrain <= 0 or self.gamma < 0 or self.tau <= 0:
            raise ValueError("TrainConfig: rates must be positive, gamma >= 0")
        if not 0.0 <= self.ema_decay < 1.0:
            raise ValueError("TrainConfig: ema_decay must be in [0, 1)")
        if self.granularity not in ("part", "global"):
            raise ValueError(f"TrainConfig: bad granularity '{self.granularity}'")

    @staticmethod
    def from_json(path):
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        return TrainConfig.from_dict(data)

    @staticmethod
    def from_dict(data):
        known = {f.name for f in fields(TrainConfig)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"TrainConfig: unknown keys {sorted(unknown)}")
        if "train_conditions" in data:
            data = dict(data, train_conditions=tuple(data["train_conditions"]))
        return TrainConfig(**data)

    def to_dict(self):
        d = asdict(self)
        d["train_conditions"] = list(self.train_conditions)
        return d


# ---------------------------------------------------------------------------
# batch sampling
# ---------------------------------------------------------------------------

def train_records(dataset, config):
    recs = [
        r
        for r in dataset.split_records("train")
        if r.condition in config.train_conditions
    ]
    if not recs:
        raise ValueError("no training records match the configured conditions")
    return recs


def sample_batch(dataset, p, k, mode, rng, config):
    """Finetune: P identities x K paired sequences. Pretrain: N frame-level
    (silhouette, depth) pairs with pairing indices only (no identity labels).
    """
    recs = train_records(dataset, config)
    by_id = {}
    for r in recs:
        by_id.setdefault(r.identity, []).append(r)
    if mode == "finetune":
        ids = sorted(by_id)
        if len(ids) < p:
            raise ValueError(f"need >= {p} train identities, have {len(ids)}")
        chosen_ids = [ids[i] for i in rng.choice(len(ids), size=p, replace=False)]
        batch = []
        for ident in chosen_ids:
            seqs = by_id[ident]
            idx = rng.choice(len(seqs), size=k, replace=len(seqs) < k)
            batch.extend(seqs[j] for j in idx)
        return batch
    if mode == "pretrain":
        n = config.pretrain_batch
        pairs = []
        for _ in range(n):
            r = recs[int(rng.integers(len(recs)))]
            # last frame of every sequence is held out for the alignment metric
            fi = int(rng.integers(max(r.frames - 1, 1)))
            pairs.append((r, fi))
        return pairs
    raise ValueError(f"unknown mode '{mode}'")


def _sample_frames(rec, n_frames, rng):
    idx = np.sort(rng.choice(rec.frames, size=min(n_frames, rec.frames),
                             replace=rec.frames < n_frames))
    return idx


def _depth_channels(depth_frames, config):
    return np.stack(
        [geometry.depth_to_channels(d, config.z_near, config.z_far)
         for d in depth_frames]
    ).astype(np.float32)



# ---------------------------------------------------------------------------
# checkpointing
# ---------------------------------------------------------------------------

def save_checkpoint(path, net, state: adammod.AdamState, iteration: int,
                    ema=None):
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    weights_io.save_weights(path / "weights.clgw", net.weights)
    weights_io.save_weights(path / "adam_m.clgw", state.m)
    weights_io.save_weights(path / "adam_v.clgw", state.v)
    if ema is not None:
        weights_io.save_weights(path / "ema.clgw", ema)
    meta = {
        "iteration": iteration,
        "step": state.step,
        "lr": state.lr,
        "beta1": state.beta1,
        "beta2": state.beta2,
        "eps": state.eps,
    }
    (path / "state.json").write_text(json.dumps(meta, indent=1), encoding="utf-8")


def load_checkpoint(path, net):
    path = Path(path)
    net.weights = weights_io.load_weights(path / "weights.clgw")
    meta = json.loads((path / "state.json").read_text(encoding="utf-8"))
    state = adammod.AdamState(
        net.weights, lr=meta["lr"], beta1=meta["beta1"], beta2=meta["beta2"],
        eps=meta["eps"],
    )
    state.m = weights_io.load_weights(path / "adam_m.clgw")
    state.v = weights_io.load_weights(path / "adam_v.clgw")
    state.step = meta["step"]
    return net, state, meta["iteration"]


def load_checkpoint_ema(path):
    """Averaged weights from a checkpoint, or None if it has none."""
    p = Path(path) / "ema.clgw"
    return weights_io.load_weights(p) if p.exists() else None


def write_loss_log(path, rows, header):
    with open(path, "w", encoding="utf-8") as f:
        f.write(",".join(header) + "\n")
        for row in rows:
            f.write(",".join(f"{v:.6f}" if isinstance(v, float) else str(v)
                             for v in row) + "\n")


# ---------------------------------------------------------------------------
# CSPP pre-training
# ---------------------------------------------------------------------------

def holdout_pairs(dataset, config, limit=64):
    """Frame pairs never seen in pre-training (last frame per sequence)."""
    recs = train_records(dataset, config)
    return [(r, r.frames - 1) for r in recs[:limit]]


def _pair_embeddings(net, pairs, config, wv=None):
    """Frame-level pooled-part embeddings for (record, frame) pairs."""
    sil = np.stack([netmod.sil_to_channels(r.sil[fi]) for r, fi in pairs])
    dep = _depth_channels([r.depth[fi] for r, fi in pairs], config)
    if wv is None:
        with nc.no_grad():
            wv0 = net.vars_for(trainable=set())
            s = net.frame_parts(sil.astype(net.dtype), "silhouette", wv0)
            p = net.frame_parts(dep.astype(net.dtype), "pointcloud", wv0)
        return s.data, p.data
    s = net.frame_parts(sil.astype(net.dtype), "silhouette", wv)
    p = net.frame_parts(dep.astype(net.dtype), "pointcloud", wv)
    return s, p


def measure_alignment(net, pairs, config):
    s, p = _pair_embeddings(net, pairs, config)
    if config.granularity == "part":
        n, n_h, c = s.shape
        return losses.alignment_metric(s.reshape(n, n_h * c), p.reshape(n, n_h * c))
    return losses.alignment_metric(s.mean(axis=1), p.mean(axis=1))


def pretrain_cspp(dataset, config: TrainConfig, log_path=None,
                  checkpoint_dir=None):
    """Contrastive pre-training of the backbone; identity labels unused.

    Returns (network, history dict with loss log and alignment before/after).
    """
    net = netmod.CLGaitNetwork(
        netmod.NetworkConfig(n_h=config.n_h, embed_dim=config.embed_dim),
        seed=config.seed,
    )
    trainable = sorted(netmod.split_backbone(net.weights))
    opt_params = {k: net.weights[k] for k in trainable}
    state = adammod.AdamState(opt_params, lr=config.lr_pretrain,
                              beta1=config.beta1, beta2=config.beta2)
    held = holdout_pairs(dataset, config)
    align_before = measure_alignment(net, held, config)
    rows = []
    for it in range(config.iterations_pretrain):
        rng = rngmod.stream(config.seed, "pretrain", it)
        pairs = sample_batch(dataset, 0, 0, "pretrain", rng, config)
        wv = net.vars_for(trainable=set(trainable))
        s, p = _pair_embeddings(net, pairs, config, wv)
        if config.granularity == "part":
            loss = losses.part_contrastive_loss(s, p, config.tau)
        else:
            loss = losses.contrastive_loss(nc.vmean(s, axis=1),
                                           nc.vmean(p, axis=1), config.tau)
        grads = nc.gradient(loss, {k: wv[k] for k in trainable})
        adammod.adam_step(opt_params, grads, state)
        rows.append((it, float(loss.data)))
    align_after = measure_alignment(net, held, config)
    if log_path:
        write_loss_log(log_path, rows, ["iteration", "loss"])
    if checkpoint_dir:
        save_checkpoint(Path(checkpoint_dir) / "final", net, state,
                        config.iterations_pretrain)
    history = {
        "loss": rows,
        "alignment_before": align_before,
        "alignment_after": align_after,
    }
    return net, history


# ---------------------------------------------------------------------------
# fine-tuning
# ---------------------------------------------------------------------------

def finetune(dataset, config: TrainConfig, init_weights=None, log_path=None,
             checkpoint_dir=None, resume_from=None, iteration_hook=None):
    """Train the full network with the combined loss on cross-modality
    batches. `init_weights` seeds the backbone (heads always fresh);
    `resume_from` continues an interrupted run bit-for-bit.
    """
    ids = sorted({r.identity for r in train_records(dataset, config)})
    id_index = {ident: i for i, ident in enumerate(ids)}
    net = netmod.CLGaitNetwork(
        netmod.NetworkConfig(n_h=config.n_h, embed_dim=config.embed_dim,
                             num_ids=len(ids)),
        seed=config.seed + 1,
    )
    if init_weights is not None:
        backbone = netmod.split_backbone(init_weights)
        for k, v in backbone.items():
            if k in net.weights:
                if net.weights[k].shape != v.shape:
                    raise ValueError(f"init weight shape mismatch for '{k}'")
                net.weights[k] = v.copy()
    state = adammod.AdamState(net.weights, lr=config.lr, beta1=config.beta1,
                              beta2=config.beta2)
    start = 0
    if resume_from is not None:
        net, state, start = load_checkpoint(resume_from, net)
    # moving average of the weights; the averaged copy is what gets returned
    # (and stored per checkpoint), the raw iterate is what training resumes from
    ema = None
    if config.ema_decay > 0.0:
        ema = load_checkpoint_ema(resume_from) if resume_from else None
        if ema is None:
            ema = {k: v.copy() for k, v in net.weights.items()}

    rows = []
    for it in range(start, config.iterations_finetune):
        rng = rngmod.stream(config.seed, "finetune", it)
        batch = sample_batch(dataset, config.batch_p, config.batch_k,
                             "finetune", rng, config)
        frame_batches, modalities, samp_ids = [], [], []
        for rec in batch:
            fidx = _sample_frames(rec, config.frames_per_seq, rng)
            frame_batches.append(netmod.sil_to_channels(rec.sil[fidx]))
            modalities.append("silhouette")
            samp_ids.append(id_index[rec.identity])
        for rec in batch:
            fidx = _sample_frames(rec, config.frames_per_seq, rng)
            frame_batches.append(_depth_channels(rec.depth[fidx], config))
            modalities.append("pointcloud")
            samp_ids.append(id_index[rec.identity])
        wv = net.vars_for()
        emb, logits = net.embed_sequences(frame_batches, modalities, wv,
                                          with_logits=True)
        n = len(batch)
        flat = nc.reshape(emb, (2 * n, -1))
        sil_emb, pc_emb = flat[:n], flat[n:]
        loss = losses.combined_loss(
            sil_emb, pc_emb, samp_ids[:n], samp_ids[n:], logits, samp_ids,
            gamma=config.gamma, margin=config.margin,
        )
        grads = nc.gradient(loss, wv)
        adammod.adam_step(net.weights, grads, state)
        if ema is not None:
            d = np.float32(config.ema_decay)
            one_minus = np.float32(1.0 - config.ema_decay)
            for k in ema:
                ema[k] = d * ema[k] + one_minus * net.weights[k]
        rows.append((it, float(loss.data)))
        done = it + 1
        if checkpoint_dir and (done % config.checkpoint_interval == 0
                               or done == config.iterations_finetune):
            save_checkpoint(Path(checkpoint_dir) / f"iter{done:06d}", net,
                            state, done, ema=ema)
        if iteration_hook:
            iteration_hook(done, net)
    if log_path:
        write_loss_log(log_path, rows, ["iteration", "loss"])
    if ema is not None:
        net.weights = {k: v.copy() for k, v in ema.items()}
    return net, {"loss": rows, "identities": ids}
