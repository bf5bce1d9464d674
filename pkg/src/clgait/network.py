"""Two-stream cross-modality embedding network.

Modality-specific first convolutions (silhouette vs projected depth) feed a
shared residual stack; horizontal pooling splits the feature map into bands,
temporal pooling max-reduces over frames, and independent per-part linear
heads produce the sequence embedding. Desk-scale: 3 residual blocks with
channels 32/64/128, no normalization layers.
"""

from dataclasses import dataclass, field

import numpy as np

from . import numcore as nc
from .numcore import rng as rngmod

BACKBONE_PREFIXES = ("conv_s.", "conv_p.", "block")


@dataclass(frozen=True)
class NetworkConfig:
    n_h: int = 8               # horizontal bands; backbone output is 8 rows
    embed_dim: int = 64        # per-part head output
    num_ids: int = 16          # classifier width (training only)
    head_depth: int = 1
    channels: tuple = (32, 64, 128)
    input_size: int = 64


def init_weights(config: NetworkConfig, seed: int, dtype=np.float32) -> dict:
    """He-initialized parameter dict with canonical tensor names."""
    c1, c2, c3 = config.channels
    w = {}

    def conv(name, kh, kw, cin, cout):
        r = rngmod.stream(seed, "init", name)
        w[name + ".w"] = rngmod.he_init((kh, kw, cin, cout), kh * kw * cin, r, dtype)
        w[name + ".b"] = np.zeros(cout, dtype=dtype)

    def dense(name, din, dout):
        r = rngmod.stream(seed, "init", name)
        w[name + ".w"] = rngmod.he_init((din, dout), din, r, dtype)
        w[name + ".b"] = np.zeros(dout, dtype=dtype)

    conv("conv_s", 3, 3, 3, c1)
    conv("conv_p", 3, 3, 3, c1)
    conv("block1.conv1", 3, 3, c1, c1)
    conv("block1.conv2", 3, 3, c1, c1)
    conv("block2.conv1", 3, 3, c1, c2)
    conv("block2.conv2", 3, 3, c2, c2)
    conv("block2.short", 1, 1, c1, c2)
    conv("block3.conv1", 3, 3, c2, c3)
    conv("block3.conv2", 3, 3, c3, c3)
    conv("block3.short", 1, 1, c2, c3)
    for k in range(config.n_h):
        dense(f"head{k}", c3, config.embed_dim)
        dense(f"cls{k}", config.embed_dim, config.num_ids)
    return w


def split_backbone(weights: dict) -> dict:
    """The subset of weights shared between pre-training and fine-tuning."""
    return {
        k: v for k, v in weights.items() if k.startswith(BACKBONE_PREFIXES)
    }


class CLGaitNetwork:
    """Weight container plus forward graph builders.

    Forward methods take a dict of Vars (so one graph can train any subset);
    use :meth:`vars_for` to wrap the stored ndarrays.
    """

    def __init__(self, config: NetworkConfig, seed: int = 0, weights: dict = None,
                 dtype=np.float32):
        self.config = config
        self.dtype = dtype
        self.weights = weights if weights is not None else init_weights(
            config, seed, dtype
        )

    def vars_for(self, trainable=None) -> dict:
        """Wrap weights as Vars; `trainable` limits which ones track grads."""
        out = {}
        for k, v in self.weights.items():
            req = True if trainable is None else (k in trainable)
            out[k] = nc.Var(v, requires_grad=req, name=k)
        return out

    def astype(self, dtype):
        return CLGaitNetwork(
            self.config,
            weights={k: v.astype(dtype) for k, v in self.weights.items()},
            dtype=dtype,
        )

    # ----- forward pieces ---------------------------------------------------

    def modality_specific_conv(self, frames, modality, wv):
        """First conv layer; stride 2, 64x64x3 -> 32x32xC."""
        x = nc.as_var(frames)
        size = self.config.input_size
        if x.data.ndim != 4 or x.data.shape[1:] != (size, size, 3):
            raise nc.ShapeError(
                "modality_specific_conv", "frames", x.data.shape, f"(T, {size}, {size}, 3)"
            )
        if modality in ("silhouette",):
            w, b = wv["conv_s.w"], wv["conv_s.b"]
        elif modality in ("pointcloud", "depth"):
            w, b = wv["conv_p.w"], wv["conv_p.b"]
        else:
            raise ValueError(f"unknown modality '{modality}'")
        return nc.relu(nc.conv2d(x, w, b, stride=2, pad=1))

    def _res_block(self, x, wv, name, stride):
        y = nc.relu(nc.conv2d(x, wv[f"{name}.conv1.w"], wv[f"{name}.conv1.b"],
                              stride=stride, pad=1))
        y = nc.conv2d(y, wv[f"{name}.conv2.w"], wv[f"{name}.conv2.b"], stride=1, pad=1)
        if f"{name}.short.w" in wv:
            sc = nc.conv2d(x, wv[f"{name}.short.w"], wv[f"{name}.short.b"],
                           stride=stride, pad=0)
        else:
            sc = x
        return nc.relu(nc.add(y, sc))

    def shared_backbone(self, f, wv):
        """Shared residual stack; identical weights for both streams."""
        x = self._res_block(f, wv, "block1", stride=1)
        x = self._res_block(x, wv, "block2", stride=2)
        x = self._res_block(x, wv, "block3", stride=2)
        return x

    def horizontal_pool(self, f, n_h=None):
        """(N, H, W, C) -> (N, n_h, C); each band reduced by max + mean."""
        n_h = n_h or self.config.n_h
        n, h, w, c = f.data.shape
        if h % n_h != 0:
            raise nc.ShapeError("horizontal_pool", "input", f.data.shape,
                                f"H divisible by n_h={n_h}")
        band_h = h // n_h
        parts = []
        for k in range(n_h):
            band = nc.reshape(f[:, k * band_h : (k + 1) * band_h], (n, band_h * w, c))
            stat = nc.add(nc.vmax(band, axis=1), nc.vmean(band, axis=1))
            parts.append(nc.reshape(stat, (n, 1, c)))
        return nc.concat(parts, axis=1)

    def temporal_pool(self, x):
        """(T, n_h, C) -> (n_h, C), elementwise max over frames."""
        if x.data.shape[0] < 1:
            raise ValueError("temporal_pool: T must be >= 1")
        return nc.vmax(x, axis=0)

    def part_heads(self, pooled, wv):
        """(B, n_h, C) -> (B, n_h, d); part k sees only head k."""
        n_h = self.config.n_h
        if pooled.data.shape[1] != n_h:
            raise nc.ShapeError("part_heads", "pooled", pooled.data.shape,
                                f"(B, {n_h}, C)")
        outs = []
        b = pooled.data.shape[0]
        for k in range(n_h):
            y = nc.linear(pooled[:, k], wv[f"head{k}.w"], wv[f"head{k}.b"])
            outs.append(nc.reshape(y, (b, 1, self.config.embed_dim)))
        return nc.concat(outs, axis=1)

    def part_logits(self, embeddings, wv):
        """(B, n_h, d) -> (B, n_h, num_ids) via per-part classifiers."""
        outs = []
        b = embeddings.data.shape[0]
        for k in range(self.config.n_h):
            y = nc.linear(embeddings[:, k], wv[f"cls{k}.w"], wv[f"cls{k}.b"])
            outs.append(nc.reshape(y, (b, 1, self.config.num_ids)))
        return nc.concat(outs, axis=1)

    # ----- batched sequence embedding ---------------------------------------

    def frame_parts(self, frames, modality, wv):
        """Per-frame pooled parts: (T, 64, 64, 3) -> (T, n_h, C)."""
        f = self.modality_specific_conv(frames, modality, wv)
        f = self.shared_backbone(f, wv)
        return self.horizontal_pool(f)

    def embed_sequences(self, frame_batches, modalities, wv, with_logits=False):
        """Embed several sequences in one backbone pass.

        frame_batches: list of (T_i, 64, 64, 3) arrays; modalities: one label
        per sequence. Returns (B, n_h, d) embeddings (and logits if asked).
        """
        if not frame_batches:
            raise ValueError("embed_sequences: empty input")
        for fb in frame_batches:
            if len(fb) == 0:
                raise ValueError("embed_sequences: empty sequence")
        pooled_rows = []
        for mod in ("silhouette", "pointcloud"):
            idxs = [i for i, m in enumerate(modalities) if m == mod]
            if not idxs:
                continue
            stacked = np.concatenate([frame_batches[i] for i in idxs], axis=0)
            parts = self.frame_parts(stacked.astype(self.dtype), mod, wv)
            off = 0
            for i in idxs:
                t = len(frame_batches[i])
                seq_parts = parts[off : off + t]
                pooled_rows.append((i, nc.reshape(self.temporal_pool(seq_parts),
                                                  (1, self.config.n_h, -1))))
                off += t
        pooled_rows.sort(key=lambda p: p[0])
        pooled = nc.concat([p for _, p in pooled_rows], axis=0)
        emb = self.part_heads(pooled, wv)
        if with_logits:
            return emb, self.part_logits(emb, wv)
        return emb

    def embed_sequence(self, frames, modality):
        """Inference: one sequence -> (n_h * d,) numpy embedding."""
        with nc.no_grad():
            wv = self.vars_for(trainable=set())
            emb = self.embed_sequences([np.asarray(frames)], [modality], wv)
        return emb.data.reshape(-1)


def sil_to_channels(mask: np.ndarray) -> np.ndarray:
    """Silhouette mask (T, H, W) in [0,1] -> 3-channel float frames."""
    m = np.asarray(mask, dtype=np.float32)
    return np.repeat(m[..., None], 3, axis=-1)
