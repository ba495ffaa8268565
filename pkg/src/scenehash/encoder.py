"""Three-stream scene encoder.

An object transformer over node features, a relation transformer over edge
features, and a small CNN over the whole raster are pooled and fused by a
linear projection into one D-dim embedding. Transformers carry no positional
encoding, so node/edge order cannot leak into the embedding; attention
pooling collapses variable-length sequences order-invariantly.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from . import numcore as nc
from .imgutil import bilinear_resize
from .nn import Linear, ParamStore
from .scenegraph import (
    CROP_SIZE,
    Detection,
    GraphProjections,
    SceneFeatures,
    assemble_graph,
    scene_features,
)


@dataclass
class EncoderConfig:
    d_visual: int = 48
    d_shape: int = 8
    d_geo: int = 8
    d_rel: int = 16
    layers: int = 2
    heads: int = 4
    ff_mult: int = 2
    d_out: int = 64
    pool_dim: int | None = None  # defaults to the stream width
    cnn_channels: tuple[int, ...] = (16, 32, 64, 128)
    cnn_out: int = 256
    image_size: int = 64
    n_max: int = 8
    use_global: bool = True
    use_objects: bool = True
    use_relations: bool = True

    @property
    def d_node(self) -> int:
        return self.d_visual + self.d_shape + self.d_geo

    @property
    def d_edge(self) -> int:
        return 2 * self.d_node + self.d_rel

    def validate(self) -> None:
        if self.d_node % self.heads or self.d_edge % self.heads:
            raise ValueError(
                f"stream widths ({self.d_node}, {self.d_edge}) must divide into {self.heads} heads"
            )
        if self.d_out < 8:
            raise ValueError("output dimension must be at least 8")
        if not (self.use_global or self.use_objects or self.use_relations):
            raise ValueError("at least one encoder stream must be enabled")

    def to_json(self, path) -> None:
        with open(path, "w") as f:
            json.dump(asdict(self), f, indent=2)

    @classmethod
    def from_json(cls, path) -> "EncoderConfig":
        with open(path) as f:
            raw = json.load(f)
        raw["cnn_channels"] = tuple(raw.get("cnn_channels", (16, 32, 64, 128)))
        cfg = cls(**raw)
        cfg.validate()
        return cfg


# ---------------------------------------------------------------------------
# transformer stack

@dataclass
class TransformerLayer:
    ln1_g: nc.Tensor
    ln1_b: nc.Tensor
    wq: Linear
    wk: Linear
    wv: Linear
    wo: Linear
    ln2_g: nc.Tensor
    ln2_b: nc.Tensor
    ff1: Linear
    ff2: Linear


@dataclass
class TransformerStack:
    d: int
    heads: int
    layers: list[TransformerLayer]


def init_transformer(store: ParamStore, prefix: str, d: int, heads: int, n_layers: int,
                     ff_mult: int, rng: np.random.Generator) -> TransformerStack:
    layers = []
    for i in range(n_layers):
        p = f"{prefix}.l{i}"
        layers.append(TransformerLayer(
            ln1_g=store.ones(f"{p}.ln1.g", d),
            ln1_b=store.zeros(f"{p}.ln1.b", d),
            wq=store.linear(f"{p}.wq", d, d, rng),
            wk=store.linear(f"{p}.wk", d, d, rng),
            wv=store.linear(f"{p}.wv", d, d, rng),
            wo=store.linear(f"{p}.wo", d, d, rng),
            ln2_g=store.ones(f"{p}.ln2.g", d),
            ln2_b=store.zeros(f"{p}.ln2.b", d),
            ff1=store.linear(f"{p}.ff1", d, ff_mult * d, rng),
            ff2=store.linear(f"{p}.ff2", ff_mult * d, d, rng),
        ))
    return TransformerStack(d=d, heads=heads, layers=layers)


def _split_heads(x: nc.Tensor, b: int, n: int, heads: int, dh: int) -> nc.Tensor:
    x = nc.reshape(x, (b, n, heads, dh))
    x = nc.transpose(x, (0, 2, 1, 3))
    return nc.reshape(x, (b * heads, n, dh))


def _merge_heads(x: nc.Tensor, b: int, n: int, heads: int, dh: int) -> nc.Tensor:
    x = nc.reshape(x, (b, heads, n, dh))
    x = nc.transpose(x, (0, 2, 1, 3))
    return nc.reshape(x, (b, n, heads * dh))


def _self_attention(x: nc.Tensor, pad_mask: np.ndarray, layer: TransformerLayer, heads: int) -> nc.Tensor:
    b, n, d = x.shape
    dh = d // heads
    q = _split_heads(layer.wq(x), b, n, heads, dh)
    k = _split_heads(layer.wk(x), b, n, heads, dh)
    v = _split_heads(layer.wv(x), b, n, heads, dh)
    scores = nc.scale(nc.bmm(q, nc.transpose(k, (0, 2, 1))), 1.0 / np.sqrt(dh))
    # forbid attending to padded keys; every query row keeps >=1 unmasked key
    key_mask = np.repeat(pad_mask[:, None, :], heads * n, axis=1).reshape(b * heads * n, n)
    attn = nc.softmax_rows(nc.reshape(scores, (b * heads * n, n)), key_mask)
    ctx = nc.bmm(nc.reshape(attn, (b * heads, n, n)), v)
    return layer.wo(_merge_heads(ctx, b, n, heads, dh))


def transformer_encode_batch(x: nc.Tensor, pad_mask: np.ndarray, stack: TransformerStack) -> nc.Tensor:
    """Pre-norm encoder over (B, N, d) with padded rows masked out and zeroed."""
    b, n, d = x.shape
    if not pad_mask.any(axis=1).all():
        raise nc.DegenerateMaskError("transformer_encode: a sequence has all rows masked")
    for layer in stack.layers:
        normed = nc.layer_norm(x, layer.ln1_g, layer.ln1_b, 1e-5)
        x = nc.add(x, _self_attention(normed, pad_mask, layer, stack.heads))
        normed = nc.layer_norm(x, layer.ln2_g, layer.ln2_b, 1e-5)
        x = nc.add(x, layer.ff2(nc.relu(layer.ff1(normed))))
    keep = np.repeat(pad_mask[:, :, None], d, axis=2).astype(float)
    return nc.mul(x, nc.constant(keep))


def transformer_encode(seq: nc.Tensor, pad_mask: np.ndarray, stack: TransformerStack) -> nc.Tensor:
    """Single-sequence (N, d) convenience wrapper."""
    n, d = seq.shape
    out = transformer_encode_batch(nc.reshape(seq, (1, n, d)), np.asarray(pad_mask, bool)[None, :], stack)
    return nc.reshape(out, (n, d))


def attention_pool_batch(seq: nc.Tensor, pad_mask: np.ndarray, k: nc.Tensor, v: nc.Tensor) -> tuple[nc.Tensor, nc.Tensor]:
    """Learned node-wise pooling: w = softmax(tanh(seq K^T) V) over unmasked rows.

    Returns the pooled (B, d) tensor and the (B, N) weights (kept for
    diagnostics dumps).
    """
    b, n, d = seq.shape
    if not pad_mask.any(axis=1).all():
        raise nc.DegenerateMaskError("attention_pool: a sequence has all rows masked")
    da = k.shape[0]
    flat = nc.reshape(seq, (b * n, d))
    scores = nc.matmul(nc.tanh(nc.matmul(flat, nc.transpose(k, (1, 0)))), nc.reshape(v, (da, 1)))
    w = nc.softmax_rows(nc.reshape(scores, (b, n)), pad_mask)
    pooled = nc.reshape(nc.bmm(nc.reshape(w, (b, 1, n)), seq), (b, d))
    return pooled, w


def attention_pool(seq: nc.Tensor, pad_mask: np.ndarray, k: nc.Tensor, v: nc.Tensor) -> nc.Tensor:
    n, d = seq.shape
    pooled, _ = attention_pool_batch(
        nc.reshape(seq, (1, n, d)), np.asarray(pad_mask, bool)[None, :], k, v
    )
    return nc.reshape(pooled, (d,))


# ---------------------------------------------------------------------------
# CNN stream

@dataclass
class ConvNet:
    convs: list[Linear]  # filter banks as (F, C*3*3) linears
    head: Linear


def init_convnet(store: ParamStore, prefix: str, channels: tuple[int, ...], out_dim: int,
                 rng: np.random.Generator) -> ConvNet:
    convs = []
    c_in = 3
    for i, c_out in enumerate(channels):
        convs.append(store.linear(f"{prefix}.conv{i}", c_in * 9, c_out, rng))
        c_in = c_out
    head = store.linear(f"{prefix}.head", c_in, out_dim, rng)
    return ConvNet(convs=convs, head=head)


def convnet_forward(net: ConvNet, x: nc.Tensor, want_activation: bool = False):
    """Strided 3x3 conv blocks + relu, global average pool, linear head.

    x: (B, 3, S, S) with S a power of two; each block halves the resolution.
    """
    b = x.shape[0]
    size = x.shape[2]
    act = x
    for conv in net.convs:
        cols = nc.im2col(act, 3, 2, 1)
        out = conv(cols)  # (B*oh*ow, F)
        size = size // 2
        f = conv.out_dim
        act = nc.relu(nc.transpose(nc.reshape(out, (b, size, size, f)), (0, 3, 1, 2)))
    pooled = nc.mean_axis(nc.reshape(act, (b, act.shape[1], size * size)), 2)
    z = net.head(pooled)
    if want_activation:
        return z, act
    return z


# ---------------------------------------------------------------------------
# full model

@dataclass
class Embedding:
    z: nc.Tensor
    z_g: nc.Tensor
    z_o: nc.Tensor
    z_r: nc.Tensor
    node_weights: np.ndarray | None = None


@dataclass
class BatchEmbedding:
    z: nc.Tensor        # (B, D)
    z_g: nc.Tensor
    z_o: nc.Tensor
    z_r: nc.Tensor
    node_weights: list[np.ndarray] = field(default_factory=list)
    global_activation: nc.Tensor | None = None


class HashModel:
    """Owns all parameters and the raster -> embedding forward pass."""

    def __init__(self, config: EncoderConfig | None = None, seed: int = 0):
        self.config = config or EncoderConfig()
        self.config.validate()
        cfg = self.config
        rng = np.random.default_rng(seed)
        store = ParamStore()
        self.store = store
        self.gcnn = init_convnet(store, "gcnn", cfg.cnn_channels, cfg.cnn_out, rng)
        self.vcnn = init_convnet(store, "vcnn", cfg.cnn_channels, cfg.cnn_out, rng)
        self.proj = GraphProjections(
            e_v=store.linear("ev", cfg.cnn_out, cfg.d_visual, rng),
            e_s=store.linear("es", 7, cfg.d_shape, rng),
            e_g=store.linear("eg", 5, cfg.d_geo, rng),
            e_r=store.linear("er", 7, cfg.d_rel, rng),
        )
        self.obj_tf = init_transformer(store, "obj", cfg.d_node, cfg.heads, cfg.layers, cfg.ff_mult, rng)
        self.rel_tf = init_transformer(store, "rel", cfg.d_edge, cfg.heads, cfg.layers, cfg.ff_mult, rng)
        da_o = cfg.pool_dim or cfg.d_node
        da_r = cfg.pool_dim or cfg.d_edge
        self.obj_pool_k = store.register("obj.pool.k", nc.Tensor(
            rng.standard_normal((da_o, cfg.d_node)) / np.sqrt(cfg.d_node), requires_grad=True))
        self.obj_pool_v = store.vector("obj.pool.v", da_o, rng)
        self.rel_pool_k = store.register("rel.pool.k", nc.Tensor(
            rng.standard_normal((da_r, cfg.d_edge)) / np.sqrt(cfg.d_edge), requires_grad=True))
        self.rel_pool_v = store.vector("rel.pool.v", da_r, rng)
        self.fuse = store.linear("ed", cfg.cnn_out + cfg.d_node + cfg.d_edge, cfg.d_out, rng)

    # -- weights ------------------------------------------------------------

    def save(self, path) -> None:
        nc.save_params(self.store.state_dict(), path)
        self.config.to_json(str(path) + ".config.json")

    @classmethod
    def load(cls, path, config: EncoderConfig | None = None) -> "HashModel":
        import os

        if config is None:
            sidecar = str(path) + ".config.json"
            config = EncoderConfig.from_json(sidecar) if os.path.exists(sidecar) else EncoderConfig()
        model = cls(config)
        model.store.load_state_dict(nc.load_params(path))
        return model

    # -- forward ------------------------------------------------------------

    def visual_extractor(self, crops: nc.Tensor) -> nc.Tensor:
        return convnet_forward(self.vcnn, crops)

    def encode_global(self, image: np.ndarray, want_activation: bool = False):
        """256-d appearance vector of an image already at the CNN input size."""
        s = self.config.image_size
        if image.shape != (s, s, 3):
            raise nc.ShapeError(f"encode_global expects ({s}, {s}, 3), got {image.shape}")
        x = nc.constant(self._prep_raster(image)[None])
        out = convnet_forward(self.gcnn, x, want_activation)
        if want_activation:
            z, act = out
            return nc.reshape(z, (self.config.cnn_out,)), act
        return nc.reshape(out, (self.config.cnn_out,))

    def _prep_raster(self, image: np.ndarray) -> np.ndarray:
        s = self.config.image_size
        if image.ndim == 2:
            image = np.repeat(image[:, :, None], 3, axis=2)
        if image.shape[:2] != (s, s):
            image = bilinear_resize(image, s, s)
        return np.clip(image, 0.0, 1.0).transpose(2, 0, 1)

    def embed(self, image: np.ndarray, detections: list[Detection]) -> Embedding:
        batch = self.embed_batch([image], [detections])
        return Embedding(
            z=nc.reshape(batch.z, (self.config.d_out,)),
            z_g=nc.reshape(batch.z_g, (self.config.cnn_out,)),
            z_o=nc.reshape(batch.z_o, (self.config.d_node,)),
            z_r=nc.reshape(batch.z_r, (self.config.d_edge,)),
            node_weights=batch.node_weights[0],
        )

    def embed_batch(
        self,
        images: list[np.ndarray],
        detections: list[list[Detection]],
        want_activation: bool = False,
        precomputed: list[SceneFeatures] | None = None,
    ) -> BatchEmbedding:
        """Embed a batch; variable node counts are padded to the batch max."""
        cfg = self.config
        b = len(images)
        feats = precomputed or [
            scene_features(img, dets, cfg.n_max) for img, dets in zip(images, detections)
        ]

        # global stream
        rasters = nc.constant(np.stack([self._prep_raster(img) for img in images]))
        gact = None
        if cfg.use_global:
            out = convnet_forward(self.gcnn, rasters, want_activation)
            z_g, gact = out if want_activation else (out, None)
        else:
            z_g = nc.constant(np.zeros((b, cfg.cnn_out)))

        node_weights: list[np.ndarray] = [np.zeros(f.n) for f in feats]
        if cfg.use_objects or cfg.use_relations:
            # one CNN pass over every crop in the batch
            counts = [f.n for f in feats]
            all_crops = nc.constant(np.concatenate([f.crops for f in feats], axis=0))
            all_visual = self.visual_extractor(all_crops)
            offsets = np.cumsum([0] + counts)
            n_pad = max(counts)

            node_rows, edge_rows = [], []
            node_mask = np.zeros((b, n_pad), dtype=bool)
            edge_mask = np.zeros((b, n_pad * n_pad), dtype=bool)
            for i, f in enumerate(feats):
                visual = nc.slice_axis(all_visual, 0, int(offsets[i]), int(offsets[i + 1]))
                graph = assemble_graph(f, visual, self.proj)
                node_rows.append(_pad_rows(graph.nodes, n_pad))
                edge_rows.append(_pad_rows(graph.edges, n_pad * n_pad))
                node_mask[i, : f.n] = True
                edge_mask[i, : f.n * f.n] = True
            nodes = nc.reshape(nc.concat(node_rows, axis=0), (b, n_pad, cfg.d_node))
            edges = nc.reshape(nc.concat(edge_rows, axis=0), (b, n_pad * n_pad, cfg.d_edge))

            if cfg.use_objects:
                enc = transformer_encode_batch(nodes, node_mask, self.obj_tf)
                z_o, w_nodes = attention_pool_batch(enc, node_mask, self.obj_pool_k, self.obj_pool_v)
                node_weights = [w_nodes.data[i, : feats[i].n].copy() for i in range(b)]
            else:
                z_o = nc.constant(np.zeros((b, cfg.d_node)))
            if cfg.use_relations:
                enc = transformer_encode_batch(edges, edge_mask, self.rel_tf)
                z_r, _ = attention_pool_batch(enc, edge_mask, self.rel_pool_k, self.rel_pool_v)
            else:
                z_r = nc.constant(np.zeros((b, cfg.d_edge)))
        else:
            z_o = nc.constant(np.zeros((b, cfg.d_node)))
            z_r = nc.constant(np.zeros((b, cfg.d_edge)))

        z = self.fuse(nc.concat([z_g, z_o, z_r], axis=1))
        return BatchEmbedding(z=z, z_g=z_g, z_o=z_o, z_r=z_r,
                              node_weights=node_weights, global_activation=gact)


def _pad_rows(t: nc.Tensor, rows: int) -> nc.Tensor:
    n, d = t.shape
    if n == rows:
        return t
    return nc.concat([t, nc.constant(np.zeros((rows - n, d)))], axis=0)
