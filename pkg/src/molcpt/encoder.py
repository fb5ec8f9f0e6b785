"""GIN message-passing encoder with mean readout.

Layer k computes, for every atom v,

    m_v = x_v + sum_{u in N(v)} (x_u + bond_emb[order(u, v)])
    x_v' = W2 @ relu(W1 @ m_v)

and the graph embedding is the mean of the final atom rows.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import ndiff as nd
from .fragment import Motif
from .smiles import MAX_ELEMENT, MolGraph

MASK_ROW = 0  # element table row used for masked atoms; row z holds atomic number z
N_ELEMENT_ROWS = MAX_ELEMENT + 1
N_BOND_TYPES = 4


@dataclass
class GraphBatch:
    """Several graphs packed as one disjoint union."""

    elem: np.ndarray
    arom: np.ndarray
    src: np.ndarray
    dst: np.ndarray
    bond_type: np.ndarray
    node_graph: np.ndarray
    counts: np.ndarray
    offsets: np.ndarray

    @property
    def n_nodes(self) -> int:
        return len(self.elem)

    @property
    def n_graphs(self) -> int:
        return len(self.counts)

    @classmethod
    def from_graphs(cls, graphs: Sequence[MolGraph]) -> GraphBatch:
        elem, arom, src, dst, btype, node_graph, counts = [], [], [], [], [], [], []
        offset = 0
        offsets = []
        for gi, g in enumerate(graphs):
            if len(g) == 0:
                raise ValueError("cannot encode an empty graph")
            feats = _features(g)
            elem.append(feats[0])
            arom.append(feats[1])
            src.append(feats[2] + offset)
            dst.append(feats[3] + offset)
            btype.append(feats[4])
            node_graph.append(np.full(len(g), gi, dtype=np.int64))
            counts.append(len(g))
            offsets.append(offset)
            offset += len(g)
        cat = lambda xs: np.concatenate(xs) if xs else np.zeros(0, dtype=np.int64)  # noqa: E731
        return cls(cat(elem), cat(arom), cat(src), cat(dst), cat(btype), cat(node_graph),
                   np.asarray(counts, dtype=np.int64), np.asarray(offsets, dtype=np.int64))


_FEATURE_CACHE_ATTR = "_gin_features"


def _features(g: MolGraph):
    cached = g.__dict__.get(_FEATURE_CACHE_ATTR)
    if cached is not None:
        return cached
    elem = np.array([a.element for a in g.atoms], dtype=np.int64)
    if g.masked:
        elem[list(g.masked)] = MASK_ROW
    arom = np.array([int(a.aromatic) for a in g.atoms], dtype=np.int64)
    a = np.array([b.a for b in g.bonds], dtype=np.int64)
    b = np.array([b.b for b in g.bonds], dtype=np.int64)
    order = np.array([int(b.order) for b in g.bonds], dtype=np.int64)
    feats = (elem, arom, np.concatenate([a, b]), np.concatenate([b, a]), np.concatenate([order, order]))
    g.__dict__[_FEATURE_CACHE_ATTR] = feats
    return feats


@dataclass
class EncoderParams:
    elem: nd.Tensor
    arom: nd.Tensor
    bond: nd.Tensor
    layers: list[tuple[nd.Tensor, nd.Tensor]] = field(default_factory=list)

    @property
    def dim(self) -> int:
        return self.elem.shape[1]

    @property
    def num_layers(self) -> int:
        return len(self.layers)

    def tensors(self) -> list[nd.Tensor]:
        out = [self.elem, self.arom, self.bond]
        for w1, w2 in self.layers:
            out += [w1, w2]
        return out

    def named_tensors(self) -> dict[str, nd.Tensor]:
        out = {"encoder.elem": self.elem, "encoder.arom": self.arom, "encoder.bond": self.bond}
        for k, (w1, w2) in enumerate(self.layers):
            out[f"encoder.layer{k}.w1"] = w1
            out[f"encoder.layer{k}.w2"] = w2
        return out

    @classmethod
    def from_named(cls, tensors: dict[str, nd.Tensor]) -> EncoderParams:
        k = 0
        layers = []
        while f"encoder.layer{k}.w1" in tensors:
            layers.append((tensors[f"encoder.layer{k}.w1"], tensors[f"encoder.layer{k}.w2"]))
            k += 1
        return cls(tensors["encoder.elem"], tensors["encoder.arom"], tensors["encoder.bond"], layers)

    def copy(self) -> EncoderParams:
        return EncoderParams.from_named({k: nd.parameter(v.data.copy(), k) for k, v in self.named_tensors().items()})


def init_encoder(dim: int = 64, num_layers: int = 5, seed: int = 0) -> EncoderParams:
    if dim < 1 or num_layers < 0:
        raise ValueError("need dim >= 1 and num_layers >= 0")
    rng = np.random.default_rng(seed)
    emb_scale = 1.0 / np.sqrt(dim)
    elem = nd.parameter(rng.normal(0.0, emb_scale, (N_ELEMENT_ROWS, dim)), "encoder.elem")
    arom = nd.parameter(rng.normal(0.0, emb_scale, (2, dim)), "encoder.arom")
    bond = nd.parameter(rng.normal(0.0, emb_scale, (N_BOND_TYPES, dim)), "encoder.bond")
    layers = []
    for k in range(num_layers):
        # He init on the hidden layer; the output layer is shrunk to offset the
        # roughly 3x growth of summed neighborhoods per layer
        w1 = rng.normal(0.0, np.sqrt(2.0 / dim), (dim, 2 * dim))
        w2 = rng.normal(0.0, np.sqrt(1.0 / (3.0 * 2 * dim)), (2 * dim, dim))
        layers.append((nd.parameter(w1, f"encoder.layer{k}.w1"), nd.parameter(w2, f"encoder.layer{k}.w2")))
    return EncoderParams(elem, arom, bond, layers)


def init_features(batch: GraphBatch, p: EncoderParams) -> nd.Tensor:
    if batch.elem.size and (batch.elem.max() >= p.elem.shape[0] or batch.elem.min() < 0):
        raise ValueError("element outside the embedding table")
    return nd.gather_rows(p.elem, batch.elem) + nd.gather_rows(p.arom, batch.arom)


def gin_layer(x: nd.Tensor, batch: GraphBatch, k: int, p: EncoderParams) -> nd.Tensor:
    if x.shape != (batch.n_nodes, p.dim):
        raise ValueError(f"gin_layer: expected node matrix {(batch.n_nodes, p.dim)}, got {x.shape}")
    w1, w2 = p.layers[k]
    if len(batch.src):
        msg = nd.gather_rows(x, batch.src) + nd.gather_rows(p.bond, batch.bond_type)
        m = x + nd.segment_sum(msg, batch.dst, batch.n_nodes)
    else:
        m = x
    return nd.relu(m @ w1) @ w2


@dataclass
class GraphEmbedding:
    graph: nd.Tensor  # (n_graphs, d)
    nodes: nd.Tensor  # (n_nodes, d)


def readout(nodes: nd.Tensor, batch: GraphBatch) -> nd.Tensor:
    inv = (1.0 / batch.counts.astype(np.float64))[:, None]
    return nd.segment_sum(nodes, batch.node_graph, batch.n_graphs) * inv


def encode_batch(batch: GraphBatch, p: EncoderParams) -> GraphEmbedding:
    x = init_features(batch, p)
    for k in range(p.num_layers):
        x = gin_layer(x, batch, k, p)
    return GraphEmbedding(readout(x, batch), x)


def encode_graph(g: MolGraph, p: EncoderParams) -> GraphEmbedding:
    """Embedding of a single graph: ``graph`` has shape (d,), ``nodes`` (|V|, d)."""
    emb = encode_batch(GraphBatch.from_graphs([g]), p)
    return GraphEmbedding(nd.reshape(emb.graph, (p.dim,)), emb.nodes)


def encode_graphs(graphs: Sequence[MolGraph], p: EncoderParams, batch_size: int = 256) -> np.ndarray:
    """Gradient-free embeddings of many graphs, shape (len(graphs), d)."""
    out = np.zeros((len(graphs), p.dim))
    frozen = EncoderParams.from_named({k: nd.Tensor(v.data) for k, v in p.named_tensors().items()})
    for start in range(0, len(graphs), batch_size):
        chunk = graphs[start:start + batch_size]
        out[start:start + len(chunk)] = encode_batch(GraphBatch.from_graphs(chunk), frozen).graph.data
    return out


def encode_motif(m: Motif | MolGraph, p: EncoderParams) -> nd.Tensor:
    g = m.subgraph if isinstance(m, Motif) else m
    if g is None or len(g) == 0:
        raise ValueError("the empty motif has no embedding; it is the zero vector")
    return encode_graph(g, p).graph
