"""Self-supervised pretraining: graph contrastive learning and atom-attribute masking."""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import ndiff as nd
from .encoder import (N_ELEMENT_ROWS, EncoderParams, GraphBatch, encode_batch, init_encoder)
from .smiles import MolGraph, ring_flags

log = logging.getLogger(__name__)

N_CLASSES = N_ELEMENT_ROWS  # masking head predicts a row of the element table


class Augment(str, enum.Enum):
    NODE_DROP = "node_drop"
    EDGE_DROP = "edge_drop"
    ATTR_MASK = "attr_mask"


class Task(str, enum.Enum):
    CONTRASTIVE = "contrastive"
    ATTRMASK = "attrmask"


@dataclass
class OutputHead:
    """Pretraining output layer: a 2-layer projection MLP or a linear atom classifier."""

    variant: Task
    weights: dict[str, nd.Tensor]

    @property
    def out_dim(self) -> int:
        return self.weights["w2" if self.variant is Task.CONTRASTIVE else "w"].shape[1]

    def __call__(self, h: nd.Tensor) -> nd.Tensor:
        w = self.weights
        if self.variant is Task.CONTRASTIVE:
            return nd.relu(h @ w["w1"] + w["b1"]) @ w["w2"] + w["b2"]
        return h @ w["w"] + w["b"]

    def tensors(self) -> list[nd.Tensor]:
        return list(self.weights.values())

    def named_tensors(self) -> dict[str, nd.Tensor]:
        return {f"head.{k}": v for k, v in self.weights.items()}

    @classmethod
    def from_named(cls, variant: Task | str, tensors: dict[str, nd.Tensor]) -> OutputHead:
        return cls(Task(variant), {k[len("head."):]: v for k, v in tensors.items() if k.startswith("head.")})

    def copy(self) -> OutputHead:
        return OutputHead(self.variant, {k: nd.parameter(v.data.copy(), k) for k, v in self.weights.items()})


def init_head(variant: Task | str, dim: int, seed: int = 0) -> OutputHead:
    variant = Task(variant)
    rng = np.random.default_rng(seed)
    if variant is Task.CONTRASTIVE:
        weights = {
            "w1": rng.normal(0.0, np.sqrt(2.0 / dim), (dim, dim)), "b1": np.zeros(dim),
            "w2": rng.normal(0.0, np.sqrt(1.0 / dim), (dim, dim)), "b2": np.zeros(dim),
        }
    else:
        weights = {"w": rng.normal(0.0, np.sqrt(1.0 / dim), (dim, N_CLASSES)), "b": np.zeros(N_CLASSES)}
    return OutputHead(variant, {k: nd.parameter(v, k) for k, v in weights.items()})


def augment(g: MolGraph, kind: Augment | str, ratio: float, seed) -> MolGraph:
    """Random perturbation of ``g``; ``seed`` may be an int or a numpy Generator."""
    kind = Augment(kind)
    if not 0.0 <= ratio < 1.0:
        raise ValueError("ratio must be in [0, 1)")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    n = len(g.atoms)
    if kind is Augment.NODE_DROP:
        k = min(int(np.floor(ratio * n)), n - 1)
        if k == 0:
            return g
        drop = set(rng.choice(n, size=k, replace=False).tolist())
        sub = g.subgraph([i for i in range(n) if i not in drop])
        comps = sub.components()
        largest = max(comps, key=len)  # first of equal size wins: lowest atom index
        return sub if len(largest) == len(sub) else sub.subgraph(largest)
    if kind is Augment.EDGE_DROP:
        k = int(np.floor(ratio * len(g.bonds)))
        if k == 0:
            return g
        chain = [i for i, b in enumerate(g.bonds) if not b.in_ring]
        ring = [i for i, b in enumerate(g.bonds) if b.in_ring]
        chain = rng.permutation(chain).tolist() if chain else []
        ring = rng.permutation(ring).tolist() if ring else []
        drop = set((chain + ring)[:k])
        kept = tuple(b for i, b in enumerate(g.bonds) if i not in drop)
        return ring_flags(MolGraph(g.atoms, kept, g.source_smiles, g.masked))
    k = int(np.floor(ratio * n))
    if k == 0:
        return g
    chosen = sorted(set(g.masked) | set(rng.choice(n, size=k, replace=False).tolist()))
    return MolGraph(g.atoms, g.bonds, g.source_smiles, tuple(chosen), g.valence_warning)


def ntxent_loss(z1: nd.Tensor, z2: nd.Tensor, tau: float = 0.1) -> nd.Tensor:
    """Cross-view normalized temperature-scaled cross entropy.

    Row i of ``z1`` is scored against every row of ``z2`` (positive: row i)
    and vice versa; the loss averages both directions.
    """
    if z1.shape != z2.shape or z1.ndim != 2:
        raise ValueError("ntxent_loss: z1 and z2 must be matching (batch, d) matrices")
    if z1.shape[0] < 2:
        raise ValueError("ntxent_loss needs a batch of at least 2")
    if tau <= 0:
        raise ValueError("temperature must be positive")

    def normalize(z):
        return z / nd.sqrt(nd.sum(z * z, axis=1, keepdims=True) + 1e-24)

    def log_softmax(s):
        # correctly rounded sums keep the loss exactly invariant to batch order
        z = s - s.data.max(axis=1, keepdims=True)
        return z - nd.log(nd.exact_sum(nd.exp(z), axis=1, keepdims=True))

    n = z1.shape[0]
    sim = nd.scale(normalize(z1) @ normalize(z2).T, 1.0 / tau)
    diag = np.arange(n)
    rows = nd.exact_sum(nd.pick(log_softmax(sim), diag))
    cols = nd.exact_sum(nd.pick(log_softmax(sim.T), diag))
    return nd.scale(rows + cols, -0.5 / n)


def masked_atom_logits(batch: GraphBatch, masked_rows: np.ndarray, enc: EncoderParams,
                       head: OutputHead) -> nd.Tensor:
    nodes = encode_batch(batch, enc).nodes
    return head(nd.gather_rows(nodes, masked_rows))


def mask_atoms(g: MolGraph, mask_ratio: float, rng: np.random.Generator) -> MolGraph:
    n = len(g.atoms)
    k = min(max(1, int(np.floor(mask_ratio * n))), n)
    chosen = tuple(sorted(rng.choice(n, size=k, replace=False).tolist()))
    return MolGraph(g.atoms, g.bonds, g.source_smiles, chosen, g.valence_warning)


def attrmask_loss(graphs: Sequence[MolGraph], enc: EncoderParams, head: OutputHead) -> nd.Tensor:
    """Mean cross entropy of the true element over every masked atom of the (pre-masked) graphs."""
    if head.variant is not Task.ATTRMASK:
        raise ValueError("attribute masking needs the masking head")
    batch = GraphBatch.from_graphs(graphs)
    rows = np.concatenate([np.asarray(g.masked, dtype=np.int64) + off for g, off in zip(graphs, batch.offsets)])
    targets = np.concatenate([[g.atoms[i].element for i in g.masked] for g in graphs]).astype(np.int64)
    logits = masked_atom_logits(batch, rows, enc, head)
    return nd.scale(nd.mean(nd.pick(nd.log_softmax(logits), targets)), -1.0)


def attrmask_task(g: MolGraph, mask_ratio: float, seed, enc: EncoderParams, head: OutputHead) -> nd.Tensor:
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    return attrmask_loss([mask_atoms(g, mask_ratio, rng)], enc, head)


def masked_accuracy(graphs: Sequence[MolGraph], enc: EncoderParams, head: OutputHead,
                    mask_ratio: float, seed: int = 0) -> float:
    rng = np.random.default_rng(seed)
    masked = [mask_atoms(g, mask_ratio, rng) for g in graphs]
    batch = GraphBatch.from_graphs(masked)
    rows = np.concatenate([np.asarray(g.masked) + off for g, off in zip(masked, batch.offsets)])
    targets = np.concatenate([[g.atoms[i].element for i in g.masked] for g in masked])
    logits = masked_atom_logits(batch, rows, enc, head).data
    return float(np.mean(logits.argmax(axis=1) == targets))


@dataclass
class PretrainConfig:
    dim: int = 64
    num_layers: int = 5
    lr: float = 1e-4
    batch_size: int = 32
    tau: float = 0.1
    mask_ratio: float = 0.15
    augmentations: tuple[tuple[str, float], ...] = (("node_drop", 0.2), ("node_drop", 0.2))
    seed: int = 0


@dataclass
class PretrainResult:
    encoder: EncoderParams
    head: OutputHead
    losses: list[float] = field(default_factory=list)


def contrastive_step_loss(graphs: Sequence[MolGraph], enc: EncoderParams, head: OutputHead,
                          cfg: PretrainConfig, rng: np.random.Generator) -> nd.Tensor:
    (k1, r1), (k2, r2) = cfg.augmentations
    v1 = [augment(g, k1, r1, rng) for g in graphs]
    v2 = [augment(g, k2, r2, rng) for g in graphs]
    z1 = head(encode_batch(GraphBatch.from_graphs(v1), enc).graph)
    z2 = head(encode_batch(GraphBatch.from_graphs(v2), enc).graph)
    return ntxent_loss(z1, z2, cfg.tau)


def pretrain_run(corpus: Sequence[MolGraph], task: Task | str, epochs: int,
                 config: PretrainConfig | None = None, encoder: EncoderParams | None = None,
                 head: OutputHead | None = None) -> PretrainResult:
    """Train encoder and head with Adam; deterministic for a fixed ``config.seed``."""
    cfg = config or PretrainConfig()
    task = Task(task)
    if not corpus:
        raise ValueError("empty pretraining corpus")
    enc = encoder or init_encoder(cfg.dim, cfg.num_layers, cfg.seed)
    head = head or init_head(task, enc.dim, cfg.seed + 1)
    params = enc.tensors() + head.tensors()
    state = nd.AdamState(lr=cfg.lr)
    rng = np.random.default_rng(cfg.seed + 2)
    losses = []
    corpus = list(corpus)
    for epoch in range(epochs):
        order = rng.permutation(len(corpus))
        total, count = 0.0, 0
        for start in range(0, len(order), cfg.batch_size):
            graphs = [corpus[i] for i in order[start:start + cfg.batch_size]]
            if task is Task.CONTRASTIVE:
                if len(graphs) < 2:
                    continue
                loss = contrastive_step_loss(graphs, enc, head, cfg, rng)
            else:
                loss = attrmask_loss([mask_atoms(g, cfg.mask_ratio, rng) for g in graphs], enc, head)
            value = loss.item()
            if not np.isfinite(value):
                raise FloatingPointError(f"pretraining diverged at epoch {epoch}")
            nd.adam_step(params, nd.backward(loss, params), state)
            total += value * len(graphs)
            count += len(graphs)
        losses.append(total / max(count, 1))
        log.info("pretrain %s epoch %d loss %.6f", task.value, epoch + 1, losses[-1])
    return PretrainResult(enc, head, losses)
