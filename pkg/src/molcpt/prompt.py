"""Continuous motif prompting.

A molecule's graph embedding ``h`` queries the embeddings of its frequent
motifs through multi-head cross attention; the attended motif summary
``e_cpt`` is added back: ``h' = h + e_cpt``. The query path goes through
:func:`ndiff.stop_gradient`, so prompting never pushes gradients into the
encoder through ``h``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import ndiff as nd
from .encoder import EncoderParams, encode_graph, encode_graphs
from .fragment import MotifVocabulary, motifs_of
from .smiles import MolGraph


@dataclass
class PromptParams:
    table: nd.Tensor
    wq: nd.Tensor
    wk: nd.Tensor
    wv: nd.Tensor
    wo: nd.Tensor
    heads: int = 1
    ffn: tuple[nd.Tensor, nd.Tensor] | None = None

    def __post_init__(self):
        d = self.wq.shape[0]
        if d % self.heads:
            raise ValueError(f"hidden width {d} is not divisible by {self.heads} heads")
        if self.table.shape[1] != d:
            raise ValueError("motif table width does not match the attention width")

    @property
    def dim(self) -> int:
        return self.wq.shape[0]

    def tensors(self, include_table: bool = True) -> list[nd.Tensor]:
        out = ([self.table] if include_table else []) + [self.wq, self.wk, self.wv, self.wo]
        if self.ffn is not None:
            out += list(self.ffn)
        return out

    def named_tensors(self) -> dict[str, nd.Tensor]:
        out = {"prompt.table": self.table, "prompt.wq": self.wq, "prompt.wk": self.wk,
               "prompt.wv": self.wv, "prompt.wo": self.wo}
        if self.ffn is not None:
            out["prompt.ffn1"], out["prompt.ffn2"] = self.ffn
        return out

    @classmethod
    def from_named(cls, tensors: dict[str, nd.Tensor], heads: int) -> PromptParams:
        ffn = (tensors["prompt.ffn1"], tensors["prompt.ffn2"]) if "prompt.ffn1" in tensors else None
        return cls(tensors["prompt.table"], tensors["prompt.wq"], tensors["prompt.wk"], tensors["prompt.wv"],
                   tensors["prompt.wo"], heads, ffn)


def xavier_uniform(rng: np.random.Generator, shape: tuple[int, int]) -> np.ndarray:
    bound = np.sqrt(6.0 / (shape[0] + shape[1]))
    return rng.uniform(-bound, bound, shape)


def init_motif_table(vocab: MotifVocabulary, encoder: EncoderParams, mode: str = "pretrained",
                     seed: int = 0) -> nd.Tensor:
    """Rows 1.. from the encoder applied to each motif (or Xavier-uniform); row 0 is zero."""
    d = encoder.dim
    table = np.zeros((len(vocab), d))
    if len(vocab) > 1:
        if mode == "pretrained":
            table[1:] = encode_graphs([e.graph for e in vocab.entries[1:]], encoder)
        elif mode == "random":
            table[1:] = xavier_uniform(np.random.default_rng(seed), (len(vocab), d))[1:]
        else:
            raise ValueError(f"unknown motif table init {mode!r}")
    return nd.parameter(table, "prompt.table")


def init_prompt(table: nd.Tensor, heads: int = 1, seed: int = 0, ffn: bool = False) -> PromptParams:
    d = table.shape[1]
    if d % heads:
        raise ValueError(f"hidden width {d} is not divisible by {heads} heads")
    rng = np.random.default_rng(seed)
    mats = [nd.parameter(xavier_uniform(rng, (d, d)), name) for name in ("prompt.wq", "prompt.wk", "prompt.wv")]
    wo = nd.parameter(xavier_uniform(rng, (d, d)), "prompt.wo")
    ff = None
    if ffn:
        ff = (nd.parameter(xavier_uniform(rng, (d, 2 * d)), "prompt.ffn1"),
              nd.parameter(xavier_uniform(rng, (2 * d, d)), "prompt.ffn2"))
    return PromptParams(table, *mats, wo, heads, ff)


def _attend(h: nd.Tensor, rows: nd.Tensor, seg: np.ndarray, n_mols: int, p: PromptParams):
    d, heads = p.dim, p.heads
    dh = d // heads
    n = rows.shape[0]
    if h.shape != (n_mols, d) or rows.shape[1] != d:
        raise ValueError(f"cross attention: h {h.shape} / motif rows {rows.shape} do not match width {d}")
    q = nd.stop_gradient(h) @ p.wq
    k = rows @ p.wk
    v = rows @ p.wv
    qk = nd.gather_rows(q, seg) * k
    scores = nd.scale(nd.sum(nd.reshape(qk, (n, heads, dh)), axis=2), 1.0 / np.sqrt(dh))
    alpha = nd.segment_softmax(scores, seg, n_mols)
    weighted = nd.reshape(nd.reshape(v, (n, heads, dh)) * nd.reshape(alpha, (n, heads, 1)), (n, d))
    e = nd.segment_sum(weighted, seg, n_mols) @ p.wo
    if p.ffn is not None:
        e = e + nd.relu(e @ p.ffn[0]) @ p.ffn[1]
        centered = e - nd.mean(e, axis=1, keepdims=True)
        e = centered / nd.sqrt(nd.mean(centered * centered, axis=1, keepdims=True) + 1e-5)
    return e, alpha


def cross_attention(h_g: nd.Tensor, motif_rows: nd.Tensor, p: PromptParams):
    """Single molecule: ``h_g`` (d,), ``motif_rows`` (n, d). Returns ``(e_cpt (d,), weights (heads, n))``."""
    if motif_rows.ndim != 2 or motif_rows.shape[0] < 1:
        raise ValueError("cross attention needs at least one motif row")
    n = motif_rows.shape[0]
    e, alpha = _attend(nd.reshape(h_g, (1, p.dim)), motif_rows, np.zeros(n, dtype=np.int64), 1, p)
    return nd.reshape(e, (p.dim,)), alpha.data.T


def cross_attention_batch(h: nd.Tensor, motif_idx: np.ndarray, seg: np.ndarray, p: PromptParams):
    """Batched prompting: motif ``motif_idx[i]`` belongs to molecule ``seg[i]``. Returns ``(e_cpt, weights)``."""
    rows = nd.gather_rows(p.table, motif_idx)
    e, alpha = _attend(h, rows, np.asarray(seg, dtype=np.int64), h.shape[0], p)
    return e, alpha.data


def pack_motifs(motif_lists: Sequence[Sequence[int]]) -> tuple[np.ndarray, np.ndarray]:
    idx = np.fromiter((i for ms in motif_lists for i in ms), dtype=np.int64)
    seg = np.fromiter((b for b, ms in enumerate(motif_lists) for _ in ms), dtype=np.int64)
    return idx, seg


def select_motifs(g: MolGraph, vocab: MotifVocabulary, include_empty: bool = False) -> list[int]:
    found = motifs_of(g, vocab)
    if include_empty and found != [0]:
        found = [0] + found
    return found


@dataclass
class PromptEmbedding:
    h_prime: nd.Tensor
    e_cpt: nd.Tensor
    attention: np.ndarray  # (heads, n_motifs)
    h: nd.Tensor


def prompt_embed(g: MolGraph, encoder: EncoderParams, vocab: MotifVocabulary, p: PromptParams,
                 include_empty: bool = False) -> PromptEmbedding:
    h = encode_graph(g, encoder).graph
    rows = nd.gather_rows(p.table, select_motifs(g, vocab, include_empty))
    e, alpha = cross_attention(h, rows, p)
    return PromptEmbedding(h + e, e, alpha, h)
