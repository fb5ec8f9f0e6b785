"""Differentiable answer search.

Each label owns ``E`` answer vectors. Scores are inner products between the
pretraining head's output and one answer per label: a uniformly sampled row
during training, the mean of the label's rows at inference.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import ndiff as nd

log = logging.getLogger(__name__)


@dataclass
class AnswerBank:
    answers: nd.Tensor  # (k * E, d_ans); rows [i*E, (i+1)*E) belong to label i
    num_labels: int
    ensemble: int
    orth: float = 0.0
    tau: float = 1.0

    def __post_init__(self):
        if self.answers.shape[0] != self.num_labels * self.ensemble:
            raise ValueError("answer rows must equal labels x ensemble size")

    @property
    def dim(self) -> int:
        return self.answers.shape[1]

    @property
    def label_of(self) -> np.ndarray:
        return np.repeat(np.arange(self.num_labels), self.ensemble)


def group_means(outputs: np.ndarray, labels: np.ndarray, num_labels: int, ensemble: int,
                rng: np.random.Generator) -> np.ndarray:
    """Per label, shuffle its examples into ``ensemble`` groups and average each group.

    Group j takes examples j, j+E, j+2E, ... of the shuffled list. When a
    label has fewer examples than groups, group j reuses example j mod n.
    """
    d = outputs.shape[1]
    rows = np.zeros((num_labels * ensemble, d))
    for lab in range(num_labels):
        members = np.flatnonzero(labels == lab)
        if members.size == 0:
            log.warning("label %d has no training examples; its answers start at zero", lab)
            continue
        perm = rng.permutation(members)
        for j in range(ensemble):
            group = perm[j::ensemble]
            if group.size == 0:
                group = perm[[j % perm.size]]
            rows[lab * ensemble + j] = outputs[group].mean(axis=0)
    return rows


def init_answers(outputs: np.ndarray, labels: np.ndarray, num_labels: int = 2, ensemble: int = 1,
                 seed: int = 0, orth: float = 0.0, tau: float = 1.0) -> AnswerBank:
    """Class-mean initialization from head outputs of labeled training molecules.

    ``ensemble == 0`` means one answer per label, initialized at random.
    """
    outputs = np.asarray(outputs, dtype=np.float64)
    labels = np.asarray(labels)
    rng = np.random.default_rng(seed)
    if ensemble == 0:
        scale = outputs.std() if outputs.size else 1.0
        rows = rng.normal(0.0, scale or 1.0, (num_labels, outputs.shape[1]))
        return AnswerBank(nd.parameter(rows, "answers"), num_labels, 1, orth, tau)
    rows = group_means(outputs, labels, num_labels, ensemble, rng)
    return AnswerBank(nd.parameter(rows, "answers"), num_labels, ensemble, orth, tau)


def practical_answer(bank: AnswerBank, label: int, mode: str = "infer",
                     rng: np.random.Generator | None = None) -> np.ndarray:
    if not 0 <= label < bank.num_labels:
        raise KeyError(f"unknown label {label}")
    rows = bank.answers.data[label * bank.ensemble:(label + 1) * bank.ensemble]
    if mode == "train":
        rng = rng or np.random.default_rng()
        return rows[rng.integers(bank.ensemble)]
    return rows.mean(axis=0)


def scores(outputs: nd.Tensor, bank: AnswerBank, mode: str = "infer",
           rng: np.random.Generator | None = None) -> nd.Tensor:
    """Similarity logits (batch, k) between head outputs (batch, d_ans) and the practical answers."""
    if outputs.ndim != 2 or outputs.shape[1] != bank.dim:
        raise ValueError(f"answer search: outputs {outputs.shape} do not match answer width {bank.dim}")
    k, e, d = bank.num_labels, bank.ensemble, bank.dim
    if mode == "train" and e > 1:
        rng = rng or np.random.default_rng()
        b = outputs.shape[0]
        pick = (np.arange(k)[None, :] * e + rng.integers(e, size=(b, k))).reshape(-1)
        chosen = nd.reshape(nd.gather_rows(bank.answers, pick), (b, k, d))
        s = nd.sum(nd.reshape(outputs, (b, 1, d)) * chosen, axis=2)
    else:
        mean_answers = nd.mean(nd.reshape(bank.answers, (k, e, d)), axis=1) if e > 1 else bank.answers
        s = outputs @ mean_answers.T
    return nd.scale(s, 1.0 / bank.tau) if bank.tau != 1.0 else s


def score(output: nd.Tensor, bank: AnswerBank, mode: str = "infer", rng=None) -> tuple[np.ndarray, np.ndarray]:
    """Single example: returns ``(similarities, probabilities)``."""
    s = scores(nd.reshape(output, (1, -1)) if output.ndim == 1 else output, bank, mode, rng)
    return s.data[0], nd.softmax(s).data[0]


def orthogonality_penalty(bank: AnswerBank) -> nd.Tensor:
    """||Y_hat Y_hat^T - I||_F^2 with Y_hat the row-normalized answers."""
    y = bank.answers
    y_hat = y / nd.sqrt(nd.sum(y * y, axis=1, keepdims=True) + 1e-24)
    return nd.sq_frobenius(y_hat @ y_hat.T - np.eye(y.shape[0]))


def answer_loss(logits: nd.Tensor, labels, bank: AnswerBank, weights=None) -> nd.Tensor:
    """Cross entropy of softmax(logits) against ``labels`` plus the orthogonality penalty.

    ``weights`` (one per row, default 1/batch) lets callers drop missing labels.
    """
    labels = np.asarray(labels, dtype=np.int64)
    ll = nd.pick(nd.log_softmax(logits), labels)
    if weights is None:
        ce = nd.scale(nd.mean(ll), -1.0)
    else:
        ce = nd.scale(nd.sum(ll * np.asarray(weights, dtype=np.float64)), -1.0)
    if bank.orth:
        ce = ce + nd.scale(orthogonality_penalty(bank), bank.orth)
    return ce


def predict(similarities) -> tuple[int, float]:
    """Label by argmax (ties go to the lowest index) and the binary ranking score s1 - s0."""
    s = np.asarray(similarities, dtype=np.float64)
    label = int(np.argmax(s))
    return label, float(s[1] - s[0]) if s.size >= 2 else float(s[0])
