"""Training orchestration: probe baseline, prompt tuning (full and frozen), zero-shot, sweeps."""

from __future__ import annotations

import itertools
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Sequence

import numpy as np

from . import ndiff as nd
from .answer import AnswerBank, answer_loss, init_answers, scores
from .checkpoint import Checkpoint, CheckpointError
from .data import MISSING, TaskDataset, mean_auc, scaffold_split
from .encoder import EncoderParams, GraphBatch, encode_batch, encode_graphs
from .fragment import MotifVocabulary, Rules, build_vocabulary
from .pretrain import OutputHead, PretrainConfig, Task, pretrain_run
from .prompt import PromptParams, cross_attention_batch, init_motif_table, init_prompt, pack_motifs, select_motifs

log = logging.getLogger(__name__)

REGIMES = ("probe", "molcpt", "frozen", "zeroshot")
EVAL_CHUNK = 64


@dataclass
class RunConfig:
    regime: str = "molcpt"
    pretrain_task: str = "contrastive"
    pretrain_epochs: int = 50
    epochs: int = 100
    lr: float = 1e-3
    batch_size: int = 32
    t: int = 10
    heads: int = 4
    ensemble: int = 1
    orth: float = 0.0
    seeds: tuple[int, ...] = (0,)
    rules: str = "simple"
    dim: int = 64
    num_layers: int = 5
    motif_init: str = "pretrained"
    include_empty: bool = False
    freeze_empty: bool = False
    ffn: bool = False
    update_head: bool | None = None
    freeze_encoder: bool = False
    tau_ans: float = 1.0

    def __post_init__(self):
        self.seeds = tuple(int(s) for s in self.seeds)
        if self.regime not in REGIMES:
            raise ValueError(f"unknown regime {self.regime!r}")
        Task(self.pretrain_task)
        Rules(self.rules)
        if self.motif_init not in ("pretrained", "random"):
            raise ValueError(f"unknown motif init {self.motif_init!r}")
        if self.epochs < 0 or self.pretrain_epochs < 0 or self.batch_size < 1 or self.lr <= 0:
            raise ValueError("epochs >= 0, batch_size >= 1 and lr > 0 required")
        if self.t < 0:
            raise ValueError("motif threshold t must be >= 0")
        if self.heads < 1 or self.dim % self.heads:
            raise ValueError(f"heads must divide the hidden width {self.dim}")
        if not 0 <= self.ensemble <= 50:
            raise ValueError("ensemble size must be within 0..50")
        if self.orth < 0:
            raise ValueError("orthogonality weight must be >= 0")
        if not self.seeds:
            raise ValueError("at least one seed required")

    @property
    def trains_encoder(self) -> bool:
        return self.regime == "molcpt" or (self.regime == "probe" and not self.freeze_encoder)


@dataclass
class PromptModel:
    encoder: EncoderParams
    head: OutputHead
    vocab: MotifVocabulary | None = None
    prompt: PromptParams | None = None
    banks: list[AnswerBank] = field(default_factory=list)
    probe: list[tuple[nd.Tensor, nd.Tensor]] = field(default_factory=list)
    include_empty: bool = False

    def named_tensors(self) -> dict[str, nd.Tensor]:
        out = dict(self.encoder.named_tensors())
        out.update(self.head.named_tensors())
        if self.prompt is not None:
            out.update(self.prompt.named_tensors())
        for t, bank in enumerate(self.banks):
            out[f"answer.{t}"] = bank.answers
        for t, (w, b) in enumerate(self.probe):
            out[f"probe.{t}.w"] = w
            out[f"probe.{t}.b"] = b
        return out

    def snapshot(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.named_tensors().items()}

    def restore(self, snap: dict[str, np.ndarray]) -> None:
        for k, v in self.named_tensors().items():
            v.data = snap[k].copy()

    def to_checkpoint(self, extra: dict | None = None) -> Checkpoint:
        meta = {
            "format": "molcpt",
            "dim": self.encoder.dim,
            "num_layers": self.encoder.num_layers,
            "head_variant": self.head.variant.value,
            "c": self.head.out_dim,
            "heads": self.prompt.heads if self.prompt else 0,
            "ffn": bool(self.prompt and self.prompt.ffn is not None),
            "ensemble": [b.ensemble for b in self.banks],
            "labels": [b.num_labels for b in self.banks],
            "orth": [b.orth for b in self.banks],
            "tau_ans": [b.tau for b in self.banks],
            "probe_tasks": len(self.probe),
            "include_empty": self.include_empty,
            "rules": self.vocab.rules.value if self.vocab else "",
            "vocab_hash": self.vocab.content_hash() if self.vocab else "",
        }
        meta.update(extra or {})
        return Checkpoint(meta, {k: v.data for k, v in self.named_tensors().items()})

    @classmethod
    def from_checkpoint(cls, ckpt: Checkpoint, vocab: MotifVocabulary | None = None) -> PromptModel:
        meta = ckpt.meta
        if meta.get("vocab_hash") and vocab is not None and vocab.content_hash() != meta["vocab_hash"]:
            raise CheckpointError("vocabulary hash mismatch: checkpoint was trained with a different vocabulary")
        tensors = {k: nd.parameter(v.copy(), k) for k, v in ckpt.tensors.items()}
        enc = EncoderParams.from_named(tensors)
        head = OutputHead.from_named(meta["head_variant"], tensors)
        prompt = PromptParams.from_named(tensors, meta["heads"]) if "prompt.table" in tensors else None
        if prompt is not None and vocab is not None and prompt.table.shape[0] != len(vocab):
            raise CheckpointError("motif table size does not match the vocabulary")
        banks = [AnswerBank(tensors[f"answer.{t}"], meta["labels"][t], meta["ensemble"][t],
                            meta["orth"][t], meta["tau_ans"][t]) for t in range(len(meta.get("labels", [])))]
        probe = [(tensors[f"probe.{t}.w"], tensors[f"probe.{t}.b"]) for t in range(meta.get("probe_tasks", 0))]
        return cls(enc, head, vocab, prompt, banks, probe, meta.get("include_empty", False))


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("MOLCPT_THREADS", "1")))
    except ValueError:
        return 1


class Runner:
    """Forward passes and losses for one model over one dataset."""

    def __init__(self, model: PromptModel, ds: TaskDataset, cfg: RunConfig):
        self.model = model
        self.ds = ds
        self.cfg = cfg
        self.probe = cfg.regime == "probe"
        self.motifs: list[list[int]] | None = None
        if not self.probe:
            self.motifs = [select_motifs(g, model.vocab, model.include_empty) for g in ds.graphs]
        self.h_cache = None if cfg.trains_encoder else encode_graphs(ds.graphs, model.encoder)

    def embed(self, idx: np.ndarray) -> nd.Tensor:
        if self.h_cache is not None:
            return nd.Tensor(self.h_cache[idx])
        batch = GraphBatch.from_graphs([self.ds.graphs[i] for i in idx])
        return encode_batch(batch, self.model.encoder).graph

    def outputs(self, idx: np.ndarray) -> nd.Tensor:
        """Prompted head outputs y' for molecules ``idx``."""
        h = self.embed(idx)
        m_idx, seg = pack_motifs([self.motifs[i] for i in idx])
        e, _ = cross_attention_batch(h, m_idx, seg, self.model.prompt)
        return self.model.head(h + e)

    def logits(self, idx: np.ndarray, mode: str = "infer", rng=None) -> list[nd.Tensor]:
        if self.probe:
            h = self.embed(idx)
            return [h @ w + b for w, b in self.model.probe]
        y = self.outputs(idx)
        return [scores(y, bank, mode, rng) for bank in self.model.banks]

    def loss(self, idx: np.ndarray, logits: list[nd.Tensor]) -> nd.Tensor:
        labels = self.ds.labels[idx]
        total = None
        for t, lg in enumerate(logits):
            present = labels[:, t] != MISSING
            if not present.any():
                continue
            weights = present / len(idx)
            target = np.where(present, labels[:, t], 0)
            if self.probe:
                ll = nd.pick(nd.log_softmax(lg), target)
                term = nd.scale(nd.sum(ll * weights), -1.0)
            else:
                term = answer_loss(lg, target, self.model.banks[t], weights)
            total = term if total is None else total + term
        return total if total is not None else nd.Tensor(0.0)

    def evaluate(self, idx: np.ndarray) -> tuple[float, float]:
        """(loss, mean ROC-AUC) in inference mode."""
        chunks = [idx[i:i + EVAL_CHUNK] for i in range(0, len(idx), EVAL_CHUNK)]

        def run(chunk):
            lg = self.logits(chunk, "infer")
            loss = self.loss(chunk, lg).item() * len(chunk)
            return loss, np.stack([l.data[:, 1] - l.data[:, 0] for l in lg], axis=1)

        threads = _threads()
        if threads > 1 and len(chunks) > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                parts = list(pool.map(run, chunks))
        else:
            parts = [run(c) for c in chunks]
        if not parts:
            return float("nan"), float("nan")
        loss = sum(p[0] for p in parts) / len(idx)
        score = np.concatenate([p[1] for p in parts])
        return loss, mean_auc(score, self.ds.labels[idx])

    def trainable(self) -> list[nd.Tensor]:
        m, cfg = self.model, self.cfg
        if self.probe:
            params = [t for wb in m.probe for t in wb]
            return params + (m.encoder.tensors() if cfg.trains_encoder else [])
        params = m.prompt.tensors() + [b.answers for b in m.banks]
        if cfg.regime == "molcpt":
            params += m.encoder.tensors()
            if cfg.update_head is not False:
                params += m.head.tensors()
        return params


@dataclass
class SeedRun:
    seed: int
    rows: list[tuple[int, str, float, float]]
    best_epoch: int
    valid_auc: float
    test_auc: float
    test_loss: float
    model: PromptModel


@dataclass
class FinetuneResult:
    runs: list[SeedRun]

    @property
    def test_aucs(self) -> list[float]:
        return [r.test_auc for r in self.runs]

    @property
    def test_mean(self) -> float:
        return float(np.mean(self.test_aucs))

    @property
    def test_std(self) -> float:
        return float(np.std(self.test_aucs))

    @property
    def valid_mean(self) -> float:
        return float(np.mean([r.valid_auc for r in self.runs]))

    @property
    def best(self) -> SeedRun:
        return max(self.runs, key=lambda r: (r.valid_auc, -r.seed))

    def metrics_tsv(self) -> str:
        lines = ["epoch\tsplit\tloss\troc_auc"]
        multi = len(self.runs) > 1
        for r in self.runs:
            for epoch, split, loss, auc in r.rows:
                name = f"{split}@{r.seed}" if multi else split
                lines.append(f"{epoch}\t{name}\t{loss:.10g}\t{auc:.10g}")
        lines.append(f"-\ttest_mean\t\t{self.test_mean:.10g}")
        lines.append(f"-\ttest_std\t\t{self.test_std:.10g}")
        return "\n".join(lines) + "\n"


def build_model(ds: TaskDataset, cfg: RunConfig, encoder: EncoderParams, head: OutputHead,
                vocab: MotifVocabulary | None, seed: int) -> PromptModel:
    """Fresh per-seed model state around copies of the pretrained encoder and head."""
    enc, hd = encoder.copy(), head.copy()
    model = PromptModel(enc, hd, vocab, include_empty=cfg.include_empty)
    rng = np.random.default_rng(seed)
    if cfg.regime == "probe":
        # zero-initialized linear classifier per task: untrained scores carry no ranking
        model.probe = [(nd.parameter(np.zeros((enc.dim, 2)), f"probe.{t}.w"),
                        nd.parameter(np.zeros(2), f"probe.{t}.b")) for t in range(ds.task_count)]
        return model
    if vocab is None:
        raise ValueError("prompt tuning needs a motif vocabulary")
    table = init_motif_table(vocab, enc, cfg.motif_init, seed=int(rng.integers(2**31)))
    model.prompt = init_prompt(table, cfg.heads, seed=int(rng.integers(2**31)), ffn=cfg.ffn)
    runner = Runner(model, ds, replace(cfg, regime="zeroshot"))
    train = ds.indices("train")
    y = np.concatenate([runner.outputs(train[i:i + EVAL_CHUNK]).data for i in range(0, len(train), EVAL_CHUNK)])
    for t in range(ds.task_count):
        lab = ds.labels[train, t]
        present = lab != MISSING
        model.banks.append(init_answers(y[present], lab[present], 2, cfg.ensemble,
                                        seed=int(rng.integers(2**31)), orth=cfg.orth, tau=cfg.tau_ans))
    return model


def _selection_key(auc: float, loss: float) -> tuple[float, float]:
    return (auc if np.isfinite(auc) else -np.inf, -loss if np.isfinite(loss) else -np.inf)


def _train_seed(ds: TaskDataset, cfg: RunConfig, encoder, head, vocab, seed: int) -> SeedRun:
    model = build_model(ds, cfg, encoder, head, vocab, seed)
    runner = Runner(model, ds, cfg)
    rng = np.random.default_rng(seed + 7919)
    train, valid, test = ds.indices("train"), ds.indices("valid"), ds.indices("test")
    rows: list[tuple[int, str, float, float]] = []
    v_loss, v_auc = runner.evaluate(valid)
    rows.append((0, "valid", v_loss, v_auc))
    # selection key: validation AUC, ties broken by lower validation loss
    best = (_selection_key(v_auc, v_loss), 0, model.snapshot())
    epochs = 0 if cfg.regime == "zeroshot" else cfg.epochs
    params = runner.trainable()
    state = nd.AdamState(lr=cfg.lr)
    for epoch in range(1, epochs + 1):
        order = rng.permutation(train)
        total = 0.0
        train_scores, train_idx = [], []
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            logits = runner.logits(idx, "train", rng)
            loss = runner.loss(idx, logits)
            value = loss.item()
            if not np.isfinite(value):
                raise FloatingPointError(f"non-finite loss at epoch {epoch}")
            grads = nd.backward(loss, params)
            if cfg.freeze_empty and model.prompt is not None and model.prompt.table in grads:
                grads[model.prompt.table][0] = 0.0
            nd.adam_step(params, grads, state)
            total += value * len(idx)
            train_scores.append(np.stack([l.data[:, 1] - l.data[:, 0] for l in logits], axis=1))
            train_idx.append(idx)
        t_idx = np.concatenate(train_idx)
        rows.append((epoch, "train", total / len(train), mean_auc(np.concatenate(train_scores), ds.labels[t_idx])))
        v_loss, v_auc = runner.evaluate(valid)
        rows.append((epoch, "valid", v_loss, v_auc))
        key = _selection_key(v_auc, v_loss)
        if key > best[0]:
            best = (key, epoch, model.snapshot())
    model.restore(best[2])
    t_loss, t_auc = runner.evaluate(test)
    rows.append((best[1], "test", t_loss, t_auc))
    best_auc = best[0][0] if np.isfinite(best[0][0]) else float("nan")
    log.info("seed %d regime %s: best epoch %d valid %.4f test %.4f", seed, cfg.regime, best[1], best_auc, t_auc)
    return SeedRun(seed, rows, best[1], best_auc, t_auc, t_loss, model)


def finetune_run(ds: TaskDataset, cfg: RunConfig, encoder: EncoderParams, head: OutputHead,
                 vocab: MotifVocabulary | None = None) -> FinetuneResult:
    """Run ``cfg.regime`` once per seed. Needs ``ds.split``; builds the vocabulary from train if absent."""
    if not ds.split:
        scaffold_split(ds)
    if cfg.regime != "probe" and vocab is None:
        vocab = build_vocabulary([ds.graphs[i] for i in ds.indices("train")], cfg.rules, cfg.t)
    if cfg.regime != "probe" and head.variant.value != cfg.pretrain_task:
        log.info("using a %s head with pretrain_task=%s", head.variant.value, cfg.pretrain_task)
    return FinetuneResult([_train_seed(ds, cfg, encoder, head, vocab, s) for s in cfg.seeds])


def pretrain_for(ds: TaskDataset, cfg: RunConfig, seed: int | None = None):
    """Pretrain on the training split's molecules, labels unused."""
    if not ds.split:
        scaffold_split(ds)
    corpus = [ds.graphs[i] for i in ds.indices("train")]
    pcfg = PretrainConfig(dim=cfg.dim, num_layers=cfg.num_layers, seed=cfg.seeds[0] if seed is None else seed)
    return pretrain_run(corpus, cfg.pretrain_task, cfg.pretrain_epochs, pcfg)


def run_pipeline(ds: TaskDataset, cfg: RunConfig) -> FinetuneResult:
    """Split, pretrain, build the vocabulary and fine-tune in one go."""
    pre = pretrain_for(ds, cfg)
    return finetune_run(ds, cfg, pre.encoder, pre.head)


# --- sweeps --------------------------------------------------------------------

SWEEP_KEYS = {"t": int, "heads": int, "ensemble": int, "orth": float, "lr": float, "epochs": int,
              "batch_size": int, "regime": str, "rules": str, "motif_init": str}

DEFAULT_GRID = {
    "t": list(range(0, 101, 10)),
    "heads": [2, 4, 8],
    "ensemble": list(range(0, 51)),
    "orth": [round(i * 5e-6, 12) for i in range(21)],
}


def expand_grid(grid: dict[str, Sequence] | Sequence[dict], budget: int = 50, seed: int = 0) -> list[dict]:
    """Full product if it fits in ``budget``, else ``budget`` configs sampled without replacement."""
    if isinstance(grid, dict):
        keys = list(grid)
        combos = [dict(zip(keys, vals)) for vals in itertools.product(*(grid[k] for k in keys))]
    else:
        combos = [dict(c) for c in grid]
    for c in combos:
        for k in c:
            if k not in SWEEP_KEYS:
                raise ValueError(f"unknown sweep parameter {k!r}")
    if len(combos) <= budget:
        return combos
    rng = np.random.default_rng(seed)
    pick = sorted(rng.choice(len(combos), size=budget, replace=False).tolist())
    return [combos[i] for i in pick]


def sweep(ds: TaskDataset, grid, base: RunConfig, encoder: EncoderParams, head: OutputHead,
          budget: int = 50, seed: int = 0) -> list[dict]:
    """Fine-tune every configuration; rows sorted by validation ROC-AUC, best first."""
    if not ds.split:
        scaffold_split(ds)
    vocabs: dict[tuple[str, int], MotifVocabulary] = {}
    rows = []
    for i, params in enumerate(expand_grid(grid, budget, seed)):
        cfg = replace(base, **{k: SWEEP_KEYS[k](v) for k, v in params.items()})
        vocab = None
        if cfg.regime != "probe":
            key = (cfg.rules, cfg.t)
            if key not in vocabs:
                vocabs[key] = build_vocabulary([ds.graphs[j] for j in ds.indices("train")], cfg.rules, cfg.t)
            vocab = vocabs[key]
        res = finetune_run(ds, cfg, encoder, head, vocab)
        rows.append({**params, "vocab_size": len(vocab) if vocab else 0, "valid_auc": res.valid_mean,
                     "test_auc": res.test_mean, "test_std": res.test_std, "_order": i})
    rows.sort(key=lambda r: (-(r["valid_auc"] if not np.isnan(r["valid_auc"]) else -np.inf), r["_order"]))
    for r in rows:
        del r["_order"]
    return rows


def sweep_tsv(rows: list[dict]) -> str:
    if not rows:
        return ""
    keys = list(rows[0])
    lines = ["\t".join(keys)]
    for r in rows:
        lines.append("\t".join(f"{r[k]:.10g}" if isinstance(r[k], float) else str(r[k]) for k in keys))
    return "\n".join(lines) + "\n"


def config_dict(cfg: RunConfig) -> dict:
    d = asdict(cfg)
    d["seeds"] = list(cfg.seeds)
    return d
