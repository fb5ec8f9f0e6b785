from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from molcpt import ndiff as nd
from molcpt.encoder import encode_graph, init_encoder
from molcpt.fragment import build_vocabulary, motifs_of
from molcpt.prompt import (PromptParams, cross_attention, cross_attention_batch, init_motif_table, init_prompt,
                           pack_motifs, prompt_embed, select_motifs)
from molcpt.smiles import parse_smiles

CORPUS = ["c1ccccc1CC", "c1ccccc1O", "C1CCCCC1CC(=O)O", "c1ccccc1CCC1CCCCC1", "CCO", "c1ccncc1C"]


@pytest.fixture(scope="module")
def setup():
    enc = init_encoder(8, 2, 0)
    vocab = build_vocabulary([parse_smiles(s) for s in CORPUS], "simple", 2)
    return enc, vocab


def test_table_row_zero_and_pretrained_rows(setup):
    enc, vocab = setup
    table = init_motif_table(vocab, enc).data
    assert np.array_equal(table[0], np.zeros(8))
    for j, entry in enumerate(vocab.entries[1:], start=1):
        assert np.allclose(table[j], encode_graph(entry.graph, enc).graph.data, atol=1e-12)


def test_isomorphic_representatives_give_identical_rows():
    enc = init_encoder(8, 2, 0)
    v1 = build_vocabulary([parse_smiles("c1ccccc1CC")] * 2, "simple", 1)
    v2 = build_vocabulary([parse_smiles("CCc1ccccc1")] * 2, "simple", 1)
    assert v1.keys == v2.keys
    assert np.allclose(init_motif_table(v1, enc).data, init_motif_table(v2, enc).data, atol=1e-12)


def test_random_init_is_xavier_with_zero_empty_row(setup):
    enc, vocab = setup
    table = init_motif_table(vocab, enc, "random", seed=3).data
    bound = math.sqrt(6.0 / (len(vocab) + enc.dim))
    assert np.array_equal(table[0], np.zeros(enc.dim))
    assert np.all(np.abs(table[1:]) <= bound) and np.any(table[1:] != 0)
    with pytest.raises(ValueError):
        init_motif_table(vocab, enc, "bogus")


def test_xavier_rows_look_uniform():
    enc = init_encoder(64, 1, 0)
    vocab = build_vocabulary([parse_smiles(s) for s in CORPUS * 3], "simple", 0)
    table = init_motif_table(vocab, enc, "random", seed=0).data[1:]
    bound = math.sqrt(6.0 / (len(vocab) + enc.dim))
    # uniform on [-b, b]: mean 0, variance b^2 / 3
    assert abs(table.mean()) < 0.1 * bound
    assert table.var() == pytest.approx(bound ** 2 / 3, rel=0.15)


def test_single_motif_attention_is_one():
    rng = np.random.default_rng(0)
    table = nd.parameter(rng.normal(size=(3, 4)))
    p = init_prompt(table, heads=2, seed=1)
    e = rng.normal(size=(1, 4))
    out, alpha = cross_attention(nd.Tensor(rng.normal(size=4)), nd.Tensor(e), p)
    assert np.allclose(alpha, 1.0)
    assert np.allclose(out.data, (e @ p.wv.data @ p.wo.data)[0], atol=1e-12)


def test_empty_only_gives_zero_prompt():
    table = nd.parameter(np.zeros((1, 4)))
    p = init_prompt(table, heads=1, seed=0)
    out, _ = cross_attention(nd.Tensor(np.ones(4)), nd.gather_rows(table, [0]), p)
    assert np.array_equal(out.data, np.zeros(4))


def test_two_motif_hand_evaluation():
    wq = np.array([[1.0, 0.5], [0.0, 1.0]])
    wk = np.array([[1.0, 0.0], [1.0, -1.0]])
    wv = np.array([[0.5, 1.0], [2.0, 0.0]])
    wo = np.array([[1.0, 1.0], [0.0, 1.0]])
    table = nd.parameter(np.array([[0.0, 0.0], [1.0, 2.0], [-1.0, 0.5]]))
    p = PromptParams(table, nd.parameter(wq), nd.parameter(wk), nd.parameter(wv), nd.parameter(wo), heads=1)
    h = [0.3, -0.7]
    rows = [[1.0, 2.0], [-1.0, 0.5]]

    def vecmat(v, m):
        return [sum(v[i] * m[i][j] for i in range(2)) for j in range(2)]

    q = vecmat(h, wq)
    logits = [sum(a * b for a, b in zip(q, vecmat(r, wk))) / math.sqrt(2) for r in rows]
    z = [math.exp(s) for s in logits]
    alpha = [v / sum(z) for v in z]
    mixed = [sum(alpha[j] * vecmat(rows[j], wv)[i] for j in range(2)) for i in range(2)]
    want = vecmat(mixed, wo)

    out, weights = cross_attention(nd.Tensor(h), nd.gather_rows(table, [1, 2]), p)
    assert np.allclose(weights[0], alpha, atol=1e-14)
    assert np.allclose(out.data, want, atol=1e-14)


def test_prompt_embed_degenerate_cases(setup):
    enc, vocab = setup
    zero = init_prompt(nd.parameter(np.zeros((len(vocab), 8))), heads=2, seed=0)
    g = parse_smiles("c1ccccc1CCO")
    emb = prompt_embed(g, enc, vocab, zero)
    assert np.array_equal(emb.h_prime.data, emb.h.data)
    trained = init_prompt(init_motif_table(vocab, enc), heads=2, seed=0)
    rare = parse_smiles("FC(F)(F)Br")
    assert motifs_of(rare, vocab) == [0]
    emb = prompt_embed(rare, enc, vocab, trained)
    assert np.array_equal(emb.h_prime.data, emb.h.data)
    emb = prompt_embed(g, enc, vocab, trained)
    assert motifs_of(g, vocab) != [0]
    assert not np.allclose(emb.h_prime.data, emb.h.data)


def test_include_empty_only_adds_row_zero_for_matches(setup):
    _, vocab = setup
    g = parse_smiles("c1ccccc1CCO")
    assert select_motifs(g, vocab) == motifs_of(g, vocab)
    assert select_motifs(g, vocab, include_empty=True) == [0] + motifs_of(g, vocab)
    rare = parse_smiles("FC(F)(F)Br")
    assert select_motifs(rare, vocab, include_empty=True) == [0]


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 6), st.sampled_from([1, 2, 4]), st.integers(0, 2**31), st.booleans())
def test_attention_weights_are_distributions_and_order_free(n, heads, seed, ffn):
    rng = np.random.default_rng(seed)
    table = nd.parameter(rng.normal(size=(n + 1, 8)))
    p = init_prompt(table, heads=heads, seed=seed % 1000, ffn=ffn)
    h = nd.Tensor(rng.normal(size=8))
    idx = np.arange(1, n + 1)
    e, alpha = cross_attention(h, nd.gather_rows(table, idx), p)
    assert alpha.shape == (heads, n)
    assert np.all(alpha >= 0) and np.allclose(alpha.sum(axis=1), 1.0, atol=1e-9)
    perm = rng.permutation(n)
    e2, alpha2 = cross_attention(h, nd.gather_rows(table, idx[perm]), p)
    assert np.allclose(e2.data, e.data, atol=1e-12)
    assert np.allclose(alpha2, alpha[:, perm], atol=1e-12)


def test_batched_matches_single(setup):
    enc, vocab = setup
    p = init_prompt(init_motif_table(vocab, enc), heads=4, seed=2)
    gs = [parse_smiles(s) for s in CORPUS]
    lists = [select_motifs(g, vocab) for g in gs]
    h = nd.Tensor(np.stack([encode_graph(g, enc).graph.data for g in gs]))
    idx, seg = pack_motifs(lists)
    e, _ = cross_attention_batch(h, idx, seg, p)
    for i, g in enumerate(gs):
        single = prompt_embed(g, enc, vocab, p)
        assert np.allclose(e.data[i], single.e_cpt.data, atol=1e-12)


@pytest.mark.parametrize("heads,ffn", [(1, False), (2, False), (4, True)])
def test_prompt_gradients(heads, ffn):
    rng = np.random.default_rng(heads)
    table = nd.parameter(rng.normal(size=(4, 4)))
    p = init_prompt(table, heads=heads, seed=0, ffn=ffn)
    h = nd.Tensor(rng.normal(size=(3, 4)))
    idx, seg = pack_motifs([[1, 2], [3], [0, 1, 3]])
    proj = rng.normal(size=(3, 4))

    def loss():
        e, _ = cross_attention_batch(h, idx, seg, p)
        return nd.sum(nd.exp(nd.scale(e * proj, 0.3)))

    assert nd.grad_check_params(loss, p.tensors()) <= 1e-4


def test_stop_gradient_blocks_attention_path(setup):
    enc, vocab = setup
    p = init_prompt(init_motif_table(vocab, enc), heads=2, seed=0)
    g = parse_smiles("c1ccccc1CCO")
    proj = np.random.default_rng(0).normal(size=8)

    def encoder_grads(detach_query_input: bool):
        h = encode_graph(g, enc).graph
        rows = nd.gather_rows(p.table, select_motifs(g, vocab))
        query = nd.Tensor(h.data.copy()) if detach_query_input else h
        e, _ = cross_attention(query, rows, p)
        loss = nd.sum((h + e) * proj)
        grads = nd.backward(loss, enc.tensors())
        return [grads[t] for t in enc.tensors()]

    for a, b in zip(encoder_grads(False), encoder_grads(True)):
        assert np.array_equal(a, b)


def test_shape_errors():
    with pytest.raises(ValueError):
        init_prompt(nd.parameter(np.zeros((2, 6))), heads=4)
    p = init_prompt(nd.parameter(np.zeros((2, 4))), heads=2)
    with pytest.raises(ValueError):
        cross_attention(nd.Tensor(np.ones(3)), nd.Tensor(np.ones((1, 4))), p)
    with pytest.raises(ValueError):
        cross_attention(nd.Tensor(np.ones(4)), nd.Tensor(np.ones((0, 4))), p)
