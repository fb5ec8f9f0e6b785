from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from molcpt import ndiff as nd
from molcpt.encoder import (MASK_ROW, EncoderParams, GraphBatch, encode_batch, encode_graph, encode_graphs,
                            encode_motif, gin_layer, init_encoder, init_features)
from molcpt.fragment import fragment_molecule
from molcpt.smiles import MolGraph, parse_smiles

from .helpers import graphs, permuted, random_graph


def small_encoder(seed=0, dim=4, layers=2):
    return init_encoder(dim=dim, num_layers=layers, seed=seed)


def test_same_element_same_initial_row_and_mask_row_distinct():
    p = small_encoder()
    g = parse_smiles("CCO")
    x = init_features(GraphBatch.from_graphs([g]), p).data
    assert np.array_equal(x[0], x[1]) and not np.array_equal(x[0], x[2])
    for z in range(1, p.elem.shape[0]):
        assert not np.array_equal(p.elem.data[MASK_ROW], p.elem.data[z])


def test_benzene_rows_identical():
    p = small_encoder()
    emb = encode_graph(parse_smiles("c1ccccc1"), p)
    assert np.allclose(emb.nodes.data, emb.nodes.data[0], atol=1e-12)


def test_isolated_atom_is_mlp_of_features():
    p = small_encoder(layers=1)
    batch = GraphBatch.from_graphs([parse_smiles("N")])
    x = init_features(batch, p)
    w1, w2 = p.layers[0]
    want = np.maximum(x.data @ w1.data, 0) @ w2.data
    assert np.allclose(gin_layer(x, batch, 0, p).data, want, atol=1e-14)


def test_symmetric_pair_gives_equal_rows():
    p = small_encoder()
    out = encode_graph(parse_smiles("OO"), p).nodes.data
    assert np.array_equal(out[0], out[1])


def test_three_atom_path_matches_hand_evaluation():
    # d = 2, one layer, hand-chosen tables and weights
    elem = np.zeros((119, 2))
    elem[6] = [1.0, 0.0]
    elem[8] = [0.0, 2.0]
    arom = np.array([[0.1, 0.1], [0.0, 0.0]])
    bond = np.array([[0.5, -0.5], [1.0, 1.0], [0.0, 0.0], [0.0, 0.0]])
    w1 = np.array([[1.0, -1.0, 0.5, 0.0], [0.5, 1.0, -1.0, 2.0]])
    w2 = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0], [-1.0, 0.5]])
    p = EncoderParams(nd.parameter(elem), nd.parameter(arom), nd.parameter(bond),
                      [(nd.parameter(w1), nd.parameter(w2))])
    g = parse_smiles("CC=O")  # C0 -single- C1 =double= O2

    x = [elem[6] + arom[0], elem[6] + arom[0], elem[8] + arom[0]]
    m0 = x[0] + (x[1] + bond[0])
    m1 = x[1] + (x[0] + bond[0]) + (x[2] + bond[1])
    m2 = x[2] + (x[1] + bond[1])

    def mlp(m):
        hidden = [max(0.0, sum(m[i] * w1[i, j] for i in range(2))) for j in range(4)]
        return [sum(hidden[j] * w2[j, k] for j in range(4)) for k in range(2)]

    want = np.array([mlp(m0), mlp(m1), mlp(m2)])
    emb = encode_graph(g, p)
    assert np.allclose(emb.nodes.data, want, atol=1e-12)
    assert np.allclose(emb.graph.data, want.mean(axis=0), atol=1e-12)


def test_single_atom_readout_equals_its_row():
    emb = encode_graph(parse_smiles("S"), small_encoder())
    assert np.array_equal(emb.graph.data, emb.nodes.data[0])


def test_disjoint_union_readout_is_size_weighted_mean():
    p = small_encoder(dim=8, layers=3)
    a, b = parse_smiles("c1ccccc1O"), parse_smiles("CCN")
    union = parse_smiles("c1ccccc1O.CCN")
    ha, hb = encode_graph(a, p).graph.data, encode_graph(b, p).graph.data
    want = (len(a) * ha + len(b) * hb) / (len(a) + len(b))
    assert np.allclose(encode_graph(union, p).graph.data, want, atol=1e-12)


def test_encode_motif_cases():
    p = small_encoder(dim=8)
    g = parse_smiles("c1ccccc1")
    (whole,) = fragment_molecule(g)
    assert np.array_equal(encode_motif(whole, p).data, encode_graph(g, p).graph.data)
    rings = [m for m in fragment_molecule(parse_smiles("c1ccccc1Cc1ccccc1")) if len(m.parent_atoms) == 6]
    assert np.allclose(encode_motif(rings[0], p).data, encode_motif(rings[1], p).data, atol=1e-12)
    other = encode_motif(whole, small_encoder(seed=1, dim=8)).data
    assert not np.allclose(other, encode_motif(whole, p).data)
    with pytest.raises(ValueError):
        encode_motif(MolGraph((), ()), p)


def test_batch_matches_individual_encoding():
    p = small_encoder(dim=8, layers=3)
    gs = [parse_smiles(s) for s in ("CCO", "c1ccncc1", "C1CC1C(=O)N", "F")]
    batch = encode_batch(GraphBatch.from_graphs(gs), p).graph.data
    single = np.stack([encode_graph(g, p).graph.data for g in gs])
    assert np.allclose(batch, single, atol=1e-12)
    assert np.allclose(encode_graphs(gs, p, batch_size=3), single, atol=1e-12)


def test_element_outside_table_rejected():
    p = small_encoder()
    short = EncoderParams(nd.parameter(p.elem.data[:7]), p.arom, p.bond, p.layers)
    with pytest.raises(ValueError):
        encode_graph(parse_smiles("CO"), short)


def test_masked_atoms_use_mask_row():
    p = small_encoder()
    g = parse_smiles("CCO")
    masked = MolGraph(g.atoms, g.bonds, g.source_smiles, (2,))
    x = init_features(GraphBatch.from_graphs([masked]), p).data
    assert np.array_equal(x[2], p.elem.data[MASK_ROW] + p.arom.data[0])


@settings(max_examples=60, deadline=None)
@given(graphs(max_atoms=20), st.data())
def test_permutation_invariance(g, data):
    p = small_encoder(dim=8, layers=3)
    perm = data.draw(st.permutations(range(len(g))))
    h = encode_graph(g, p).graph.data
    assert np.max(np.abs(encode_graph(permuted(g, perm), p).graph.data - h)) <= 1e-9


def test_gradients_over_all_encoder_params():
    rng = np.random.default_rng(4)
    g = random_graph(rng, 6, extra_edges=1)
    p = small_encoder(dim=3, layers=2)
    proj = rng.normal(size=3)

    def loss():
        return nd.sum(nd.exp(nd.scale(encode_graph(g, p).graph * proj, 0.5)))

    assert nd.grad_check_params(loss, p.tensors()) <= 1e-4


def test_depth_changes_output():
    rng = np.random.default_rng(8)
    for _ in range(10):
        g = random_graph(rng, 8)
        deep = small_encoder(dim=8, layers=3, seed=3)
        shallow = EncoderParams(deep.elem, deep.arom, deep.bond, [])
        assert not np.allclose(encode_graph(g, deep).graph.data, encode_graph(g, shallow).graph.data)


def test_empty_graph_rejected():
    with pytest.raises(ValueError):
        GraphBatch.from_graphs([MolGraph((), ())])


def test_param_naming_round_trip():
    p = small_encoder(layers=3)
    q = EncoderParams.from_named(p.named_tensors())
    assert q.num_layers == 3 and all(a is b for a, b in zip(p.tensors(), q.tensors()))
    c = p.copy()
    assert all(np.array_equal(a.data, b.data) and a is not b for a, b in zip(p.tensors(), c.tensors()))
