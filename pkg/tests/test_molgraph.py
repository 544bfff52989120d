"""Parser, featurizer, generator, and canonicalization tests."""

import itertools
import random

import numpy as np
import pytest

from molpool import molgraph as M
from smiles_corpus import CORPUS, ERROR_CASES

ERROR_TYPES = {
    "SmilesSyntaxError": M.SmilesSyntaxError,
    "UnsupportedFeatureError": M.UnsupportedFeatureError,
    "ValenceError": M.ValenceError,
    "DisconnectedError": M.DisconnectedError,
}
TYPED_ERRORS = (M.SmilesSyntaxError, M.UnsupportedFeatureError,
                M.ValenceError, M.DisconnectedError, M.EmptyBatchError)


# ---------------------------------------------------------------------------
# hand-checked corpus
# ---------------------------------------------------------------------------

def test_corpus_has_at_least_fifty_cases():
    assert len(CORPUS) >= 50


@pytest.mark.parametrize("case", CORPUS, ids=[c.smiles for c in CORPUS])
def test_corpus_case(case):
    g = M.parse_smiles(case.smiles)
    assert len(g.atoms) == len(case.h)
    assert tuple(a.implicit_h_count for a in g.atoms) == case.h
    assert tuple(int(a.is_in_ring) for a in g.atoms) == case.ring
    assert tuple(a.hybridization.value for a in g.atoms) == case.hyb
    assert M.molecular_weight(g) == pytest.approx(case.weight, abs=1e-9)


@pytest.mark.parametrize("bad,error_name", ERROR_CASES,
                         ids=[repr(s) for s, _ in ERROR_CASES])
def test_error_case(bad, error_name):
    with pytest.raises(ERROR_TYPES[error_name]):
        M.parse_smiles(bad)


def test_syntax_errors_carry_position():
    with pytest.raises(M.SmilesSyntaxError) as exc:
        M.parse_smiles("CC==C")
    assert exc.value.position == 3
    with pytest.raises(M.UnsupportedFeatureError) as exc:
        M.parse_smiles("CCl")
    assert exc.value.position == 2


# ---------------------------------------------------------------------------
# fuzzing: typed errors only
# ---------------------------------------------------------------------------

def test_fuzz_ten_thousand_strings():
    alphabet = "CNOFcnosp[]()=#-:/\\%1234567890.@+{}H RrBb"
    rng = random.Random(20240812)
    parsed = 0
    for _ in range(10_000):
        length = rng.randint(1, 40)
        s = "".join(rng.choice(alphabet) for _ in range(length))
        try:
            M.parse_smiles(s)
            parsed += 1
        except TYPED_ERRORS:
            pass
    # a few random strings should actually be valid molecules
    assert parsed > 0


def test_fuzz_valid_grammar_heavy_strings():
    # bias toward grammar characters so deeper parser states get exercised
    alphabet = "CCCCCNNOOFcno()=#123[]H/\\"
    rng = random.Random(77)
    for _ in range(2_000):
        s = "".join(rng.choice(alphabet) for _ in range(rng.randint(1, 25)))
        try:
            M.parse_smiles(s)
        except TYPED_ERRORS:
            pass


# ---------------------------------------------------------------------------
# attribute details
# ---------------------------------------------------------------------------

def test_stereo_assignments():
    def stereo_of_double(s):
        g = M.parse_smiles(s)
        orders = [b for b in g.bonds if b.order is M.BondOrder.DOUBLE]
        assert len(orders) == 1
        return orders[0].stereo

    assert stereo_of_double("F/C=C/F") is M.Stereo.E
    assert stereo_of_double("F/C=C\\F") is M.Stereo.Z
    assert stereo_of_double("F\\C=C\\F") is M.Stereo.E
    assert stereo_of_double("F\\C=C/F") is M.Stereo.Z
    assert stereo_of_double("C(/F)=C/F") is M.Stereo.Z
    assert stereo_of_double("F/C=CF") is M.Stereo.NONE
    assert stereo_of_double("FC=CF") is M.Stereo.NONE


def test_directional_bonds_are_single():
    g = M.parse_smiles("F/C=C/F")
    assert g.bonds[0].order is M.BondOrder.SINGLE
    assert g.bonds[2].order is M.BondOrder.SINGLE


def test_conjugation_convention():
    butadiene = M.parse_smiles("C=CC=C")
    by_pair = {b.endpoints: b for b in butadiene.bonds}
    assert by_pair[(1, 2)].is_conjugated          # single between two doubles
    assert not by_pair[(0, 1)].is_conjugated      # double bonds never flagged
    benzene = M.parse_smiles("c1ccccc1")
    assert all(b.is_conjugated for b in benzene.bonds)
    acetone = M.parse_smiles("CC(=O)C")
    assert not any(
        b.is_conjugated for b in acetone.bonds
        if b.order is M.BondOrder.SINGLE
    )


def test_aromatic_flags_from_lowercase_only():
    kekule = M.parse_smiles("C1=CC=CC=C1")
    assert not any(a.is_aromatic for a in kekule.atoms)
    aromatic = M.parse_smiles("c1ccccc1")
    assert all(a.is_aromatic for a in aromatic.atoms)
    assert all(b.order is M.BondOrder.AROMATIC for b in aromatic.bonds)


def test_bracket_h_override():
    g = M.parse_smiles("[CH2]C")
    assert g.atoms[0].implicit_h_count == 2
    g2 = M.parse_smiles("[C]")
    assert g2.atoms[0].implicit_h_count == 0


def test_weight_is_writing_order_invariant():
    pairs = [
        ("CCO", "OCC"),
        ("CC(C)C", "C(C)(C)C"),
        ("CC(=O)O", "OC(C)=O"),
        ("Cc1ccccc1", "c1ccccc1C"),
    ]
    for a, b in pairs:
        wa = M.molecular_weight(M.parse_smiles(a))
        wb = M.molecular_weight(M.parse_smiles(b))
        assert wa == pytest.approx(wb, abs=1e-9)


# ---------------------------------------------------------------------------
# featurization
# ---------------------------------------------------------------------------

def test_featurize_methane_full_row():
    g = M.parse_smiles("C")
    batch = M.featurize([g], M.FeatureConfig.full())
    expected = [1, 0, 0, 0, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1]
    assert batch.node_features.shape == (1, 14)
    assert list(batch.node_features[0]) == expected


def test_featurize_graph_index_and_batching():
    g1 = M.parse_smiles("C")
    g2 = M.parse_smiles("O")
    batch = M.featurize([g1, g2], M.FeatureConfig.full())
    assert list(batch.graph_index) == [0, 1]
    assert batch.num_graphs == 2


def test_featurize_h_count_only_widths():
    cfg = M.FeatureConfig.h_count_only()
    assert cfg.node_width == 5
    assert cfg.edge_width == 0
    g = M.parse_smiles("CC")
    batch = M.featurize([g], cfg)
    assert batch.node_features.shape == (2, 5)
    assert batch.edge_features.shape == (2, 0)
    assert list(batch.node_features[0]) == [0, 0, 0, 1, 0]


def test_featurize_directed_edges_mirror_features():
    g = M.parse_smiles("CC=O")
    batch = M.featurize([g], M.FeatureConfig.full())
    assert batch.edge_index.shape == (4, 2)
    assert batch.edge_features.shape == (4, 8)
    for k in range(0, 4, 2):
        assert np.array_equal(batch.edge_features[k], batch.edge_features[k + 1])
        assert batch.edge_index[k, 0] == batch.edge_index[k + 1, 1]
        assert batch.edge_index[k, 1] == batch.edge_index[k + 1, 0]


def test_featurize_one_hot_groups_sum_to_one():
    graphs = [M.parse_smiles(c.smiles) for c in CORPUS]
    batch = M.featurize(graphs, M.FeatureConfig.full())
    nf = batch.node_features
    assert np.all(nf[:, 0:4].sum(axis=1) == 1.0)      # element
    assert np.all(nf[:, 6:9].sum(axis=1) == 1.0)      # hybridization
    assert np.all(nf[:, 9:14].sum(axis=1) == 1.0)     # hydrogen count
    ef = batch.edge_features
    assert np.all(ef[:, 0:4].sum(axis=1) == 1.0)      # order
    assert np.all(ef[:, 5:8].sum(axis=1) == 1.0)      # stereo


def test_featurize_rejects_empty():
    with pytest.raises(M.EmptyBatchError):
        M.featurize([], M.FeatureConfig.full())


def test_graph_index_non_decreasing_and_surjective():
    graphs = [M.parse_smiles(s) for s in ["CCO", "C", "c1ccccc1"]]
    batch = M.featurize(graphs, M.FeatureConfig.full())
    gi = batch.graph_index
    assert np.all(np.diff(gi) >= 0)
    assert set(gi.tolist()) == {0, 1, 2}


# ---------------------------------------------------------------------------
# alkane generator
# ---------------------------------------------------------------------------

ISOMER_COUNTS = {1: 1, 2: 1, 3: 1, 4: 2, 5: 3, 6: 5, 7: 9}


def test_alkane_exact_isomer_census_small_sizes():
    for size, count in ISOMER_COUNTS.items():
        graphs = M.generate_alkanes(size, size, 50, seed=1)
        assert len(graphs) == count, f"C{size}: {len(graphs)} != {count}"


def test_alkane_structural_invariants():
    graphs = M.generate_alkanes(1, 20, 10, seed=3)
    for g in graphs:
        n = len(g.atoms)
        assert len(g.bonds) == n - 1
        assert all(a.element is M.Element.C for a in g.atoms)
        assert sum(a.implicit_h_count for a in g.atoms) == 2 * n + 2
        degree = [0] * n
        for b in g.bonds:
            degree[b.endpoints[0]] += 1
            degree[b.endpoints[1]] += 1
        assert max(degree) <= 4


def test_alkane_determinism_and_dedup():
    a = M.generate_alkanes(1, 12, 8, seed=42)
    b = M.generate_alkanes(1, 12, 8, seed=42)
    assert len(a) == len(b)
    keys_a = [M.canonical_key(g) for g in a]
    keys_b = [M.canonical_key(g) for g in b]
    assert keys_a == keys_b
    assert len(set(keys_a)) == len(keys_a)


def test_alkane_range_validation():
    with pytest.raises(M.InvalidRangeError):
        M.generate_alkanes(0, 5, 10, seed=1)
    with pytest.raises(M.InvalidRangeError):
        M.generate_alkanes(5, 4, 10, seed=1)
    with pytest.raises(M.InvalidRangeError):
        M.generate_alkanes(1, 61, 10, seed=1)


def test_molecule_generator_valences_and_dedup():
    graphs = M.generate_molecules({3: 20, 5: 40, 9: 60}, seed=5)
    keys = set()
    for g in graphs:
        keys.add(M.canonical_key(g))
        for v, atom in enumerate(g.atoms):
            order = sum(
                b.order.value for b in g.bonds if v in b.endpoints
            )
            limit = M.STANDARD_VALENCE[atom.element]
            assert order + atom.implicit_h_count <= limit + 0.01
    assert len(keys) == len(graphs)
    sizes = sorted({len(g.atoms) for g in graphs})
    assert sizes == [3, 5, 9]


def test_molecule_generator_produces_varied_hybridizations():
    graphs = M.generate_molecules({6: 100}, seed=11)
    hybs = {a.hybridization for g in graphs for a in g.atoms}
    assert M.Hybridization.SP3 in hybs
    assert M.Hybridization.SP2 in hybs


# ---------------------------------------------------------------------------
# canonical keys
# ---------------------------------------------------------------------------

def _tree_from_edges(n, edges):
    # built directly (no valence checks): census trees include degree-5 stars
    atoms = tuple(
        M.Atom(M.Element.C, 0, False, False, M.Hybridization.SP3)
        for _ in range(n)
    )
    bonds = tuple(
        M.Bond((a, b), M.BondOrder.SINGLE, False, M.Stereo.NONE)
        for a, b in edges
    )
    return M.MolGraph(atoms, bonds)


def _prufer_to_edges(seq, n):
    degree = [1] * n
    for v in seq:
        degree[v] += 1
    edges = []
    available = sorted(v for v in range(n) if degree[v] == 1)
    for v in seq:
        leaf = available.pop(0)
        edges.append((leaf, v))
        degree[leaf] -= 1
        degree[v] -= 1
        if degree[v] == 1:
            import bisect
            bisect.insort(available, v)
    last = [v for v in range(n) if degree[v] == 1]
    edges.append((last[0], last[1]))
    return edges


def _brute_isomorphic(n, edges_a, edges_b):
    set_b = {frozenset(e) for e in edges_b}
    for perm in itertools.permutations(range(n)):
        if {frozenset((perm[a], perm[b])) for a, b in edges_a} == set_b:
            return True
    return False


FREE_TREE_COUNTS = {1: 1, 2: 1, 3: 1, 4: 2, 5: 3, 6: 6, 7: 11}


def test_canonical_key_counts_match_free_tree_census():
    # distinct keys over all labeled trees must match the unlabeled census:
    # an over-merging key gives too few classes, an over-splitting one too many
    for n, expected in FREE_TREE_COUNTS.items():
        keys = set()
        if n == 1:
            keys.add(M.canonical_key(_tree_from_edges(1, [])))
        elif n == 2:
            keys.add(M.canonical_key(_tree_from_edges(2, [(0, 1)])))
        else:
            for seq in itertools.product(range(n), repeat=n - 2):
                edges = _prufer_to_edges(seq, n)
                keys.add(M.canonical_key(_tree_from_edges(n, edges)))
        assert len(keys) == expected, f"n={n}: {len(keys)} classes"


def test_canonical_key_equality_iff_isomorphic_up_to_six_nodes():
    for n in range(2, 7):
        groups: dict[str, list] = {}
        seqs = ([()] if n == 2 else itertools.product(range(n), repeat=n - 2))
        for seq in seqs:
            edges = (_prufer_to_edges(list(seq), n) if n > 2 else [(0, 1)])
            key = M.canonical_key(_tree_from_edges(n, edges))
            groups.setdefault(key, []).append(edges)
        # same key -> isomorphic to the group representative
        for key, members in groups.items():
            rep = members[0]
            for other in members[1:8]:
                assert _brute_isomorphic(n, rep, other)
        # different keys -> not isomorphic
        reps = [members[0] for members in groups.values()]
        for a, b in itertools.combinations(reps, 2):
            assert not _brute_isomorphic(n, a, b)


def test_canonical_key_labeled_molecules():
    key = lambda s: M.canonical_key(M.parse_smiles(s))
    assert key("CCO") == key("OCC")
    assert key("CCO") != key("COC")
    assert key("CC=C") == key("C=CC")
    assert key("CC=C") != key("CCC")
    assert key("CC(C)C") == key("C(C)(C)C")
    assert key("CCN") != key("CCO")


def test_canonical_key_centroid_symmetry():
    # P3 written from either end encodes identically
    assert (M.canonical_key(_tree_from_edges(3, [(0, 1), (1, 2)]))
            == M.canonical_key(_tree_from_edges(3, [(2, 1), (1, 0)])))


def test_canonical_key_rejects_cycles():
    g = M.parse_smiles("C1CC1")
    with pytest.raises(M.NotATreeError):
        M.canonical_key(g)


# ---------------------------------------------------------------------------
# SMILES emission round trip
# ---------------------------------------------------------------------------

def test_tree_to_smiles_roundtrip_alkanes():
    for g in M.generate_alkanes(1, 15, 6, seed=9):
        s = M.tree_to_smiles(g)
        g2 = M.parse_smiles(s)
        assert M.canonical_key(g2) == M.canonical_key(g)
        assert M.molecular_weight(g2) == pytest.approx(
            M.molecular_weight(g), abs=1e-9)


def test_tree_to_smiles_roundtrip_mixed_molecules():
    for g in M.generate_molecules({4: 30, 7: 30}, seed=13):
        s = M.tree_to_smiles(g)
        g2 = M.parse_smiles(s)
        assert M.canonical_key(g2) == M.canonical_key(g)
        assert M.molecular_weight(g2) == pytest.approx(
            M.molecular_weight(g), abs=1e-9)
