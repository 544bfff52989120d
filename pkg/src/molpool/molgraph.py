"""Molecules as hydrogen-suppressed graphs.

Covers parsing a SMILES subset (C/N/O/F organics), deriving per-atom and
per-bond attributes, featurizing batches to numeric matrices, procedural
generation of alkane and small-molecule datasets, and the exact
molecular-weight oracle.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np


class SmilesSyntaxError(ValueError):
    """Malformed input; carries the offending string position."""

    def __init__(self, message: str, position: int):
        super().__init__(f"{message} (position {position})")
        self.position = position


class UnsupportedFeatureError(ValueError):
    """Input uses SMILES constructs outside the supported subset."""

    def __init__(self, message: str, position: int):
        super().__init__(f"{message} (position {position})")
        self.position = position


class ValenceError(ValueError):
    """Bond orders plus hydrogens exceed an element's standard valence."""


class DisconnectedError(ValueError):
    """Multi-fragment input; only connected molecules are supported."""


class EmptyBatchError(ValueError):
    """featurize was given no graphs, or a graph with no atoms."""


class InvalidRangeError(ValueError):
    """Generator size range outside the supported bounds."""


class NotATreeError(ValueError):
    """Operation requires an acyclic connected graph."""


class Element(Enum):
    C = "C"
    N = "N"
    O = "O"
    F = "F"


class Hybridization(Enum):
    SP = "SP"
    SP2 = "SP2"
    SP3 = "SP3"


class BondOrder(Enum):
    SINGLE = 1.0
    DOUBLE = 2.0
    TRIPLE = 3.0
    AROMATIC = 1.5


class Stereo(Enum):
    NONE = "NONE"
    E = "E"
    Z = "Z"


STANDARD_VALENCE = {Element.C: 4, Element.N: 3, Element.O: 2, Element.F: 1}

# IUPAC 2021 abridged standard atomic weights, 3 decimals
ATOMIC_WEIGHT = {Element.C: 12.011, Element.N: 14.007,
                 Element.O: 15.999, Element.F: 18.998}
HYDROGEN_WEIGHT = 1.008


@dataclass(frozen=True)
class Atom:
    element: Element
    implicit_h_count: int
    is_aromatic: bool
    is_in_ring: bool
    hybridization: Hybridization


@dataclass(frozen=True)
class Bond:
    endpoints: tuple[int, int]
    order: BondOrder
    is_conjugated: bool
    stereo: Stereo


@dataclass(frozen=True)
class MolGraph:
    atoms: tuple[Atom, ...]
    bonds: tuple[Bond, ...]


# ---------------------------------------------------------------------------
# derived attributes (shared by the parser and the generators)
# ---------------------------------------------------------------------------

def _find_bridge_bonds(n: int, bonds: list[tuple[int, int]]) -> set[int]:
    """Bond indices that are bridges (removal disconnects); iterative DFS."""
    adj: list[list[tuple[int, int]]] = [[] for _ in range(n)]
    for bi, (a, b) in enumerate(bonds):
        adj[a].append((b, bi))
        adj[b].append((a, bi))
    disc = [-1] * n
    low = [0] * n
    bridges: set[int] = set()
    timer = 0
    for root in range(n):
        if disc[root] != -1:
            continue
        disc[root] = low[root] = timer
        timer += 1
        stack = [(root, -1, iter(adj[root]))]
        while stack:
            v, parent_edge, it = stack[-1]
            advanced = False
            for w, ei in it:
                if ei == parent_edge:
                    continue
                if disc[w] == -1:
                    disc[w] = low[w] = timer
                    timer += 1
                    stack.append((w, ei, iter(adj[w])))
                    advanced = True
                    break
                low[v] = min(low[v], disc[w])
            if not advanced:
                stack.pop()
                if stack:
                    u = stack[-1][0]
                    low[u] = min(low[u], low[v])
                    if low[v] > disc[u]:
                        bridges.add(parent_edge)
    return bridges


def _assemble(elements: list[Element], aromatic_flags: list[bool],
              explicit_h: list[int | None],
              bonds: list[tuple[int, int, BondOrder]],
              stereo_by_bond: dict[int, Stereo] | None = None) -> MolGraph:
    """Derive ring/hybridization/H attributes and build the final graph.

    explicit_h[i] = None means the hydrogen count is implicit: standard
    valence minus the (rounded) bond-order sum, clamped to zero.  The hard
    valence check counts an aromatic bond as one, so that e.g. a two-bond
    aromatic oxygen is accepted.
    """
    n = len(elements)
    seen_pairs: set[tuple[int, int]] = set()
    for a, b, _ in bonds:
        if a == b:
            raise SmilesSyntaxError("self-bond", 0)
        pair = (min(a, b), max(a, b))
        if pair in seen_pairs:
            raise SmilesSyntaxError(f"duplicate bond between atoms {a} and {b}", 0)
        seen_pairs.add(pair)

    # connectivity
    if n == 0:
        raise EmptyBatchError("graph has no atoms")
    adj: list[list[int]] = [[] for _ in range(n)]
    for bi, (a, b, _) in enumerate(bonds):
        adj[a].append(bi)
        adj[b].append(bi)
    seen = {0}
    frontier = [0]
    while frontier:
        v = frontier.pop()
        for bi in adj[v]:
            a, b, _ = bonds[bi]
            w = b if a == v else a
            if w not in seen:
                seen.add(w)
                frontier.append(w)
    if len(seen) != n:
        raise DisconnectedError(f"graph has {n - len(seen)} unreachable atoms")

    order_sum = [0.0] * n       # aromatic counts 1.5
    hard_sum = [0] * n          # aromatic counts 1
    n_double = [0] * n
    n_triple = [0] * n
    n_aromatic_bonds = [0] * n
    n_multiple = [0] * n        # double/triple/aromatic, for conjugation
    for a, b, order in bonds:
        for v in (a, b):
            order_sum[v] += order.value
            hard_sum[v] += 1 if order is BondOrder.AROMATIC else int(order.value)
            n_double[v] += order is BondOrder.DOUBLE
            n_triple[v] += order is BondOrder.TRIPLE
            n_aromatic_bonds[v] += order is BondOrder.AROMATIC
            n_multiple[v] += order is not BondOrder.SINGLE

    h_counts = []
    for v in range(n):
        valence = STANDARD_VALENCE[elements[v]]
        if explicit_h[v] is None:
            # round-half-to-even on the 1.5-per-aromatic sum
            h = max(0, valence - round(order_sum[v]))
        else:
            h = explicit_h[v]
        if hard_sum[v] + h > valence:
            raise ValenceError(
                f"atom {v} ({elements[v].value}): {hard_sum[v]} bonds + "
                f"{h} hydrogens exceed valence {valence}"
            )
        h_counts.append(h)

    bridges = _find_bridge_bonds(n, [(a, b) for a, b, _ in bonds])
    bond_in_ring = [bi not in bridges for bi in range(len(bonds))]
    atom_in_ring = [False] * n
    for bi, (a, b, _) in enumerate(bonds):
        if bond_in_ring[bi]:
            atom_in_ring[a] = atom_in_ring[b] = True

    atoms = []
    for v in range(n):
        if n_triple[v] >= 1 or n_double[v] >= 2:
            hyb = Hybridization.SP
        elif n_double[v] == 1 or n_aromatic_bonds[v] >= 1 or aromatic_flags[v]:
            hyb = Hybridization.SP2
        else:
            hyb = Hybridization.SP3
        atoms.append(Atom(elements[v], h_counts[v], aromatic_flags[v],
                          atom_in_ring[v], hyb))

    out_bonds = []
    for bi, (a, b, order) in enumerate(bonds):
        if order is BondOrder.AROMATIC:
            conj = True
        elif order is BondOrder.SINGLE:
            # both ends carry a multiple bond elsewhere
            conj = n_multiple[a] >= 1 and n_multiple[b] >= 1
        else:
            conj = False
        stereo = (stereo_by_bond or {}).get(bi, Stereo.NONE)
        out_bonds.append(Bond((a, b), order, conj, stereo))

    return MolGraph(tuple(atoms), tuple(out_bonds))


# ---------------------------------------------------------------------------
# SMILES parser
# ---------------------------------------------------------------------------

_ORGANIC = {"C": Element.C, "N": Element.N, "O": Element.O, "F": Element.F}
_AROMATIC_ORGANIC = {"c": Element.C, "n": Element.N, "o": Element.O}
_BOND_SYMBOLS = {"-": BondOrder.SINGLE, "=": BondOrder.DOUBLE,
                 "#": BondOrder.TRIPLE, ":": BondOrder.AROMATIC,
                 "/": BondOrder.SINGLE, "\\": BondOrder.SINGLE}


def _parse_bracket_atom(s: str, start: int) -> tuple[Element, bool, int, int]:
    """Parse '[...]' starting at s[start] == '['.

    Returns (element, aromatic, explicit_h, index past ']').  Only an
    element letter plus an optional hydrogen count is allowed inside.
    """
    i = start + 1
    n = len(s)
    if i >= n:
        raise SmilesSyntaxError("unterminated bracket atom", start)
    ch = s[i]
    if ch in _ORGANIC:
        element, aromatic = _ORGANIC[ch], False
    elif ch in _AROMATIC_ORGANIC:
        element, aromatic = _AROMATIC_ORGANIC[ch], True
    elif ch.isdigit():
        raise UnsupportedFeatureError("isotope labels are not supported", i)
    elif ch in "+-":
        raise UnsupportedFeatureError("charges are not supported", i)
    elif ch == "H":
        raise UnsupportedFeatureError("explicit hydrogen atoms are not supported", i)
    elif ch.isalpha():
        raise UnsupportedFeatureError(f"element '{ch}' is not supported", i)
    else:
        raise SmilesSyntaxError(f"unexpected '{ch}' in bracket atom", i)
    i += 1
    h = 0
    if i < n and s[i] == "H":
        h = 1
        i += 1
        if i < n and s[i].isdigit():
            h = int(s[i])
            i += 1
    if i >= n or s[i] != "]":
        pos = min(i, n - 1)
        if i < n and s[i] in "+-@":
            raise UnsupportedFeatureError(
                "charges and chirality marks are not supported", i)
        raise SmilesSyntaxError("expected ']' in bracket atom", pos)
    return element, aromatic, h, i + 1


def parse_smiles(smiles: str) -> MolGraph:
    """Parse a SMILES string over C/N/O/F into a MolGraph.

    Supported subset: organic-set atoms C N O F and aromatic c n o, bracket
    atoms with an explicit hydrogen count ([NH2]), bond symbols - = # : / \\,
    branches, and ring closures 1-9 / %nn.  Charges, isotopes, other
    elements, and multi-fragment input are rejected with typed errors.
    """
    if not isinstance(smiles, str):
        raise SmilesSyntaxError("input must be text", 0)
    if smiles == "":
        raise SmilesSyntaxError("empty input", 0)
    if not smiles.isascii():
        bad = next(i for i, c in enumerate(smiles) if not c.isascii())
        raise SmilesSyntaxError("non-ASCII character", bad)

    elements: list[Element] = []
    aromatic_flags: list[bool] = []
    explicit_h: list[int | None] = []
    # raw bonds keep the written symbol and orientation for stereo work
    raw_bonds: list[tuple[int, int, str | None]] = []
    prev: int | None = None
    branch_stack: list[int] = []
    pending: tuple[str, int] | None = None          # (symbol, position)
    open_rings: dict[int, tuple[int, str | None, int]] = {}

    def add_atom(element: Element, aromatic: bool, h: int | None) -> None:
        nonlocal prev, pending
        idx = len(elements)
        elements.append(element)
        aromatic_flags.append(aromatic)
        explicit_h.append(h)
        if prev is not None:
            raw_bonds.append((prev, idx, pending[0] if pending else None))
        elif pending is not None:
            raise SmilesSyntaxError("bond symbol before any atom", pending[1])
        pending = None
        prev = idx

    def close_ring(number: int, pos: int) -> None:
        nonlocal pending
        if prev is None:
            raise SmilesSyntaxError("ring closure before any atom", pos)
        sym = pending[0] if pending else None
        pending = None
        if number in open_rings:
            other, other_sym, _ = open_rings.pop(number)
            if other == prev:
                raise SmilesSyntaxError(f"ring bond {number} closes on its own atom", pos)
            if sym is not None and other_sym is not None and sym != other_sym:
                raise SmilesSyntaxError(
                    f"conflicting bond symbols on ring closure {number}", pos)
            raw_bonds.append((other, prev, sym if sym is not None else other_sym))
        else:
            open_rings[number] = (prev, sym, pos)

    i = 0
    n = len(smiles)
    while i < n:
        ch = smiles[i]
        if ch in _ORGANIC:
            add_atom(_ORGANIC[ch], False, None)
            i += 1
        elif ch in _AROMATIC_ORGANIC:
            add_atom(_AROMATIC_ORGANIC[ch], True, None)
            i += 1
        elif ch == "[":
            element, aromatic, h, i = _parse_bracket_atom(smiles, i)
            add_atom(element, aromatic, h)
        elif ch in _BOND_SYMBOLS:
            if pending is not None:
                raise SmilesSyntaxError("two bond symbols in a row", i)
            if prev is None:
                raise SmilesSyntaxError("bond symbol before any atom", i)
            pending = (ch, i)
            i += 1
        elif ch == "(":
            if prev is None:
                raise SmilesSyntaxError("branch before any atom", i)
            if pending is not None:
                raise SmilesSyntaxError("bond symbol before '('", i)
            branch_stack.append(prev)
            i += 1
        elif ch == ")":
            if not branch_stack:
                raise SmilesSyntaxError("unmatched ')'", i)
            if pending is not None:
                raise SmilesSyntaxError("dangling bond before ')'", i)
            prev = branch_stack.pop()
            i += 1
        elif ch.isdigit():
            close_ring(int(ch), i)
            i += 1
        elif ch == "%":
            if i + 2 >= n or not smiles[i + 1:i + 3].isdigit():
                raise SmilesSyntaxError("'%' needs two digits", i)
            close_ring(int(smiles[i + 1:i + 3]), i)
            i += 3
        elif ch == ".":
            raise DisconnectedError("multi-fragment SMILES ('.') is not supported")
        elif ch in "sp":
            raise UnsupportedFeatureError(f"aromatic element '{ch}' is not supported", i)
        elif ch.isalpha():
            raise UnsupportedFeatureError(f"element '{ch}' is not supported", i)
        else:
            raise SmilesSyntaxError(f"unexpected character {ch!r}", i)

    if pending is not None:
        raise SmilesSyntaxError("dangling bond at end of input", pending[1])
    if branch_stack:
        raise SmilesSyntaxError("unclosed branch", n - 1)
    if open_rings:
        number, (_, _, pos) = next(iter(open_rings.items()))
        raise SmilesSyntaxError(f"unclosed ring bond {number}", pos)
    if not elements:
        raise SmilesSyntaxError("no atoms in input", 0)

    resolved: list[tuple[int, int, BondOrder]] = []
    for a, b, sym in raw_bonds:
        if sym is None:
            implied_aromatic = aromatic_flags[a] and aromatic_flags[b]
            order = BondOrder.AROMATIC if implied_aromatic else BondOrder.SINGLE
        else:
            order = _BOND_SYMBOLS[sym]
        resolved.append((a, b, order))

    stereo_by_bond = _assign_double_bond_stereo(raw_bonds, resolved)
    return _assemble(elements, aromatic_flags, explicit_h, resolved, stereo_by_bond)


def _assign_double_bond_stereo(
        raw_bonds: list[tuple[int, int, str | None]],
        resolved: list[tuple[int, int, BondOrder]]) -> dict[int, Stereo]:
    """Map '/' and '\\' neighbor marks to E/Z on adjacent double bonds.

    A directional bond places its substituent above or below the double-bond
    axis; opposite sides give E, same side gives Z.  Written as a/b, the
    bond rises from a to b; the side of the substituent therefore depends on
    whether it was written before or after the double-bond atom.
    """
    directional = [(a, b, sym) for (a, b, sym) in raw_bonds if sym in ("/", "\\")]
    if not directional:
        return {}

    def substituent_side(x: int) -> int | None:
        # +1 above, -1 below, None if no directional bond touches x
        for a, b, sym in directional:
            if a == x:
                return 1 if sym == "/" else -1      # x/s: s above x
            if b == x:
                return -1 if sym == "/" else 1      # s/x: s below x
        return None

    out: dict[int, Stereo] = {}
    for bi, (a, b, order) in enumerate(resolved):
        if order is not BondOrder.DOUBLE:
            continue
        side_a = substituent_side(a)
        side_b = substituent_side(b)
        if side_a is None or side_b is None:
            continue
        out[bi] = Stereo.E if side_a != side_b else Stereo.Z
    return out


# ---------------------------------------------------------------------------
# featurization
# ---------------------------------------------------------------------------

_ELEMENT_INDEX = {Element.C: 0, Element.N: 1, Element.O: 2, Element.F: 3}
_HYB_INDEX = {Hybridization.SP: 0, Hybridization.SP2: 1, Hybridization.SP3: 2}
_ORDER_INDEX = {BondOrder.SINGLE: 0, BondOrder.DOUBLE: 1,
                BondOrder.TRIPLE: 2, BondOrder.AROMATIC: 3}
_STEREO_INDEX = {Stereo.NONE: 0, Stereo.E: 1, Stereo.Z: 2}


@dataclass(frozen=True)
class FeatureConfig:
    """Feature-group switches; widths follow from the enabled groups."""

    element: bool = True          # one-hot, 4
    aromatic: bool = True         # flag, 1
    ring: bool = True             # flag, 1
    hybridization: bool = True    # one-hot, 3
    h_count: bool = True          # one-hot 0..4, 5
    bond_order: bool = True       # one-hot, 4
    conjugation: bool = True      # flag, 1
    stereo: bool = True           # one-hot, 3

    @classmethod
    def full(cls) -> "FeatureConfig":
        return cls()

    @classmethod
    def h_count_only(cls) -> "FeatureConfig":
        """Hydrogen-count node features only, no edge features."""
        return cls(element=False, aromatic=False, ring=False,
                   hybridization=False, h_count=True,
                   bond_order=False, conjugation=False, stereo=False)

    @property
    def node_width(self) -> int:
        return (4 * self.element + self.aromatic + self.ring
                + 3 * self.hybridization + 5 * self.h_count)

    @property
    def edge_width(self) -> int:
        return 4 * self.bond_order + self.conjugation + 3 * self.stereo


@dataclass(frozen=True)
class FeaturizedBatch:
    node_features: np.ndarray      # [N x F_V]
    edge_index: np.ndarray         # [E x 2] directed (source, target)
    edge_features: np.ndarray      # [E x F_E]
    graph_index: np.ndarray        # [N] graph id per node, non-decreasing
    num_graphs: int


def _atom_row(atom: Atom, config: FeatureConfig) -> list[float]:
    row: list[float] = []
    if config.element:
        one_hot = [0.0] * 4
        one_hot[_ELEMENT_INDEX[atom.element]] = 1.0
        row += one_hot
    if config.aromatic:
        row.append(float(atom.is_aromatic))
    if config.ring:
        row.append(float(atom.is_in_ring))
    if config.hybridization:
        one_hot = [0.0] * 3
        one_hot[_HYB_INDEX[atom.hybridization]] = 1.0
        row += one_hot
    if config.h_count:
        one_hot = [0.0] * 5
        one_hot[min(atom.implicit_h_count, 4)] = 1.0
        row += one_hot
    return row


def _bond_row(bond: Bond, config: FeatureConfig) -> list[float]:
    row: list[float] = []
    if config.bond_order:
        one_hot = [0.0] * 4
        one_hot[_ORDER_INDEX[bond.order]] = 1.0
        row += one_hot
    if config.conjugation:
        row.append(float(bond.is_conjugated))
    if config.stereo:
        one_hot = [0.0] * 3
        one_hot[_STEREO_INDEX[bond.stereo]] = 1.0
        row += one_hot
    return row


def featurize(graphs: list[MolGraph], config: FeatureConfig) -> FeaturizedBatch:
    """Stack graphs into one batch; every bond yields two directed edges."""
    if not graphs:
        raise EmptyBatchError("no graphs to featurize")
    node_rows: list[list[float]] = []
    edge_rows: list[list[float]] = []
    edge_pairs: list[tuple[int, int]] = []
    graph_ids: list[int] = []
    offset = 0
    for gi, g in enumerate(graphs):
        if not g.atoms:
            raise EmptyBatchError(f"graph {gi} has no atoms")
        for atom in g.atoms:
            node_rows.append(_atom_row(atom, config))
            graph_ids.append(gi)
        for bond in g.bonds:
            a, b = bond.endpoints
            row = _bond_row(bond, config)
            edge_pairs.append((offset + a, offset + b))
            edge_rows.append(row)
            edge_pairs.append((offset + b, offset + a))
            edge_rows.append(row)
        offset += len(g.atoms)
    node_features = np.array(node_rows, dtype=np.float64)
    node_features = node_features.reshape(len(node_rows), config.node_width)
    edge_features = np.array(edge_rows, dtype=np.float64)
    edge_features = edge_features.reshape(len(edge_rows), config.edge_width)
    edge_index = np.array(edge_pairs, dtype=np.int64).reshape(len(edge_pairs), 2)
    return FeaturizedBatch(node_features, edge_index, edge_features,
                           np.array(graph_ids, dtype=np.int64), len(graphs))


def molecular_weight(g: MolGraph) -> float:
    """Exact mass from the frozen atomic-weight table, hydrogens included."""
    total = 0.0
    for atom in g.atoms:
        total += ATOMIC_WEIGHT[atom.element]
        total += atom.implicit_h_count * HYDROGEN_WEIGHT
    return total


# ---------------------------------------------------------------------------
# tree canonicalization
# ---------------------------------------------------------------------------

_ORDER_CHAR = {BondOrder.SINGLE: "-", BondOrder.DOUBLE: "=",
               BondOrder.TRIPLE: "#", BondOrder.AROMATIC: ":"}


def _tree_adjacency(g: MolGraph) -> list[list[tuple[int, BondOrder]]]:
    n = len(g.atoms)
    if len(g.bonds) != n - 1:
        raise NotATreeError(f"{n} atoms with {len(g.bonds)} bonds is not a tree")
    adj: list[list[tuple[int, BondOrder]]] = [[] for _ in range(n)]
    for bond in g.bonds:
        a, b = bond.endpoints
        adj[a].append((b, bond.order))
        adj[b].append((a, bond.order))
    # n-1 edges + connected <=> tree; bond count alone admits cycle+orphan
    seen = {0}
    frontier = [0]
    while frontier:
        v = frontier.pop()
        for w, _ in adj[v]:
            if w not in seen:
                seen.add(w)
                frontier.append(w)
    if len(seen) != n:
        raise NotATreeError("graph is disconnected")
    return adj


def _tree_centroids(adj: list[list[tuple[int, BondOrder]]]) -> list[int]:
    # peel leaves layer by layer; the last one or two nodes are the centers
    n = len(adj)
    if n <= 2:
        return list(range(n))
    degree = [len(a) for a in adj]
    layer = [v for v in range(n) if degree[v] == 1]
    remaining = n
    while remaining > 2:
        remaining -= len(layer)
        nxt = []
        for v in layer:
            for w, _ in adj[v]:
                degree[w] -= 1
                if degree[w] == 1:
                    nxt.append(w)
        layer = nxt
    return layer


def canonical_key(g: MolGraph) -> str:
    """Canonical encoding of a labeled tree; equal keys iff isomorphic.

    Rooted encodings are computed at the tree centroid(s) with children
    sorted recursively; bicentroidal trees take the smaller of the two
    rooted keys.  Atom elements and bond orders participate in the labels.
    """
    adj = _tree_adjacency(g)

    def encode(root: int) -> str:
        # post-order with an explicit stack; children keys sorted
        keys: dict[tuple[int, int], str] = {}
        stack: list[tuple[int, int, bool]] = [(root, -1, False)]
        while stack:
            v, parent, expanded = stack.pop()
            if not expanded:
                stack.append((v, parent, True))
                for w, _ in adj[v]:
                    if w != parent:
                        stack.append((w, v, False))
            else:
                parts = sorted(
                    _ORDER_CHAR[order] + keys[(w, v)]
                    for w, order in adj[v] if w != parent
                )
                keys[(v, parent)] = (
                    "(" + g.atoms[v].element.value + "".join(parts) + ")"
                )
        return keys[(root, -1)]

    return min(encode(root) for root in _tree_centroids(adj))


# ---------------------------------------------------------------------------
# procedural generators
# ---------------------------------------------------------------------------

def _tree_molgraph(elements: list[Element],
                   edges: list[tuple[int, int, BondOrder]]) -> MolGraph:
    return _assemble(elements, [False] * len(elements),
                     [None] * len(elements), edges)


def generate_alkanes(min_c: int, max_c: int, per_size_cap: int,
                     seed: int) -> list[MolGraph]:
    """Sample distinct alkane skeletons (trees, max degree 4) per size.

    Random growth: each new carbon attaches to a uniformly chosen existing
    carbon with free valence.  Isomers are deduplicated by canonical key;
    sampling stops at per_size_cap or when an attempt budget runs out, so
    small sizes yield their full isomer census.
    """
    if not (1 <= min_c <= max_c <= 60):
        raise InvalidRangeError(
            f"carbon range must satisfy 1 <= min <= max <= 60, got {min_c}..{max_c}"
        )
    if per_size_cap < 1:
        raise InvalidRangeError(f"per_size_cap must be >= 1, got {per_size_cap}")
    rng = np.random.default_rng(seed)
    out: list[MolGraph] = []
    for size in range(min_c, max_c + 1):
        found: dict[str, MolGraph] = {}
        budget = max(200, 20 * per_size_cap)
        for _ in range(budget):
            if len(found) >= per_size_cap:
                break
            degree = [0] * size
            edges: list[tuple[int, int, BondOrder]] = []
            for new in range(1, size):
                candidates = [v for v in range(new) if degree[v] < 4]
                host = candidates[rng.integers(len(candidates))]
                edges.append((host, new, BondOrder.SINGLE))
                degree[host] += 1
                degree[new] += 1
            g = _tree_molgraph([Element.C] * size, edges)
            key = canonical_key(g)
            if key not in found:
                found[key] = g
        out.extend(found.values())
    return out


def generate_molecules(per_size_counts: dict[int, int], seed: int,
                       double_bond_rate: float = 0.25,
                       triple_bond_rate: float = 0.05) -> list[MolGraph]:
    """Sample distinct acyclic C/N/O molecules with mixed bond orders.

    Trees are grown under per-element valence limits, then some bonds are
    promoted to double or triple where both endpoints have the spare
    valence.  Deduplicated by canonical key; deterministic per seed.
    """
    choices = [Element.C, Element.N, Element.O]
    weights = np.array([0.6, 0.25, 0.15])
    rng = np.random.default_rng(seed)
    out: list[MolGraph] = []
    for size in sorted(per_size_counts):
        want = per_size_counts[size]
        if size < 1 or want < 0:
            raise InvalidRangeError(f"bad per-size request {size}: {want}")
        found: dict[str, MolGraph] = {}
        budget = max(200, 40 * want)
        for _ in range(budget):
            if len(found) >= want:
                break
            elements = [choices[i] for i in
                        rng.choice(3, size=size, p=weights)]
            capacity = [STANDARD_VALENCE[e] for e in elements]
            used = [0] * size
            edges: list[list] = []
            ok = True
            for new in range(1, size):
                candidates = [v for v in range(new) if used[v] < capacity[v]]
                if not candidates:
                    ok = False
                    break
                host = candidates[rng.integers(len(candidates))]
                edges.append([host, new, BondOrder.SINGLE])
                used[host] += 1
                used[new] += 1
            if not ok:
                continue
            for e in edges:
                a, b, _ = e
                spare = min(capacity[a] - used[a], capacity[b] - used[b])
                r = rng.random()
                if r < triple_bond_rate and spare >= 2:
                    e[2] = BondOrder.TRIPLE
                    used[a] += 2
                    used[b] += 2
                elif r < triple_bond_rate + double_bond_rate and spare >= 1:
                    e[2] = BondOrder.DOUBLE
                    used[a] += 1
                    used[b] += 1
            g = _tree_molgraph(elements, [tuple(e) for e in edges])
            key = canonical_key(g)
            if key not in found:
                found[key] = g
        out.extend(found.values())
    return out


def tree_to_smiles(g: MolGraph) -> str:
    """Emit SMILES for an acyclic graph (generator output serialization).

    Hydrogen counts that differ from the valence default are written as
    bracket atoms so parsing recovers the exact graph.
    """
    adj = _tree_adjacency(g)
    bond_sym = {BondOrder.SINGLE: "", BondOrder.DOUBLE: "=",
                BondOrder.TRIPLE: "#", BondOrder.AROMATIC: ":"}

    def atom_text(v: int) -> str:
        atom = g.atoms[v]
        order_sum = sum(order.value for _, order in adj[v])
        default_h = max(0, STANDARD_VALENCE[atom.element] - round(order_sum))
        symbol = atom.element.value.lower() if atom.is_aromatic else atom.element.value
        if atom.implicit_h_count == default_h:
            return symbol
        if atom.implicit_h_count == 0:
            return f"[{symbol}]"
        return f"[{symbol}H{atom.implicit_h_count}]"

    def emit(v: int, parent: int) -> str:
        children = [(w, order) for w, order in adj[v] if w != parent]
        text = atom_text(v)
        for w, order in children[:-1]:
            text += "(" + bond_sym[order] + emit(w, v) + ")"
        if children:
            w, order = children[-1]
            text += bond_sym[order] + emit(w, v)
        return text

    return emit(0, -1)
