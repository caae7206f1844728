"""Restricted SMILES parsing into attributed molecular graphs.

Supported grammar: organic-subset atoms (B C N O P S F Cl Br I), aromatic
lowercase atoms (b c n o p s), bracket atoms with chirality (@/@@), H count
and charge, bonds ``- = # :``, branches, and ring closures (digits and %nn).
Isotopes, wildcards, stereo bonds (/ \\) and dot-disconnections are outside
the grammar and raise a positioned parse error. Aromaticity is syntactic
(lowercase atoms / ':' bonds); ring membership comes from bridge analysis of
the final graph, never from chemical perception.

Node/edge categorical features follow a pinned OGB-compatible schema (see
``AtomFeatureSchema`` / ``BondFeatureSchema``).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

__all__ = [
    "SmilesParseError",
    "AtomFeatureSchema",
    "BondFeatureSchema",
    "DrugGraph",
    "parse_smiles",
    "molecular_weight",
    "filter_drugs",
]


class SmilesParseError(ValueError):
    """Parse failure; carries the byte offset of the offending token."""

    def __init__(self, message: str, position: int):
        super().__init__(f"offset {position}: {message}")
        self.position = position
        self.reason = message


# -- element tables ------------------------------------------------------------

ORGANIC_SUBSET = {"B", "C", "N", "O", "P", "S", "F", "Cl", "Br", "I"}
AROMATIC_SUBSET = {"b", "c", "n", "o", "p", "s"}

ATOMIC_NUMBER = {"H": 1, "B": 5, "C": 6, "N": 7, "O": 8, "F": 9,
                 "P": 15, "S": 16, "Cl": 17, "Br": 35, "I": 53}

# standard atomic weights (g/mol), conventional values
ATOMIC_WEIGHT = {1: 1.008, 5: 10.81, 6: 12.011, 7: 14.007, 8: 15.999, 9: 18.998,
                 15: 30.974, 16: 32.06, 17: 35.45, 35: 79.904, 53: 126.904}

# normal valences, ascending; implicit H fills up to the smallest that fits
DEFAULT_VALENCES = {"B": (3,), "C": (4,), "N": (3, 5), "O": (2,), "P": (3, 5),
                    "S": (2, 4, 6), "F": (1,), "Cl": (1,), "Br": (1,), "I": (1,)}

# valence electrons of the neutral atom (group number), for lone-pair counts
VALENCE_ELECTRONS = {"B": 3, "C": 4, "N": 5, "O": 6, "F": 7,
                     "P": 5, "S": 6, "Cl": 7, "Br": 7, "I": 7}

_BOND_ORDER = {"-": 1.0, "=": 2.0, "#": 3.0, ":": 1.5}


# -- feature schema --------------------------------------------------------------


@dataclass(frozen=True)
class AtomFeatureSchema:
    """Slot layout and vocabulary sizes of the 9-dim categorical atom features.

    Slots, in order: atomic number, total degree (heavy neighbors + Hs),
    formal charge, chirality tag, hydrogen count, radical electrons,
    hybridization, aromaticity flag, in-ring flag. Values outside a slot's
    enumerated range map to its trailing "misc" index.
    """

    slot_names = ("atomic_num", "degree", "formal_charge", "chirality",
                  "num_hydrogens", "radical_electrons", "hybridization",
                  "is_aromatic", "is_in_ring")
    vocab_sizes = (119, 12, 12, 4, 10, 6, 6, 2, 2)

    CHIRALITY_UNSPECIFIED = 0
    CHIRALITY_CW = 1          # @@
    CHIRALITY_CCW = 2         # @
    CHIRALITY_OTHER = 3
    HYBRIDIZATIONS = ("SP", "SP2", "SP3", "SP3D", "SP3D2")


@dataclass(frozen=True)
class BondFeatureSchema:
    """Slot layout of the 3-dim categorical bond features.

    Slots: bond type (single/double/triple/aromatic/misc), stereo
    (always "none" in this grammar), conjugation flag.
    """

    slot_names = ("bond_type", "stereo", "is_conjugated")
    vocab_sizes = (5, 6, 2)

    TYPE_SINGLE, TYPE_DOUBLE, TYPE_TRIPLE, TYPE_AROMATIC, TYPE_MISC = range(5)
    STEREO_NONE = 0


ATOM_SCHEMA = AtomFeatureSchema()
BOND_SCHEMA = BondFeatureSchema()


@dataclass
class DrugGraph:
    """Molecular graph with categorical features and mirrored directed edges."""

    drug_id: str
    node_features: np.ndarray        # (n_atoms, 9) ints
    edge_index: list                 # directed (u, v) pairs, both directions
    edge_features: np.ndarray        # (n_directed_edges, 3) ints

    @property
    def n_atoms(self) -> int:
        return int(self.node_features.shape[0])

    @property
    def n_bonds(self) -> int:
        return len(self.edge_index) // 2

    def to_json_dict(self) -> dict:
        return {
            "drug_id": self.drug_id,
            "nodes": self.node_features.tolist(),
            "edges": [[int(u), int(v)] + self.edge_features[i].tolist()
                      for i, (u, v) in enumerate(self.edge_index)],
        }


# -- tokenizer -------------------------------------------------------------------

_TOK_ATOM = "atom"
_TOK_BOND = "bond"
_TOK_OPEN = "open"
_TOK_CLOSE = "close"
_TOK_RING = "ring"


@dataclass
class _Atom:
    symbol: str                 # capitalized element symbol
    aromatic: bool
    charge: int = 0
    chirality: int = AtomFeatureSchema.CHIRALITY_UNSPECIFIED
    explicit_h: Optional[int] = None     # None: compute implicit Hs
    position: int = 0
    hydrogens: int = 0
    radicals: int = 0
    in_ring: bool = False
    hybridization: str = "SP3"


def _tokenize(text: str):
    """Yield (kind, payload, byte offset) tokens or raise a positioned error."""
    i, n = 0, len(text)
    while i < n:
        ch = text[i]
        if ch == "[":
            j = text.find("]", i + 1)
            if j < 0:
                raise SmilesParseError("unterminated bracket atom", i)
            yield _TOK_ATOM, _parse_bracket(text[i + 1:j], i), i
            i = j + 1
        elif ch in "-=#:":
            yield _TOK_BOND, ch, i
            i += 1
        elif ch == "(":
            yield _TOK_OPEN, None, i
            i += 1
        elif ch == ")":
            yield _TOK_CLOSE, None, i
            i += 1
        elif ch == "%":
            if i + 2 >= n or not (text[i + 1].isdigit() and text[i + 2].isdigit()):
                raise SmilesParseError("'%' must be followed by two digits", i)
            yield _TOK_RING, int(text[i + 1:i + 3]), i
            i += 3
        elif ch.isdigit():
            yield _TOK_RING, int(ch), i
            i += 1
        elif ch.isupper():
            two = text[i:i + 2]
            if two in ("Cl", "Br"):
                yield _TOK_ATOM, _Atom(two, aromatic=False, position=i), i
                i += 2
            elif ch in ORGANIC_SUBSET:
                yield _TOK_ATOM, _Atom(ch, aromatic=False, position=i), i
                i += 1
            else:
                raise SmilesParseError(f"unknown atom symbol {two!r}", i)
        elif ch in AROMATIC_SUBSET:
            yield _TOK_ATOM, _Atom(ch.upper(), aromatic=True, position=i), i
            i += 1
        elif ch in "/\\":
            raise SmilesParseError("stereo bonds are outside the supported grammar", i)
        elif ch == ".":
            raise SmilesParseError("dot-disconnected structures are not supported", i)
        elif ch == "*":
            raise SmilesParseError("wildcard atoms are not supported", i)
        else:
            raise SmilesParseError(f"unexpected character {ch!r}", i)


def _parse_bracket(body: str, offset: int) -> _Atom:
    """Parse the inside of a [...] atom: element, @/@@, Hn, charge."""
    pos = offset + 1
    if not body:
        raise SmilesParseError("empty bracket atom", offset)
    if body[0].isdigit():
        raise SmilesParseError("isotope labels are not supported", pos)
    i = 0
    aromatic = False
    if body[i].islower():
        if body[i] not in AROMATIC_SUBSET:
            raise SmilesParseError(f"unknown atom symbol {body[i]!r}", pos + i)
        symbol, aromatic = body[i].upper(), True
        i += 1
    else:
        sym2 = body[i:i + 2]
        if len(sym2) == 2 and sym2[1].islower() and sym2 in ORGANIC_SUBSET:
            symbol = sym2
            i += 2
        elif body[i] in ORGANIC_SUBSET:
            symbol = body[i]
            i += 1
        else:
            raise SmilesParseError(f"unknown atom symbol {body[i]!r}", pos + i)

    chirality = AtomFeatureSchema.CHIRALITY_UNSPECIFIED
    if body[i:i + 2] == "@@":
        chirality = AtomFeatureSchema.CHIRALITY_CW
        i += 2
    elif body[i:i + 1] == "@":
        chirality = AtomFeatureSchema.CHIRALITY_CCW
        i += 1

    hcount = 0
    if body[i:i + 1] == "H":
        i += 1
        digits = ""
        while i < len(body) and body[i].isdigit():
            digits += body[i]
            i += 1
        hcount = int(digits) if digits else 1

    charge = 0
    if body[i:i + 1] in ("+", "-"):
        sign = 1 if body[i] == "+" else -1
        run = 1
        i += 1
        if i < len(body) and body[i].isdigit():
            digits = ""
            while i < len(body) and body[i].isdigit():
                digits += body[i]
                i += 1
            charge = sign * int(digits)
        else:
            while i < len(body) and body[i] == body[i - 1]:
                run += 1
                i += 1
            charge = sign * run

    if i != len(body):
        raise SmilesParseError(f"unexpected bracket content {body[i:]!r}", pos + i)
    return _Atom(symbol, aromatic=aromatic, charge=charge, chirality=chirality,
                 explicit_h=hcount, position=offset)


# -- parser ----------------------------------------------------------------------


@dataclass
class _Bond:
    u: int
    v: int
    symbol: Optional[str]       # None: default bond, resolved after parsing
    position: int
    order: float = 1.0
    aromatic: bool = False
    in_ring: bool = False
    conjugated: bool = False


def parse_smiles(text: str, drug_id: str = "") -> DrugGraph:
    """Parse a SMILES string into a featurized :class:`DrugGraph`.

    Raises :class:`SmilesParseError` (with byte offset) on anything outside
    the supported grammar, on structural errors (unbalanced parentheses,
    unmatched ring closures, self-loops, duplicate bonds), and on valence
    overflow of non-aromatic organic-subset atoms.
    """
    if not isinstance(text, str):
        raise SmilesParseError("input is not a string", 0)
    if not text:
        raise SmilesParseError("empty SMILES", 0)

    atoms: list[_Atom] = []
    bonds: list[_Bond] = []
    bond_lookup: set[tuple[int, int]] = set()
    anchor: Optional[int] = None
    pending_bond: Optional[tuple[str, int]] = None
    branch_stack: list[Optional[int]] = []
    open_rings: dict[int, tuple[int, Optional[str], int]] = {}

    def add_bond(u: int, v: int, symbol: Optional[str], position: int) -> None:
        if u == v:
            raise SmilesParseError("ring closure bonds an atom to itself", position)
        key = (min(u, v), max(u, v))
        if key in bond_lookup:
            raise SmilesParseError("duplicate bond between the same atoms", position)
        bond_lookup.add(key)
        bonds.append(_Bond(u, v, symbol, position))

    for kind, payload, pos in _tokenize(text):
        if kind == _TOK_ATOM:
            idx = len(atoms)
            atoms.append(payload)
            if anchor is not None:
                symbol = pending_bond[0] if pending_bond else None
                add_bond(anchor, idx, symbol, pos)
            elif pending_bond:
                raise SmilesParseError("bond symbol with no preceding atom",
                                       pending_bond[1])
            pending_bond = None
            anchor = idx
        elif kind == _TOK_BOND:
            if pending_bond:
                raise SmilesParseError("two consecutive bond symbols", pos)
            if anchor is None:
                raise SmilesParseError("bond symbol with no preceding atom", pos)
            pending_bond = (payload, pos)
        elif kind == _TOK_OPEN:
            if anchor is None:
                raise SmilesParseError("branch with no preceding atom", pos)
            if pending_bond:
                raise SmilesParseError("bond symbol before a branch opening", pos)
            branch_stack.append(anchor)
        elif kind == _TOK_CLOSE:
            if not branch_stack:
                raise SmilesParseError("unbalanced ')'", pos)
            if pending_bond:
                raise SmilesParseError("dangling bond symbol before ')'", pos)
            anchor = branch_stack.pop()
        elif kind == _TOK_RING:
            if anchor is None:
                raise SmilesParseError("ring-closure digit before any atom", pos)
            num = payload
            if num in open_rings:
                other, other_sym, other_pos = open_rings.pop(num)
                here_sym = pending_bond[0] if pending_bond else None
                if here_sym and other_sym and here_sym != other_sym:
                    raise SmilesParseError(
                        f"conflicting bond symbols for ring closure {num}", pos)
                add_bond(other, anchor, here_sym or other_sym, pos)
                pending_bond = None
            else:
                open_rings[num] = (anchor, pending_bond[0] if pending_bond else None, pos)
                pending_bond = None

    if branch_stack:
        raise SmilesParseError("unbalanced '(': branch never closed", len(text))
    if pending_bond:
        raise SmilesParseError("dangling bond symbol at end of input", pending_bond[1])
    if open_rings:
        num, (_, _, pos) = min(open_rings.items(), key=lambda kv: kv[1][2])
        raise SmilesParseError(f"unmatched ring closure {num}", pos)

    _annotate(atoms, bonds)
    return _featurize(atoms, bonds, drug_id)


def _adjacency(n: int, bonds: Sequence[_Bond]) -> list[list[int]]:
    adj: list[list[int]] = [[] for _ in range(n)]
    for i, b in enumerate(bonds):
        adj[b.u].append(i)
        adj[b.v].append(i)
    return adj


def _find_bridges(n: int, bonds: Sequence[_Bond]) -> set[int]:
    """Indices of bridge bonds (iterative Tarjan); non-bridges lie on cycles."""
    adj = _adjacency(n, bonds)
    disc = [-1] * n
    low = [0] * n
    bridges: set[int] = set()
    timer = 0
    for root in range(n):
        if disc[root] != -1:
            continue
        stack: list[tuple[int, int, int]] = [(root, -1, 0)]
        while stack:
            node, parent_edge, ptr = stack.pop()
            if ptr == 0:
                disc[node] = low[node] = timer
                timer += 1
            if ptr < len(adj[node]):
                stack.append((node, parent_edge, ptr + 1))
                ei = adj[node][ptr]
                if ei == parent_edge:
                    continue
                b = bonds[ei]
                nxt = b.v if b.u == node else b.u
                if disc[nxt] == -1:
                    stack.append((nxt, ei, 0))
                else:
                    low[node] = min(low[node], disc[nxt])
            else:
                if parent_edge != -1:
                    b = bonds[parent_edge]
                    par = b.v if b.u == node else b.u
                    low[par] = min(low[par], low[node])
                    if low[node] > disc[par]:
                        bridges.add(parent_edge)
    return bridges


def _annotate(atoms: list[_Atom], bonds: list[_Bond]) -> None:
    """Resolve bond orders, ring flags, hydrogens, radicals, hybridization."""
    bridges = _find_bridges(len(atoms), bonds)
    for i, b in enumerate(bonds):
        b.in_ring = i not in bridges
    for b in bonds:
        atoms[b.u].in_ring = atoms[b.u].in_ring or b.in_ring
        atoms[b.v].in_ring = atoms[b.v].in_ring or b.in_ring

    # default bonds between two aromatic atoms are aromatic only inside a ring
    for b in bonds:
        if b.symbol is None:
            aromatic = atoms[b.u].aromatic and atoms[b.v].aromatic and b.in_ring
            b.order = 1.5 if aromatic else 1.0
            b.aromatic = aromatic
        else:
            b.order = _BOND_ORDER[b.symbol]
            b.aromatic = b.symbol == ":"

    order_sum = [0.0] * len(atoms)
    degree = [0] * len(atoms)
    for b in bonds:
        order_sum[b.u] += b.order
        order_sum[b.v] += b.order
        degree[b.u] += 1
        degree[b.v] += 1

    for idx, atom in enumerate(atoms):
        valences = DEFAULT_VALENCES[atom.symbol]
        used = order_sum[idx]
        if atom.explicit_h is not None:
            atom.hydrogens = atom.explicit_h
            total = used + atom.hydrogens
            allowed = max(valences) + max(0, atom.charge)
            if total > allowed + 1e-9:
                raise SmilesParseError(
                    f"valence overflow on {atom.symbol}: {total:g} bonds exceed {allowed}",
                    atom.position)
            if atom.charge == 0:
                target = next((v for v in valences if v >= math.ceil(total - 1e-9)), None)
                atom.radicals = int(target - round(total)) if target is not None else 0
                atom.radicals = max(atom.radicals, 0)
        elif atom.aromatic:
            # aromatic ring bonds overcount plain valence; fill against the
            # lowest normal valence and never below zero
            atom.hydrogens = max(0, valences[0] - math.ceil(used - 1e-9))
        else:
            target = next((v for v in valences if v >= used - 1e-9), None)
            if target is None:
                raise SmilesParseError(
                    f"valence overflow on {atom.symbol}: bond order sum {used:g} "
                    f"exceeds {max(valences)}", atom.position)
            atom.hydrogens = int(round(target - used))

    _mark_conjugation(atoms, bonds)

    conj_atoms = {b.u for b in bonds if b.conjugated} | {b.v for b in bonds if b.conjugated}
    for idx, atom in enumerate(atoms):
        sigma = degree[idx] + atom.hydrogens
        lone_pairs = _lone_pairs(atom, order_sum[idx])
        orbitals = sigma + lone_pairs
        if atom.aromatic:
            atom.hybridization = "SP2"
        elif orbitals == 4 and lone_pairs > 0 and idx in conj_atoms:
            # a lone pair in a conjugated environment occupies a p orbital
            atom.hybridization = "SP2"
        else:
            atom.hybridization = {2: "SP", 3: "SP2", 4: "SP3", 5: "SP3D",
                                  6: "SP3D2"}.get(orbitals, "misc")


def _lone_pairs(atom: _Atom, order_sum: float) -> int:
    electrons = VALENCE_ELECTRONS[atom.symbol] - atom.charge - (order_sum + atom.hydrogens)
    return max(0, int(electrons // 2))


_CONJUGATION_ELEMENTS = {"C", "N", "O", "S"}


def _mark_conjugation(atoms: list[_Atom], bonds: list[_Bond]) -> None:
    """Flag conjugated bonds.

    At every conjugation-eligible atom (C/N/O/S) carrying a multiple bond,
    each other bond to an eligible neighbor that itself bears a multiple
    bond or a lone pair is conjugated, together with the multiple bond.
    Aromatic bonds are always conjugated.
    """
    order_sum = [0.0] * len(atoms)
    incident: list[list[int]] = [[] for _ in range(len(atoms))]
    has_multiple = [False] * len(atoms)
    for i, b in enumerate(bonds):
        order_sum[b.u] += b.order
        order_sum[b.v] += b.order
        incident[b.u].append(i)
        incident[b.v].append(i)
        if b.order > 1.0:
            has_multiple[b.u] = has_multiple[b.v] = True

    for b in bonds:
        if b.aromatic:
            b.conjugated = True

    eligible = [a.symbol in _CONJUGATION_ELEMENTS for a in atoms]
    for shared in range(len(atoms)):
        if not eligible[shared]:
            continue
        here = incident[shared]
        for ii in here:
            b1 = bonds[ii]
            if b1.order <= 1.0:
                continue
            for jj in here:
                if jj == ii:
                    continue
                b2 = bonds[jj]
                far = b2.v if b2.u == shared else b2.u
                if not eligible[far]:
                    continue
                if has_multiple[far] or _lone_pairs(atoms[far], order_sum[far]) > 0:
                    b1.conjugated = b2.conjugated = True


# -- featurization ---------------------------------------------------------------


def _clip_vocab(value: int, lo: int, hi: int, vocab: int) -> int:
    """Map value in [lo, hi] to its index, anything else to the misc slot."""
    return value - lo if lo <= value <= hi else vocab - 1


def _featurize(atoms: list[_Atom], bonds: list[_Bond], drug_id: str) -> DrugGraph:
    heavy_degree = [0] * len(atoms)
    for b in bonds:
        heavy_degree[b.u] += 1
        heavy_degree[b.v] += 1
    nodes = np.zeros((len(atoms), 9), dtype=np.int64)
    for i, a in enumerate(atoms):
        hyb = (ATOM_SCHEMA.HYBRIDIZATIONS.index(a.hybridization)
               if a.hybridization in ATOM_SCHEMA.HYBRIDIZATIONS else 5)
        nodes[i] = (
            _clip_vocab(ATOMIC_NUMBER[a.symbol], 1, 118, 119),
            _clip_vocab(heavy_degree[i] + a.hydrogens, 0, 10, 12),
            _clip_vocab(a.charge, -5, 5, 12),
            a.chirality,
            _clip_vocab(a.hydrogens, 0, 8, 10),
            _clip_vocab(a.radicals, 0, 4, 6),
            hyb,
            int(a.aromatic),
            int(a.in_ring),
        )

    bond_type = {1.0: BOND_SCHEMA.TYPE_SINGLE, 2.0: BOND_SCHEMA.TYPE_DOUBLE,
                 3.0: BOND_SCHEMA.TYPE_TRIPLE, 1.5: BOND_SCHEMA.TYPE_AROMATIC}
    edge_index: list[tuple[int, int]] = []
    feats: list[list[int]] = []
    for b in bonds:
        row = [bond_type.get(b.order, BOND_SCHEMA.TYPE_MISC),
               BOND_SCHEMA.STEREO_NONE, int(b.conjugated)]
        edge_index.append((b.u, b.v))
        feats.append(row)
        edge_index.append((b.v, b.u))
        feats.append(row)
    edge_features = (np.asarray(feats, dtype=np.int64) if feats
                     else np.zeros((0, 3), dtype=np.int64))
    return DrugGraph(drug_id=drug_id, node_features=nodes,
                     edge_index=edge_index, edge_features=edge_features)


# -- derived quantities and filtering ----------------------------------------------


def molecular_weight(graph: DrugGraph) -> float:
    """Sum of standard atomic weights, including implicit hydrogens."""
    total = 0.0
    for row in graph.node_features:
        z = int(row[0]) + 1
        h = int(row[4])
        total += ATOMIC_WEIGHT[z] + h * ATOMIC_WEIGHT[1]
    return total


def filter_drugs(drugs: Iterable[tuple[str, str]],
                 max_weight: float = 1000.0) -> tuple[list[DrugGraph], list[dict]]:
    """Parse and screen drug (id, smiles) records.

    Keeps parseable molecules with a non-empty id and molecular weight at
    most ``max_weight`` g/mol. Rejections are returned as report entries
    ``{"drug_id", "smiles", "reason"}`` -- they are data, not errors.
    """
    kept: list[DrugGraph] = []
    rejected: list[dict] = []
    seen: set[str] = set()
    for drug_id, smiles in drugs:
        drug_id = (drug_id or "").strip()
        entry = {"drug_id": drug_id, "smiles": smiles}
        if not drug_id:
            rejected.append({**entry, "reason": "empty or missing drug id"})
            continue
        if drug_id in seen:
            rejected.append({**entry, "reason": "duplicate drug id"})
            continue
        try:
            graph = parse_smiles(smiles, drug_id=drug_id)
        except SmilesParseError as exc:
            rejected.append({**entry, "reason": f"parse error: {exc}"})
            continue
        weight = molecular_weight(graph)
        if weight > max_weight:
            rejected.append({**entry, "reason": f"MW>{max_weight:g} ({weight:.2f})"})
            continue
        seen.add(drug_id)
        kept.append(graph)
    return kept, rejected
