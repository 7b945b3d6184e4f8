"""Pruning groups: connected components of the dependency graph, with
per-member index transforms.

A group is the maximal set of half nodes reachable from one another in
the dependency graph. All members prune together at a shared canonical
index. Transforms map the canonical coordinate onto each member's local
prunable indices:

* a member can cover a window of the canonical range (concat/split
  introduce offsets),
* one canonical index can expand to several local indices (flatten maps
  one channel to spatial_size features),
* grouped convolutions make runs of canonical indices atomic: whole
  channel groups must be pruned together, tracked as selection units.

Transform propagation happens during traversal so that inconsistent
channel arithmetic fails here, at analysis time, not at pruning time.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from fractions import Fraction
from math import gcd, lcm

import numpy as np

from . import ir as _ir
from .dependency import INTRA, DependencyGraph
from .errors import GroupingError, GroupruneError
from .reporting import write_csv


@dataclass(frozen=True)
class IndexTransform:
    """Affine map from the canonical group coordinate to member-local
    prunable indices.

    Canonical index k is covered iff delta <= k < delta + channels/factor;
    it maps to the factor local indices [(k-delta)*factor, (k-delta+1)*factor).
    block > 1 marks grouped-conv members whose local indices are only
    prunable in aligned runs of that length.
    """

    delta: int = 0
    factor: int = 1
    block: int = 1

    def span(self, channels: int) -> int:
        return channels // self.factor

    def apply(self, k: int, channels: int) -> tuple[int, ...]:
        if not (self.delta <= k < self.delta + self.span(channels)):
            return ()
        base = (k - self.delta) * self.factor
        return tuple(range(base, base + self.factor))

    def covers(self, k: int, channels: int) -> bool:
        return self.delta <= k < self.delta + self.span(channels)

    @property
    def variant(self) -> str:
        parts = []
        if self.delta != 0:
            parts.append(f"offset({self.delta})")
        if self.factor != 1:
            parts.append(f"expand({self.factor})")
        if self.block != 1:
            parts.append(f"group_block({self.block})")
        return "+".join(parts) if parts else "identity"


@dataclass(frozen=True)
class GroupMember:
    half: "_ir.HalfNode"
    half_index: int
    transform: IndexTransform


class Group:
    """Set of half nodes pruned simultaneously at a canonical index."""

    def __init__(self, group_id: str, members: list[GroupMember], width: int,
                 units: tuple[tuple[int, ...], ...]):
        self.group_id = group_id
        self.members = members
        self.width = width
        self.units = units
        self.fingerprint = _fingerprint(members, width)

    def member_ids(self) -> set[str]:
        return {m.half.node_id for m in self.members}

    def component_ids(self) -> list[str]:
        seen = dict.fromkeys(m.half.component_id for m in self.members)
        return list(seen)

    @property
    def has_atoms(self) -> bool:
        return any(len(u) > 1 for u in self.units)

    def unit_of(self, k: int) -> tuple[int, ...]:
        for u in self.units:
            if k in u:
                return u
        raise KeyError(k)

    def __repr__(self):
        return (f"Group({self.group_id}, width={self.width}, "
                f"members={sorted(self.member_ids())})")


def _fingerprint(members, width) -> str:
    h = hashlib.sha1()
    h.update(str(width).encode())
    for m in sorted(members, key=lambda m: m.half_index):
        t = m.transform
        h.update(f"|{m.half.node_id}:{t.delta}:{t.factor}:{t.block}".encode())
    return h.hexdigest()[:12]


# ---------------------------------------------------------------------------
# Traversal with transform propagation

# A directed step maps a member's (origin, scale) placement in the working
# coordinate to its neighbor's. Steps:
#   ("shift", d):  neighbor_local = local + d      -> (o - d*f, f)
#   ("finer", s):  neighbor indexes s-times finer  -> (o, f/s)
#   ("coarser", s): neighbor s-times coarser       -> (o, f*s)


def _apply_step(step, placement):
    kind, arg = step
    o, f = placement
    if kind == "shift":
        return (o - arg * f, f)
    if kind == "finer":
        return (o, f / arg)
    return (o, f * arg)


def _step_maps(d: DependencyGraph):
    """Directed traversal steps for every dependency edge."""
    ir = d.ir
    steps: dict[tuple[int, int], list] = {}

    def add(a, b, fwd, bwd):
        steps.setdefault((a, b), []).append(fwd)
        steps.setdefault((b, a), []).append(bwd)

    for e in ir.edges:
        src = ir.component(e.src)
        dst = ir.component(e.dst)
        a = d.index[f"{e.src}:out"]
        b = d.index[f"{e.dst}:in"]
        shift = (_ir.input_port_offset(dst, e.dst_port)
                 - _ir.output_port_offset(src, e.src_port))
        add(a, b, ("shift", shift), ("shift", -shift))
    for comp in ir.components:
        a = d.index[f"{comp.comp_id}:in"]
        b = d.index[f"{comp.comp_id}:out"]
        if d.label(a, b) != INTRA:
            continue
        if comp.kind == "flatten":
            s = comp.attrs["spatial_size"]
            add(a, b, ("finer", s), ("coarser", s))
        else:
            add(a, b, ("shift", 0), ("shift", 0))
    return steps


def _lcm_fraction(values: list[Fraction]) -> Fraction:
    num = 1
    den = 1
    for f in values:
        num = lcm(num, f.numerator)
        den = gcd(den, f.denominator)
    return Fraction(num, den)


def _as_int(x: Fraction, what: str, a: str, b: str) -> int:
    if x.denominator != 1:
        raise GroupingError(
            f"inconsistent channel arithmetic between {a} and {b}: "
            f"{what} = {x} is not an integer")
    return x.numerator


def _normalize(d: DependencyGraph, placements: dict[int, tuple]) -> tuple[int, dict[int, IndexTransform], tuple]:
    """Rebase working-coordinate placements to the canonical coordinate.

    The canonical unit is the coarsest granularity at which every member's
    placement is integer-aligned; misalignment means the group's channel
    arithmetic is inconsistent and raises.
    """
    halves = d.halves
    indices = sorted(placements)
    first = halves[indices[0]].node_id
    unit = _lcm_fraction([placements[i][1] for i in indices])
    o_min = min(placements[i][0] for i in indices)
    extent = max(placements[i][0] + halves[i].channels * placements[i][1]
                 for i in indices)
    width = _as_int((extent - o_min) / unit, "group width", first, first)

    transforms = {}
    blocks = []  # (delta, factor, span, local block) for unit merging
    for i in indices:
        o, f = placements[i]
        factor = _as_int(unit / f, f"expansion of {halves[i].node_id}",
                         first, halves[i].node_id)
        delta = _as_int((o - o_min) / unit, f"offset of {halves[i].node_id}",
                        first, halves[i].node_id)
        if halves[i].channels % factor:
            raise GroupingError(
                f"inconsistent channel arithmetic between {first} and "
                f"{halves[i].node_id}: {halves[i].channels} channels do not "
                f"split into units of {factor}")
        comp = d.ir.component(halves[i].component_id)
        block = 1
        if comp.kind == "conv2d" and comp.attrs.get("groups", 1) > 1:
            block = _ir.conv_block_size(comp)
        transforms[i] = IndexTransform(delta=delta, factor=factor,
                                       block=block if block > 1 else 1)
        if block > 1:
            span = halves[i].channels // factor
            blocks.append((delta, factor, span, block))

    units = _selection_units(width, blocks)
    return width, transforms, units


def _selection_units(width: int, blocks) -> tuple[tuple[int, ...], ...]:
    """Partition canonical indices into atomic selection units.

    Each grouped-conv member forces every canonical index touching one of
    its local channel groups to be selected together; overlapping grids
    from several members merge via union-find.
    """
    if not blocks:
        return tuple((k,) for k in range(width))
    parent = list(range(width))

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    def union(x, y):
        rx, ry = find(x), find(y)
        if rx != ry:
            parent[max(rx, ry)] = min(rx, ry)

    for delta, factor, span, block in blocks:
        n_local = span * factor
        for start in range(0, n_local, block):
            ks = [delta + local // factor
                  for local in range(start, min(start + block, n_local))]
            for k in ks[1:]:
                union(ks[0], k)
    buckets: dict[int, list[int]] = {}
    for k in range(width):
        buckets.setdefault(find(k), []).append(k)
    return tuple(tuple(sorted(v)) for _, v in sorted(buckets.items()))


def extract_groups(d: DependencyGraph, ir: "_ir.NetworkIR" = None) -> list[Group]:
    """All pruning groups of a network, in deterministic order.

    Single-pass connected components with a visited set (O(N+E)); members
    are discovered breadth-first and transforms propagate along the way,
    so an inconsistent pair fails immediately with both names.
    """
    if ir is not None and ir is not d.ir:
        raise GroupingError("dependency graph was built from a different IR")
    steps = _step_maps(d)
    halves = d.halves
    visited: set[int] = set()
    groups: list[Group] = []

    for seed in range(d.order):
        if seed in visited:
            continue
        placements = {seed: (Fraction(0), Fraction(1))}
        queue = [seed]
        while queue:
            a = queue.pop(0)
            for b in d.neighbors(a):
                for step in steps.get((a, b), []):
                    cand = _apply_step(step, placements[a])
                    if b in placements:
                        if placements[b] != cand:
                            raise GroupingError(
                                "inconsistent channel arithmetic between "
                                f"{halves[a].node_id} and {halves[b].node_id}")
                    else:
                        placements[b] = cand
                        queue.append(b)
        width, transforms, units = _normalize(d, placements)
        members = [GroupMember(halves[i], i, transforms[i])
                   for i in sorted(placements)]
        groups.append(Group(f"g{len(groups):03d}", members, width, units))
        visited.update(placements)
    return groups


# ---------------------------------------------------------------------------
# Component-level grouping matrix


class GroupingMatrix:
    """L x L boolean matrix: 1 iff two components share a pruning group.

    Derived from connected components of the dependency graph collapsed to
    component granularity; the diagonal is all ones by construction.
    """

    def __init__(self, component_ids: list[str], matrix: np.ndarray):
        self.component_ids = component_ids
        self.matrix = matrix

    def coupled(self, comp_id: str) -> list[str]:
        i = self.component_ids.index(comp_id)
        return [cid for j, cid in enumerate(self.component_ids)
                if self.matrix[i, j]]


def derive_grouping_matrix(d: DependencyGraph) -> GroupingMatrix:
    """Collapse the dependency graph to components and take connected
    components: component i couples with j iff any path joins them."""
    ir = d.ir
    n = len(ir.components)
    comp_index = {c.comp_id: i for i, c in enumerate(ir.components)}
    parent = list(range(n))

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for pair in d.labels:
        a, b = tuple(pair)
        ca = comp_index[d.halves[a].component_id]
        cb = comp_index[d.halves[b].component_id]
        ra, rb = find(ca), find(cb)
        if ra != rb:
            parent[max(ra, rb)] = min(ra, rb)

    matrix = np.zeros((n, n), dtype=np.int8)
    for i in range(n):
        for j in range(n):
            if i == j or find(i) == find(j):
                matrix[i, j] = 1
    return GroupingMatrix([c.comp_id for c in ir.components], matrix)


def export_grouping(g: GroupingMatrix, path) -> None:
    if not g.component_ids:
        raise GroupruneError("no components: nothing to export")
    header = ["component"] + g.component_ids
    rows = [[cid] + [int(x) for x in g.matrix[i]]
            for i, cid in enumerate(g.component_ids)]
    write_csv(path, header, rows)


def group_report(groups: list[Group]) -> str:
    """Human-readable listing of each group's members and transforms."""
    lines = []
    for g in groups:
        lines.append(f"group {g.group_id}  width={g.width}  "
                     f"members={len(g.members)}")
        for m in sorted(g.members, key=lambda m: m.half_index):
            lines.append(f"  {m.half.node_id:<24} channels={m.half.channels:<5} "
                         f"transform={m.transform.variant}")
        atoms = [u for u in g.units if len(u) > 1]
        if atoms:
            lines.append(f"  atomic units: {atoms}")
    return "\n".join(lines) + "\n"
