"""Composite discontinuous finite-element spaces on substructured meshes.

Every substructure i carries P1 nodal unknowns on the closure of its own
region.  Interface values are therefore duplicated: at a membrane node both
touching substructures own an independent value ("side i" and "side j"), and
potentials jump across the interface.  For the preconditioner each
substructure additionally holds local *trace copies* of the neighbouring
sides' interface values; the copies alias the neighbour's global unknowns in
the assembled problem and become independent local degrees of freedom in the
broken substructure spaces.

The primal space is described by equivalence classes of constraint rows:

* vertex classes   -- pointwise identification of all copies of one side's
  value at a subdomain vertex,
* edge classes     -- equal line-integral means of all copies of one side
  along a junction edge (endpoint nodes excluded, they are vertex dofs),
* face classes     -- equal surface-integral means of the two copies of one
  side over an interface patch (only in the full variant).

All means are mass-weighted; every row's weights sum to one.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import ConstraintError
from .geometry import InterfaceTopology, Mesh

__all__ = [
    "PrimalVariant",
    "DofMap",
    "PrimalClass",
    "ConstraintRow",
    "ConstraintSet",
    "SubstructureConstraintCounts",
    "build_composite_space",
    "build_primal_constraints",
    "classify_dofs",
]


class PrimalVariant(str, Enum):
    """Choice of primal continuity: vertices+edges+faces or vertices+edges."""

    VEF = "vef"
    VE = "ve"

    @classmethod
    def parse(cls, value) -> "PrimalVariant":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise ConstraintError(f"unknown primal variant {value!r}") from None


@dataclass(frozen=True)
class DofMap:
    """Numbering of global (assembled) and local (broken) degrees of freedom.

    Global unknowns are the *own* nodal values of every substructure; a mesh
    node shared by m substructures carries m distinct global unknowns (one per
    side).  Trace copies exist only locally and map onto the owning side's
    global index.

    Local ordering per substructure: interior own dofs, interface own dofs,
    then trace copies grouped by (ascending) neighbour id.  The concatenation
    of all local interface blocks is the stacked *broken interface* used by
    the preconditioner; ``gamma_global`` lists the assembled interface
    unknowns in their compact solver order.
    """

    n_substructures: int
    n_global: int
    own_nodes: list          # per sub: sorted node ids of its closure
    own_offset: np.ndarray   # (N+2,) prefix sums of len(own_nodes)
    n_interior: np.ndarray   # per sub
    n_local: np.ndarray      # per sub, own + copies
    own_local_pos: list      # per sub: local position of k-th sorted own node
    copy_start: dict         # (i, j) -> local position of i's copies of side j
    copy_nodes: dict         # (i, j) -> node ids (sorted) of that copy block
    local_to_global: list    # per sub: (n_local,) global ids (copies alias owner)
    gamma_global: np.ndarray  # assembled interface dofs in compact order
    full_to_gamma: np.ndarray  # (n_global,) position in gamma or -1
    bro_ptr: np.ndarray      # (N+2,) slices of the stacked broken interface
    bro_holder: np.ndarray
    bro_side: np.ndarray
    bro_node: np.ndarray
    bro_is_own: np.ndarray
    bro_gamma: np.ndarray    # assembled dof backing each broken interface dof
    bro_group: np.ndarray    # copy-group id per broken dof (same node & side)
    multiplicity: np.ndarray  # per mesh node

    @property
    def n_gamma(self) -> int:
        return len(self.gamma_global)

    @property
    def n_broken(self) -> int:
        return len(self.bro_holder)

    def own_positions(self, sub: int, nodes) -> np.ndarray:
        """Local positions of the given own nodes of ``sub``."""
        return self.own_local_pos[sub][np.searchsorted(self.own_nodes[sub], nodes)]

    def copy_positions(self, sub: int, side: int, nodes) -> np.ndarray:
        """Local positions of ``sub``'s trace copies of ``side`` at ``nodes``."""
        block = self.copy_nodes[(sub, side)]
        return self.copy_start[(sub, side)] + np.searchsorted(block, nodes)

    def global_own(self, sub: int, nodes) -> np.ndarray:
        return self.own_offset[sub] + np.searchsorted(self.own_nodes[sub], nodes)

    def gamma_slice(self, sub: int) -> slice:
        return slice(self.bro_ptr[sub], self.bro_ptr[sub + 1])

    def local_interface_count(self, sub: int) -> int:
        return self.n_local[sub] - self.n_interior[sub]

    def copy_group_sizes(self) -> np.ndarray:
        return np.bincount(self.bro_group)


def build_composite_space(mesh: Mesh, topo: InterfaceTopology) -> DofMap:
    """Construct the dof numbering for a substructured mesh."""
    nsub = mesh.n_substructures
    mult = topo.multiplicity

    own_nodes, n_interior, own_local_pos = [], [], []
    for i in range(nsub):
        nodes = np.unique(mesh.tets[mesh.tet_sub == i])
        own_nodes.append(nodes)
        on_iface = mult[nodes] >= 2
        n_interior.append(int((~on_iface).sum()))
        # order: interior nodes, then interface nodes (node order inside each)
        pos = np.empty(len(nodes), dtype=np.int64)
        pos[~on_iface] = np.arange(n_interior[-1])
        pos[on_iface] = n_interior[-1] + np.arange(int(on_iface.sum()))
        own_local_pos.append(pos)

    own_offset = np.zeros(nsub + 1, dtype=np.int64)
    own_offset[1:] = np.cumsum([len(n) for n in own_nodes])
    n_global = int(own_offset[-1])

    copy_start, copy_nodes = {}, {}
    n_local = np.zeros(nsub, dtype=np.int64)
    for i in range(nsub):
        n_local[i] = len(own_nodes[i])
    for i in range(nsub):
        for j in topo.neighbors(i):
            fg = topo.face_group(i, j)
            copy_start[(i, j)] = int(n_local[i])
            copy_nodes[(i, j)] = fg.nodes
            n_local[i] += len(fg.nodes)

    local_to_global = []
    for i in range(nsub):
        l2g = np.empty(n_local[i], dtype=np.int64)
        l2g[own_local_pos[i]] = own_offset[i] + np.arange(len(own_nodes[i]))
        for j in topo.neighbors(i):
            start = copy_start[(i, j)]
            nodes = copy_nodes[(i, j)]
            l2g[start:start + len(nodes)] = own_offset[j] + np.searchsorted(
                own_nodes[j], nodes
            )
        local_to_global.append(l2g)

    # assembled interface dofs in sub-major, node-sorted order
    gamma_parts, bro = [], {k: [] for k in ("holder", "side", "node", "own")}
    for i in range(nsub):
        iface_nodes = own_nodes[i][mult[own_nodes[i]] >= 2]
        gamma_parts.append(own_offset[i] + np.searchsorted(own_nodes[i], iface_nodes))
        bro["holder"].append(np.full(len(iface_nodes), i, np.int64))
        bro["side"].append(np.full(len(iface_nodes), i, np.int64))
        bro["node"].append(iface_nodes)
        bro["own"].append(np.ones(len(iface_nodes), bool))
        for j in topo.neighbors(i):
            nodes = copy_nodes[(i, j)]
            bro["holder"].append(np.full(len(nodes), i, np.int64))
            bro["side"].append(np.full(len(nodes), j, np.int64))
            bro["node"].append(nodes)
            bro["own"].append(np.zeros(len(nodes), bool))

    gamma_global = np.concatenate(gamma_parts) if gamma_parts else np.empty(0, np.int64)
    full_to_gamma = np.full(n_global, -1, dtype=np.int64)
    full_to_gamma[gamma_global] = np.arange(len(gamma_global))

    bro_holder = np.concatenate(bro["holder"]) if bro["holder"] else np.empty(0, np.int64)
    bro_side = np.concatenate(bro["side"]) if bro["side"] else np.empty(0, np.int64)
    bro_node = np.concatenate(bro["node"]) if bro["node"] else np.empty(0, np.int64)
    bro_is_own = np.concatenate(bro["own"]) if bro["own"] else np.empty(0, bool)

    bro_ptr = np.zeros(nsub + 1, dtype=np.int64)
    for i in range(nsub):
        n_iface_own = len(own_nodes[i]) - n_interior[i]
        bro_ptr[i + 1] = bro_ptr[i] + n_iface_own + sum(
            len(copy_nodes[(i, j)]) for j in topo.neighbors(i)
        )

    side_offsets = own_offset[bro_side]
    bro_gamma_full = side_offsets + np.array(
        [
            np.searchsorted(own_nodes[s], x)
            for s, x in zip(bro_side, bro_node)
        ],
        dtype=np.int64,
    ) if len(bro_side) else np.empty(0, np.int64)
    bro_gamma = full_to_gamma[bro_gamma_full] if len(bro_side) else np.empty(0, np.int64)

    _, bro_group = (
        np.unique(bro_gamma, return_inverse=True)
        if len(bro_gamma)
        else (None, np.empty(0, np.int64))
    )

    return DofMap(
        n_substructures=nsub,
        n_global=n_global,
        own_nodes=own_nodes,
        own_offset=own_offset,
        n_interior=np.array(n_interior, dtype=np.int64),
        n_local=n_local,
        own_local_pos=own_local_pos,
        copy_start=copy_start,
        copy_nodes=copy_nodes,
        local_to_global=local_to_global,
        gamma_global=gamma_global,
        full_to_gamma=full_to_gamma,
        bro_ptr=bro_ptr,
        bro_holder=bro_holder,
        bro_side=bro_side,
        bro_node=bro_node,
        bro_is_own=bro_is_own,
        bro_gamma=bro_gamma,
        bro_group=bro_group,
        multiplicity=mult,
    )


@dataclass(frozen=True)
class ConstraintRow:
    """One averaging functional over local dofs of one substructure."""

    sub: int
    local_dofs: np.ndarray
    weights: np.ndarray  # sum to 1


@dataclass(frozen=True)
class PrimalClass:
    """A shared coarse unknown: all member rows/values must coincide."""

    kind: str           # "vertex" | "edge" | "face"
    side: int           # whose trace is averaged / identified
    entity: tuple       # (node,) or junction subs or face pair
    rows: tuple = ()    # ConstraintRow per holder (edge/face classes)
    members: tuple = () # (sub, local dof) pairs (vertex classes)


@dataclass(frozen=True)
class SubstructureConstraintCounts:
    face_rows: int
    edge_rows: int
    vertex_points: int

    @property
    def total(self) -> int:
        return self.face_rows + self.edge_rows + self.vertex_points


@dataclass(frozen=True)
class ConstraintSet:
    variant: PrimalVariant
    classes: tuple
    n_substructures: int

    @property
    def coarse_dim(self) -> int:
        return len(self.classes)

    def rows_of(self, sub: int):
        """(class index, ConstraintRow) pairs hosted by one substructure."""
        out = []
        for ci, cl in enumerate(self.classes):
            for row in cl.rows:
                if row.sub == sub:
                    out.append((ci, row))
        return out

    def vertex_members_of(self, sub: int):
        """(class index, local dof) pairs of vertex classes in one substructure."""
        out = []
        for ci, cl in enumerate(self.classes):
            for s, dof in cl.members:
                if s == sub:
                    out.append((ci, dof))
        return out

    def counts(self, sub: int) -> SubstructureConstraintCounts:
        fr = er = 0
        vnodes = set()
        for cl in self.classes:
            for row in cl.rows:
                if row.sub == sub:
                    if cl.kind == "face":
                        fr += 1
                    else:
                        er += 1
            if cl.kind == "vertex" and any(s == sub for s, _ in cl.members):
                vnodes.add(cl.entity)
        return SubstructureConstraintCounts(fr, er, len(vnodes))


def _holds_copies(topo, holder, side, nodes) -> bool:
    fg = topo.face_group(holder, side)
    if fg is None:
        return False
    pos = np.searchsorted(fg.nodes, nodes)
    pos = np.clip(pos, 0, len(fg.nodes) - 1)
    return bool(np.all(fg.nodes[pos] == nodes))


def build_primal_constraints(
    dofmap: DofMap, topo: InterfaceTopology, variant=PrimalVariant.VEF
) -> ConstraintSet:
    """Enumerate the primal classes of the requested variant."""
    variant = PrimalVariant.parse(variant)
    classes = []

    vertex_set = set(int(v) for v in topo.subdomain_vertices)

    for x in sorted(vertex_set):
        for side in topo.node_subs(x):
            side = int(side)
            members = [(side, int(dofmap.own_positions(side, np.array([x]))[0]))]
            for holder in topo.node_subs(x):
                holder = int(holder)
                if holder == side:
                    continue
                if _holds_copies(topo, holder, side, np.array([x])):
                    members.append(
                        (holder, int(dofmap.copy_positions(holder, side, np.array([x]))[0]))
                    )
            if len(members) >= 2:
                classes.append(
                    PrimalClass(kind="vertex", side=side, entity=(x,), members=tuple(members))
                )

    for je in topo.junctions:
        keep = ~np.isin(je.nodes, np.fromiter(vertex_set, np.int64, len(vertex_set)))
        nodes = je.nodes[keep]
        if len(nodes) == 0:
            continue  # too coarse: every junction node is already a vertex dof
        w = je.node_weights[keep]
        total = w.sum()
        if total <= 0:
            raise ConstraintError(f"degenerate junction edge {je.subs} (zero measure)")
        w = w / total
        for side in je.subs:
            rows = [ConstraintRow(side, dofmap.own_positions(side, nodes), w)]
            for holder in je.subs:
                if holder == side:
                    continue
                if _holds_copies(topo, holder, side, nodes):
                    rows.append(
                        ConstraintRow(holder, dofmap.copy_positions(holder, side, nodes), w)
                    )
            classes.append(
                PrimalClass(kind="edge", side=side, entity=je.subs, rows=tuple(rows))
            )

    if variant == PrimalVariant.VEF:
        for fg in topo.faces:
            if fg.area <= 0:
                raise ConstraintError(
                    f"degenerate interface patch ({fg.sub_i},{fg.sub_j}) (zero measure)"
                )
            w = fg.node_weights / fg.area
            for side, other in ((fg.sub_i, fg.sub_j), (fg.sub_j, fg.sub_i)):
                rows = (
                    ConstraintRow(side, dofmap.own_positions(side, fg.nodes), w),
                    ConstraintRow(other, dofmap.copy_positions(other, side, fg.nodes), w),
                )
                classes.append(
                    PrimalClass(
                        kind="face", side=side, entity=(fg.sub_i, fg.sub_j), rows=rows
                    )
                )

    return ConstraintSet(
        variant=variant, classes=tuple(classes), n_substructures=dofmap.n_substructures
    )


def classify_dofs(
    dofmap: DofMap, topo: InterfaceTopology, variant=PrimalVariant.VEF
) -> list:
    """Per-substructure counts of hosted face/edge rows and vertex points."""
    cset = build_primal_constraints(dofmap, topo, variant)
    return [cset.counts(i) for i in range(dofmap.n_substructures)]
