"""Finite element core: meshes, quadrature, assembly, boundary conditions.

Supported elements are 2-node bars (LINE2), 4-node plane-strain
quadrilaterals (QUAD4) and 8-node hexahedra (HEX8), all with full 2-point
Gauss quadrature per direction.  Displacement dofs are numbered
node-major: dof = node * dim + component.  All loads are dead loads on
the reference configuration.
"""

from __future__ import annotations

import enum
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

_G = 1.0 / np.sqrt(3.0)


class ElementType(enum.Enum):
    LINE2 = "LINE2"
    QUAD4 = "QUAD4"
    HEX8 = "HEX8"

    @property
    def dim(self) -> int:
        return {"LINE2": 1, "QUAD4": 2, "HEX8": 3}[self.value]

    @property
    def nodes_per_element(self) -> int:
        return {"LINE2": 2, "QUAD4": 4, "HEX8": 8}[self.value]


# parent-element vertex coordinates, matching the connectivity order
_VERTS = {
    ElementType.LINE2: np.array([[-1.0], [1.0]]),
    ElementType.QUAD4: np.array([[-1.0, -1.0], [1.0, -1.0], [1.0, 1.0], [-1.0, 1.0]]),
    ElementType.HEX8: np.array([
        [-1.0, -1.0, -1.0], [1.0, -1.0, -1.0], [1.0, 1.0, -1.0], [-1.0, 1.0, -1.0],
        [-1.0, -1.0, 1.0], [1.0, -1.0, 1.0], [1.0, 1.0, 1.0], [-1.0, 1.0, 1.0]]),
}

# faces a traction can act on, as local node indices
FACE_NODES = {
    ElementType.LINE2: ((0,), (1,)),
    ElementType.QUAD4: ((0, 1), (1, 2), (2, 3), (3, 0)),
    ElementType.HEX8: ((0, 3, 2, 1), (4, 5, 6, 7), (0, 1, 5, 4),
                       (1, 2, 6, 5), (2, 3, 7, 6), (3, 0, 4, 7)),
}


def shape_functions(etype: ElementType, xi: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """N (nper,) and dN/dxi (nper, dim) at one parent-space point."""
    verts = _VERTS[etype]
    terms = 1.0 + verts * xi  # (nper, dim)
    n = np.prod(terms, axis=1) / 2.0 ** etype.dim
    dn = np.empty_like(verts)
    for j in range(etype.dim):
        others = np.prod(np.delete(terms, j, axis=1), axis=1)
        dn[:, j] = verts[:, j] * others / 2.0 ** etype.dim
    return n, dn


def gauss_points(dim: int) -> tuple[np.ndarray, np.ndarray]:
    """Tensor-product 2-point Gauss rule: points (nqp, dim), weights (nqp,)."""
    pts_1d = np.array([-_G, _G])
    grids = np.meshgrid(*([pts_1d] * dim), indexing="ij")
    pts = np.stack([g.ravel() for g in grids], axis=1)
    return pts, np.ones(pts.shape[0])


@dataclass
class Mesh:
    """Reference-configuration mesh.

    `area` is the bar cross-section for LINE2 meshes and the out-of-plane
    thickness for QUAD4; HEX8 ignores it.  It scales every volume and
    boundary integral.  Named node and face sets are optional targeting
    handles for boundary conditions.
    """

    nodes: np.ndarray
    elements: np.ndarray
    etype: ElementType
    area: float = 1.0
    nodesets: dict = field(default_factory=dict)
    facesets: dict = field(default_factory=dict)

    def __post_init__(self):
        self.nodes = np.ascontiguousarray(self.nodes, dtype=float).reshape(-1, self.etype.dim)
        self.elements = np.ascontiguousarray(self.elements, dtype=np.int64).reshape(
            -1, self.etype.nodes_per_element)
        if self.elements.size and (self.elements.min() < 0 or self.elements.max() >= len(self.nodes)):
            raise ValueError("element connectivity references missing nodes")
        if self.area <= 0.0:
            raise ValueError("area must be positive")
        self._quad = None

    @property
    def dim(self) -> int:
        return self.etype.dim

    @property
    def n_nodes(self) -> int:
        return self.nodes.shape[0]

    @property
    def n_elements(self) -> int:
        return self.elements.shape[0]

    @property
    def n_dofs(self) -> int:
        return self.n_nodes * self.dim

    def quadrature(self) -> "Quadrature":
        if self._quad is None:
            self._quad = Quadrature(self)
        return self._quad


class Quadrature:
    """Per-mesh cache of shape values, gradients and scaled weights.

    weights already carry det(J), the Gauss weight and the section
    area/thickness, so `sum(weights)` is the mesh volume measure.
    """

    def __init__(self, mesh: Mesh):
        etype = mesh.etype
        dim, nper = etype.dim, etype.nodes_per_element
        pts, w = gauss_points(dim)
        nqp = pts.shape[0]
        self.n = np.empty((nqp, nper))
        dn = np.empty((nqp, nper, dim))
        for q in range(nqp):
            self.n[q], dn[q] = shape_functions(etype, pts[q])
        coords = mesh.nodes[mesh.elements]  # (nel, nper, dim)
        # J_jk = d x_j / d xi_k at each (element, qp)
        jac = np.einsum("eaj,qak->eqjk", coords, dn)
        det = np.linalg.det(jac)
        bad = np.argwhere(det <= 0.0)
        if bad.size:
            e, q = bad[0]
            raise ValueError(f"element {e} has non-positive jacobian at qp {q}")
        jinv = np.linalg.inv(jac)
        self.dndx = np.einsum("qak,eqkj->eqaj", dn, jinv)
        scale = mesh.area if dim < 3 else 1.0
        self.weights = det * w[None, :] * scale
        self.nqp = nqp
        self.mesh = mesh

    @property
    def total_points(self) -> int:
        return self.mesh.n_elements * self.nqp

    def volume(self) -> float:
        return float(self.weights.sum())


def gradient_field(mesh: Mesh, u: np.ndarray) -> np.ndarray:
    """(nel, nqp, d, d) gradients of a nodal vector field, G_ij = dv_i/dX_j.

    Works for the displacement u and for the displacement-like multiplier
    field alike; both carry dim components per node.
    """
    quad = mesh.quadrature()
    u_el = u.reshape(mesh.n_nodes, mesh.dim)[mesh.elements]  # (nel, nper, d)
    return np.einsum("eai,eqaj->eqij", u_el, quad.dndx)


def divergence_rhs(mesh: Mesh, tensor_qp: np.ndarray) -> np.ndarray:
    """Assemble R[(a,i)] = integral A_ij dN_a/dX_j for a qp tensor field."""
    quad = mesh.quadrature()
    contrib = np.einsum("eq,eqij,eqaj->eai", quad.weights, tensor_qp, quad.dndx)
    out = np.zeros((mesh.n_nodes, mesh.dim))
    np.add.at(out, mesh.elements, contrib)
    return out.ravel()


def stiffness_scalar(mesh: Mesh, mu0: float = 1.0) -> sp.csr_matrix:
    """Scaled Laplacian K[a,b] = mu0 * integral dN_a . dN_b dV."""
    quad = mesh.quadrature()
    k_el = np.einsum("eq,eqaj,eqbj->eab", mu0 * quad.weights, quad.dndx, quad.dndx)
    nper = mesh.etype.nodes_per_element
    rows = np.repeat(mesh.elements, nper, axis=1).ravel()
    cols = np.tile(mesh.elements, (1, nper)).ravel()
    k = sp.coo_matrix((k_el.ravel(), (rows, cols)),
                      shape=(mesh.n_nodes, mesh.n_nodes)).tocsr()
    k.sum_duplicates()
    return k


def stiffness_vector(mesh: Mesh, mu0: float = 1.0) -> sp.csr_matrix:
    """Scaled vector Laplacian: the scalar matrix acting per component.

    The same matrix drives both linear systems of the alternating solver.
    """
    return sp.kron(stiffness_scalar(mesh, mu0), sp.identity(mesh.dim, format="csr"),
                   format="csr")


# -- boundary conditions ----------------------------------------------


def _collect_dirichlet(triples, mesh: Mesh, label: str) -> tuple[np.ndarray, np.ndarray]:
    seen: dict[int, float] = {}
    for node, comp, value in triples:
        node, comp = int(node), int(comp)
        if not 0 <= node < mesh.n_nodes:
            raise ValueError(f"{label} node {node} outside mesh")
        if not 0 <= comp < mesh.dim:
            raise ValueError(f"{label} component {comp} outside dimension {mesh.dim}")
        dof = node * mesh.dim + comp
        if dof in seen and seen[dof] != float(value):
            raise ValueError(f"conflicting {label} values at node {node} component {comp}")
        seen[dof] = float(value)
    if not seen:
        return np.empty(0, dtype=np.int64), np.empty(0)
    dofs = np.array(sorted(seen), dtype=np.int64)
    return dofs, np.array([seen[d] for d in dofs])


@dataclass
class BoundaryConditions:
    """Dead loads and prescribed fields for one solve.

    dirichlet        : (node, component, value) triples for u.
    dirichlet_lambda : same shape for the multiplier field; None means
                       the default of zero wherever u is prescribed.
    tractions        : (global-node-id tuple naming a face, traction
                       vector) pairs; LINE2 faces are single nodes and
                       the traction acts on the bar cross-section.
    point_loads      : (node, force vector) pairs.
    body_force       : force per unit reference volume, shape (dim,) or
                       one row per element.
    """

    dirichlet: list = field(default_factory=list)
    dirichlet_lambda: list | None = None
    tractions: list = field(default_factory=list)
    point_loads: list = field(default_factory=list)
    body_force: np.ndarray | None = None

    def fixed_dofs(self, mesh: Mesh) -> tuple[np.ndarray, np.ndarray]:
        """Sorted u dof ids and values; duplicate dofs must agree."""
        return _collect_dirichlet(self.dirichlet, mesh, "dirichlet")

    def lambda_fixed_dofs(self, mesh: Mesh) -> tuple[np.ndarray, np.ndarray]:
        """Multiplier constraints; by default u's pattern with value 0."""
        if self.dirichlet_lambda is not None:
            return _collect_dirichlet(self.dirichlet_lambda, mesh, "dirichlet_lambda")
        dofs, _ = self.fixed_dofs(mesh)
        return dofs, np.zeros(dofs.size)

    def external_force(self, mesh: Mesh) -> np.ndarray:
        """Dead-load vector on displacement dofs."""
        f = np.zeros((mesh.n_nodes, mesh.dim))
        if self.body_force is not None:
            b = np.asarray(self.body_force, dtype=float)
            quad = mesh.quadrature()
            if b.ndim == 1:
                contrib = np.einsum("eq,qa,i->eai", quad.weights, quad.n,
                                    b.reshape(mesh.dim))
            else:
                contrib = np.einsum("eq,qa,ei->eai", quad.weights, quad.n,
                                    b.reshape(mesh.n_elements, mesh.dim))
            np.add.at(f, mesh.elements, contrib)
        for face, traction in self.tractions:
            face = tuple(int(n) for n in np.atleast_1d(face))
            t = np.asarray(traction, dtype=float).reshape(mesh.dim)
            for node, share in _face_shares(mesh, face):
                f[node] += share * t
        for node, force in self.point_loads:
            f[int(node)] += np.asarray(force, dtype=float).reshape(mesh.dim)
        return f.ravel()


def _face_shares(mesh: Mesh, face: tuple[int, ...]):
    """(node, integral of its shape function over the face) pairs."""
    coords = mesh.nodes[list(face)]
    if mesh.dim == 1:
        if len(face) != 1:
            raise ValueError("LINE2 faces are single nodes")
        yield face[0], mesh.area
    elif mesh.dim == 2:
        if len(face) != 2:
            raise ValueError("QUAD4 faces are 2-node edges")
        length = float(np.linalg.norm(coords[1] - coords[0]))
        for node in face:
            yield node, 0.5 * length * mesh.area
    else:
        if len(face) != 4:
            raise ValueError("HEX8 faces are 4-node quads")
        pts, w = gauss_points(2)
        verts = _VERTS[ElementType.QUAD4]
        for q in range(pts.shape[0]):
            terms = 1.0 + verts * pts[q]
            n = np.prod(terms, axis=1) / 4.0
            dn = np.empty((4, 2))
            for j in range(2):
                dn[:, j] = verts[:, j] * np.prod(np.delete(terms, j, axis=1), axis=1) / 4.0
            tang = dn.T @ coords  # (2, 3)
            da = float(np.linalg.norm(np.cross(tang[0], tang[1])))
            for a, node in enumerate(face):
                yield node, w[q] * n[a] * da


# -- constrained linear algebra -----------------------------------------


def free_dofs(n_total: int, fixed: np.ndarray) -> np.ndarray:
    mask = np.ones(n_total, dtype=bool)
    mask[fixed] = False
    return np.nonzero(mask)[0]


def reduce_system(k: sp.spmatrix, rhs: np.ndarray, fixed: np.ndarray,
                  values: np.ndarray) -> tuple[sp.csr_matrix, np.ndarray, np.ndarray]:
    """Eliminate prescribed dofs; returns (K_ff, rhs_f, free index array)."""
    k = k.tocsr()
    free = free_dofs(k.shape[0], fixed)
    rhs_f = rhs[free].copy()
    if fixed.size and np.any(values != 0.0):
        rhs_f -= k[free][:, fixed] @ values
    return k[free][:, free].tocsr(), rhs_f, free


def _singular_error(k_ff: sp.spmatrix, context: str) -> ValueError:
    n = k_ff.shape[0]
    detail = ""
    if 0 < n <= 2000:
        w = np.linalg.eigvalsh(k_ff.toarray())
        tol = max(1e-12, 1e-10 * abs(w).max())
        detail = f" ({int(np.sum(np.abs(w) <= tol))} near-zero modes)"
    return ValueError(
        f"singular {context} matrix{detail}; check that boundary conditions "
        f"suppress every rigid mode")


def factorize(k_ff: sp.csr_matrix, context: str = "stiffness"):
    """Sparse LU with an informative error when the operator is singular.

    SuperLU happily factors a semidefinite matrix into a near-zero pivot
    instead of failing, so the U diagonal is checked explicitly.
    """
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", category=spla.MatrixRankWarning)
            lu = spla.splu(k_ff.tocsc())
    except RuntimeError as err:
        raise _singular_error(k_ff, context) from err
    pivots = np.abs(lu.U.diagonal())
    if pivots.size and pivots.min() <= 1e-13 * max(pivots.max(), 1e-300):
        raise _singular_error(k_ff, context)
    return lu


def expand_solution(n_total: int, free: np.ndarray, x_free: np.ndarray,
                    fixed: np.ndarray, values: np.ndarray) -> np.ndarray:
    out = np.zeros(n_total)
    out[free] = x_free
    if fixed.size:
        out[fixed] = values
    return out


# -- structured meshes ---------------------------------------------------


def line_mesh(length: float, n_elements: int, area: float = 1.0) -> Mesh:
    """Uniform bar on [0, length]."""
    nodes = np.linspace(0.0, length, n_elements + 1)
    elements = np.stack([np.arange(n_elements), np.arange(1, n_elements + 1)], axis=1)
    return Mesh(nodes, elements, ElementType.LINE2, area=area)


def rect_mesh(lx: float, ly: float, nx: int, ny: int, thickness: float = 1.0) -> Mesh:
    """Structured QUAD4 grid on [0,lx] x [0,ly], x-fastest node order."""
    xs = np.linspace(0.0, lx, nx + 1)
    ys = np.linspace(0.0, ly, ny + 1)
    xg, yg = np.meshgrid(xs, ys, indexing="xy")
    nodes = np.stack([xg.ravel(), yg.ravel()], axis=1)
    elems = []
    for iy in range(ny):
        for ix in range(nx):
            n0 = iy * (nx + 1) + ix
            elems.append([n0, n0 + 1, n0 + nx + 2, n0 + nx + 1])
    return Mesh(nodes, np.array(elems), ElementType.QUAD4, area=thickness)


def box_mesh(lx: float, ly: float, lz: float, nx: int, ny: int, nz: int) -> Mesh:
    """Structured HEX8 grid on [0,lx] x [0,ly] x [0,lz]."""
    xs = np.linspace(0.0, lx, nx + 1)
    ys = np.linspace(0.0, ly, ny + 1)
    zs = np.linspace(0.0, lz, nz + 1)
    nodes = np.array([(x, y, z) for z in zs for y in ys for x in xs])
    nxy = (nx + 1) * (ny + 1)

    def nid(ix, iy, iz):
        return iz * nxy + iy * (nx + 1) + ix

    elems = []
    for iz in range(nz):
        for iy in range(ny):
            for ix in range(nx):
                elems.append([nid(ix, iy, iz), nid(ix + 1, iy, iz),
                              nid(ix + 1, iy + 1, iz), nid(ix, iy + 1, iz),
                              nid(ix, iy, iz + 1), nid(ix + 1, iy, iz + 1),
                              nid(ix + 1, iy + 1, iz + 1), nid(ix, iy + 1, iz + 1)])
    return Mesh(nodes, np.array(elems), ElementType.HEX8)


# -- mesh files ----------------------------------------------------------

_MAGIC = "# dd-mesh v1"


def save_mesh(mesh: Mesh, path) -> None:
    lines = [_MAGIC,
             f"dim={mesh.dim} etype={mesh.etype.value}",
             f"nodes {mesh.n_nodes}"]
    for row in mesh.nodes:
        lines.append(" ".join(repr(float(x)) for x in row))
    lines.append(f"elements {mesh.n_elements}")
    for row in mesh.elements:
        lines.append(" ".join(str(int(n)) for n in row))
    for name, ids in mesh.nodesets.items():
        lines.append(f"nodeset {name} {len(ids)}")
        lines.append(" ".join(str(int(n)) for n in ids))
    for name, faces in mesh.facesets.items():
        lines.append(f"faceset {name} {len(faces)}")
        for face in faces:
            lines.append(" ".join(str(int(n)) for n in face))
    Path(path).write_text("\n".join(lines) + "\n")


def load_mesh(path, area: float = 1.0) -> Mesh:
    """Parse a mesh file; the section area/thickness comes from the caller."""
    path = Path(path)
    raw = path.read_text().splitlines()
    if not raw or raw[0].strip() != _MAGIC:
        raise ValueError(f"{path}:1: missing magic line '{_MAGIC}'")
    # (line number, text) pairs with comments and blanks dropped
    body = [(i, ln.strip()) for i, ln in enumerate(raw[1:], start=2)
            if ln.strip() and not (ln.lstrip().startswith("#"))]
    if not body:
        raise ValueError(f"{path}:2: missing header line")
    ln0, header_line = body[0]
    header = dict(tok.split("=", 1) for tok in header_line.split() if "=" in tok)
    for key in ("dim", "etype"):
        if key not in header:
            raise ValueError(f"{path}:{ln0}: header field '{key}' missing")
    try:
        etype = ElementType(header["etype"])
    except ValueError:
        raise ValueError(f"{path}:{ln0}: unknown element type '{header['etype']}'") from None
    if header["dim"] != str(etype.dim):
        raise ValueError(f"{path}:{ln0}: dim={header['dim']} contradicts {etype.value}")

    pos = 1

    def take(expect: str) -> tuple[int, list[str]]:
        nonlocal pos
        if pos >= len(body):
            raise ValueError(f"{path}: missing '{expect}' section")
        ln, text = body[pos]
        parts = text.split()
        pos += 1
        return ln, parts

    ln, parts = take("nodes")
    if parts[0] != "nodes" or len(parts) != 2:
        raise ValueError(f"{path}:{ln}: expected 'nodes <count>'")
    n_nodes = int(parts[1])
    nodes = np.empty((n_nodes, etype.dim))
    for i in range(n_nodes):
        ln, parts = take("node line")
        try:
            nodes[i] = [float(x) for x in parts]
        except ValueError:
            raise ValueError(f"{path}:{ln}: malformed node coordinates") from None

    ln, parts = take("elements")
    if parts[0] != "elements" or len(parts) != 2:
        raise ValueError(f"{path}:{ln}: expected 'elements <count>'")
    n_el = int(parts[1])
    elements = np.empty((n_el, etype.nodes_per_element), dtype=np.int64)
    for i in range(n_el):
        ln, parts = take("element line")
        try:
            elements[i] = [int(x) for x in parts]
        except ValueError:
            raise ValueError(f"{path}:{ln}: malformed element connectivity") from None

    nodesets: dict = {}
    facesets: dict = {}
    while pos < len(body):
        ln, parts = take("set block")
        if len(parts) != 3 or parts[0] not in ("nodeset", "faceset"):
            raise ValueError(f"{path}:{ln}: expected 'nodeset|faceset <name> <count>'")
        kind, name, count = parts[0], parts[1], int(parts[2])
        if kind == "nodeset":
            ids: list[int] = []
            while len(ids) < count:
                ln, parts = take("nodeset ids")
                ids.extend(int(x) for x in parts)
            if len(ids) != count:
                raise ValueError(f"{path}:{ln}: nodeset '{name}' id count mismatch")
            nodesets[name] = np.array(ids, dtype=np.int64)
        else:
            faces = []
            for _ in range(count):
                ln, parts = take("face line")
                faces.append(tuple(int(x) for x in parts))
            facesets[name] = faces
    mesh = Mesh(nodes, elements, etype, area=area,
                nodesets=nodesets, facesets=facesets)
    for name, ids in mesh.nodesets.items():
        if ids.size and (ids.min() < 0 or ids.max() >= mesh.n_nodes):
            raise ValueError(f"{path}: nodeset '{name}' references missing nodes")
    for name, faces in mesh.facesets.items():
        for face in faces:
            if any(not 0 <= n < mesh.n_nodes for n in face):
                raise ValueError(f"{path}: faceset '{name}' references missing nodes")
    return mesh
