"""Phase-space datasets and the penalty metric.

A dataset is a finite collection of (strain, stress) tuples in one of
three pairings: deformation gradient with first Piola-Kirchhoff stress
(FP), right Cauchy-Green tensor with second Piola-Kirchhoff stress (CS),
or small-strain tensor with Cauchy stress (EPS).  The solvers measure the
distance between a local state and a tuple with the weighted metric

    dist^2 = mu0/2 * |d_strain|^2  +  1/(2 mu0) * |d_stress|^2

where |.| is the Frobenius norm and mu0 a positive modulus-like scale.
Tensors are stored as full row-major d*d component vectors even for the
symmetric pairings.
"""

from __future__ import annotations

import enum
import itertools
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from .tensors import angular_momentum_defect

_SYM_TOL = 1e-10
_ANGULAR_TOL = 1e-8


class PairingKind(enum.Enum):
    """Which strain/stress measures a dataset pairs."""

    FP = "FP"
    CS = "CS"
    EPS_SIGMA = "EPS"

    @property
    def symmetric(self) -> bool:
        """Both members of a tuple are symmetric tensors."""
        return self is not PairingKind.FP

    def strain_reference(self, dim: int) -> np.ndarray:
        """Zero-deformation strain value (identity for FP/CS, zero for EPS)."""
        if self is PairingKind.EPS_SIGMA:
            return np.zeros((dim, dim))
        return np.eye(dim)


@dataclass(frozen=True, eq=False)
class DataTuple:
    """One strain-stress sample; `uid` is its position in the owning set."""

    strain: np.ndarray
    stress: np.ndarray
    uid: int = 0


@dataclass
class LocalState:
    """Recovered state at one integration point."""

    element: int
    qp: int
    strain: np.ndarray
    stress: np.ndarray
    assigned: int | None = None


def _check_pair(kind: PairingKind, strain: np.ndarray, stress: np.ndarray, where: str) -> None:
    if not (np.all(np.isfinite(strain)) and np.all(np.isfinite(stress))):
        raise ValueError(f"{where}: non-finite component")
    if kind.symmetric:
        for name, t in (("strain", strain), ("stress", stress)):
            if np.linalg.norm(t - t.T) > _SYM_TOL * max(1.0, np.linalg.norm(t)):
                raise ValueError(f"{where}: {name} tensor is not symmetric")
    else:
        if angular_momentum_defect(strain, stress) > _ANGULAR_TOL:
            raise ValueError(f"{where}: FP pair violates angular momentum balance")


class DataSet:
    """Immutable collection of data tuples with a frozen metric scale.

    Internally the tuples live in two (n, d*d) arrays so that searches
    vectorize; `DataTuple` views are materialized on demand.  Treat
    instances as read-only: solvers cache derived tables.
    """

    def __init__(self, kind: PairingKind, dim: int, strains, stresses,
                 mu0: float | None = None, validate: bool = True):
        if dim not in (1, 2, 3):
            raise ValueError(f"unsupported dimension {dim}")
        strains = np.ascontiguousarray(strains, dtype=float).reshape(-1, dim * dim)
        stresses = np.ascontiguousarray(stresses, dtype=float).reshape(-1, dim * dim)
        if strains.shape != stresses.shape:
            raise ValueError("strain/stress arrays disagree in length")
        if strains.shape[0] == 0:
            raise ValueError("dataset must contain at least one tuple")
        self.kind = kind
        self.dim = dim
        self.strains = strains
        self.stresses = stresses
        if validate:
            for i in range(strains.shape[0]):
                _check_pair(kind, self.strain_matrix(i), self.stress_matrix(i), f"tuple {i}")
        if mu0 is None:
            mu0 = auto_mu0(self)
        if not (mu0 > 0.0 and np.isfinite(mu0)):
            raise ValueError(f"mu0 must be positive and finite, got {mu0}")
        self.mu0 = float(mu0)

    # -- basic container protocol ------------------------------------

    def __len__(self) -> int:
        return self.strains.shape[0]

    def __getitem__(self, uid: int) -> DataTuple:
        n = len(self)
        if not -n <= uid < n:
            raise IndexError(uid)
        uid = uid % n
        d = self.dim
        return DataTuple(self.strains[uid].reshape(d, d).copy(),
                         self.stresses[uid].reshape(d, d).copy(), uid)

    def __iter__(self):
        return (self[i] for i in range(len(self)))

    def strain_matrix(self, uid: int) -> np.ndarray:
        return self.strains[uid].reshape(self.dim, self.dim)

    def stress_matrix(self, uid: int) -> np.ndarray:
        return self.stresses[uid].reshape(self.dim, self.dim)

    def with_mu0(self, mu0: float) -> "DataSet":
        """Same tuples under a different metric scale."""
        return DataSet(self.kind, self.dim, self.strains, self.stresses,
                       mu0=mu0, validate=False)

    @classmethod
    def from_pairs(cls, kind: PairingKind, dim: int,
                   pairs: Iterable[tuple[np.ndarray, np.ndarray]],
                   mu0: float | None = None) -> "DataSet":
        strains, stresses = [], []
        for e, s in pairs:
            strains.append(np.asarray(e, dtype=float).reshape(-1))
            stresses.append(np.asarray(s, dtype=float).reshape(-1))
        return cls(kind, dim, np.array(strains), np.array(stresses), mu0=mu0)


def auto_mu0(dataset=None, *, kind: PairingKind | None = None,
             strains: np.ndarray | None = None, stresses: np.ndarray | None = None,
             dim: int | None = None) -> float:
    """Calibrate the metric scale from the data cloud itself.

    Returns RMS stress magnitude over RMS strain deviation from the
    zero-deformation reference.  Degenerate clouds (all strains at the
    reference, or vanishing stresses) cannot be calibrated and raise.
    """
    if dataset is not None:
        kind, dim = dataset.kind, dataset.dim
        strains, stresses = dataset.strains, dataset.stresses
    ref = kind.strain_reference(dim).reshape(-1)
    dev = strains - ref
    rms_strain = np.sqrt(np.mean(np.sum(dev * dev, axis=1)))
    rms_stress = np.sqrt(np.mean(np.sum(stresses * stresses, axis=1)))
    scale = max(1.0, float(np.sqrt(np.mean(np.sum(strains * strains, axis=1)))))
    if rms_strain <= 100.0 * np.finfo(float).eps * scale:
        raise ValueError("cannot calibrate mu0: all strains sit at the reference state")
    if rms_stress <= 0.0:
        raise ValueError("cannot calibrate mu0: dataset carries no stress")
    return float(rms_stress / rms_strain)


# -- penalty metric ----------------------------------------------------


def local_penalty(strain, stress, tup: DataTuple, mu0: float) -> float:
    """Metric distance squared between a state and one data tuple."""
    de = np.asarray(strain, dtype=float) - tup.strain
    ds = np.asarray(stress, dtype=float) - tup.stress
    return 0.5 * mu0 * float(np.sum(de * de)) + 0.5 / mu0 * float(np.sum(ds * ds))


def penalty_many(strains: np.ndarray, stresses: np.ndarray,
                 assigned: np.ndarray, dataset: DataSet) -> np.ndarray:
    """Vectorized local penalties for states against their assigned tuples."""
    dd = dataset.dim ** 2
    e = strains.reshape(-1, dd) - dataset.strains[assigned]
    s = stresses.reshape(-1, dd) - dataset.stresses[assigned]
    mu0 = dataset.mu0
    return 0.5 * mu0 * np.sum(e * e, axis=1) + 0.5 / mu0 * np.sum(s * s, axis=1)


def global_penalty(strains: np.ndarray, stresses: np.ndarray, weights: np.ndarray,
                   assigned: np.ndarray, dataset: DataSet) -> float:
    """Integration-weighted sum of local penalties over all states."""
    assigned = np.asarray(assigned)
    if np.any(assigned < 0):
        raise ValueError("global penalty requires every state to be assigned")
    values = penalty_many(strains, stresses, assigned, dataset)
    return float(np.dot(np.asarray(weights, dtype=float).reshape(-1), values))


def nearest(strain, stress, dataset: DataSet, index: "GridIndex | None" = None) -> int:
    """Id of the tuple closest to one state (ties break to the lowest id)."""
    e = np.asarray(strain, dtype=float).reshape(1, -1)
    s = np.asarray(stress, dtype=float).reshape(1, -1)
    if index is not None:
        return int(index.query(e[0], s[0]))
    return int(nearest_many(e, s, dataset)[0])


def nearest_many(strains: np.ndarray, stresses: np.ndarray, dataset: DataSet,
                 chunk: int = 4096) -> np.ndarray:
    """Brute-force nearest tuple ids for a batch of states.

    `chunk` only bounds the temporary distance matrix; results do not
    depend on it.  np.argmin keeps the lowest id on exact ties.
    """
    dd = dataset.dim ** 2
    qe = np.ascontiguousarray(strains, dtype=float).reshape(-1, dd)
    qs = np.ascontiguousarray(stresses, dtype=float).reshape(-1, dd)
    mu0 = dataset.mu0
    we, ws = 0.5 * mu0, 0.5 / mu0
    te, ts = dataset.strains, dataset.stresses
    # squared-norm expansion: |q - t|^2 = |q|^2 - 2 q.t + |t|^2
    t_sq = we * np.einsum("ij,ij->i", te, te) + ws * np.einsum("ij,ij->i", ts, ts)
    out = np.empty(qe.shape[0], dtype=np.int64)
    for lo in range(0, qe.shape[0], max(1, chunk)):
        hi = min(lo + max(1, chunk), qe.shape[0])
        cross = we * (qe[lo:hi] @ te.T) + ws * (qs[lo:hi] @ ts.T)
        out[lo:hi] = np.argmin(t_sq[None, :] - 2.0 * cross, axis=1)
    return out


class GridIndex:
    """Uniform-grid bucketing over the strain components.

    Optional accelerator for `nearest`; query results are identical to
    the brute-force scan because cells are visited in growing Chebyshev
    rings until the remaining strain-distance bound exceeds the best
    candidate distance.
    """

    def __init__(self, dataset: DataSet, cells_per_axis: int | None = None):
        self.dataset = dataset
        pts = dataset.strains
        n, q = pts.shape
        if cells_per_axis is None:
            cells_per_axis = max(2, int(round(n ** (1.0 / q))))
        lo = pts.min(axis=0)
        hi = pts.max(axis=0)
        span = hi - lo
        self.active = span > 0.0
        h = np.where(self.active, span / cells_per_axis, 1.0)
        self.lo, self.h = lo, h
        self.h_min = float(h[self.active].min()) if np.any(self.active) else 1.0
        self.buckets: dict[tuple, np.ndarray] = {}
        keys = np.floor((pts - lo) / h).astype(np.int64)
        keys = np.where(self.active, keys, 0)
        order = np.lexsort(keys.T[::-1])
        sorted_keys = keys[order]
        boundaries = np.nonzero(np.any(np.diff(sorted_keys, axis=0) != 0, axis=1))[0] + 1
        for group in np.split(order, boundaries):
            # group holds original tuple ids; all share one cell key
            self.buckets[tuple(keys[group[0]])] = np.sort(group)

    def _cell_of(self, strain_flat: np.ndarray) -> np.ndarray:
        c = np.floor((strain_flat - self.lo) / self.h).astype(np.int64)
        return np.where(self.active, c, 0)

    def query(self, strain_flat: np.ndarray, stress_flat: np.ndarray) -> int:
        ds = self.dataset
        mu0 = ds.mu0
        we, ws = 0.5 * mu0, 0.5 / mu0
        center = self._cell_of(strain_flat)
        free = np.nonzero(self.active)[0]
        best_id, best_d2 = -1, np.inf
        k = 0
        while True:
            if best_id >= 0 and k >= 1:
                bound = we * ((k - 1) * self.h_min) ** 2
                if bound > best_d2:
                    break
            hit_any = False
            for offs in itertools.product(range(-k, k + 1), repeat=free.size):
                if k > 0 and max(abs(o) for o in offs) != k:
                    continue
                cell = center.copy()
                cell[free] += offs
                ids = self.buckets.get(tuple(cell))
                if ids is None:
                    continue
                hit_any = True
                de = ds.strains[ids] - strain_flat
                dss = ds.stresses[ids] - stress_flat
                d2 = we * np.einsum("ij,ij->i", de, de) + ws * np.einsum("ij,ij->i", dss, dss)
                j = int(np.argmin(d2))
                # strict < keeps the lowest id on ties across rings
                if d2[j] < best_d2 or (d2[j] == best_d2 and ids[j] < best_id):
                    best_id, best_d2 = int(ids[j]), float(d2[j])
            k += 1
            if not hit_any and best_id < 0 and k > 10_000:
                raise RuntimeError("grid search failed to locate any tuple")
        return best_id


# -- refinement --------------------------------------------------------


def median_nn_spacing(dataset: DataSet, chunk: int = 1024) -> float:
    """Median metric distance from each tuple to its nearest neighbour."""
    n = len(dataset)
    if n < 2:
        raise ValueError("need at least two tuples to measure spacing")
    mu0 = dataset.mu0
    we, ws = 0.5 * mu0, 0.5 / mu0
    te, ts = dataset.strains, dataset.stresses
    t_sq = we * np.einsum("ij,ij->i", te, te) + ws * np.einsum("ij,ij->i", ts, ts)
    mins = np.empty(n)
    for lo in range(0, n, chunk):
        hi = min(lo + chunk, n)
        d2 = t_sq[lo:hi, None] - 2.0 * (we * (te[lo:hi] @ te.T) + ws * (ts[lo:hi] @ ts.T)) + t_sq[None, :]
        rows = np.arange(lo, hi)
        d2[rows - lo, rows] = np.inf
        mins[lo:hi] = d2.min(axis=1)
    return float(np.median(np.sqrt(np.maximum(mins, 0.0))))


RefineSource = "DataSet | Callable[[DataSet, float], Sequence[tuple[np.ndarray, np.ndarray]]]"


def refine_around(source, assigned: np.ndarray, current: DataSet,
                  radius: float | None = None, keep_all: bool = False) -> DataSet:
    """Build the next-level dataset around the tuples a solve actually used.

    `assigned` holds tuple ids into `current`.  New tuples come either
    from a larger pool (`source` is a DataSet; all pool tuples within
    `radius` of a used tuple are added) or from a generator callback
    `source(centers, radius) -> [(strain, stress), ...]`.  Unused tuples
    of `current` are dropped unless `keep_all` is set.  The metric scale
    mu0 carries over unchanged so penalties stay comparable across levels.
    """
    assigned = np.unique(np.asarray(assigned, dtype=np.int64))
    if assigned.size == 0:
        raise ValueError("refine_around requires a non-empty assignment")
    if np.any(assigned < 0) or np.any(assigned >= len(current)):
        raise ValueError("assignment ids outside the current dataset")
    if radius is None:
        radius = 2.0 * median_nn_spacing(current)
    base_ids = np.arange(len(current)) if keep_all else assigned
    strains = [current.strains[base_ids]]
    stresses = [current.stresses[base_ids]]

    if isinstance(source, DataSet):
        if (source.kind, source.dim) != (current.kind, current.dim):
            raise ValueError("source and current datasets disagree in kind or dimension")
        mu0 = current.mu0
        we, ws = 0.5 * mu0, 0.5 / mu0
        ce = current.strains[assigned]
        cs = current.stresses[assigned]
        d2 = (we * np.sum(source.strains ** 2, axis=1)[:, None]
              - 2.0 * (we * (source.strains @ ce.T) + ws * (source.stresses @ cs.T))
              + ws * np.sum(source.stresses ** 2, axis=1)[:, None]
              + (we * np.sum(ce ** 2, axis=1) + ws * np.sum(cs ** 2, axis=1))[None, :])
        near = np.sqrt(np.maximum(d2.min(axis=1), 0.0)) <= radius
        strains.append(source.strains[near])
        stresses.append(source.stresses[near])
    else:
        centers = DataSet(current.kind, current.dim, current.strains[assigned],
                          current.stresses[assigned], mu0=current.mu0, validate=False)
        pairs = list(source(centers, radius))
        if pairs:
            dd = current.dim ** 2
            strains.append(np.array([np.asarray(e, dtype=float).reshape(dd) for e, _ in pairs]))
            stresses.append(np.array([np.asarray(s, dtype=float).reshape(dd) for _, s in pairs]))

    all_e = np.vstack(strains)
    all_s = np.vstack(stresses)
    seen: dict[bytes, int] = {}
    keep: list[int] = []
    for i in range(all_e.shape[0]):
        key = all_e[i].tobytes() + all_s[i].tobytes()
        if key not in seen:
            seen[key] = i
            keep.append(i)
    return DataSet(current.kind, current.dim, all_e[keep], all_s[keep],
                   mu0=current.mu0, validate=False)


# -- file format -------------------------------------------------------

_MAGIC = "# dd-dataset v1"


def save_dataset(dataset: DataSet, path) -> None:
    lines = [_MAGIC,
             f"kind={dataset.kind.value} dim={dataset.dim} units=SI"]
    for i in range(len(dataset)):
        row = np.concatenate([dataset.strains[i], dataset.stresses[i]])
        lines.append(" ".join(repr(float(x)) for x in row))
    Path(path).write_text("\n".join(lines) + "\n")


def load_dataset(path, mu0: float | None = None) -> DataSet:
    """Parse a dataset file; errors carry 1-based line numbers."""
    path = Path(path)
    lines = path.read_text().splitlines()
    if not lines or lines[0].strip() != _MAGIC:
        raise ValueError(f"{path}:1: missing magic line '{_MAGIC}'")
    if len(lines) < 2:
        raise ValueError(f"{path}:2: missing header line")
    header = dict(tok.split("=", 1) for tok in lines[1].split() if "=" in tok)
    for key in ("kind", "dim", "units"):
        if key not in header:
            raise ValueError(f"{path}:2: header field '{key}' missing")
    try:
        kind = PairingKind(header["kind"])
    except ValueError:
        raise ValueError(f"{path}:2: unknown pairing kind '{header['kind']}'") from None
    try:
        dim = int(header["dim"])
    except ValueError:
        raise ValueError(f"{path}:2: dim must be an integer") from None
    if dim not in (1, 2, 3):
        raise ValueError(f"{path}:2: dim must be 1, 2 or 3")
    if header["units"] != "SI":
        raise ValueError(f"{path}:2: unsupported units '{header['units']}'")
    dd = dim * dim
    strains, stresses, row_lines = [], [], []
    for ln, raw in enumerate(lines[2:], start=3):
        text = raw.strip()
        if not text or text.startswith("#"):
            continue
        parts = text.split()
        if len(parts) != 2 * dd:
            raise ValueError(f"{path}:{ln}: expected {2 * dd} components, got {len(parts)}")
        try:
            row = np.array([float(x) for x in parts])
        except ValueError:
            raise ValueError(f"{path}:{ln}: malformed number") from None
        strains.append(row[:dd])
        stresses.append(row[dd:])
        row_lines.append(ln)
    if not strains:
        raise ValueError(f"{path}: dataset contains no tuples")
    try:
        return DataSet(kind, dim, np.array(strains), np.array(stresses), mu0=mu0)
    except ValueError as err:
        # re-raise tuple-level complaints with the file position
        msg = str(err)
        if msg.startswith("tuple "):
            idx = int(msg.split()[1].rstrip(":"))
            raise ValueError(f"{path}:{row_lines[idx]}: {msg.split(': ', 1)[1]}") from None
        raise
