"""Small second-order tensor helpers shared across the package.

Tensors are plain numpy arrays of shape (d, d) with d in {1, 2, 3}.
Flattened copies are row-major (C order) throughout; Voigt-reduced
vectors appear only at file boundaries and use the component order
(11, 22, 33, 12, 13, 23).
"""

from __future__ import annotations

import numpy as np

# Voigt slot -> tensor index pair, order (11, 22, 33, 12, 13, 23)
VOIGT_3D = ((0, 0), (1, 1), (2, 2), (0, 1), (0, 2), (1, 2))


def as_tensor(values, dim: int) -> np.ndarray:
    """Coerce `values` to a float (dim, dim) array, copying if needed."""
    a = np.asarray(values, dtype=float)
    if a.shape == (dim * dim,):
        a = a.reshape(dim, dim)
    if a.shape != (dim, dim):
        raise ValueError(f"expected a {dim}x{dim} tensor, got shape {a.shape}")
    return a


def as_flat(tensor: np.ndarray) -> np.ndarray:
    """Row-major flattened copy of a (d, d) tensor."""
    return np.asarray(tensor, dtype=float).reshape(-1).copy()


def frobenius_inner(a: np.ndarray, b: np.ndarray) -> float:
    """Frobenius inner product a : b = sum_ij a_ij b_ij."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    return float(np.tensordot(a, b, axes=2))


def frobenius_norm(a: np.ndarray) -> float:
    return float(np.linalg.norm(np.asarray(a, dtype=float)))


def sym(a: np.ndarray) -> np.ndarray:
    """Symmetric part over the trailing two axes (batch-safe)."""
    return 0.5 * (a + np.swapaxes(a, -1, -2))


def is_symmetric(a: np.ndarray, tol: float = 1e-10) -> bool:
    a = np.asarray(a, dtype=float)
    return float(np.linalg.norm(a - a.T)) <= tol * max(1.0, float(np.linalg.norm(a)))


def rotation_2d(angle: float) -> np.ndarray:
    """In-plane rotation by `angle` radians."""
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s], [s, c]])


def rotation_z(angle: float) -> np.ndarray:
    """3D rotation about the z axis by `angle` radians."""
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def check_rotation(q: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    """Validate that q is a proper rotation (orthogonal, det +1)."""
    q = np.asarray(q, dtype=float)
    d = q.shape[0]
    if q.shape != (d, d):
        raise ValueError("rotation must be square")
    if np.linalg.norm(q.T @ q - np.eye(d)) > tol * d:
        raise ValueError("matrix is not orthogonal")
    if abs(np.linalg.det(q) - 1.0) > tol * 10:
        raise ValueError("matrix is not a proper rotation (det != +1)")
    return q


def rotate_pair(strain: np.ndarray, stress: np.ndarray, q: np.ndarray):
    """Co-rotate a (strain, stress) pair: A -> Q A Q^T for both tensors."""
    q = check_rotation(q)
    return q @ strain @ q.T, q @ stress @ q.T


def angular_momentum_defect(f: np.ndarray, p: np.ndarray) -> float:
    """Relative asymmetry of P F^T (zero exactly when P = F S, S = S^T)."""
    m = p @ f.T
    defect = m - m.T
    return float(np.linalg.norm(defect)) / max(1.0, float(np.linalg.norm(m)))


def check_angular_momentum(f: np.ndarray, p: np.ndarray, tol: float = 1e-8) -> bool:
    """True when the pair (F, P) satisfies angular momentum balance."""
    return angular_momentum_defect(f, p) <= tol


def voigt_to_tensor(v) -> np.ndarray:
    """Expand a 6-vector in (11, 22, 33, 12, 13, 23) order to a symmetric 3x3."""
    v = np.asarray(v, dtype=float)
    if v.shape != (6,):
        raise ValueError(f"expected 6 components, got shape {v.shape}")
    m = np.zeros((3, 3))
    for slot, (i, j) in enumerate(VOIGT_3D):
        m[i, j] = v[slot]
        m[j, i] = v[slot]
    return m


def tensor_to_voigt(m: np.ndarray, tol: float = 1e-10) -> np.ndarray:
    """Reduce a symmetric 3x3 tensor to the 6-vector (11, 22, 33, 12, 13, 23)."""
    m = as_tensor(m, 3)
    if not is_symmetric(m, tol):
        raise ValueError("tensor is not symmetric within tolerance")
    return np.array([m[i, j] for i, j in VOIGT_3D])
