"""Small input-validation helpers in the spirit of ``sklearn.utils.validation``."""

import numpy as np

from .exceptions import InputError


def as_finite_array(x, name="x", ndim=None, dtype=float):
    arr = np.asarray(x, dtype=dtype)
    if ndim is not None and arr.ndim != ndim:
        raise InputError(f"{name} must be {ndim}-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InputError(f"{name} contains non-finite values")
    return arr


def as_vector(x, name="x", size=None):
    arr = as_finite_array(np.atleast_1d(x), name=name)
    if arr.ndim != 1:
        raise InputError(f"{name} must be a vector, got shape {arr.shape}")
    if size is not None and arr.shape[0] != size:
        raise InputError(f"{name} must have length {size}, got {arr.shape[0]}")
    return arr


def check_strictly_increasing(x, name="x"):
    x = as_finite_array(x, name=name, ndim=1)
    if x.size > 1 and np.any(np.diff(x) <= 0):
        raise InputError(f"{name} must be strictly increasing")
    return x


def check_spd(mat, name="matrix"):
    """Symmetrize ``mat`` and verify it is positive definite; returns (mat, min_eig)."""
    mat = as_finite_array(np.atleast_2d(mat), name=name, ndim=2)
    if mat.shape[0] != mat.shape[1]:
        raise InputError(f"{name} must be square, got {mat.shape}")
    if not np.allclose(mat, mat.T, rtol=1e-10, atol=1e-12):
        raise InputError(f"{name} must be symmetric")
    mat = 0.5 * (mat + mat.T)
    lam_min = float(np.linalg.eigvalsh(mat)[0])
    if lam_min <= 0.0:
        raise InputError(f"{name} must be positive definite (min eigenvalue {lam_min:.3g})")
    return mat, lam_min


def check_random_state(seed):
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)
