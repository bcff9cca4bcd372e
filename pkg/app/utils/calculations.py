"""
Utilidades de cálculo matricial
"""
import math
from typing import Callable

import numpy as np


def symmetrize(M: np.ndarray) -> np.ndarray:
    """
    Parte simétrica de una matriz
    sym(M) = (M + M') / 2
    """
    M = np.asarray(M, dtype=float)
    return 0.5 * (M + M.T)


def log_norm(M: np.ndarray) -> float:
    """
    Norma logarítmica
    logNorm(M) = λ_max((M + M') / 2)
    """
    return float(np.linalg.eigvalsh(symmetrize(M))[-1])


def spectral_norm(M: np.ndarray) -> float:
    """Norma espectral ‖M‖₂"""
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.size == 0:
        return 0.0
    return float(np.linalg.norm(M, 2))


def psd_project(M: np.ndarray) -> np.ndarray:
    """
    Proyección al cono PSD
    Simetriza, recorta autovalores negativos a 0 y reensambla
    """
    w, V = np.linalg.eigh(symmetrize(M))
    if w[0] >= 0.0:
        return symmetrize(M)
    w = np.clip(w, 0.0, None)
    return symmetrize((V * w) @ V.T)


def psd_sqrt(M: np.ndarray) -> np.ndarray:
    """Raíz cuadrada simétrica de una matriz PSD"""
    w, V = np.linalg.eigh(symmetrize(M))
    w = np.sqrt(np.clip(w, 0.0, None))
    return symmetrize((V * w) @ V.T)


def spd_inv_sqrt(M: np.ndarray) -> np.ndarray:
    """Inversa de la raíz cuadrada de una matriz definida positiva"""
    w, V = np.linalg.eigh(symmetrize(M))
    return symmetrize((V / np.sqrt(w)) @ V.T)


def is_spd(M: np.ndarray, tol: float = 0.0) -> bool:
    """Simétrica con todos los autovalores > tol"""
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        return False
    if not np.allclose(M, M.T, rtol=1e-12, atol=1e-12):
        return False
    return bool(np.linalg.eigvalsh(symmetrize(M))[0] > tol)


def is_psd(M: np.ndarray, tol: float = 1e-12) -> bool:
    """Simétrica con autovalores >= -tol·escala"""
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        return False
    if not np.allclose(M, M.T, rtol=1e-12, atol=1e-12):
        return False
    if M.size == 0:
        return True
    scale = max(1.0, float(np.abs(M).max()))
    return bool(np.linalg.eigvalsh(symmetrize(M))[0] >= -tol * scale)


def upper_triangle(M: np.ndarray) -> np.ndarray:
    """vec(M): triángulo superior por filas"""
    M = np.asarray(M, dtype=float)
    return M[np.triu_indices(M.shape[0])]


def upper_triangle_labels(name: str, dim: int) -> list:
    """Encabezados CSV para vec(M)"""
    rows, cols = np.triu_indices(dim)
    return [f"{name}[{i}{j}]" for i, j in zip(rows, cols)]


def rowwise_apply(M: np.ndarray, X: np.ndarray) -> np.ndarray:
    """
    Aplica M a cada fila de X: fila i -> M @ X[i]
    Sin BLAS, para que el resultado de cada fila no dependa de su posición
    """
    M = np.asarray(M, dtype=float)
    X = np.asarray(X, dtype=float)
    return (X[:, None, :] * M[None, :, :]).sum(axis=-1)


def exact_mean(X: np.ndarray) -> np.ndarray:
    """
    Media muestral con suma correctamente redondeada
    m = (1/N) Σ ξⁱ
    """
    X = np.asarray(X, dtype=float)
    n = X.shape[0]
    if not np.all(np.isfinite(X)):
        return X.mean(axis=0)
    try:
        return np.array([math.fsum(X[:, k]) for k in range(X.shape[1])]) / n
    except OverflowError:
        return X.mean(axis=0)


def exact_covariance(X: np.ndarray, m: np.ndarray) -> np.ndarray:
    """
    Covarianza muestral reescalada
    p = (N-1)⁻¹ Σ (ξⁱ - m)(ξⁱ - m)'; p = 0 si N = 1
    """
    X = np.asarray(X, dtype=float)
    n, dim = X.shape
    p = np.zeros((dim, dim))
    if n < 2:
        return p
    D = X - m
    if not np.all(np.isfinite(D)):
        return np.full((dim, dim), np.nan)
    for k in range(dim):
        for l in range(k, dim):
            try:
                value = math.fsum(D[:, k] * D[:, l]) / (n - 1)
            except OverflowError:
                value = np.inf
            p[k, l] = value
            p[l, k] = value
    return p


def finite_difference_jacobian(f: Callable[[np.ndarray], np.ndarray], x: np.ndarray,
                               h: float = 1e-6) -> np.ndarray:
    """Jacobiano por diferencias centrales"""
    x = np.asarray(x, dtype=float)
    columns = []
    for k in range(x.size):
        e = np.zeros_like(x)
        e[k] = h
        columns.append((np.asarray(f(x + e)) - np.asarray(f(x - e))) / (2.0 * h))
    return np.stack(columns, axis=1)
