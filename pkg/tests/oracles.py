"""Independent reference computations used by the tests.

Nothing here imports the package; every routine is a direct transcription
of a formula, evaluated by brute force or in extended precision.
"""
import gmpy2
import numpy as np
from gmpy2 import mpfr


def paciorek_entry(x, xp, gx, gxp):
    """Scalar Paciorek correlation with the Gaussian base, straight from the formula."""
    x, xp = np.atleast_1d(x), np.atleast_1d(xp)
    d = x.size
    dist2 = float(np.sum((x - xp) ** 2))
    if dist2 == 0:
        return 1.0
    if gx == 0 or gxp == 0:
        return 0.0
    s = gx + gxp
    return (4 * gx * gxp / s ** 2) ** (d / 4) * np.exp(-2 * dist2 / s)


def ldl_pivots(x, g, prec):
    """LDL^T pivots of the 1D Paciorek matrix built in ``prec``-bit arithmetic.

    Entries are evaluated from the formula at the given precision, so the
    result reflects the exact kernel rather than a rounded float matrix.
    """
    with gmpy2.context(gmpy2.get_context(), precision=prec):
        n = len(x)
        X = [mpfr(float(v)) for v in x]
        G = [mpfr(float(v)) for v in g]
        R = [[mpfr(0)] * n for _ in range(n)]
        for i in range(n):
            R[i][i] = mpfr(1)
            for j in range(i):
                if G[i] == 0 or G[j] == 0:
                    v = mpfr(0)
                else:
                    s = G[i] + G[j]
                    v = gmpy2.sqrt(gmpy2.sqrt(4 * G[i] * G[j] / (s * s))) * gmpy2.exp(-2 * (X[i] - X[j]) ** 2 / s)
                R[i][j] = R[j][i] = v
        D = []
        L = [[mpfr(0)] * n for _ in range(n)]
        for j in range(n):
            dj = R[j][j] - sum(L[j][k] * L[j][k] * D[k] for k in range(j))
            D.append(dj)
            if dj <= 0:
                return D
            for i in range(j + 1, n):
                L[i][j] = (R[i][j] - sum(L[i][k] * L[j][k] * D[k] for k in range(j))) / dj
        return D


def neumann_matrix(n, h):
    """Dense Neumann negative Laplacian with mirrored ghost nodes, 1D."""
    P = np.zeros((n, n))
    for i in range(n):
        for j in (i - 1, i + 1):
            if 0 <= j < n:
                P[i, i] += 1
                P[i, j] -= 1
    return P / h ** 2


def dense_spde_covariance(gamma, alpha, sigma, n):
    """``sigma**2 / h * K^-p Gamma^(alpha - 1/2) K^-p`` on the 1D cell-centred grid."""
    h = 1.0 / n
    K = neumann_matrix(n, h) + np.diag(gamma)
    Kinv = np.linalg.inv(K)
    Kp = np.linalg.matrix_power(Kinv, alpha // 2)
    D = np.diag(np.asarray(gamma, dtype=float) ** (alpha - 0.5))
    return sigma ** 2 / h * Kp @ D @ Kp


def direct_periodic_convolution(u, v):
    """``w(x_i) = h * sum_j u(x_j) v(x_i - x_j)`` with indices mod n."""
    n = len(u)
    w = np.zeros(n, dtype=complex)
    for i in range(n):
        for j in range(n):
            w[i] += u[j] * v[(i - j) % n]
    return w / n


def gaussian_logpdf(y, M):
    """Zero-mean Gaussian log density via the eigendecomposition of ``M``."""
    ev, V = np.linalg.eigh(M)
    z = V.T @ y
    return -0.5 * np.sum(z ** 2 / ev) - 0.5 * np.sum(np.log(ev)) - 0.5 * len(y) * np.log(2 * np.pi)
