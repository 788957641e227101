"""Pure numpy/scipy fallback with the same contract as the compiled kernels."""
import numpy as np
import scipy.sparse as sp

NAME = "python"


def spmm(indptr, indices, weights, Z, Y):
    n = len(indptr) - 1
    data = np.ones(len(indices)) if weights is None else weights
    A = sp.csr_matrix((data, indices, indptr), shape=(n, Z.shape[0]))
    Y[...] = A @ Z


def abs_diff_colsum(A, B):
    return np.abs(A - B).sum(axis=0)


def colsum(A):
    return A.sum(axis=0)


def pair_abs_sum(rows, cols, C, D):
    return np.abs(C[rows] + D[cols]).sum(axis=0)
