import numpy as np
import pytest

from isingfed.kernels import BinaryDataset, ParameterMatrix, pseudo_nll


def random_theta(rng, p, scale=0.3) -> ParameterMatrix:
    return ParameterMatrix(rng.normal(scale=scale, size=(p, p)))


def random_dataset(rng, n, p) -> BinaryDataset:
    return BinaryDataset(rng.integers(0, 2, size=(n, p)) * 2 - 1)


def finite_diff_grad(theta: ParameterMatrix, data: BinaryDataset, h=1e-5) -> np.ndarray:
    """Central differences of pseudo_nll along symmetric pair perturbations.

    Entry (i, j) of the gradient is the derivative along e_i e_j^T + e_j e_i^T
    (the diagonal along e_i e_i^T), matching the closed form's convention.
    """
    p = theta.p
    fd = np.zeros((p, p))
    for i in range(p):
        for j in range(i, p):
            e = np.zeros((p, p))
            e[i, j] += 1.0
            if i != j:
                e[j, i] += 1.0
            up = pseudo_nll(ParameterMatrix(theta.values + h * e), data)
            down = pseudo_nll(ParameterMatrix(theta.values - h * e), data)
            fd[i, j] = fd[j, i] = (up - down) / (2.0 * h)
    return fd


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
