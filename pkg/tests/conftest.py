import numpy as np
import pytest

from loglasso.design import TableShape, saturated_design
from loglasso.model import ContingencyTable

SHAPES = [(2,), (3,), (2, 2), (2, 3), (3, 3), (2, 2, 2), (2, 3, 4), (3, 3, 3)]


def random_instance(rng, shapes=SHAPES, N=None):
    """A (design, theta, table) triple on a random shape."""
    shape = TableShape(shapes[rng.integers(len(shapes))])
    design = saturated_design(shape)
    theta = rng.normal(scale=0.5, size=design.ncols)
    n = int(N or rng.integers(20, 500))
    counts = rng.multinomial(n, rng.dirichlet(np.ones(shape.I)))
    return design, theta, ContingencyTable(shape, counts)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


CORPUS_SHAPES = [(2, 2), (2, 3), (3, 3), (2, 2, 2), (2, 3, 4), (3, 3, 3)]
CORPUS_LAMBDAS = [1e-8, 1e-3, 0.02, 0.1]


def fit_corpus(seed=99, per_shape=2):
    """Fits across shapes, lambda levels, weight rules and sparse/dense tables."""
    from loglasso.glasso import PenaltyConfig, fit

    rng = np.random.default_rng(seed)
    out = []
    for levels in CORPUS_SHAPES:
        shape = TableShape(levels)
        design = saturated_design(shape)
        for j in range(per_shape):
            N = int(rng.choice([60, 400, 3000]))
            conc = 5.0 if j == 0 else 0.5  # second table is sparse, with zeros
            counts = rng.multinomial(N, rng.dirichlet(np.full(shape.I, conc)))
            table = ContingencyTable(shape, counts)
            for lam in CORPUS_LAMBDAS:
                if lam < 1e-6 and counts.min() == 0:
                    continue  # near-MLE fit needs an interior MLE
                rule = "sqrt-dim" if (j + int(lam * 100)) % 2 == 0 else "unit"
                pen = PenaltyConfig(lam, rule)
                out.append((design, table, pen, fit(design, table, pen)))
    return out


_CORPUS = None


@pytest.fixture(scope="session")
def corpus():
    global _CORPUS
    if _CORPUS is None:
        _CORPUS = fit_corpus()
    return _CORPUS
