import numpy as np
import pytest

from kamzero.nls import NlsModel, build_nls
from kamzero.series import Budgets, DomainParams


# canonical desk-scale instance: two tangential sites, eight modes, the
# constant mode as the single zero-frequency direction
XI = np.array([4e-3, 3e-3])


@pytest.fixture(scope="session")
def nls_build():
    model = NlsModel(sites=(1, 2), jmax=8, xi=XI, taylor_depth=2)
    budgets = Budgets(degree_max=6, k_max=512)
    bk, kf = build_nls(model, budgets)
    return model, bk, kf


@pytest.fixture(scope="session")
def nls_domain():
    return DomainParams(0.6, 0.02, 0.1, 1.0)
