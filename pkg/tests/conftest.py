import numpy as np
import pytest

from invcsi.autodiff import Tensor


def rel_err(analytic, numeric, floor=1e-8):
    analytic = np.asarray(analytic)
    numeric = np.asarray(numeric)
    scale = max(float(np.max(np.abs(numeric))), floor)
    return float(np.max(np.abs(analytic - numeric))) / scale


def randomize_store(store, rng, scale=0.3, prefix=None):
    """Overwrite store parameters with seeded noise (bijectivity etc. must
    hold for arbitrary parameter values, not just the zero init)."""
    for name, p in store.items():
        if prefix is None or name.startswith(prefix):
            p.data[...] = scale * rng.standard_normal(p.data.shape).astype(p.data.dtype)


def tensor_of(x, dtype=np.float64, grad=False):
    return Tensor(np.asarray(x, dtype=dtype), requires_grad=grad)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
