import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def random_bundle(rng, M, p, L=1.0, spread=1.0):
    """Bundle with arbitrary (not necessarily consistent) cuts of norm <= L."""
    from klmopt.core import Bundle, Cut

    b = Bundle(p)
    for _ in range(M):
        g = rng.standard_normal(p)
        g *= L * rng.uniform(0, 1) / max(np.linalg.norm(g), 1e-300)
        b.append(Cut(spread * rng.standard_normal(p), float(rng.standard_normal()), g))
    return b


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
