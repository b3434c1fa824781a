import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from censalign.data import Dataset, LinkSpec, Trajectory

settings.register_profile(
    "repo", deadline=None, derandomize=True, suppress_health_check=[HealthCheck.too_slow], max_examples=60
)
settings.load_profile("repo")


def make_traj(tid, times, rows, **kw):
    return Trajectory.from_rows(tid, times, rows, **kw)


@pytest.fixture
def two_series():
    a = make_traj("a", [0.0, 1.0, 2.5], [[0.1, 0.2], [0.3, None], [0.5, 0.6]], true_subtype=0, true_delta=1.5)
    b = make_traj("b", [0.0, 3.0], [[None, 0.9], [0.4, 0.8]], true_subtype=1, true_delta=0.0)
    return Dataset((a, b), 2, LinkSpec.parse("sigmoid"), "fixture")


def random_dataset(rng: np.random.Generator, n=5, dim=2, max_visits=5, missing=0.3) -> Dataset:
    trajs = []
    for i in range(n):
        m = int(rng.integers(1, max_visits + 1))
        times = np.concatenate([[0.0], np.sort(rng.uniform(0.1, 10, m - 1))])
        times = np.unique(times)
        vals = rng.uniform(0, 1, (len(times), dim))
        mask = rng.random(vals.shape) > missing
        mask[0, 0] = True
        trajs.append(Trajectory(f"s{i}", times, np.where(mask, vals, np.nan), mask,
                                true_subtype=int(rng.integers(2)), true_delta=float(rng.uniform(0, 5))))
    return Dataset(tuple(trajs), dim, LinkSpec.parse("sigmoid"), "random")
