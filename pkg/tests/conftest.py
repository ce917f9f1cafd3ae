import numpy as np
import pytest

from labelcraft.data import InteractionRecord


def record(
    user="u1",
    item="v1",
    ts=0.0,
    duration=60.0,
    watch=30.0,
    explicit=(0, 0, 0),
    features=(),
):
    return InteractionRecord(
        user_id=user,
        item_id=item,
        timestamp=float(ts),
        duration=float(duration),
        watch_time=float(watch),
        explicit=tuple(explicit),
        features=tuple(features),
    )


@pytest.fixture
def rng():
    return np.random.default_rng(0)


def max_rel_err(got: np.ndarray, want: np.ndarray, floor: float = 1e-8) -> float:
    """Worst absolute deviation relative to the magnitude of the reference vector."""
    got = np.asarray(got, dtype=np.float64)
    want = np.asarray(want, dtype=np.float64)
    scale = max(float(np.abs(want).max(initial=0.0)), floor)
    return float(np.abs(got - want).max(initial=0.0)) / scale
