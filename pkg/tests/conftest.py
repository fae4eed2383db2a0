import numpy as np
import pytest

from evpipe.events import EventStream, SensorGeometry


def stream_from(geometry, rows):
    """Build a stream from (t, x, y, p) tuples."""
    rows = list(rows)
    return EventStream(
        geometry,
        t=np.array([r[0] for r in rows], np.int64),
        x=np.array([r[1] for r in rows], np.int32),
        y=np.array([r[2] for r in rows], np.int32),
        p=np.array([r[3] for r in rows], np.int8),
    )


def random_stream(rng, geometry, n, t_max=1_000_000):
    t = np.sort(rng.integers(0, t_max, n))
    return EventStream(
        geometry,
        t=t.astype(np.int64),
        x=rng.integers(0, geometry.width, n, np.int32),
        y=rng.integers(0, geometry.height, n, np.int32),
        p=np.where(rng.random(n) < 0.5, -1, 1).astype(np.int8),
    )


def jitter_constant_params(w, rng):
    """Shift zero-init biases and unit BN scales off their exact values.

    Fresh weights put many pre-activations at exactly 0, where the ReLU
    derivative and a finite difference legitimately disagree; generic
    offsets make the network differentiable at the evaluation point.
    """
    for key, v in w.params.items():
        if key.endswith((".b", ".beta")):
            v += rng.uniform(0.05, 0.3, v.shape) * np.where(rng.random(v.shape) < 0.5, -1, 1)
        elif key.endswith(".gamma"):
            v += rng.uniform(-0.2, 0.2, v.shape)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def geo():
    return SensorGeometry(16, 12)
