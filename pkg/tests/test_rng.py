"""Named random streams: keyed independence and long-term stability."""

import numpy as np

from ltlab.rng import consumer_rng


def test_same_key_same_stream():
    a = consumer_rng(7, "synth", "noise").standard_normal(8)
    b = consumer_rng(7, "synth", "noise").standard_normal(8)
    assert np.array_equal(a, b)


def test_streams_differ_by_seed_and_by_name():
    base = consumer_rng(0, "batch").standard_normal(8)
    assert not np.array_equal(base, consumer_rng(1, "batch").standard_normal(8))
    assert not np.array_equal(base, consumer_rng(0, "init").standard_normal(8))
    assert not np.array_equal(
        consumer_rng(0, "a", "b").standard_normal(8),
        consumer_rng(0, "b", "a").standard_normal(8),
    )


def test_draws_frozen():
    # every run artifact's byte-reproducibility rests on this scheme never
    # changing, so pin actual draws, not just self-consistency
    assert consumer_rng(0, "batch").integers(0, 1 << 16, 4).tolist() == [
        59185, 28767, 59109, 15953,
    ]
    assert np.allclose(
        consumer_rng(3, "init", "classifier").standard_normal(3),
        [1.074918125224633, 1.0393015454462358, 0.20896901799723291],
        rtol=0, atol=1e-15,
    )
