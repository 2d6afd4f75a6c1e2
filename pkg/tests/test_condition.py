import numpy as np
import pytest

from defonet.condition import (
    CONDITION_DIM,
    Condition,
    all_conditions,
    decode_vector,
    encode_batch,
    encode_block_masks,
    encode_vector,
)


def test_layout_examples():
    assert np.flatnonzero(encode_vector(Condition(0, 0, 0))).tolist() == [0, 2, 9]
    assert np.flatnonzero(encode_vector(Condition(1, 3, 0))).tolist() == [1, 5, 9]


def test_every_condition_round_trips():
    conds = all_conditions()
    assert len(conds) == 28 and len(set(conds)) == 28
    for c in conds:
        v = encode_vector(c)
        assert v.sum() == 3
        assert decode_vector(v) == c


def test_decode_rejections():
    with pytest.raises(ValueError, match="force"):
        decode_vector(np.zeros(CONDITION_DIM))
    v = encode_vector(Condition(0, 0, 0))
    v[1] = 1
    with pytest.raises(ValueError, match="force segment"):
        decode_vector(v)
    v = encode_vector(Condition(0, 0, 0))
    v[3] = 1
    with pytest.raises(ValueError, match="location segment"):
        decode_vector(v)
    with pytest.raises(ValueError, match="length"):
        decode_vector(np.zeros(10))


def test_out_of_range_fields_rejected():
    with pytest.raises(ValueError, match="location"):
        Condition(0, 7, 0)
    with pytest.raises(ValueError, match="force"):
        Condition(-1, 0, 0)


def test_block_masks_example():
    m = encode_block_masks(Condition(0, 0, 0), 32)
    assert m.shape == (11, 32, 32, 32)
    on = [c for c in range(11) if m[c].all()]
    assert on == [0, 2, 9]
    assert all(not m[c].any() for c in range(11) if c not in on)


def test_block_mask_channel_means_are_binary():
    for c in all_conditions():
        m = encode_block_masks(c, 4)
        sums = m.reshape(11, -1).sum(axis=1)
        assert set(sums.tolist()) <= {0.0, 64.0}
        means = m.reshape(11, -1).mean(axis=1)
        assert set(means.tolist()) <= {0.0, 1.0}
        assert m.mean() == pytest.approx(3 / 11)


def test_encode_batch_accepts_tuples():
    batch = encode_batch([(1, 6, 1), Condition(0, 2, 0)])
    assert batch.shape == (2, 11)
    assert decode_vector(batch[0]) == Condition(1, 6, 1)
    assert encode_batch([]).shape == (0, 11)
