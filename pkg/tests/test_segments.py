import numpy as np
import pytest
import torch

from oracles import naive_segment_bank
from sasa_iv.numerics import NumericalError
from sasa_iv.segments import MultiLSTM, SegmentEncoder, build_segments, check_bank, encode_bank


@pytest.fixture
def encoder():
    torch.manual_seed(0)
    return SegmentEncoder(3, hidden_size=5).double()


def test_build_segments_lengths_and_order():
    x = np.arange(12.0).reshape(4, 3)  # N=4, M=3
    segs = build_segments(x, 1)
    assert [len(s) for s in segs] == [1, 2, 3, 4]
    assert np.array_equal(segs[2], [4.0, 7.0, 10.0])
    assert np.array_equal(build_segments(x[-1:], 0)[0], [9.0])
    with pytest.raises(IndexError):
        build_segments(x, 3)


def test_bank_equals_naive_per_segment_loop(encoder):
    x = torch.randn(4, 7, 3, dtype=torch.float64)
    fast = encode_bank(x, encoder)
    assert fast.shape == (4, 3, 7, 5)
    assert torch.allclose(fast, naive_segment_bank(x, encoder.lstm), atol=1e-12)


def test_zero_weights_give_zero_bank():
    enc = SegmentEncoder(2, hidden_size=4)
    with torch.no_grad():
        for p in enc.parameters():
            p.zero_()
    assert torch.equal(enc(torch.randn(3, 5, 2)), torch.zeros(3, 2, 5, 4))


def test_temporal_locality(encoder):
    x = torch.randn(2, 6, 3, dtype=torch.float64)
    base = encoder(x)
    for tau in range(1, 6):
        y = x.clone()
        y[:, : 6 - tau, 1] += torch.randn(2, 6 - tau, dtype=torch.float64)
        out = encoder(y)
        assert torch.equal(out[:, 1, :tau], base[:, 1, :tau])
        assert not torch.equal(out[:, 1, tau:], base[:, 1, tau:])


def test_variable_isolation(encoder):
    x = torch.randn(2, 5, 3, dtype=torch.float64)
    base = encoder(x)
    y = x.clone()
    y[:, :, 2] = torch.randn(2, 5, dtype=torch.float64)
    out = encoder(y)
    assert torch.equal(out[:, :2], base[:, :2])


def test_isolation_by_gradients(encoder):
    x = torch.randn(1, 4, 3, dtype=torch.float64, requires_grad=True)
    encoder(x)[:, 0].sum().backward()
    assert torch.count_nonzero(x.grad[..., 1:]) == 0
    assert torch.count_nonzero(x.grad[..., 0]) > 0


def test_multi_lstm_final_state_matches_full_segment(encoder):
    x = torch.randn(3, 6, 3, dtype=torch.float64)
    assert torch.allclose(encoder.lstm(x), encoder(x)[:, :, -1], atol=1e-12)


def test_nonfinite_bank_reports_location():
    reps = torch.zeros(1, 3, 4, 2)
    reps[0, 2, 1, 0] = float("nan")
    with pytest.raises(NumericalError, match="variable 2, tau 2"):
        check_bank(reps)


def test_wrong_variable_count(encoder):
    with pytest.raises(ValueError):
        encoder(torch.randn(1, 4, 2, dtype=torch.float64))


def test_reset_parameters_is_seeded():
    a, b = MultiLSTM(2, 3), MultiLSTM(2, 3)
    a.reset_parameters(torch.Generator().manual_seed(5))
    b.reset_parameters(torch.Generator().manual_seed(5))
    assert all(torch.equal(p, q) for p, q in zip(a.parameters(), b.parameters()))
