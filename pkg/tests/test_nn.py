import numpy as np
import pytest

from censalign import autodiff as ad
from censalign.autodiff import Tensor
from censalign.nn import (MLP, Adam, AdamState, GRUCell, VanillaCell, adam_step, load_checkpoint, mlp_apply,
                          rnn_encode, run_rnn, save_checkpoint)


def _zero_mlp(n_in, n_hidden, n_out):
    z = lambda *s: Tensor(np.zeros(s), requires_grad=True)
    return MLP(z(n_in, n_hidden), z(n_hidden), z(n_hidden, n_out), z(n_out))


def test_mlp_zero_weights_output_bias():
    m = _zero_mlp(3, 4, 2)
    m.b2.data = np.array([1.5, -2.0])
    assert np.array_equal(mlp_apply(m, np.array([7.0, -1.0, 3.0])).data, [1.5, -2.0])


def test_mlp_relu_gating():
    m = MLP(Tensor([[1.0]]), Tensor([0.0]), Tensor([[1.0]]), Tensor([0.0]))
    assert m(np.array([-2.0])).data.tolist() == [0.0]
    assert m(np.array([2.0])).data.tolist() == [2.0]


def test_mlp_shape_mismatch():
    m = MLP.init(3, 4, 2, np.random.default_rng(0))
    with pytest.raises(ValueError):
        m(np.ones(2))


def test_mlp_gradients():
    for seed in range(100):
        rng = np.random.default_rng(seed)
        m = MLP.init(3, 5, 2, rng)
        x = rng.normal(size=(4, 3))
        # keep every ReLU pre-activation clear of the kink so central differences are valid
        while np.abs(x @ m.W1.data + m.b1.data).min() < 1e-3:
            x = rng.normal(size=(4, 3))
        assert ad.gradcheck(lambda: m(x).sum(), m.params()) < 1e-4


def test_init_bounds_use_fan_in():
    rng = np.random.default_rng(0)
    cell = GRUCell.init(4, 50, rng)
    assert np.abs(cell.Wx.data).max() <= 1 / np.sqrt(4)
    assert np.abs(cell.Wh.data).max() <= 1 / np.sqrt(50)
    assert np.abs(cell.Wx.data).max() > 0.9 / np.sqrt(4)


@pytest.mark.parametrize("cls", [GRUCell, VanillaCell])
def test_zero_cell_stays_zero(cls):
    cell = cls.init(3, 4, np.random.default_rng(0))
    for p in cell.params():
        p.data = np.zeros_like(p.data)
    h = rnn_encode(cell, np.random.default_rng(1).normal(size=(5, 3)))
    assert np.array_equal(h.data, np.zeros(4))


def test_sequence_length_matters():
    cell = GRUCell.init(2, 3, np.random.default_rng(0))
    seq = np.array([[1.0, 0.5], [0.2, -0.3]])
    assert not np.allclose(rnn_encode(cell, seq[:1]).data, rnn_encode(cell, seq).data)


def test_empty_sequence_rejected():
    cell = GRUCell.init(2, 3, np.random.default_rng(0))
    with pytest.raises(ValueError):
        rnn_encode(cell, np.zeros((0, 2)))


@pytest.mark.parametrize("cls", [GRUCell, VanillaCell])
def test_bptt_gradients(cls):
    for seed in range(100):
        rng = np.random.default_rng(seed)
        cell = cls.init(3, 4, rng)
        seq = rng.normal(size=(4, 3))
        w = rng.normal(size=4)
        assert ad.gradcheck(lambda: (rnn_encode(cell, seq) * w).sum(), cell.params()) < 1e-4


def test_gates_in_unit_interval():
    rng = np.random.default_rng(0)
    cell = GRUCell.init(2, 3, rng)
    x = Tensor(rng.normal(size=(10, 2)) * 5)
    h = Tensor(rng.normal(size=(10, 3)))
    gx = x.data @ cell.Wx.data + cell.bx.data
    gh = h.data @ cell.Wh.data + cell.bh.data
    r = 1 / (1 + np.exp(-(gx[:, :3] + gh[:, :3])))
    assert np.all((r > 0) & (r < 1))
    assert np.all(np.isfinite(cell.step(x, h).data))


def test_padded_batch_matches_per_series_encoding():
    rng = np.random.default_rng(3)
    cell = GRUCell.init(2, 3, rng)
    long, short = rng.normal(size=(4, 2)), rng.normal(size=(2, 2))
    padded = np.zeros((2, 4, 2))
    padded[0], padded[1, :2] = long, short
    vm = np.array([[1, 1, 1, 1], [1, 1, 0, 0]], dtype=float)
    h = run_rnn(cell, [padded[:, m] for m in range(4)], [vm[:, m : m + 1] for m in range(4)])
    assert np.allclose(h.data[0], rnn_encode(cell, long).data)
    assert np.allclose(h.data[1], rnn_encode(cell, short).data)


def test_adam_first_step():
    new, st = adam_step(AdamState(lr=0.1), [np.array(0.0)], [np.array(1.0)])
    assert new[0] == pytest.approx(-0.1, abs=1e-6)
    assert st.t == 1


def test_adam_zero_grad_noop():
    new, _ = adam_step(AdamState(lr=0.1), [np.array([1.0, 2.0])], [np.zeros(2)])
    assert np.array_equal(new[0], [1.0, 2.0])


def test_adam_constant_grad_decreases_twice():
    st = AdamState(lr=0.05)
    p = [np.array(1.0)]
    vals = [1.0]
    for _ in range(2):
        p, st = adam_step(st, p, [np.array(2.0)])
        vals.append(float(p[0]))
    assert vals[0] > vals[1] > vals[2]


def test_adam_shape_mismatch():
    with pytest.raises(ValueError):
        adam_step(AdamState(), [np.zeros(2)], [np.zeros(3)])


def test_adam_wrapper_updates_tensors():
    t = Tensor(np.ones(2), requires_grad=True)
    opt = Adam([t], lr=0.1)
    opt.step([np.ones(2)])
    assert np.allclose(t.data, 0.9, atol=1e-6)


def test_checkpoint_bit_exact(tmp_path):
    rng = np.random.default_rng(0)
    params = {"a": rng.normal(size=(3, 2)), "b": rng.normal(size=5) * 1e-300, "c": np.array(np.pi)}
    save_checkpoint(params, tmp_path / "ck.json")
    back = load_checkpoint(tmp_path / "ck.json")
    assert all(np.array_equal(params[k], back[k]) and params[k].shape == back[k].shape for k in params)
