import numpy as np
import pytest

from dsmstereo.errors import FormatError, ValidationError
from dsmstereo.optim import AdamState, adam_step
from dsmstereo.params import ParamSet, load_checkpoint, save_checkpoint


def make_params(rng):
    return ParamSet({
        "a.w": rng.normal(size=(2, 3, 3, 3)),
        "a.b": rng.normal(size=(2,)),
        "scalar": np.array(1.5),
        "meta.disparities": np.array([16.0]),
    })


def test_checkpoint_round_trip(tmp_path, rng):
    p = make_params(rng)
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, p)
    q = load_checkpoint(path)
    assert p.equal(q)
    assert q["scalar"].shape == ()


def test_checkpoint_bad_magic(tmp_path):
    path = tmp_path / "bad.ckpt"
    path.write_bytes(b"NOTACKPT")
    with pytest.raises(FormatError) as info:
        load_checkpoint(path)
    assert info.value.offset == 0


def test_checkpoint_truncated(tmp_path, rng):
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, make_params(rng))
    data = path.read_bytes()
    path.write_bytes(data[:-5])
    with pytest.raises(FormatError) as info:
        load_checkpoint(path)
    assert info.value.offset is not None and info.value.offset < len(data)


def test_trainable_excludes_meta(rng):
    assert "meta.disparities" not in make_params(rng).trainable()


def test_adam_zero_gradient(rng):
    p = make_params(rng)
    before = p.copy()
    p.zero_grad()
    state = AdamState()
    adam_step(p, state)
    assert state.t == 1 and p.equal(before)


def test_adam_first_step_is_sign(rng):
    p = make_params(rng)
    before = p.copy()
    p.zero_grad()
    p.grads["a.w"] = rng.normal(size=p["a.w"].shape) * 100
    adam_step(p, AdamState(lr=0.01))
    np.testing.assert_allclose(p["a.w"] - before["a.w"], -0.01 * np.sign(p.grads["a.w"]), rtol=1e-6)


def test_adam_matches_reference_trace():
    p = ParamSet({"x": np.array([2.0])})
    state = AdamState()
    x, m, v = 2.0, 0.0, 0.0
    g = 0.37
    for t in range(1, 101):
        p.grads["x"] = np.array([g])
        adam_step(p, state)
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        x -= 0.001 * (m / (1 - 0.9**t)) / ((v / (1 - 0.999**t)) ** 0.5 + 1e-8)
    assert abs(p["x"][0] - x) < 1e-10


def test_adam_meta_untouched(rng):
    p = make_params(rng)
    p.zero_grad()
    for k in p.trainable():
        p.grads[k] = np.ones_like(p[k])
    adam_step(p, AdamState())
    assert p["meta.disparities"][0] == 16.0


def test_adam_non_finite_gradient(rng):
    p = make_params(rng)
    before = p.copy()
    p.zero_grad()
    p.grads["a.b"] = np.array([np.nan, 0.0])
    state = AdamState()
    with pytest.raises(ValidationError):
        adam_step(p, state)
    assert state.t == 0 and p.equal(before)
