import numpy as np
import pytest

from neuraltraj.diffkit import (
    MLP,
    Adam,
    AdamState,
    Conv2d,
    Embedding,
    LayerNorm,
    Linear,
    ModelBundle,
    Module,
    Tensor,
    adam_step,
    attach_lora,
    base_params,
    detach_lora,
    gradcheck,
    merge_lora,
    register_architecture,
)
from neuraltraj.diffkit import ops as T
from neuraltraj.exceptions import NonFinite, ShapeMismatch, UnknownTarget

SEEDS = range(5)


def _t(rng, *shape, positive=False):
    a = rng.normal(size=shape)
    if positive:
        a = np.abs(a) + 0.5
    return Tensor(a, requires_grad=True, dtype=np.float64)


def _weights(rng, shape):
    return rng.normal(size=shape)


# every primitive as (name, builder) where builder(rng) -> (fn, inputs)
def _prim_cases():
    def unary(op, positive=False, shape=(3, 4)):
        def build(rng):
            x = _t(rng, *shape, positive=positive)
            w = _weights(rng, shape)
            return (lambda: (op(x) * w).sum()), {"x": x}
        return build

    def binary(op, sa=(3, 4), sb=(3, 4), positive_b=False):
        def build(rng):
            a, b = _t(rng, *sa), _t(rng, *sb, positive=positive_b)
            w = _weights(rng, np.broadcast_shapes(sa, sb))
            return (lambda: (op(a, b) * w).sum()), {"a": a, "b": b}
        return build

    def matmul(rng):
        a, b = _t(rng, 2, 3, 4), _t(rng, 4, 5)
        w = _weights(rng, (2, 3, 5))
        return (lambda: (T.matmul(a, b) * w).sum()), {"a": a, "b": b}

    def linear(rng):
        x, W, b = _t(rng, 2, 3, 4), _t(rng, 5, 4), _t(rng, 5)
        w = _weights(rng, (2, 3, 5))
        return (lambda: (T.linear(x, W, b) * w).sum()), {"x": x, "W": W, "b": b}

    def layer_norm(rng):
        x, g, b = _t(rng, 3, 6), _t(rng, 6), _t(rng, 6)
        w = _weights(rng, (3, 6))
        return (lambda: (T.layer_norm(x, g, b) * w).sum()), {"x": x, "g": g, "b": b}

    def embedding(rng):
        W = _t(rng, 7, 3)
        idx = rng.integers(0, 7, size=(4, 2))
        w = _weights(rng, (4, 2, 3))
        return (lambda: (T.embedding(W, idx) * w).sum()), {"W": W}

    def mse(rng):
        x = _t(rng, 4, 3)
        y = rng.normal(size=(4, 3))
        return (lambda: T.mse(x, y)), {"x": x}

    def xent(rng):
        x = _t(rng, 5, 6)
        y = rng.integers(0, 6, size=5)
        return (lambda: T.cross_entropy(x, y)), {"x": x}

    def conv(rng):
        x, W, b = _t(rng, 2, 3, 6, 6), _t(rng, 4, 3, 3, 3), _t(rng, 4)
        w = _weights(rng, (2, 4, 3, 3))
        return (lambda: (T.conv2d(x, W, b, stride=2, pad=1) * w).sum()), {"x": x, "W": W, "b": b}

    def concat(rng):
        a, b = _t(rng, 3, 2), _t(rng, 3, 4)
        w = _weights(rng, (3, 6))
        return (lambda: (T.concat([a, b], -1) * w).sum()), {"a": a, "b": b}

    def stack(rng):
        a, b = _t(rng, 3, 2), _t(rng, 3, 2)
        w = _weights(rng, (3, 2, 2))
        return (lambda: (T.stack([a, b], -1) * w).sum()), {"a": a, "b": b}

    def shape_ops(rng):
        a = _t(rng, 2, 3, 4)
        w = _weights(rng, (4, 3, 2))
        return (lambda: (T.transpose(T.reshape(a, (3, 2, 4)), (2, 0, 1)) * w).sum()), {"a": a}

    def index(rng):
        a = _t(rng, 5, 4)
        idx = np.array([0, 2, 2, 4])
        w = _weights(rng, (4, 2))
        return (lambda: (a[idx, 1:3] * w).sum()), {"a": a}

    def reductions(rng):
        a = _t(rng, 3, 4, 2)
        w = _weights(rng, (3, 2))
        return (lambda: (T.mean(a, axis=1) * w).sum() + T.tsum(a * a)), {"a": a}

    def straight(rng):
        # gradient identity by definition: d/dx of straight_through(x, q) is the identity
        x = _t(rng, 3, 4)
        q = Tensor(np.round(x.data), dtype=np.float64)
        w = _weights(rng, (3, 4))
        return (lambda: (T.add(T.straight_through(x, q), T.sub(x, T.stop_gradient(x))) * w).sum()), {"x": x}

    return {
        "add": binary(T.add, (3, 4), (4,)), "sub": binary(T.sub, (3, 1), (3, 4)),
        "mul": binary(T.mul), "div": binary(T.div, positive_b=True),
        "pow": unary(lambda x: T.power(x, 3)), "exp": unary(T.exp), "log": unary(T.log, positive=True),
        "tanh": unary(T.tanh), "relu": unary(T.relu), "gelu": unary(T.gelu), "sigmoid": unary(T.sigmoid),
        "softmax": unary(T.softmax), "log_softmax": unary(T.log_softmax),
        "matmul": matmul, "linear": linear, "layer_norm": layer_norm, "embedding": embedding,
        "mse": mse, "cross_entropy": xent, "conv2d": conv, "concat": concat, "stack": stack,
        "reshape_transpose": shape_ops, "getitem": index, "sum_mean": reductions,
    }, straight


PRIMS, STRAIGHT = _prim_cases()


@pytest.mark.parametrize("name", sorted(PRIMS))
@pytest.mark.parametrize("seed", SEEDS)
def test_primitive_gradients(name, seed):
    fn, inputs = PRIMS[name](np.random.default_rng(seed))
    res = gradcheck(fn, inputs, max_probes=None)
    assert res.max_rel_error < 1e-4, res


def test_straight_through_passes_gradient():
    fn, inputs = STRAIGHT(np.random.default_rng(0))
    out = fn()
    out.backward()
    x = inputs["x"]
    assert x.grad is not None and np.all(x.grad != 0)


def test_identity_matmul_and_ones_gradient():
    rng = np.random.default_rng(0)
    X = Tensor(rng.normal(size=(4, 3)), requires_grad=True)
    out = T.matmul(Tensor(np.eye(4, dtype=np.float32)), X)
    assert np.array_equal(out.data, X.data)
    out.sum().backward()
    assert np.array_equal(X.grad, np.ones((4, 3), np.float32))


def test_softmax_rows_normalized():
    x = Tensor(np.random.default_rng(1).normal(size=(6, 9)) * 10)
    assert np.allclose(T.softmax(x).data.sum(-1), 1.0, atol=1e-6)


def test_shape_and_finite_errors():
    with pytest.raises(ShapeMismatch):
        T.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((4, 2))))
    with pytest.raises(ShapeMismatch):
        T.add(Tensor(np.zeros((2, 3))), Tensor(np.zeros((4,))))
    with pytest.raises(NonFinite):
        T.log(Tensor(np.array([-1.0, 1.0])))
    x = Tensor(np.array([0.0, 1.0]), requires_grad=True)
    y = T.power(x, 0.5)
    with pytest.raises(NonFinite):
        y.sum().backward()


def test_f32_default_and_f64_mode():
    assert Tensor([1.0, 2.0]).dtype == np.float32
    assert (Tensor([1.0], dtype=np.float64) * 2.0).dtype == np.float64


def test_adam_zero_gradient_is_noop():
    p = {"w": np.arange(4, dtype=np.float32)}
    st = AdamState()
    out = adam_step(p, {"w": np.zeros(4, np.float32)}, st, lr=0.1)
    assert np.array_equal(out["w"], p["w"]) and st.t == 1


def test_adam_minimizes_quadratic_bowl():
    rng = np.random.default_rng(0)
    w = Tensor(rng.normal(size=8) * 3, requires_grad=True, dtype=np.float64)
    opt = Adam({"w": w}, lr=0.05)
    for i in range(2000):
        opt.zero_grad()
        loss = (w * w).sum()
        loss.backward()
        opt.step()
        if loss.item() < 1e-6:
            break
    assert (w * w).sum().item() < 1e-6


def test_adam_deterministic():
    def run():
        rng = np.random.default_rng(7)
        m = MLP([3, 8, 2], rng)
        opt = Adam(m.trainable(), lr=1e-2)
        x = rng.normal(size=(16, 3)).astype(np.float32)
        y = rng.normal(size=(16, 2)).astype(np.float32)
        for _ in range(20):
            opt.zero_grad()
            T.mse(m(Tensor(x)), y).backward()
            opt.step()
        return b"".join(v.tobytes() for v in m.state_dict().values())
    assert run() == run()


def test_adam_rejects_nonfinite():
    with pytest.raises(NonFinite):
        adam_step({"w": np.zeros(2)}, {"w": np.array([np.nan, 0.0])}, AdamState())


@register_architecture("tiny_test_net")
class TinyNet(Module):
    def __init__(self, seed=0, width=6):
        rng = np.random.default_rng(seed)
        self.config = {"width": width}
        self.inp = Linear(4, width, rng)
        self.norm = LayerNorm(width)
        self.emb = Embedding(3, width, rng)
        self.out = MLP([width, width, 2], rng)

    def forward(self, x, k):
        h = T.gelu(self.inp(x) + self.emb(k))
        return self.out(self.norm(h))


def _inputs(seed, n=100):
    rng = np.random.default_rng(seed)
    return Tensor(rng.normal(size=(n, 4)).astype(np.float32)), rng.integers(0, 3, n)


def test_lora_identity_at_init_is_bit_equal():
    net = TinyNet(seed=1)
    x, k = _inputs(0)
    before = net(x, k).data.copy()
    attach_lora(net, ["inp", "out.layers.0", "out.layers.1"], seed=3)
    assert np.array_equal(net(x, k).data, before)
    assert not any(p.requires_grad for n, p in net.named_parameters().items() if ".lora." not in n)


def test_lora_defaults():
    net = attach_lora(TinyNet(seed=0), ["inp"])
    assert net.inp.lora.r == 4 and net.inp.lora.alpha == 4.0


def test_lora_merge_equivalence_after_training():
    net = TinyNet(seed=2)
    base = base_params(net)
    attach_lora(net, ["inp", "out.layers.0", "out.layers.1"])
    opt = Adam(net.trainable(), lr=1e-2)
    x, k = _inputs(1, 64)
    y = np.random.default_rng(5).normal(size=(64, 2)).astype(np.float32)
    for _ in range(30):
        opt.zero_grad()
        T.mse(net(x, k), y).backward()
        opt.step()
    assert all(np.array_equal(v, base[n]) for n, v in base_params(net).items())
    xt, kt = _inputs(9, 100)
    adapted = net(xt, kt).data.copy()
    merge_lora(net)
    assert np.max(np.abs(net(xt, kt).data - adapted)) <= 1e-5


def test_lora_detach_reverts_to_base():
    net = TinyNet(seed=4)
    x, k = _inputs(3)
    ref = net(x, k).data.copy()
    attach_lora(net, ["inp"])
    net.inp.lora.B.data[:] = 1.0
    assert not np.array_equal(net(x, k).data, ref)
    detach_lora(net)
    assert np.array_equal(net(x, k).data, ref)


def test_lora_unknown_target():
    with pytest.raises(UnknownTarget):
        attach_lora(TinyNet(), ["nope"])
    with pytest.raises(UnknownTarget):
        attach_lora(TinyNet(), ["norm"])


def test_bundle_checkpoint_round_trip(tmp_path):
    net = attach_lora(TinyNet(seed=5, width=7), ["inp"])
    net.inp.lora.B.data[:] = 0.25
    b = ModelBundle.from_model(net, seed=5, meta={"epochs": 3})
    p = b.save(tmp_path / "m.dkpt")
    assert p.read_bytes()[:5] == b"DKPT1"
    b2 = ModelBundle.load(p)
    assert b2.to_bytes() == b.to_bytes()
    assert b2.adapters == {"inp": {"r": 4, "alpha": 4.0}}
    x, k = _inputs(2)
    assert np.array_equal(b2.build()(x, k).data, net(x, k).data)


def test_bundle_level_attach_and_merge():
    b = ModelBundle.from_model(TinyNet(seed=6), seed=6)
    b2 = attach_lora(b, ["inp"])
    assert set(b2.params) - set(b.params) == {"inp.lora.A", "inp.lora.B"}
    b3 = merge_lora(b2)
    assert set(b3.params) == set(b.params)
    x, k = _inputs(0)
    assert np.array_equal(b3.build()(x, k).data, b.build()(x, k).data)


def test_conv_module_shapes():
    c = Conv2d(3, 5, 3, np.random.default_rng(0), stride=2, pad=1)
    assert c(Tensor(np.zeros((2, 3, 8, 8)))).shape == (2, 5, 4, 4)
