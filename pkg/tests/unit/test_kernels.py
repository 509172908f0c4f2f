"""Unit tests for the numpy kernels, layers and gradient checker."""
import numpy as np
import pytest

from fume.errors import ShapeError
from fume.kernels import (
    Attention,
    BatchNorm2d,
    Conv2d,
    DSConv,
    InvertedResidual,
    KernelKind,
    KernelSpec,
    Linear,
    ParamStore,
    PyramidPooling,
    ReLU,
    Sequential,
    grad_check,
    input_grad_check,
)
from fume.kernels import functional as F


def naive_conv(x, w, b=None, stride=1, padding=0, groups=1, dilation=1):
    n, c_in, h, wd = x.shape
    c_out, c_group, kh, kw = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    ho = (h + 2 * padding - dilation * (kh - 1) - 1) // stride + 1
    wo = (wd + 2 * padding - dilation * (kw - 1) - 1) // stride + 1
    out = np.zeros((n, c_out, ho, wo))
    per_group = c_out // groups
    for o in range(c_out):
        g = o // per_group
        for i in range(ho):
            for j in range(wo):
                for c in range(c_group):
                    for u in range(kh):
                        for v in range(kw):
                            out[:, o, i, j] += (
                                w[o, c, u, v]
                                * xp[:, g * c_group + c, i * stride + u * dilation, j * stride + v * dilation]
                            )
        if b is not None:
            out[:, o] += b[o]
    return out


@pytest.mark.parametrize("c_in,c_out,k,stride,padding,groups,dilation", [
    (3, 4, 3, 1, 1, 1, 1),
    (3, 4, 3, 2, 1, 1, 1),
    (4, 4, 3, 1, 1, 4, 1),
    (4, 4, 3, 2, 1, 4, 1),
    (4, 6, 3, 1, 2, 2, 2),
    (5, 2, 1, 1, 0, 1, 1),
    (2, 3, 5, 2, 2, 1, 1),
])
def test_conv2d_matches_loop_oracle(rng, c_in, c_out, k, stride, padding, groups, dilation):
    """
    GIVEN random inputs and kernels across the three conv paths
    WHEN conv2d_forward is called
    THEN check the output equals a direct six-loop cross-correlation
    """
    x = rng.standard_normal((2, c_in, 7, 6))
    w = rng.standard_normal((c_out, c_in // groups, k, k))
    b = rng.standard_normal(c_out)
    y, _ = F.conv2d_forward(x, w, b, stride, padding, groups, dilation)
    np.testing.assert_allclose(y, naive_conv(x, w, b, stride, padding, groups, dilation), atol=1e-12)


def test_identity_kernel_returns_input(rng):
    """
    GIVEN a 3x3 kernel with a single centre tap per channel
    WHEN it is applied with same padding
    THEN check the output equals the input
    """
    x = rng.standard_normal((1, 3, 5, 5))
    w = np.zeros((3, 3, 3, 3))
    for c in range(3):
        w[c, c, 1, 1] = 1.0
    y, _ = F.conv2d_forward(x, w, padding=1)
    np.testing.assert_allclose(y, x, atol=1e-15)


def test_stride_two_same_padding_gives_ceil_half():
    """
    GIVEN odd and even extents
    WHEN a 3x3 stride-2 conv with padding 1 is sized
    THEN check the output extent is ceil(H / 2)
    """
    for h in (7, 8, 31, 64):
        assert F.conv_output_extent(h, 3, stride=2, padding=1) == -(-h // 2)


def test_conv_rejects_mismatched_channels(rng):
    """
    GIVEN a kernel expecting more input channels than supplied
    WHEN conv2d_forward is called
    THEN check a ShapeError is raised
    """
    with pytest.raises(ShapeError):
        F.conv2d_forward(rng.standard_normal((1, 3, 4, 4)), rng.standard_normal((2, 4, 3, 3)), padding=1)
    with pytest.raises(ShapeError):
        F.conv2d_forward(rng.standard_normal((1, 4, 4, 4)), rng.standard_normal((3, 2, 3, 3)), groups=2)


def test_depthwise_separable_mac_ratio():
    """
    GIVEN a 64-channel 3x3 depthwise-separable conv and a dense 3x3 conv
    WHEN their MACs are counted on the same input
    THEN check the ratio is 4672 / 36864, about one eighth
    """
    shape = (1, 64, 32, 32)
    ds = KernelSpec(KernelKind.DSCONV, in_channels=64, out_channels=64, kernel_size=3, padding=1)
    dense = KernelSpec(KernelKind.CONV, in_channels=64, out_channels=64, kernel_size=3, padding=1)
    ratio = ds.macs(shape) / dense.macs(shape)
    assert ratio == pytest.approx(4672 / 36864)
    assert 0.10 <= ratio <= 0.15


@pytest.mark.parametrize("spec,shape", [
    (KernelSpec(KernelKind.CONV, in_channels=3, out_channels=5, kernel_size=3, stride=2, padding=1), (2, 3, 9, 8)),
    (KernelSpec(KernelKind.CONV, in_channels=4, out_channels=4, kernel_size=3, padding=1, groups=4), (1, 4, 6, 6)),
    (KernelSpec(KernelKind.CONV, in_channels=2, out_channels=3, kernel_size=3, padding=2, dilation=2), (1, 2, 7, 5)),
    (KernelSpec(KernelKind.DSCONV, in_channels=4, out_channels=6, kernel_size=3, stride=2, padding=1), (1, 4, 9, 9)),
])
def test_infer_shape_matches_forward(rng, spec, shape):
    """
    GIVEN a kernel spec and an input shape
    WHEN the shape is inferred and the layer is actually run
    THEN check both agree
    """
    store = ParamStore()
    if spec.kind is KernelKind.DSCONV:
        layer = DSConv("ds", store, spec.in_channels, spec.out_channels, rng, stride=spec.stride)
    else:
        layer = Conv2d("conv", store, spec.in_channels, spec.out_channels, spec.kernel_size, rng,
                       stride=spec.stride, padding=spec.padding, groups=spec.groups, dilation=spec.dilation)
    y = layer(rng.standard_normal(shape))
    assert spec.infer_shape(shape) == y.shape
    assert layer.output_shape(shape) == y.shape


def test_inverted_residual_with_zero_projection_is_identity(rng):
    """
    GIVEN a stride-1 inverted residual whose projection weights are zero
    WHEN it is applied in eval mode
    THEN check the skip connection passes the input through unchanged
    """
    store = ParamStore()
    block = InvertedResidual("ir", store, 8, 8, rng, stride=1)
    store["ir.project.conv.weight"][...] = 0.0
    x = rng.standard_normal((2, 8, 5, 5))
    np.testing.assert_allclose(block(x), x, atol=1e-15)
    assert block.use_skip


def test_inverted_residual_rejects_bad_stride(rng):
    """
    GIVEN a stride of 3
    WHEN an inverted residual block is built
    THEN check a ShapeError is raised
    """
    with pytest.raises(ShapeError):
        InvertedResidual("ir", ParamStore(), 8, 8, rng, stride=3)


def test_pyramid_pooling_shape_and_strictness(rng):
    """
    GIVEN a pyramid pooling module at scales 1, 2, 3, 6
    WHEN it runs on a 6x6 map and on a 2x2 map
    THEN check the shape is kept, and strict mode rejects the small map
    """
    strict = PyramidPooling("ppm", ParamStore(), 16, rng)
    x = rng.standard_normal((1, 16, 6, 6))
    assert strict(x).shape == x.shape
    with pytest.raises(ShapeError):
        strict(rng.standard_normal((1, 16, 2, 2)))
    relaxed = PyramidPooling("ppm", ParamStore(), 16, rng, strict=False)
    assert relaxed(rng.standard_normal((1, 16, 2, 2))).shape == (1, 16, 2, 2)


def test_adaptive_pool_matches_bin_oracle(rng):
    """
    GIVEN a 7x5 map pooled to 3x2
    WHEN adaptive_avg_pool_forward is called
    THEN check every cell is the mean of its floor/ceil bin
    """
    x = rng.standard_normal((1, 2, 7, 5))
    y, _ = F.adaptive_avg_pool_forward(x, (3, 2))
    for i in range(3):
        r0, r1 = (i * 7) // 3, -(-(i + 1) * 7 // 3)
        for j in range(2):
            c0, c1 = (j * 5) // 2, -(-(j + 1) * 5 // 2)
            np.testing.assert_allclose(y[0, :, i, j], x[0, :, r0:r1, c0:c1].mean(axis=(1, 2)), atol=1e-14)


def test_pooling_to_one_cell_is_global_mean(rng):
    """
    GIVEN any map
    WHEN it is adaptively pooled to 1x1
    THEN check the result equals the global average
    """
    x = rng.standard_normal((2, 3, 4, 6))
    y, _ = F.adaptive_avg_pool_forward(x, (1, 1))
    g, _ = F.global_avg_pool_forward(x)
    np.testing.assert_allclose(y[:, :, 0, 0], g, atol=1e-14)


def test_softmax_rows_sum_to_one(rng):
    """
    GIVEN large-magnitude logits
    WHEN softmax is applied along an axis
    THEN check entries are positive and sum to one without overflow
    """
    x = 500.0 * rng.standard_normal((4, 3, 5))
    y = F.softmax(x, axis=1)
    assert np.all(np.isfinite(y))
    np.testing.assert_allclose(y.sum(axis=1), 1.0, atol=1e-12)


def test_bilinear_resize_preserves_constants_and_interior_ramps():
    """
    GIVEN a constant map and a linear ramp
    WHEN they are upsampled x2 with half-pixel centres
    THEN check constants stay constant and interior ramp samples are linear
    """
    const = np.full((1, 1, 3, 4), 2.5)
    y, _ = F.bilinear_resize_forward(const, (6, 8))
    np.testing.assert_allclose(y, 2.5, atol=1e-14)

    ramp = np.arange(4, dtype=float)[None, None, None, :].repeat(2, axis=2)
    y, _ = F.bilinear_resize_forward(ramp, (2, 8))
    # output column j samples source position (j + 0.5) / 2 - 0.5
    expected = np.clip((np.arange(8) + 0.5) / 2 - 0.5, 0, 3)
    np.testing.assert_allclose(y[0, 0, 0], expected, atol=1e-14)


def test_interpolation_matrix_is_row_stochastic():
    """
    GIVEN up- and down-sampling extents
    WHEN interpolation matrices are built
    THEN check each row sums to one
    """
    for a, b in ((2, 8), (8, 2), (5, 7)):
        np.testing.assert_allclose(F.interpolation_matrix(a, b).sum(axis=1), 1.0, atol=1e-14)


def test_attention_is_row_stochastic_weighting(rng):
    """
    GIVEN values that are identical at every position
    WHEN attention is applied
    THEN check the output equals that value everywhere (weights sum to one)
    """
    q = rng.standard_normal((1, 4, 6))
    k = rng.standard_normal((1, 4, 5))
    v = np.repeat(rng.standard_normal((1, 3, 1)), 5, axis=2)
    out, _ = F.attention_forward(q, k, v)
    np.testing.assert_allclose(out, np.repeat(v[:, :, :1], 6, axis=2), atol=1e-14)


def test_attention_block_starts_as_identity(rng):
    """
    GIVEN a freshly built gamma-gated attention block
    WHEN it is applied
    THEN check it returns its input exactly
    """
    block = Attention("attn", ParamStore(), 16, rng, key_channels=4)
    x = rng.standard_normal((2, 16, 3, 3))
    np.testing.assert_array_equal(block(x), x)


def test_batch_norm_train_updates_running_stats(rng):
    """
    GIVEN a BatchNorm layer
    WHEN a train-mode forward runs
    THEN check running statistics move toward the batch statistics and eval leaves them alone
    """
    store = ParamStore()
    bn = BatchNorm2d("bn", store, 3)
    x = 2.0 + 3.0 * rng.standard_normal((4, 3, 5, 5))
    bn.forward(x, train=True)
    count = x.size // 3
    np.testing.assert_allclose(store["bn.running_mean"], 0.1 * x.mean(axis=(0, 2, 3)))
    np.testing.assert_allclose(store["bn.running_var"], 0.9 + 0.1 * x.var(axis=(0, 2, 3)) * count / (count - 1))
    before = store["bn.running_mean"].copy()
    bn.forward(x, train=False)
    np.testing.assert_array_equal(store["bn.running_mean"], before)


KERNEL_INPUT_CASES = [
    ("conv", lambda rng: (rng.standard_normal((3, 2, 3, 3)),),
     lambda x, w: F.conv2d_forward(x, w, stride=2, padding=1), lambda dy, c: F.conv2d_backward(dy, c)[0]),
    ("depthwise", lambda rng: (rng.standard_normal((2, 1, 3, 3)),),
     lambda x, w: F.conv2d_forward(x, w, padding=1, groups=2), lambda dy, c: F.conv2d_backward(dy, c)[0]),
    ("dsconv", lambda rng: (rng.standard_normal((2, 1, 3, 3)), rng.standard_normal((3, 2, 1, 1))),
     lambda x, dw, pw: F.dsconv_forward(x, dw, pw, stride=2), lambda dy, c: F.dsconv_backward(dy, c)[0]),
    ("batch_norm_train", lambda rng: (np.array([1.5, 0.5]), np.array([0.1, -0.2])),
     lambda x, g, b: F.batch_norm_forward(x, g, b, np.zeros(2), np.ones(2), True),
     lambda dy, c: F.batch_norm_backward(dy, c)[0]),
    ("sigmoid", lambda rng: (), lambda x: F.sigmoid_forward(x), F.sigmoid_backward),
    ("softmax", lambda rng: (), lambda x: F.softmax_forward(x, axis=1), F.softmax_backward),
    ("resize", lambda rng: (), lambda x: F.bilinear_resize_forward(x, (7, 3)), F.bilinear_resize_backward),
    ("pool", lambda rng: (), lambda x: F.adaptive_avg_pool_forward(x, (2, 3)), F.adaptive_avg_pool_backward),
]


@pytest.mark.parametrize("name,params,forward,backward", KERNEL_INPUT_CASES, ids=[c[0] for c in KERNEL_INPUT_CASES])
def test_kernel_input_gradients(rng, name, params, forward, backward):
    """
    GIVEN a kernel and a small random input
    WHEN its input gradient is compared with central differences
    THEN check the maximum relative error is below 1e-4
    """
    args = params(rng)
    x = rng.standard_normal((2, 2, 4, 5))
    error = input_grad_check(lambda t: forward(t, *args), backward, x)
    assert error < 1e-4, name


def test_attention_kernel_gradients(rng):
    """
    GIVEN queries, keys and values
    WHEN each input gradient of attention is checked numerically
    THEN check all three agree to 1e-4
    """
    q = rng.standard_normal((1, 3, 4))
    k = rng.standard_normal((1, 3, 5))
    v = rng.standard_normal((1, 2, 5))
    args = {"q": q, "k": k, "v": v}
    for i, key in enumerate(("q", "k", "v")):
        def fwd(t, key=key):
            return F.attention_forward(**{**args, key: t})

        error = input_grad_check(fwd, lambda dy, c, i=i: F.attention_backward(dy, c)[i], args[key])
        assert error < 1e-4, key


def test_hadamard_and_linear_gradients(rng):
    """
    GIVEN channel gating and a linear layer
    WHEN their input gradients are checked numerically
    THEN check both agree to 1e-4
    """
    gates = rng.random((2, 3))
    x = rng.standard_normal((2, 3, 2, 2))
    assert input_grad_check(lambda t: F.hadamard_forward(t, gates),
                            lambda dy, c: F.hadamard_backward(dy, c)[0], x) < 1e-4
    assert input_grad_check(lambda t: F.hadamard_forward(x, t),
                            lambda dy, c: F.hadamard_backward(dy, c)[1], gates) < 1e-4
    w = rng.standard_normal((4, 3))
    assert input_grad_check(lambda t: F.linear_forward(t, w), lambda dy, c: F.linear_backward(dy, c)[0],
                            rng.standard_normal((2, 3))) < 1e-4


class _Graph:
    """Adapter giving a single layer the graph interface the checker expects."""

    def __init__(self, layer):
        self.layer = layer
        self.store = layer.store

    def forward(self, x, train=False):
        return self.layer.forward(x, train)

    def backward(self, dy, cache):
        return self.layer.backward(dy, cache)


def _layer_cases(rng):
    store = ParamStore()
    yield "conv", Conv2d("conv", store, 3, 4, 3, rng, stride=2, bias=True), (2, 3, 6, 6)
    store = ParamStore()
    yield "dsconv", DSConv("ds", store, 4, 6, rng, stride=2), (2, 4, 6, 6)
    store = ParamStore()
    yield "inverted_residual", InvertedResidual("ir", store, 4, 4, rng, expansion=2), (2, 4, 5, 5)
    store = ParamStore()
    yield "ppm", PyramidPooling("ppm", store, 8, rng, scales=(1, 2, 3)), (2, 8, 6, 6)
    store = ParamStore()
    attn = Attention("attn", store, 8, rng, key_channels=2)
    store["attn.gamma"][...] = 0.7
    yield "attention", attn, (2, 8, 3, 3)
    store = ParamStore()
    yield "mlp", Sequential("mlp", store, [Linear("mlp.fc", store, 5, 3, rng)]), (4, 5)


@pytest.mark.parametrize("train", [False, True])
def test_layer_parameter_gradients(train):
    """
    GIVEN each parameterised layer kind
    WHEN its parameter gradients are checked with central differences
    THEN check the maximum relative error is below 1e-4 in eval and train mode
    """
    rng = np.random.default_rng(5)
    for name, layer, shape in _layer_cases(rng):
        report = grad_check(_Graph(layer), rng.standard_normal(shape), reduction="quadratic", train=train, seed=3)
        assert report.passed, (name, report.failures())
        assert report.checked_entries > 0


def test_linear_layer_quadratic_reduction_is_exact(rng):
    """
    GIVEN a single linear layer and a quadratic reduction
    WHEN its gradients are checked
    THEN check the central differences agree to 1e-7
    """
    store = ParamStore()
    layer = Linear("fc", store, 3, 2, rng)
    report = grad_check(_Graph(layer), rng.standard_normal((4, 3)), reduction="quadratic")
    assert report.max_error < 1e-7
    assert report.checked_entries == 8


def test_grad_check_reports_frozen_parameters(rng):
    """
    GIVEN a conv whose weight is frozen
    WHEN the gradient check runs
    THEN check the frozen tensor is listed and its accumulated gradient is zero
    """
    store = ParamStore()
    conv = Conv2d("conv", store, 2, 2, 3, rng, bias=True)
    store.freeze("conv.weight")
    report = grad_check(_Graph(conv), rng.standard_normal((1, 2, 4, 4)))
    assert report.frozen == ["conv.weight"]
    assert report.errors["conv.weight"] == 0.0
    assert report.passed


def test_grad_check_detects_a_wrong_gradient(rng):
    """
    GIVEN a layer whose backward doubles the weight gradient
    WHEN the gradient check runs
    THEN check it fails on that weight
    """
    store = ParamStore()
    conv = Conv2d("conv", store, 2, 2, 3, rng)

    class Broken(_Graph):
        def backward(self, dy, cache):
            dx, dw, _ = F.conv2d_backward(dy, cache)
            self.store.accumulate("conv.weight", 2.0 * dw)
            return dx

    report = grad_check(Broken(conv), rng.standard_normal((1, 2, 4, 4)))
    assert not report.passed
    assert "conv.weight" in report.failures()


def test_param_store_state_round_trip(rng):
    """
    GIVEN a store with parameters and buffers
    WHEN its state is loaded into a second store built the same way
    THEN check every tensor matches, and a wrong shape raises ShapeError
    """
    a, b = ParamStore(), ParamStore()
    BatchNorm2d("bn", a, 3)
    BatchNorm2d("bn", b, 3)
    a["bn.gamma"][...] = rng.standard_normal(3)
    a["bn.running_var"][...] = 4.0
    b.load_state(a.state())
    for name, value in a.state().items():
        np.testing.assert_array_equal(b[name], value)
    bad = dict(a.state())
    bad["bn.gamma"] = np.zeros(4)
    with pytest.raises(ShapeError):
        b.load_state(bad)
    assert a.num_parameters() == 6


def _randomize_batch_norm(store, rng):
    for name, value in store.state().items():
        if ".bn." not in name:
            continue
        if name.endswith("running_var"):
            value[...] = rng.uniform(0.5, 2.0, value.shape)
        elif name.endswith("gamma"):
            value[...] = rng.uniform(0.5, 1.5, value.shape)
        else:
            value[...] = 0.3 * rng.standard_normal(value.shape)


def _bn_eval(x, store, prefix, eps=1e-5):
    def view(v):
        return store[f"{prefix}.{v}"][None, :, None, None]
    return (x - view("running_mean")) / np.sqrt(view("running_var") + eps) * view("gamma") + view("beta")


def _pointwise(x, weight):
    return np.einsum("oc,nchw->nohw", weight[:, :, 0, 0], x)


def test_dsconv_matches_composed_loop_oracle(rng):
    """
    GIVEN a depthwise 3x3 kernel and a pointwise kernel at stride 2
    WHEN dsconv_forward is called
    THEN check it equals the loop oracle of the depthwise conv followed by the 1x1 conv
    """
    x = rng.standard_normal((2, 3, 7, 6))
    dw = rng.standard_normal((3, 1, 3, 3))
    pw = rng.standard_normal((5, 3, 1, 1))
    y, _ = F.dsconv_forward(x, dw, pw, stride=2)
    expected = naive_conv(naive_conv(x, dw, stride=2, padding=1, groups=3), pw)
    np.testing.assert_allclose(y, expected, atol=1e-12)
    assert y.shape == (2, 5, 4, 3)


def test_bilinear_two_by_two_to_four_by_four():
    """
    GIVEN the 2x2 map [[1, 2], [3, 4]]
    WHEN it is resized to 4x4 with half-pixel centres and edge clamping
    THEN check every output matches the hand-computed interpolation
    """
    x = np.array([[1.0, 2.0], [3.0, 4.0]])[None, None]
    y, _ = F.bilinear_resize_forward(x, (4, 4))
    expected = np.array([
        [1.00, 1.25, 1.75, 2.00],
        [1.50, 1.75, 2.25, 2.50],
        [2.50, 2.75, 3.25, 3.50],
        [3.00, 3.25, 3.75, 4.00],
    ])
    np.testing.assert_allclose(y[0, 0], expected, atol=1e-14)


def test_inverted_residual_stride_two_matches_composition(rng):
    """
    GIVEN a stride-2 inverted residual with random BatchNorm statistics
    WHEN it is applied in eval mode
    THEN check it equals expand, depthwise and projection composed by hand, without a skip
    """
    store = ParamStore()
    block = InvertedResidual("ir", store, 4, 6, rng, stride=2, expansion=2)
    _randomize_batch_norm(store, rng)
    x = rng.standard_normal((2, 4, 5, 5))

    hidden = np.maximum(_bn_eval(_pointwise(x, store["ir.expand.conv.weight"]), store, "ir.expand.bn"), 0.0)
    hidden = naive_conv(hidden, store["ir.dw.conv.weight"], stride=2, padding=1, groups=8)
    hidden = np.maximum(_bn_eval(hidden, store, "ir.dw.bn"), 0.0)
    expected = _bn_eval(_pointwise(hidden, store["ir.project.conv.weight"]), store, "ir.project.bn")

    assert not block.use_skip
    np.testing.assert_allclose(block(x), expected, atol=1e-12)
    assert block(x).shape == block.output_shape(x.shape) == (2, 6, 3, 3)


def _bin_mean(x, scale):
    h, w = x.shape[2:]
    out = np.zeros(x.shape[:2] + (scale, scale))
    for i in range(scale):
        r0, r1 = (i * h) // scale, -(-(i + 1) * h // scale)
        for j in range(scale):
            c0, c1 = (j * w) // scale, -(-(j + 1) * w // scale)
            out[:, :, i, j] = x[:, :, r0:r1, c0:c1].mean(axis=(2, 3))
    return out


def test_pyramid_pooling_matches_branch_oracle(rng):
    """
    GIVEN a pyramid pooling module with random BatchNorm statistics
    WHEN it is applied in eval mode
    THEN check it equals pooling, projecting and resizing each branch by hand, then fusing
    """
    store = ParamStore()
    ppm = PyramidPooling("ppm", store, 8, rng, scales=(1, 2, 3))
    _randomize_batch_norm(store, rng)
    x = rng.standard_normal((2, 8, 6, 6))

    parts = [x]
    for scale in (1, 2, 3):
        pooled = _bin_mean(x, scale)
        branch = f"ppm.branch{scale}"
        proj = np.maximum(_bn_eval(_pointwise(pooled, store[f"{branch}.conv.weight"]), store, f"{branch}.bn"), 0.0)
        parts.append(F.bilinear_resize_forward(proj, (6, 6))[0])
    cat = np.concatenate(parts, axis=1)
    expected = np.maximum(_bn_eval(_pointwise(cat, store["ppm.fuse.conv.weight"]), store, "ppm.fuse.bn"), 0.0)

    np.testing.assert_allclose(ppm(x), expected, atol=1e-12)


def test_pyramid_pooling_scale_one_is_a_broadcast(rng):
    """
    GIVEN a 1x1 pooled branch
    WHEN it is resized back to the feature size
    THEN check every position holds the global average
    """
    x = rng.standard_normal((2, 3, 5, 7))
    pooled, _ = F.adaptive_avg_pool_forward(x, (1, 1))
    up, _ = F.bilinear_resize_forward(pooled, (5, 7))
    np.testing.assert_allclose(up, np.broadcast_to(x.mean(axis=(2, 3), keepdims=True), x.shape), atol=1e-14)


def test_pyramid_pooling_keeps_constant_maps_constant(rng):
    """
    GIVEN an input that is constant over space in every channel
    WHEN pyramid pooling is applied
    THEN check the output is constant over space as well
    """
    ppm = PyramidPooling("ppm", ParamStore(), 8, rng)
    x = np.broadcast_to(rng.standard_normal((1, 8, 1, 1)), (1, 8, 6, 6)).copy()
    y = ppm(x)
    np.testing.assert_allclose(y, np.broadcast_to(y[:, :, :1, :1], y.shape), atol=1e-12)


def _random_conv_cases(count=40, seed=2024):
    rng = np.random.default_rng(seed)
    cases = []
    while len(cases) < count:
        groups = int(rng.choice([1, 2, 3]))
        c_in, c_out = groups * int(rng.integers(1, 4)), groups * int(rng.integers(1, 4))
        k = int(rng.choice([1, 3, 5]))
        stride, padding, dilation = int(rng.integers(1, 4)), int(rng.integers(0, 3)), int(rng.integers(1, 3))
        h, w = (int(v) for v in rng.integers(1, 12, size=2))
        if min(h, w) + 2 * padding - dilation * (k - 1) - 1 < 0:
            continue
        cases.append((c_in, c_out, k, stride, padding, groups, dilation, h, w))
    return cases


@pytest.mark.parametrize("c_in,c_out,k,stride,padding,groups,dilation,h,w", _random_conv_cases())
def test_conv_shape_inference_over_random_hyperparameters(rng, c_in, c_out, k, stride, padding, groups, dilation, h, w):
    """
    GIVEN randomly drawn conv hyperparameters and input extents
    WHEN the spec infers the output shape and counts MACs
    THEN check the shape matches the computed output and MACs equal output size times taps
    """
    spec = KernelSpec(KernelKind.CONV, in_channels=c_in, out_channels=c_out, kernel_size=k,
                      stride=stride, padding=padding, groups=groups, dilation=dilation)
    x = rng.standard_normal((2, c_in, h, w))
    y, _ = F.conv2d_forward(x, rng.standard_normal((c_out, c_in // groups, k, k)), None,
                            stride, padding, groups, dilation)
    assert spec.infer_shape(x.shape) == y.shape
    assert spec.macs(x.shape) == y.size * k * k * (c_in // groups)


def _random_block_cases(count=20, seed=77):
    rng = np.random.default_rng(seed)
    return [
        (str(rng.choice(["dsconv", "inverted_residual"])), int(rng.integers(1, 6)), int(rng.integers(1, 6)),
         int(rng.integers(1, 3)), int(rng.integers(1, 10)), int(rng.integers(1, 10)))
        for _ in range(count)
    ]


@pytest.mark.parametrize("kind,c_in,c_out,stride,h,w", _random_block_cases())
def test_block_shape_inference_over_random_hyperparameters(rng, kind, c_in, c_out, stride, h, w):
    """
    GIVEN randomly drawn block widths, strides and extents
    WHEN a depthwise-separable or inverted residual block is sized and run
    THEN check the inferred shape is (N, C_out, ceil(H / s), ceil(W / s)) and matches the output
    """
    store = ParamStore()
    if kind == "dsconv":
        block = DSConv("b", store, c_in, c_out, rng, stride=stride)
    else:
        block = InvertedResidual("b", store, c_in, c_out, rng, stride=stride, expansion=2)
    shape = (1, c_in, h, w)
    expected = (1, c_out, -(-h // stride), -(-w // stride))
    assert block.output_shape(shape) == expected
    assert block(rng.standard_normal(shape)).shape == expected


def test_cross_attention_backward_needs_the_pair_form(rng):
    """
    GIVEN an attention block run with a separate context
    WHEN the single-gradient backward is requested
    THEN check it refuses, since query and context gradients belong to different tensors
    """
    block = Attention("attn", ParamStore(), 8, rng, key_channels=2)
    x, context = rng.standard_normal((1, 8, 2, 2)), rng.standard_normal((1, 8, 2, 2))
    y, cache = block.forward(x, context=context)
    with pytest.raises(ShapeError, match="backward_pair"):
        block.backward(np.ones_like(y), cache)
    dquery, dcontext = block.backward_pair(np.ones_like(y), cache)
    assert dquery.shape == dcontext.shape == x.shape


def test_grad_check_reports_the_configured_step(caplog):
    """
    GIVEN a ReLU whose pre-activation sits half a step above its kink
    WHEN the gradient check runs with step 1e-5
    THEN check the 0.25 error at that step is reported and the smaller-step retry is only logged
    """
    rng = np.random.default_rng(0)
    store = ParamStore()
    layer = Sequential("kink", store, [Linear("kink.fc", store, 1, 1, rng, bias=False), ReLU("kink.relu", store)])
    store["kink.fc.weight"][...] = 5e-6
    with caplog.at_level("DEBUG", logger="fume.kernels.gradcheck"):
        report = grad_check(_Graph(layer), np.ones((1, 1)), step=1e-5)
    assert report.errors["kink.fc.weight"] == pytest.approx(0.25, rel=1e-6)
    assert not report.passed
    assert "at 1e-06" in caplog.text
