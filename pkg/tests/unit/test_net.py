"""Unit tests for the dual-stream network and its variants."""
import numpy as np
import pytest

from fume.errors import DataError, ShapeError, VariantError
from fume.kernels import grad_check
from fume.net import ABLATION_ORDER, ModelVariantConfig, Variant, build
from fume.synthgas import synth_pair

PARAMS = {
    "fume": 1_343_435,
    "full-cross-modal-attn": 1_384_717,
    "self-attn-only": 1_334_971,
    "co2-only": 1_234_183,
    "ch4-only": 1_234_183,
    "classification-only": 1_166_213,
    "segmentation-only": 1_290_680,
}


def _frames(rng, n=1, size=64):
    return rng.random((n, 2, size, size))


def _prefix_count(net, prefix):
    return sum(p.size for name, p in net.store.params.items() if name.startswith(prefix))


@pytest.mark.parametrize("variant", list(PARAMS))
def test_parameter_counts(variant):
    """
    GIVEN each of the seven variants
    WHEN it is built
    THEN check its parameter count matches the reference architecture
    """
    assert build(variant).num_parameters() == PARAMS[variant]


def test_parameter_count_ordering():
    """
    GIVEN the variant parameter counts
    WHEN they are compared
    THEN check fume stays under 1.4M and the ablations order as expected
    """
    assert PARAMS["fume"] < 1_400_000
    assert PARAMS["full-cross-modal-attn"] > PARAMS["fume"]
    assert PARAMS["segmentation-only"] < PARAMS["fume"]
    assert PARAMS["classification-only"] < PARAMS["segmentation-only"]
    assert PARAMS["co2-only"] < PARAMS["fume"]


def test_component_parameter_counts(fume_net):
    """
    GIVEN the fume network
    WHEN parameters are grouped by component
    THEN check each component has its expected size
    """
    assert _prefix_count(fume_net, "encoder.") == 1_072_176
    assert _prefix_count(fume_net, "attention.co2.") == 20_641
    assert _prefix_count(fume_net, "fusion.mlp.") == 8_464
    assert _prefix_count(fume_net, "fusion.conv.") == 35_840
    assert _prefix_count(fume_net, "head.") == 8_451
    assert _prefix_count(fume_net, "decoder.ch4.") == 88_611


def test_encoder_is_shared_between_streams():
    """
    GIVEN one- and two-stream variants
    WHEN their encoder parameters are counted
    THEN check both hold exactly one encoder
    """
    assert _prefix_count(build("co2-only"), "encoder.") == _prefix_count(build("fume"), "encoder.")


def test_fume_macs_at_512(fume_net):
    """
    GIVEN the fume network
    WHEN MACs are counted for one 512x512 frame pair
    THEN check the count is 1.83G, inside the accepted 1.97G +/- 15% band
    """
    macs = fume_net.macs((1, 2, 512, 512))
    assert macs == 1_830_682_816
    assert 1.6745e9 <= macs <= 2.2655e9


def test_macs_scale_with_batch(fume_net):
    """
    GIVEN the fume network
    WHEN MACs are counted for a batch of two and for a smaller frame
    THEN check the batch doubles the count and the smaller frame costs less
    """
    assert fume_net.macs((2, 2, 512, 512)) == 2 * fume_net.macs((1, 2, 512, 512))
    assert fume_net.macs((1, 2, 256, 256)) < fume_net.macs((1, 2, 512, 512)) // 3


def test_variant_macs_ordering():
    """
    GIVEN the ablation variants
    WHEN MACs are counted at 512x512
    THEN check single-stream and single-task variants cost less than fume
    """
    shape = (1, 2, 512, 512)
    macs = {v.value: build(v).macs(shape) for v in ABLATION_ORDER}
    assert macs["co2-only"] < macs["fume"]
    assert macs["classification-only"] < macs["segmentation-only"] < macs["fume"]
    assert macs["full-cross-modal-attn"] > macs["fume"]


def test_unknown_variant_raises():
    """
    GIVEN an unknown variant name
    WHEN it is parsed or built
    THEN check a VariantError is raised
    """
    with pytest.raises(VariantError):
        ModelVariantConfig.parse("triple-stream")
    with pytest.raises(VariantError):
        build("triple-stream")


def test_variant_switches():
    """
    GIVEN the variant configurations
    WHEN their routing switches are read
    THEN check each variant assembles the expected parts
    """
    fume = ModelVariantConfig.parse("fume")
    assert fume.streams == ("co2", "ch4") and fume.has_decoders and fume.has_head
    assert fume.channel_attention and not fume.cross_attention
    assert ModelVariantConfig.parse("ch4-only").streams == ("ch4",)
    assert not ModelVariantConfig.parse("classification-only").has_decoders
    assert not ModelVariantConfig.parse("segmentation-only").has_head
    assert not ModelVariantConfig.parse("self-attn-only").channel_attention
    assert ModelVariantConfig.parse(Variant.FULL_CROSS).cross_attention


def test_forward_output_shapes(fume_net, rng):
    """
    GIVEN the fume network and a batch of two 64x64 frame pairs
    WHEN it is run in eval mode
    THEN check both segmentation maps and the class logits have the right shape
    """
    out = fume_net.predict(_frames(rng, n=2))
    assert out.seg_co2.shape == (2, 3, 64, 64)
    assert out.seg_ch4.shape == (2, 3, 64, 64)
    assert out.class_logits.shape == (2, 3)
    assert np.all(np.isfinite(out.class_logits))


@pytest.mark.parametrize("variant,co2,ch4,logits", [
    ("co2-only", True, False, True),
    ("ch4-only", False, True, True),
    ("classification-only", False, False, True),
    ("segmentation-only", True, True, False),
])
def test_variant_outputs(rng, variant, co2, ch4, logits):
    """
    GIVEN an ablation variant
    WHEN it is run
    THEN check only the outputs it assembles are produced
    """
    out = build(variant).predict(_frames(rng))
    assert (out.seg_co2 is not None) is co2
    assert (out.seg_ch4 is not None) is ch4
    assert (out.class_logits is not None) is logits


def test_fresh_attention_is_identity(rng):
    """
    GIVEN a freshly built network, whose attention gammas start at zero
    WHEN its output is compared with the same network with attention bypassed
    THEN check both are identical
    """
    net = build("fume", seed=4)
    x = _frames(rng)
    with_attention = net.predict(x)
    net.attention = {}
    without = net.predict(x)
    np.testing.assert_array_equal(with_attention.seg_co2, without.seg_co2)
    np.testing.assert_array_equal(with_attention.class_logits, without.class_logits)


def test_zeroed_head_gives_zero_logits(rng):
    """
    GIVEN a network whose final head layer is all zeros
    WHEN it is run
    THEN check the class logits are exactly zero
    """
    net = build("fume", seed=1)
    net.store["head.fc2.weight"][...] = 0.0
    net.store["head.fc2.bias"][...] = 0.0
    np.testing.assert_array_equal(net.predict(_frames(rng)).class_logits, 0.0)


def test_same_seed_builds_same_network(rng):
    """
    GIVEN two networks built with the same seed and one with another
    WHEN their outputs on the same input are compared
    THEN check the same seed reproduces bit-identical outputs
    """
    x = _frames(rng)
    a = build("fume", seed=9).predict(x)
    b = build("fume", seed=9).predict(x)
    c = build("fume", seed=10).predict(x)
    np.testing.assert_array_equal(a.seg_co2, b.seg_co2)
    np.testing.assert_array_equal(a.class_logits, b.class_logits)
    assert not np.array_equal(a.seg_co2, c.seg_co2)


def test_eval_forward_leaves_running_stats(fume_net, rng):
    """
    GIVEN the fume network
    WHEN an eval-mode forward runs
    THEN check no BatchNorm buffer changes
    """
    before = {k: v.copy() for k, v in fume_net.store.buffers.items()}
    fume_net.predict(_frames(rng))
    for name, value in before.items():
        np.testing.assert_array_equal(fume_net.store.buffers[name], value)


def test_stages_compose(fume_net, rng):
    """
    GIVEN the network's individual stage helpers
    WHEN a frame is encoded, attended, fused and decoded
    THEN check each stage produces the documented shape
    """
    low, high = fume_net.encode(rng.random((1, 1, 64, 64)))
    assert low.shape == (1, 64, 8, 8)
    assert high.shape == (1, 128, 2, 2)
    refined = fume_net.self_attend(high, "co2")
    fused = fume_net.fuse(refined, refined)
    assert fused.shape == (1, 128, 2, 2)
    assert fume_net.classify(fused).shape == (1, 3)
    assert fume_net.decode(low, refined, "co2").shape == (1, 3, 64, 64)


def test_fusion_gates_lie_in_unit_interval(fume_net, rng):
    """
    GIVEN a concatenated feature map
    WHEN the channel-attention gates are computed
    THEN check every gate is strictly inside (0, 1)
    """
    gates = fume_net.fusion.gates(rng.standard_normal((3, 256, 2, 2)))
    assert gates.shape == (3, 256)
    assert np.all((gates > 0) & (gates < 1))


def test_fuse_rejects_mismatched_streams(fume_net, rng):
    """
    GIVEN stream features of different spatial size
    WHEN they are fused
    THEN check a ShapeError is raised
    """
    with pytest.raises(ShapeError):
        fume_net.fuse(rng.random((1, 128, 2, 2)), rng.random((1, 128, 4, 4)))


def test_segmentation_only_has_no_head(rng):
    """
    GIVEN the segmentation-only variant
    WHEN classification is requested
    THEN check a ShapeError names the missing head
    """
    with pytest.raises(ShapeError):
        build("segmentation-only").classify(rng.random((1, 128, 2, 2)))


@pytest.mark.parametrize("shape", [(1, 2, 48, 64), (1, 2, 64, 70), (1, 1, 64, 64), (2, 64, 64)])
def test_bad_input_shapes_raise(fume_net, rng, shape):
    """
    GIVEN inputs that are not (N, 2, H, W) with extents divisible by 32
    WHEN the network is run
    THEN check a ShapeError is raised
    """
    with pytest.raises(ShapeError):
        fume_net.predict(rng.random(shape))


def test_sample_without_modalities_raises(fume_net, rng):
    """
    GIVEN a modality mask where one sample has neither gas
    WHEN the network is run
    THEN check a DataError is raised
    """
    mask = np.array([[True, True], [False, False]])
    with pytest.raises(DataError):
        fume_net.predict(_frames(rng, n=2), modality_mask=mask)


def test_backward_returns_input_shaped_gradient(rng):
    """
    GIVEN a forward pass on a two-sample batch
    WHEN unit gradients are sent back through every output
    THEN check the input gradient matches the input and all parameter gradients are finite
    """
    net = build("fume", seed=2)
    x = _frames(rng, n=2)
    out, cache = net.forward(x, train=True)
    net.store.zero_grad()
    grads = type(out)(np.ones_like(out.seg_co2), np.ones_like(out.seg_ch4), np.ones_like(out.class_logits))
    dx = net.backward(grads, cache)
    assert dx.shape == x.shape
    assert all(np.all(np.isfinite(g)) for g in net.store.grads.values())


def test_single_stream_backward_leaves_other_channel_zero(rng):
    """
    GIVEN the co2-only variant
    WHEN gradients flow back to the input
    THEN check the unused CH4 channel receives exactly zero gradient
    """
    net = build("co2-only", seed=2)
    out, cache = net.forward(_frames(rng), train=False)
    dx = net.backward(type(out)(np.ones_like(out.seg_co2), None, np.ones_like(out.class_logits)), cache)
    assert np.any(dx[:, 0] != 0)
    np.testing.assert_array_equal(dx[:, 1], 0.0)


@pytest.mark.parametrize("variant", ["fume", "full-cross-modal-attn"])
def test_end_to_end_gradients(variant):
    """
    GIVEN a float64 network with non-zero attention gammas and a 64x64 pair
    WHEN one sampled entry of every parameter is checked by central differences
    THEN check all parameters pass at 1e-4 relative error
    """
    net = build(variant, seed=0, dtype=np.float64)
    for name in net.store.params:
        if name.endswith(".gamma") and name.startswith(("attention.", "cross.")):
            net.store[name][...] = 0.5
    x = np.random.default_rng(11).random((1, 2, 64, 64))
    report = grad_check(net, x, tolerance=1e-4, max_entries=1, seed=2)
    assert report.passed, report.failures()
    assert len(report.errors) == len(net.store.params)


def test_predict_pair_matches_batched_forward(fume_net):
    """
    GIVEN a synthetic pair without a CH4 frame
    WHEN it is predicted directly and as a scaled batch of one
    THEN check both outputs are identical
    """
    pair = next(p for p in (synth_pair(5.0, s) for s in range(200)) if not p.has_ch4)
    direct = fume_net.predict_pair(pair)
    batched = fume_net.predict(pair.frames()[None] / 255.0, np.array([[True, False]]))
    np.testing.assert_array_equal(direct.class_logits, batched.class_logits)
    np.testing.assert_array_equal(direct.seg_co2, batched.seg_co2)
    assert direct.seg_ch4.shape == (1, 3, 64, 64)


def _sigmoid(z):
    return 1.0 / (1.0 + np.exp(-z))


def _bn_eval(x, store, prefix, eps=1e-5):
    def view(v):
        return store[f"{prefix}.{v}"][None, :, None, None]
    return (x - view("running_mean")) / np.sqrt(view("running_var") + eps) * view("gamma") + view("beta")


def _depthwise_same(x, weight):
    h, w = x.shape[2:]
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    out = np.zeros_like(x)
    for u in range(3):
        for v in range(3):
            out += weight[None, :, 0, u, v, None, None] * xp[:, :, u:u + h, v:v + w]
    return out


def _permute_space(x, rng):
    n, c, h, w = x.shape
    order = rng.permutation(h * w)
    return x.reshape(n, c, h * w)[:, :, order].reshape(n, c, h, w)


def test_self_attention_matches_pairwise_oracle(rng):
    """
    GIVEN a CO2 attention block with gamma set to 1
    WHEN a small feature map is self-attended
    THEN check every position equals its input plus the softmax-weighted sum of all values
    """
    net = build("fume", seed=1)
    net.store["attention.co2.gamma"][...] = 1.0
    high = rng.standard_normal((1, 128, 2, 3))
    y = net.self_attend(high, "co2")

    def project(part):
        weight = net.store[f"attention.co2.{part}.weight"][:, :, 0, 0]
        return weight @ high[0].reshape(128, 6) + net.store[f"attention.co2.{part}.bias"][:, None]

    q, k, v = project("query"), project("key"), project("value")
    expected = np.empty((128, 6))
    for i in range(6):
        scores = np.array([q[:, i] @ k[:, j] for j in range(6)]) / np.sqrt(q.shape[0])
        weights = np.exp(scores - scores.max())
        weights /= weights.sum()
        expected[:, i] = high[0].reshape(128, 6)[:, i] + sum(weights[j] * v[:, j] for j in range(6))
    np.testing.assert_allclose(y[0].reshape(128, 6), expected, atol=1e-10)


def test_self_attention_rows_are_uniform_for_constant_input(fume_net, rng):
    """
    GIVEN a feature map that is constant over space
    WHEN its attention weights are computed
    THEN check every row gives each position the same weight
    """
    high = np.broadcast_to(rng.standard_normal((1, 128, 1, 1)), (1, 128, 2, 3)).copy()
    _, cache = fume_net.attention["co2"].attend(high)
    attn = cache[3][3]
    np.testing.assert_allclose(attn, 1.0 / 6.0, atol=1e-12)


def test_fuse_matches_step_by_step_oracle(fume_net, rng):
    """
    GIVEN two stream feature maps
    WHEN they are fused in eval mode
    THEN check the result equals pooling, the gate MLP, channel scaling and the depthwise-separable conv done by hand
    """
    f_co2, f_ch4 = rng.standard_normal((2, 128, 2, 2)), rng.standard_normal((2, 128, 2, 2))
    st = fume_net.store
    z = np.concatenate([f_co2, f_ch4], axis=1)
    pooled = z.mean(axis=(2, 3))
    hidden = np.maximum(pooled @ st["fusion.mlp.fc1.weight"].T + st["fusion.mlp.fc1.bias"], 0.0)
    gates = _sigmoid(hidden @ st["fusion.mlp.fc2.weight"].T + st["fusion.mlp.fc2.bias"])
    scaled = z * gates[:, :, None, None]
    mid = np.maximum(_bn_eval(_depthwise_same(scaled, st["fusion.conv.dw.conv.weight"]), st, "fusion.conv.dw.bn"), 0.0)
    out = np.einsum("oc,nchw->nohw", st["fusion.conv.pw.conv.weight"][:, :, 0, 0], mid)
    expected = np.maximum(_bn_eval(out, st, "fusion.conv.pw.bn"), 0.0)
    np.testing.assert_allclose(fume_net.fuse(f_co2, f_ch4), expected, atol=1e-10)


def test_zero_gate_mlp_gives_half_gates(rng):
    """
    GIVEN a fusion block whose gate MLP weights and biases are all zero
    WHEN gates are computed
    THEN check every gate is exactly 0.5
    """
    net = build("fume", seed=2)
    for name in ("fc1.weight", "fc1.bias", "fc2.weight", "fc2.bias"):
        net.store[f"fusion.mlp.{name}"][...] = 0.0
    np.testing.assert_array_equal(net.fusion.gates(rng.standard_normal((2, 256, 2, 2))), 0.5)


def test_fusion_gates_ignore_spatial_permutations(fume_net, rng):
    """
    GIVEN a concatenated map and a copy with its positions shuffled the same way in every channel
    WHEN gates are computed for both
    THEN check they agree, because gates see only the global average
    """
    z = rng.standard_normal((2, 256, 3, 4))
    np.testing.assert_allclose(fume_net.fusion.gates(z), fume_net.fusion.gates(_permute_space(z, rng)), atol=1e-12)


def test_classify_matches_two_matrix_oracle(fume_net, rng):
    """
    GIVEN a fused feature map
    WHEN it is classified in eval mode
    THEN check the logits equal W2 relu(W1 gap(x) + b1) + b2
    """
    st = fume_net.store
    fused = rng.standard_normal((3, 128, 2, 2))
    hidden = np.maximum(fused.mean(axis=(2, 3)) @ st["head.fc1.weight"].T + st["head.fc1.bias"], 0.0)
    expected = hidden @ st["head.fc2.weight"].T + st["head.fc2.bias"]
    np.testing.assert_allclose(fume_net.classify(fused), expected, atol=1e-12)


def test_classify_ignores_spatial_permutations(fume_net, rng):
    """
    GIVEN a fused map and a spatially shuffled copy
    WHEN both are classified
    THEN check the logits agree
    """
    fused = rng.standard_normal((2, 128, 2, 3))
    np.testing.assert_allclose(fume_net.classify(fused), fume_net.classify(_permute_space(fused, rng)), atol=1e-12)


def test_zeroed_decoder_classifier_gives_uniform_scores(rng):
    """
    GIVEN a decoder whose final 1x1 classifier is all zeros
    WHEN a frame is decoded
    THEN check the scores are zero and their softmax is uniform over the three classes
    """
    net = build("fume", seed=3)
    net.store["decoder.co2.classifier.out.weight"][...] = 0.0
    net.store["decoder.co2.classifier.out.bias"][...] = 0.0
    low, high = net.encode(rng.random((1, 1, 64, 64)))
    scores = net.decode(low, high, "co2")
    np.testing.assert_array_equal(scores, 0.0)
    probs = np.exp(scores) / np.exp(scores).sum(axis=1, keepdims=True)
    np.testing.assert_allclose(probs, 1.0 / 3.0, atol=1e-15)


def test_ch4_only_on_zero_frame_is_finite(rng):
    """
    GIVEN the ch4-only variant and a pair whose CH4 frame is absent and zero-padded
    WHEN it is run
    THEN check every output is finite
    """
    x = _frames(rng)
    x[:, 1] = 0.0
    out = build("ch4-only", seed=0).predict(x, np.array([[True, False]]))
    assert out.seg_ch4.shape == (1, 3, 64, 64)
    assert np.all(np.isfinite(out.seg_ch4))
    assert np.all(np.isfinite(out.class_logits))


def _co2_only_twin(net):
    twin = build("co2-only", seed=net.seed)
    for name, value in twin.store.state().items():
        value[...] = net.store[name]
    return twin


def test_missing_ch4_is_routed_like_co2_only(rng):
    """
    GIVEN fume and a co2-only network sharing every co2-only parameter
    WHEN both run a batch without CH4 frames in eval mode
    THEN check the CO2 scores and the class logits are identical
    """
    net = build("fume", seed=0)
    net.store["attention.co2.gamma"][...] = 0.5
    twin = _co2_only_twin(net)
    x = _frames(rng, n=2)
    x[:, 1] = 0.0
    mask = np.array([[True, False], [True, False]])
    fume_out, twin_out = net.predict(x, mask), twin.predict(x, mask)
    np.testing.assert_array_equal(fume_out.class_logits, twin_out.class_logits)
    np.testing.assert_array_equal(fume_out.seg_co2, twin_out.seg_co2)
    np.testing.assert_array_equal(fume_out.seg_ch4, 0.0)


def test_mixed_batch_routes_each_sample_on_its_own(rng):
    """
    GIVEN a batch where the second sample lacks its CH4 frame
    WHEN it is predicted together and sample by sample
    THEN check both ways agree and the absent CH4 scores are zero
    """
    net = build("fume", seed=0)
    net.store["attention.co2.gamma"][...] = 0.5
    net.store["attention.ch4.gamma"][...] = -0.5
    x = _frames(rng, n=2)
    x[1, 1] = 0.0
    mask = np.array([[True, True], [True, False]])
    together = net.predict(x, mask)
    for i in range(2):
        alone = net.predict(x[i:i + 1], mask[i:i + 1])
        np.testing.assert_allclose(together.class_logits[i], alone.class_logits[0], rtol=1e-10, atol=1e-12)
        np.testing.assert_allclose(together.seg_co2[i], alone.seg_co2[0], rtol=1e-10, atol=1e-12)
    np.testing.assert_array_equal(together.seg_ch4[1], 0.0)
    assert np.any(together.seg_ch4[0] != 0.0)
