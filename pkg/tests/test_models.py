"""Model graphs: frozen accounting oracles, builders, executor."""

import numpy as np
import pytest

from repmlp.block import RepMLPConfig
from repmlp.models import (
    MODEL_BUILDERS,
    Model,
    block_flops,
    block_params,
    bn_layer,
    build_named_model,
    build_pure_mlp_cifar,
    build_resnet50,
    build_wide_convnet,
    conv_layer,
    convert_graph,
    convert_model_weights,
    count_flops,
    count_params,
    fc_layer,
    format_graph,
    gp_width_sweep,
    init_model_weights,
    output_shape,
    pool_layer,
    run_model,
)
from repmlp.tensor import ShapeError

# component-sum oracle, worked out once by hand for a mid-size block:
# C = O = 256, 7x7 tiles on a 14x14 map (4 tiles), g = 8, branches {1,3,5},
# global-path hidden width 64 (the C/4 default).
#   fc3 kernel 12544 * 12544/8 = 19,668,992;  fc3 BN 2 * 12544 = 25,088
#   branches (256*32*k^2 + 512) for k in {1,3,5} = 8,704 + 74,240 + 205,312
#   global path 256*64+64 + 64*256+256 + 2*256 = 33,600
_ORACLE_CFG = RepMLPConfig(256, 256, 14, 14, 7, 7, groups=8,
                           branch_kernels=(1, 3, 5))


def test_block_accounting_frozen_oracle():
    assert block_params(_ORACLE_CFG, "train") == 20_015_936
    assert block_flops(_ORACLE_CFG, "train") == 135_004_160
    assert block_params(_ORACLE_CFG, "infer") == 19_714_624
    assert block_flops(_ORACLE_CFG, "infer") == 78_807_040


def test_block_accounting_closed_forms():
    # single dense FC P -> Q and a lone KxK conv, the two textbook cases
    layers = (conv_layer(3, 8, 3, pad=1), bn_layer(8))
    m = Model("conv-only", (3, 10, 10), layers)
    assert count_params(m) == 8 * 3 * 9 + 16
    assert count_flops(m) == 8 * 3 * 9 * 100
    deploy = convert_graph(m)
    assert count_params(deploy) == 8 * 3 * 9 + 8
    assert count_flops(deploy) == count_flops(m)

    from repmlp.models import FLATTEN
    m2 = Model("fc-only", (4, 2, 2), (FLATTEN, fc_layer(16, 5)))
    assert count_params(m2) == 16 * 5 + 5
    assert count_flops(m2) == 16 * 5


# frozen totals for every registered model (train and deploy forms);
# derived from the builders once, then pinned so refactors cannot drift
_FROZEN = {
    "pure-mlp-cifar": (22_714_906, 119_595_008, 22_246_778, 53_534_720),
    "wide-convnet": (502_634, 64_143_360, 501_738, 64_143_360),
    "resnet50": (25_557_032, 4_089_184_256, 25_530_472, 4_089_184_256),
    "repmlp-res50": (41_117_224, 4_046_757_888, 40_917_608, 3_987_048_448),
    "repmlp-res50-c4-r4": (31_013_992, 3_844_939_776, 30_879_272, 3_827_378_176),
    "repmlp-res50-c4-r8": (25_088_072, 3_666_855_936, 25_029_832, 3_662_465_536),
    "repmlp-light-res50": (58_400_872, 3_134_193_664, 57_917_224, 3_021_799_424),
}


@pytest.mark.parametrize("name", sorted(_FROZEN))
def test_model_totals_frozen(name):
    model = MODEL_BUILDERS[name]()
    deploy = convert_graph(model)
    got = (count_params(model), count_flops(model),
           count_params(deploy), count_flops(deploy))
    assert got == _FROZEN[name], (name, got)


def test_resnet50_structure():
    model = build_resnet50()
    kinds = [layer.kind for layer in model.layers]
    assert kinds[0] == "conv" and model.layers[0].attr("k") == 7
    assert kinds.count("add") == 16          # 3 + 4 + 6 + 3 bottlenecks
    assert output_shape(model) == ("vec", 1000)
    # every conv in the train graph is bias-free and followed by bn
    def walk(layers):
        for i, layer in enumerate(layers):
            if layer.kind == "conv":
                assert layer.attr("bias") is False
                assert layers[i + 1].kind == "bn"
            for branch in layer.children:
                walk(branch)
    walk(model.layers)


def test_repmlp_resnet_block_configs():
    model = MODEL_BUILDERS["repmlp-res50"]()
    cfgs = []
    def walk(layers):
        for layer in layers:
            if layer.kind == "repmlp_train":
                cfgs.append(layer.attr("cfg"))
            for branch in layer.children:
                walk(branch)
    walk(model.layers)
    assert len(cfgs) == 3 + 5                # stride-1 bottlenecks of c3 and c4
    c3 = [c for c in cfgs if c.height == 28]
    c4 = [c for c in cfgs if c.height == 14]
    assert len(c3) == 3 and len(c4) == 5
    for c in cfgs:
        assert c.part_h == c.part_w == 7
        assert c.groups == 8 and c.branch_kernels == (1, 3, 5)
    assert all(c.in_channels == 64 and c.gp_hidden == 64 * 16 * 16 for c in c3)
    assert all(c.in_channels == 64 and c.gp_hidden == 64 * 4 * 4 for c in c4)


def test_pure_mlp_structure():
    model = build_pure_mlp_cifar()
    blocks = [l.attr("cfg") for l in model.layers if l.kind == "repmlp_train"]
    assert len(blocks) == 6
    assert [c.height for c in blocks] == [32, 32, 16, 16, 8, 8]
    assert all(c.part_h == 8 and c.groups == 2 for c in blocks)
    assert all(c.branch_kernels == (1, 3, 5, 7) for c in blocks)
    assert not blocks[-1].has_global_path    # tile covers the 8x8 map
    assert blocks[0].gp_hidden == 832
    assert output_shape(model) == ("vec", 10)
    with pytest.raises(ShapeError):
        build_pure_mlp_cifar(input_res=64)


def test_convert_graph_deploy_form():
    model = build_pure_mlp_cifar()
    deploy = convert_graph(model)
    def walk(layers):
        for layer in layers:
            assert layer.kind not in ("bn", "repmlp_train")
            if layer.kind == "conv":
                assert layer.attr("bias") is True
            for branch in layer.children:
                walk(branch)
    walk(deploy.layers)
    with pytest.raises(ShapeError):          # bare bn has no conv to fold into
        convert_graph(Model("bad", (2, 4, 4), (bn_layer(2),)))


def test_forward_matches_after_graph_conversion():
    model = build_pure_mlp_cifar()
    rng = np.random.default_rng(21)
    weights = init_model_weights(model, rng, np.float64)
    x = rng.uniform(-1, 1, (2, 3, 32, 32))
    y = run_model(model, weights, x)
    assert y.shape == (2, 10)
    deploy = convert_graph(model)
    y2 = run_model(deploy, convert_model_weights(model, weights), x)
    np.testing.assert_allclose(y2, y, atol=1e-8, rtol=0)


def test_forward_wide_convnet_and_residual_adds():
    model = build_wide_convnet()
    rng = np.random.default_rng(22)
    weights = init_model_weights(model, rng, np.float64)
    x = rng.uniform(-1, 1, (2, 3, 32, 32))
    assert run_model(model, weights, x).shape == (2, 10)

    # miniature residual tower exercises both shortcut kinds end to end
    from repmlp.models import _original_bottleneck
    layers = tuple(_original_bottleneck(8, 2, 1) + _original_bottleneck(8, 2, 1))
    tiny = Model("tiny", (8, 6, 6), layers)
    tw = init_model_weights(tiny, rng, np.float64)
    xt = rng.uniform(-1, 1, (3, 8, 6, 6))
    yt = run_model(tiny, tw, xt)
    deploy = convert_graph(tiny)
    yd = run_model(deploy, convert_model_weights(tiny, tw), xt)
    np.testing.assert_allclose(yd, yt, atol=1e-10, rtol=0)


def test_max_pool_matches_manual_windows():
    from repmlp.models import _max_pool
    rng = np.random.default_rng(23)
    x = rng.normal(size=(2, 3, 7, 7))
    got = _max_pool(x, 3, 2, 1)
    assert got.shape == (2, 3, 4, 4)
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)),
                constant_values=np.finfo(x.dtype).min)
    for i in range(4):
        for j in range(4):
            win = xp[:, :, 2 * i:2 * i + 3, 2 * j:2 * j + 3].max(axis=(2, 3))
            np.testing.assert_array_equal(got[:, :, i, j], win)


def test_counting_rejects_mismatched_graphs():
    bad = Model("bad", (3, 8, 8), (conv_layer(4, 4, 1), bn_layer(4)))
    with pytest.raises(ShapeError):
        count_params(bad)
    bad2 = Model("bad2", (3, 8, 8), (fc_layer(10, 2),))
    with pytest.raises(ShapeError):
        count_flops(bad2)


def test_build_named_model_registry():
    assert set(MODEL_BUILDERS) == {
        "pure-mlp-cifar", "wide-convnet", "resnet50", "repmlp-res50",
        "repmlp-res50-c4-r4", "repmlp-res50-c4-r8", "repmlp-light-res50"}
    with pytest.raises(ShapeError):
        build_named_model("no-such-model", 224)
    m = build_named_model("resnet50", 320)
    assert m.input_shape == (3, 320, 320)


def test_resnet_alternate_resolution_uses_larger_tiles():
    model = MODEL_BUILDERS["repmlp-res50"](input_res=320)
    cfgs = []
    def walk(layers):
        for layer in layers:
            if layer.kind == "repmlp_train":
                cfgs.append(layer.attr("cfg"))
            for branch in layer.children:
                walk(branch)
    walk(model.layers)
    assert all(c.part_h == 10 and c.branch_kernels == (1, 3, 5, 7) for c in cfgs)
    assert {c.height for c in cfgs} == {40, 20}


def test_format_graph_records():
    text = format_graph(build_pure_mlp_cifar())
    lines = text.splitlines()
    assert lines[0] == "model pure-mlp-cifar input 3x32x32"
    assert any(l.strip().startswith("repmlp_train in=16") for l in lines)
    assert any("gp_hidden=832" in l for l in lines)
    resnet_text = format_graph(build_resnet50())
    assert "add branches=2" in resnet_text
    assert "branch 1: identity" in resnet_text
    assert format_graph(build_pure_mlp_cifar()) == text  # stable


def test_gp_width_sweep_monotone():
    rows = gp_width_sweep(lambda w: build_pure_mlp_cifar(gp_width=w),
                          (256, 832, 1024), 22_410_000, 52_800_000)
    assert [r["width"] for r in rows] == [256, 832, 1024]
    params = [r["params"] for r in rows]
    assert params[0] < params[1] < params[2]
    chosen = rows[1]
    assert abs(chosen["params_dev"]) <= 0.01
    assert abs(chosen["flops_dev"]) <= 0.02


def test_pool_layer_validation():
    with pytest.raises(ShapeError):
        pool_layer("median", 2, 2)
