import numpy as np
import pytest

from epan import tensor as T
from epan.exceptions import ConfigurationError, ContractError, DimensionError
from epan.losses import mse_loss
from epan.model import (
    VARIANT_FUSION,
    VARIANTS,
    FusionMode,
    ModelConfig,
    attentive_fuse,
    build_model,
    fuse,
    variant_has_een,
)
from epan.tensor import Tensor, backward


def small(variant="epan", **kw):
    kw.setdefault("cdn_base_channels", 8)
    return ModelConfig(variant=variant, **kw)


@pytest.fixture
def batch():
    rng = np.random.default_rng(0)
    image = rng.random((2, 3, 16, 16))
    edges = (rng.random((2, 1, 16, 16)) > 0.8).astype(np.float64)
    return image, edges


class TestConfig:
    @pytest.mark.parametrize("kw", [
        {"variant": "unet"}, {"levels": 1}, {"cdn_base_channels": 6}, {"kernel_size": 2},
        {"een_channel_divisor": 2}, {"convs_per_level": 0},
    ])
    def test_invalid(self, kw):
        with pytest.raises(ConfigurationError):
            ModelConfig(**kw)

    def test_variant_fusion_table(self):
        assert VARIANT_FUSION == {
            "phi": FusionMode.NONE, "phi_eal": FusionMode.NONE, "phi_cat": FusionMode.CONCAT,
            "phi_add": FusionMode.ADD, "phi_att": FusionMode.ATTENTIVE, "epan": FusionMode.ATTENTIVE,
        }

    def test_round_trip(self):
        cfg = small("phi_add", levels=4)
        assert ModelConfig.from_dict(cfg.to_dict()) == cfg

    def test_unknown_key(self):
        with pytest.raises(ConfigurationError):
            ModelConfig.from_dict({"variant": "epan", "depth": 3})

    def test_channel_widths(self):
        cfg = ModelConfig()
        assert [cfg.cdn_channels(i) for i in range(3)] == [32, 64, 128]
        assert [cfg.een_channels(i) for i in range(3)] == [8, 16, 32]
        assert cfg.spatial_divisor == 4


class TestStructure:
    def test_phi_has_no_een(self):
        counts = build_model(small("phi")).parameter_counts()
        assert counts["een"] == 0 and counts["fusion"] == 0

    def test_een_quarter_width_every_block(self):
        net = build_model(ModelConfig(variant="epan", cdn_base_channels=32))
        cdn = {s.name[len("cdn"):]: s for s in net.cdn_enc + net.cdn_dec}
        een = {s.name[len("een"):]: s for s in net.een_enc + net.een_dec}
        assert cdn.keys() == een.keys()
        for key, c in cdn.items():
            assert een[key].out_ch * 4 == c.out_ch, key

    def test_een_smaller_than_cdn(self):
        counts = build_model(small()).parameter_counts()
        assert 0 < counts["een"] < counts["cdn"]
        assert counts["total"] == counts["cdn"] + counts["een"] + counts["fusion"]

    def test_attentive_g_outputs_one_channel(self):
        net = build_model(small("epan"))
        for spec in net.fuse_specs:
            assert spec.out_ch == 1

    def test_same_seed_bit_identical(self):
        a, b = build_model(small(), seed=3), build_model(small(), seed=3)
        for (na, pa), (nb, pb) in zip(a.named_parameters(), b.named_parameters()):
            assert na == nb and np.array_equal(pa.data, pb.data)

    def test_different_seed_differs(self):
        a, b = build_model(small(), seed=3), build_model(small(), seed=4)
        assert not np.array_equal(a.params["cdn.enc0.conv0.weight"].data, b.params["cdn.enc0.conv0.weight"].data)

    def test_phi_params_subset_of_phi_att(self):
        phi = dict(build_model(small("phi"), seed=1).named_parameters())
        att = dict(build_model(small("phi_att"), seed=1).named_parameters())
        assert set(phi) <= set(att)
        for name, p in phi.items():
            assert np.array_equal(p.data, att[name].data)

    def test_fusion_variants_differ_only_at_fusion_sites(self):
        names = {v: set(dict(build_model(small(v)).named_parameters())) for v in ("phi_cat", "phi_add", "phi_att")}
        common = names["phi_cat"] & names["phi_add"] & names["phi_att"]
        for v in names:
            assert all(n.startswith("fuse.") for n in names[v] - common)


class TestFusion:
    def test_zero_gate_halves(self):
        rng = np.random.default_rng(1)
        x_e, x_c = Tensor(rng.random((1, 2, 4, 4))), Tensor(rng.random((1, 8, 4, 4)))
        out = attentive_fuse(x_e, x_c, Tensor(np.zeros((1, 2, 3, 3))), Tensor(np.zeros(1)))
        np.testing.assert_array_equal(out.data, 0.5 * x_c.data)

    def test_saturated_gate_passes_through(self):
        rng = np.random.default_rng(2)
        x_e, x_c = Tensor(rng.random((1, 2, 4, 4))), Tensor(rng.random((1, 8, 4, 4)))
        out = attentive_fuse(x_e, x_c, Tensor(np.zeros((1, 2, 3, 3))), Tensor(np.full(1, 50.0)))
        assert np.max(np.abs(out.data - x_c.data)) <= 1e-12

    def test_matches_scalar_gate_loop(self):
        rng = np.random.default_rng(3)
        x_e, x_c = rng.standard_normal((1, 2, 4, 4)), rng.standard_normal((1, 8, 4, 4))
        w, b = rng.standard_normal((1, 2, 1, 1)), rng.standard_normal(1)
        out = attentive_fuse(Tensor(x_e), Tensor(x_c), Tensor(w), Tensor(b)).data
        expected = np.empty_like(x_c)
        for i in range(4):
            for j in range(4):
                z = b[0] + sum(w[0, c, 0, 0] * x_e[0, c, i, j] for c in range(2))
                gate = 1.0 / (1.0 + np.exp(-z))
                for c in range(8):
                    expected[0, c, i, j] = gate * x_c[0, c, i, j]
        np.testing.assert_allclose(out, expected, atol=1e-12, rtol=0)

    def test_mask_strictly_inside_unit_interval(self):
        rng = np.random.default_rng(4)
        # float64 rounds sigmoid(z) to 1.0 once z exceeds about 36.7
        x_e = Tensor(rng.standard_normal((1, 2, 4, 4)))
        z = T.conv2d(x_e, Tensor(rng.standard_normal((1, 2, 3, 3))), Tensor(np.zeros(1)), padding=1)
        assert np.abs(z.data).max() < 36
        mask = T.sigmoid(z).data
        assert np.all(mask > 0) and np.all(mask < 1)

    def test_spatial_mismatch(self):
        with pytest.raises(DimensionError):
            attentive_fuse(Tensor(np.zeros((1, 2, 4, 4))), Tensor(np.zeros((1, 8, 4, 5))),
                           Tensor(np.zeros((1, 2, 3, 3))), Tensor(np.zeros(1)))

    def test_none_is_identity(self):
        x_c = Tensor(np.random.default_rng(5).random((1, 4, 2, 2)))
        assert fuse("none", None, x_c) is x_c

    def test_add_zero_projection(self):
        rng = np.random.default_rng(6)
        x_e, x_c = Tensor(rng.random((1, 2, 4, 4))), Tensor(rng.random((1, 8, 4, 4)))
        out = fuse(FusionMode.ADD, x_e, x_c, Tensor(np.zeros((8, 2, 1, 1))), Tensor(np.zeros(8)))
        np.testing.assert_array_equal(out.data, x_c.data)

    @pytest.mark.parametrize("e_ch", [1, 2, 5])
    def test_concat_output_channels(self, e_ch):
        rng = np.random.default_rng(7)
        x_e, x_c = Tensor(rng.random((1, e_ch, 4, 4))), Tensor(rng.random((1, 8, 4, 4)))
        out = fuse("concat", x_e, x_c, Tensor(rng.random((8, 8 + e_ch, 1, 1))), Tensor(np.zeros(8)))
        assert out.shape == x_c.shape

    @pytest.mark.parametrize("mode", ["concat", "add", "attentive"])
    def test_missing_edge_features(self, mode):
        with pytest.raises(ContractError):
            fuse(mode, None, Tensor(np.zeros((1, 4, 2, 2))), Tensor(np.zeros((1, 1, 1, 1))), Tensor(np.zeros(1)))


class TestForward:
    @pytest.mark.parametrize("variant", VARIANTS)
    def test_output_contract(self, batch, variant):
        image, edges = batch
        net = build_model(small(variant), dtype=np.float64)
        out, enhanced = net.forward(image, edges if variant_has_een(variant) else None)
        assert out.shape == image.shape
        assert out.data.min() >= 0 and out.data.max() <= 1
        if variant_has_een(variant):
            assert enhanced.shape == edges.shape
            assert enhanced.data.min() >= 0 and enhanced.data.max() <= 1
        else:
            assert enhanced is None

    def test_feature_pyramid(self):
        net = build_model(small("epan", levels=3), dtype=np.float64)
        rng = np.random.default_rng(0)
        feats = net.decoder_features(rng.random((1, 3, 64, 64)), rng.random((1, 1, 64, 64)))
        cdn_sizes = [f.shape[2] for f in feats["cdn"]]
        assert cdn_sizes == [32, 32, 32, 64, 64, 64]
        assert [f.shape[2:] for f in feats["een"]] == [f.shape[2:] for f in feats["cdn"]]
        assert [s.stride for s in net.cdn_enc] == [1, 1, 2, 1, 2, 1]
        out, _ = net.forward(rng.random((1, 3, 64, 64)), rng.random((1, 1, 64, 64)))
        assert out.shape == (1, 3, 64, 64)

    def test_indivisible_input(self):
        net = build_model(small(levels=3))
        with pytest.raises(DimensionError, match="divisible by 4"):
            net.forward(np.zeros((1, 3, 18, 16)), np.zeros((1, 1, 18, 16)))

    def test_missing_edges(self, batch):
        with pytest.raises(ContractError):
            build_model(small("epan")).forward(batch[0])

    def test_saturated_masks_reduce_to_plain_cdn(self, batch):
        image, edges = batch
        epan = build_model(small("epan"), seed=5, dtype=np.float64)
        for spec in epan.fuse_specs:
            epan.params[spec.name + ".weight"].data[...] = 0.0
            epan.params[spec.name + ".bias"].data[...] = 50.0
        phi = build_model(small("phi"), seed=5, dtype=np.float64)
        out_epan, _ = epan.forward(image, edges)
        out_phi, _ = phi.forward(image)
        np.testing.assert_allclose(out_epan.data, out_phi.data, atol=1e-12, rtol=0)

    @pytest.mark.parametrize("variant", ["phi_cat", "phi_add", "phi_att"])
    def test_een_gets_gradient_through_fusion(self, batch, variant):
        image, edges = batch
        net = build_model(small(variant), dtype=np.float64)
        out, _ = net.forward(image, edges)
        backward(mse_loss(out, np.clip(image + 0.05, 0, 1)))
        een_grads = [p.grad for n, p in net.named_parameters() if n.startswith("een.enc")]
        assert any(g is not None and np.any(g != 0) for g in een_grads)

    def test_identity_init_is_near_input(self, batch):
        # zero output conv makes the residual network the identity on [0, 1] images
        image, _ = batch
        net = build_model(small("phi"), dtype=np.float64)
        net.params["cdn.out.weight"].data[...] = 0.0
        out, _ = net.forward(image)
        np.testing.assert_array_equal(out.data, image)

    def test_float32_default(self, batch):
        net = build_model(small("phi"))
        out, _ = net.forward(batch[0])
        assert out.dtype == np.float32
