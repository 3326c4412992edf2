import numpy as np
import pytest
import torch

from modot import oracles
from modot.config import EncoderConfig, ModelConfig
from modot.errors import ConfigError, ShapeError
from modot.models import build_model
from modot.models.casm import CASM, ChannelAttention, MSSFuse, PlainBridge
from modot.models.encoder import ConvEncoder, WindowEncoder, attend, fit_window, normalize_image
from modot.models.heads import EIP, PPM, SSR, DepthDecoderBlock, OBDecoderBlock
from modot.models.modot import pad_to_multiple, unpad


def seeded(seed=0):
    torch.manual_seed(seed)
    return torch.Generator().manual_seed(seed)


def model_cfg(**kw):
    return ModelConfig(encoder=EncoderConfig(base_channels=16), **kw)


class TestEncoder:
    @pytest.mark.parametrize("cls", [WindowEncoder, ConvEncoder])
    def test_shape_law(self, cls):
        seeded()
        levels = cls(16)(torch.randn(2, 3, 64, 64))
        assert [tuple(f.shape[1:]) for f in levels] == [(16, 16, 16), (32, 8, 8), (64, 4, 4), (128, 2, 2)]

    def test_320_input(self):
        seeded()
        assert WindowEncoder(8)(torch.randn(1, 3, 320, 320))[0].shape[-1] == 80

    def test_rectangular_input(self):
        seeded()
        levels = WindowEncoder(8)(torch.randn(1, 3, 64, 96))
        assert [tuple(f.shape[-2:]) for f in levels] == [(16, 24), (8, 12), (4, 6), (2, 3)]

    def test_zero_image_finite(self):
        seeded()
        assert all(torch.isfinite(f).all() for f in WindowEncoder(16)(torch.zeros(1, 3, 64, 64)))

    def test_gradient_reaches_parameters(self):
        seeded()
        enc = WindowEncoder(16)
        sum(f.square().mean() for f in enc(torch.randn(2, 3, 64, 64))).backward()
        params = [p for p in enc.parameters() if p.requires_grad]
        live = sum(int(p.grad is not None and p.grad.abs().sum() > 0) for p in params)
        assert live / len(params) >= 0.99

    def test_deterministic(self):
        seeded()
        enc = WindowEncoder(16).eval()
        x = torch.randn(1, 3, 64, 64)
        assert all(torch.equal(a, b) for a, b in zip(enc(x), enc(x)))

    def test_indivisible_input(self):
        with pytest.raises(ShapeError):
            WindowEncoder(16)(torch.zeros(1, 3, 64, 48))

    def test_fit_window(self):
        assert [fit_window(s, 4) for s in (16, 8, 2, 3, 10, 6)] == [4, 4, 2, 3, 2, 3]

    def test_normalize_image(self):
        x = torch.full((1, 3, 2, 2), 255.0 * 0.485)
        assert normalize_image(x)[0, 0].abs().max() < 1e-6

    def test_attend_matches_oracle(self, rng):
        q, k, v = (torch.tensor(rng.normal(size=(1, 5, 4))) for _ in range(3))
        out, w = attend(q, k, v, 1)
        ref_out, ref_w = oracles.window_attention_reference(q[0], k[0], v[0])
        np.testing.assert_allclose(out[0].numpy(), ref_out, atol=1e-10)
        np.testing.assert_allclose(w[0, 0].numpy(), ref_w, atol=1e-12)


class TestChannelAttention:
    def test_range(self):
        seeded()
        w = ChannelAttention(16, 4)(torch.randn(3, 16, 8, 8) * 20)
        assert ((w > 0) & (w < 1)).all()

    def test_constant_equals_pooled(self):
        seeded()
        ca = ChannelAttention(16, 4)
        vals = torch.randn(1, 16, 1, 1)
        assert torch.allclose(ca(vals.expand(1, 16, 8, 8)), ca(vals))

    def test_matches_oracle(self, rng):
        seeded()
        ca = ChannelAttention(16, 4).double()
        x = rng.normal(size=(16, 8, 8))
        got = ca(torch.tensor(x)[None])[0].detach().numpy()
        ref = oracles.channel_attention_reference(x, *(p.detach().numpy() for p in (
            ca.fc1.weight, ca.fc1.bias, ca.fc2.weight, ca.fc2.bias)))
        np.testing.assert_allclose(got, ref, atol=1e-6)

    def test_reduction_must_divide(self):
        with pytest.raises(ConfigError):
            ChannelAttention(10, 4)


class TestCASM:
    def test_shapes(self):
        seeded()
        d, ob = CASM(32, 24, 16)(torch.randn(2, 32, 8, 8), torch.randn(2, 24, 8, 8))
        assert d.shape == ob.shape == (2, 16, 16, 16)

    def test_cross_gradients(self):
        seeded()
        casm = CASM(16, 16, 16).double()
        f_d = torch.randn(1, 16, 4, 4, dtype=torch.float64, requires_grad=True)
        f_ob = torch.randn(1, 16, 4, 4, dtype=torch.float64, requires_grad=True)
        d, ob = casm(f_d, f_ob)
        g_ob, = torch.autograd.grad(d.square().sum(), f_ob, retain_graph=True)
        g_d, = torch.autograd.grad(ob.square().sum(), f_d)
        assert g_ob.abs().sum() > 0 and g_d.abs().sum() > 0
        # one coordinate against a central finite difference
        idx = (0, 3, 1, 2)
        h = 1e-6

        def f(delta):
            x = f_d.detach().clone()
            x[idx] += delta
            with torch.no_grad():
                return float(casm(x, f_ob.detach())[1].square().sum())

        assert g_d[idx].item() == pytest.approx((f(h) - f(-h)) / (2 * h), rel=1e-5, abs=1e-9)

    def test_identity_composition(self):
        seeded()
        casm = CASM(16, 16, 16)
        with torch.no_grad():
            for p in casm.mss.fuse.parameters():
                p.zero_()
            casm.att_ob.fc2.weight.zero_()
            casm.att_ob.fc2.bias.fill_(1e4)  # sigmoid saturates to exactly 1
        t = casm.trace(torch.randn(1, 16, 4, 4), torch.randn(1, 16, 4, 4))
        assert torch.equal(t["w_ob"], torch.ones_like(t["w_ob"]))
        assert torch.equal(t["out_d"], t["f_d"])

    def test_input_mismatch(self):
        with pytest.raises(ShapeError):
            CASM(8, 8, 8)(torch.zeros(1, 8, 4, 4), torch.zeros(1, 8, 2, 2))

    def test_plain_bridge(self):
        d, ob = PlainBridge(16, 0, 8)(torch.zeros(1, 16, 4, 4))
        assert d.shape == (1, 8, 8, 8) and ob is None


class TestMSSFuse:
    def test_same_size(self):
        seeded()
        m = MSSFuse(4, 6)
        assert m(torch.randn(1, 4, 9, 13)).shape == (1, 6, 9, 13)
        assert m.kinds == ["1x7", "7x1", "1x11", "11x1", "3x3"]

    def test_zero_input_zero_bias(self):
        seeded()
        m = MSSFuse(4, 4)
        with torch.no_grad():
            for mod in m.modules():
                if isinstance(mod, torch.nn.Conv2d):
                    mod.bias.zero_()
        assert m(torch.zeros(1, 4, 8, 8)).abs().max() == 0

    @torch.no_grad()
    def test_horizontal_line_anisotropy(self):
        m = MSSFuse(1, 1)
        with torch.no_grad():
            for b in m.branches:
                b.weight.fill_(1.0)
                b.bias.zero_()
        x = torch.zeros(1, 1, 21, 21)
        x[0, 0, 10, :] = 1.0
        energy = {k: float(o.square().sum()) for k, o in zip(m.kinds, m.branch_outputs(x))}
        for k in (7, 11):
            assert energy[f"1x{k}"] > energy[f"{k}x1"]
            ref_h = oracles.naive_conv2d(x[0].numpy(), np.ones((1, 1, 1, k)))
            assert energy[f"1x{k}"] == pytest.approx(float((ref_h ** 2).sum()))
        # transposing the input swaps the roles
        energy_t = {kd: float(o.square().sum()) for kd, o in zip(m.kinds, m.branch_outputs(x.transpose(2, 3)))}
        assert energy_t["7x1"] == pytest.approx(energy["1x7"])


class TestPPM:
    def test_constant_input_pools_to_constant(self):
        seeded()
        ppm = PPM(8, 8)
        x = torch.arange(8.0).view(1, 8, 1, 1).expand(1, 8, 12, 12)
        for b, p in zip(ppm.bins, ppm.pooled(x)):
            assert p.shape[-2:] == (b, b)
            assert torch.allclose(p, torch.arange(8.0).view(1, 8, 1, 1).expand_as(p))
        assert ppm(x).shape == (1, 8, 12, 12)

    def test_tiny_map(self):
        seeded()
        ppm = PPM(8, 8)
        assert [tuple(p.shape[-2:]) for p in ppm.pooled(torch.randn(1, 8, 2, 2))] == [(1, 1), (2, 2), (3, 3), (6, 6)]


class TestDepthBlock:
    def test_attention_rows_sum_to_one(self):
        seeded()
        blk = DepthDecoderBlock(32, 16, heads=2, window=4)
        x = blk._align(torch.randn(1, 32, 4, 4), torch.randn(1, 16, 8, 8))
        _, w = blk.attention(x, torch.randn(1, 16, 8, 8))
        assert torch.allclose(w.sum(-1), torch.ones(()))

    def test_zero_skip_identity(self):
        seeded()
        blk = DepthDecoderBlock(16, 16)
        with torch.no_grad():
            blk.v.bias.zero_()
        f_in, skip = torch.randn(1, 16, 4, 4), torch.zeros(1, 16, 8, 8)
        assert torch.allclose(blk(f_in, skip), blk.residual_path(f_in, skip), atol=1e-6)

    def test_skip_width_checked(self):
        with pytest.raises(ShapeError):
            DepthDecoderBlock(16, 16)(torch.zeros(1, 16, 4, 4), torch.zeros(1, 8, 8, 8))
        with pytest.raises(ShapeError):
            DepthDecoderBlock(16, 12, heads=5)


class TestOBBlock:
    def test_shape(self):
        seeded()
        f, side = OBDecoderBlock(64)(torch.randn(1, 64, 16, 16), (128, 128))
        assert f.shape == (1, 32, 32, 32) and side.shape == (1, 1, 128, 128)

    def test_five_blocks_reach_full_resolution(self):
        seeded()
        x = torch.randn(1, 128, 2, 2)
        for w in (128, 64, 32, 16, 8):
            x, side = OBDecoderBlock(w)(x, (64, 64))
        assert x.shape[-2:] == (64, 64) and side.shape[-2:] == (64, 64)

    def test_odd_channels(self):
        with pytest.raises(ConfigError):
            OBDecoderBlock(7)


class TestEIP:
    def test_shape_range_and_liveness(self):
        seeded()
        eip = EIP(8, 4)
        img = torch.randn(1, 3, 32, 32)
        sa = eip.spatial_map(img)
        assert ((sa > 0) & (sa < 1)).all()
        out = eip(img, torch.randn(1, 4, 32, 32))
        assert out.shape == (1, 1, 32, 32)
        out.mean().backward()
        assert eip.stem[0].weight.grad.abs().sum() > 0

    def test_missing_skip(self):
        with pytest.raises(ConfigError):
            EIP(8, 4)(torch.zeros(1, 3, 32, 32))


class TestModel:
    def test_stage1_contract(self):
        seeded()
        model = build_model(model_cfg()).eval()
        x = torch.randn(2, 3, 64, 64)
        with torch.no_grad():
            a, b = model(x), model(x)
        assert a.depth.shape == a.ob_prob_final.shape == (2, 1, 64, 64)
        assert len(a.side_logits) == 5 and all(s.shape == (2, 1, 64, 64) for s in a.side_logits)
        assert (a.depth > 0).all() and (a.depth <= 10).all()
        assert ((a.ob_prob >= 0) & (a.ob_prob <= 1)).all()
        assert torch.equal(a.depth, b.depth) and torch.equal(a.ob_logit, b.ob_logit)

    def test_ssr_passthrough_at_init(self):
        seeded()
        model = build_model(model_cfg()).eval()
        x = torch.randn(1, 3, 64, 64)
        with torch.no_grad():
            s1 = model(x, stage=1)
            s2 = model.forward_stage2(x, s1)
        assert oracles.pearson(s1.depth.numpy(), s2.depth.numpy()) > 0.99
        assert torch.equal(s1.ob_logit, s2.ob_logit)

    @pytest.mark.parametrize("flags", [dict(use_casm=False), dict(use_eip=False), dict(use_ssr=False),
                                       dict(tasks="depth", use_ssr=False)])
    def test_ablation_variants(self, flags):
        seeded()
        model = build_model(model_cfg(**flags))
        out = model(torch.randn(1, 3, 64, 64))
        assert out.depth.shape == (1, 1, 64, 64)
        if flags.get("tasks") == "depth":
            assert out.ob_logit is None and out.ob_logits == []
        else:
            assert len(out.ob_logits) == 6
        if flags.get("use_ssr") is False:
            assert model.ssr is None
            with pytest.raises(ConfigError):
                model(torch.randn(1, 3, 64, 64), stage=2)

    def test_casm_flag_changes_bridges(self):
        assert isinstance(build_model(model_cfg()).stage1.bridges[0], CASM)
        assert isinstance(build_model(model_cfg(use_casm=False)).stage1.bridges[0], PlainBridge)

    def test_depth_only_with_ssr_rejected(self):
        with pytest.raises(ConfigError):
            build_model(model_cfg(tasks="depth", use_ssr=True))

    def test_pad_unpad(self):
        x = torch.randn(1, 3, 50, 70)
        padded, pads = pad_to_multiple(x)
        assert padded.shape[-2:] == (64, 96) and pads == (7, 7, 13, 13)
        assert torch.equal(unpad(padded, pads), x)
