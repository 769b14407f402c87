from dataclasses import replace

import numpy as np
import pytest
import torch
import torch.nn.functional as F

from spectre.cyrope import build_table
from spectre.errors import BadMagicError, ConfigError, HashMismatchError, TruncatedPayloadError
from spectre.nn import (
    GRAD_CHECK_OPS,
    PRESETS,
    SpectreModel,
    attention,
    cnn_embed,
    grad_check,
    load_checkpoint,
    model_config,
    parameter_count,
    read_checkpoint,
    rmsnorm,
    swiglu_ffn,
    token_coords,
    write_checkpoint,
)

DESK = PRESETS["desk"]
torch.set_num_threads(1)


def np_gelu(x):
    from scipy.special import erf
    return 0.5 * x * (1 + erf(x / np.sqrt(2)))


def small_cfg(**kw):
    return replace(DESK, channels=3, segment_len=400, **kw)


class TestConfig:
    def test_desk_derived(self):
        assert DESK.head_dim == 16 and DESK.time_patches == 20 and DESK.n_tokens == 240
        assert DESK.d_ff == 168

    def test_paper_preset(self):
        p = PRESETS["paper"]
        assert (p.d, p.layers, p.k, p.head_dim) == (256, 18, 500, 64)

    def test_rejects_bad(self):
        with pytest.raises(ConfigError):
            model_config(d=60)
        with pytest.raises(ConfigError):
            model_config(segment_len=2050)
        with pytest.raises(ConfigError):
            model_config(pe_type="sinusoid")
        with pytest.raises(ConfigError):
            model_config(nonsense=1)

    def test_hash_tracks_architecture_only(self):
        assert DESK.config_hash() == replace(DESK, dropout=0.1, mask_ratio=0.5).config_hash()
        assert DESK.config_hash() != replace(DESK, pe_type="absolute").config_hash()
        assert len(DESK.config_hash()) == 16

    def test_token_coords_channel_major(self):
        co = token_coords(3, 4)
        assert co[0].tolist() == [0, 0] and co[5].tolist() == [1, 1] and co[11].tolist() == [2, 3]


class TestCnn:
    def test_shape_trace(self):
        model = SpectreModel(DESK)
        h = torch.zeros(1, 1, 100)
        lengths = [h.shape[-1]]
        h = model.cnn.layer1(h); lengths.append(h.shape[-1])
        h = F.max_pool1d(h, 3, 3); lengths.append(h.shape[-1])
        h = model.cnn.layer2(h); lengths.append(h.shape[-1])
        h = F.max_pool1d(h, 3, 3); lengths.append(h.shape[-1])
        h = model.cnn.layer3(h); lengths.append(h.shape[-1])
        assert lengths == [100, 50, 16, 16, 5, 5]
        assert h.mean(-1).shape == (1, 64)

    def test_token_count(self):
        model = SpectreModel(DESK)
        grid = cnn_embed(np.random.default_rng(0).standard_normal((12, 2000)).astype(np.float32), model)
        assert grid.embeddings.shape == (240, 64) and grid.coords.shape == (240, 2)

    def test_zero_in_zero_out(self):
        # biases start at zero and gelu(0) = 0
        model = SpectreModel(DESK)
        with torch.no_grad():
            assert torch.all(model.embed(torch.zeros(1, 12, 2000)) == 0)

    def test_patches_are_independent(self):
        model = SpectreModel(small_cfg())
        x = torch.randn(1, 3, 400, generator=torch.Generator().manual_seed(0))
        y = x.clone()
        y[0, 1, 100:200] += 1.0
        with torch.no_grad():
            a, b = model.embed(x)[0], model.embed(y)[0]
        changed = (a != b).any(-1).nonzero().ravel().tolist()
        assert changed == [1 * 4 + 1]


class TestRmsNorm:
    def test_example(self):
        out = rmsnorm(torch.tensor([[3.0, 4.0]], dtype=torch.float64), torch.ones(2, dtype=torch.float64))
        r = np.sqrt(12.5 + 1e-6)
        np.testing.assert_allclose(out.numpy(), [[3 / r, 4 / r]], rtol=1e-12)

    def test_scale_invariant(self):
        x = torch.randn(4, 8, dtype=torch.float64)
        g = torch.rand(8, dtype=torch.float64)
        np.testing.assert_allclose(rmsnorm(x * 7.5, g, eps=0).numpy(), rmsnorm(x, g, eps=0).numpy(), rtol=1e-12)

    def test_closed_form_gradient(self):
        # d/dx of sum(w * x g / r) = g w / r - x (x . g w) / (d r^3)
        rng = np.random.default_rng(0)
        x, g, w = rng.standard_normal(6), rng.standard_normal(6), rng.standard_normal(6)
        xt = torch.tensor(x, requires_grad=True)
        (rmsnorm(xt, torch.tensor(g)) * torch.tensor(w)).sum().backward()
        r = np.sqrt(np.mean(x ** 2) + 1e-6)
        expect = g * w / r - x * np.dot(x, g * w) / (6 * r ** 3)
        np.testing.assert_allclose(xt.grad.numpy(), expect, rtol=1e-10)


class TestSwiGlu:
    def test_matches_numpy(self):
        rng = np.random.default_rng(1)
        x = rng.standard_normal((3, 8))
        w1, w3, w2 = rng.standard_normal((16, 8)), rng.standard_normal((16, 8)), rng.standard_normal((8, 16))
        a = x @ w1.T
        expect = ((a / (1 + np.exp(-a))) * (x @ w3.T)) @ w2.T
        got = swiglu_ffn(*map(torch.tensor, (x, w1, w3, w2))).numpy()
        np.testing.assert_allclose(got, expect, rtol=1e-12)

    def test_zero_gate(self):
        x = torch.randn(2, 8, dtype=torch.float64)
        w = torch.randn(16, 8, dtype=torch.float64)
        assert torch.all(swiglu_ffn(x, torch.zeros(16, 8, dtype=torch.float64), w, w.T) == 0)


class TestKinHead:
    def test_matches_numpy(self):
        model = SpectreModel(DESK).double()
        h = np.random.default_rng(2).standard_normal((3, 64))
        kh = model.kin_head
        with torch.no_grad():
            for p in kh.parameters():
                p.normal_(0, 0.3)
            got = kh(torch.tensor(h)).numpy()
        w1, b1 = kh.fc1.weight.detach().numpy(), kh.fc1.bias.detach().numpy()
        w2, b2 = kh.fc2.weight.detach().numpy(), kh.fc2.bias.detach().numpy()
        np.testing.assert_allclose(got, np_gelu(h @ w1.T + b1) @ w2.T + b2, rtol=1e-10)


def _identity_rope(n, dh):
    return torch.ones(1, n, dh // 2, dtype=torch.float64), torch.zeros(1, n, dh // 2, dtype=torch.float64)


class TestAttention:
    def setup_method(self):
        g = torch.Generator().manual_seed(0)
        self.w_qkv = torch.randn(48, 16, generator=g, dtype=torch.float64) * 0.3
        self.w_out = torch.randn(16, 16, generator=g, dtype=torch.float64) * 0.3

    def test_single_token(self):
        x = torch.randn(1, 1, 16, dtype=torch.float64)
        out = attention(x, self.w_qkv, self.w_out, 4, *_identity_rope(1, 4))
        v = x[0, 0] @ self.w_qkv[32:].T
        np.testing.assert_allclose(out[0, 0].numpy(), (v @ self.w_out.T).numpy(), rtol=1e-12)

    def test_rows_sum_to_one(self):
        x = torch.randn(2, 7, 16, dtype=torch.float64)
        _, probs = attention(x, self.w_qkv, self.w_out, 4, *_identity_rope(7, 4), return_probs=True)
        np.testing.assert_allclose(probs.sum(-1).numpy(), 1.0, atol=1e-12)
        assert probs.shape == (2, 4, 7, 7)

    def test_permutation_equivariant_without_rotation(self):
        x = torch.randn(1, 6, 16, dtype=torch.float64)
        perm = torch.tensor([3, 0, 5, 1, 4, 2])
        rope = _identity_rope(6, 4)
        a = attention(x, self.w_qkv, self.w_out, 4, *rope)
        b = attention(x[:, perm], self.w_qkv, self.w_out, 4, *rope)
        np.testing.assert_allclose(a[:, perm].numpy(), b.numpy(), atol=1e-12)

    def test_probabilities_shift_invariant(self):
        tab = build_table(4, 12)
        x = torch.randn(1, 6, 16, dtype=torch.float64)
        t = np.arange(6)
        c = np.array([0, 1, 2, 9, 10, 11])

        def probs(dt, dc):
            cos, sin = tab.cos_sin(t + dt, c + dc)
            return attention(x, self.w_qkv, self.w_out, 4, torch.tensor(cos)[None], torch.tensor(sin)[None],
                             return_probs=True)[1].numpy()

        np.testing.assert_allclose(probs(5, 0), probs(0, 0), atol=1e-9)
        np.testing.assert_allclose(probs(0, 4), probs(0, 0), atol=1e-9)


class TestEncoder:
    def test_zero_depth_is_final_norm(self):
        model = SpectreModel(small_cfg(layers=0)).double()
        z = torch.randn(2, 12, 64, dtype=torch.float64)
        np.testing.assert_array_equal(model.encode(z, *model.rope()).detach().numpy(),
                                      model.final_norm(z).detach().numpy())

    def test_rotation_makes_it_position_aware(self):
        x = torch.randn(1, 3, 400, generator=torch.Generator().manual_seed(1))
        swapped = x[:, [1, 0, 2]]
        outs = {}
        for pe in ("cyrope", "absolute"):
            model = SpectreModel(small_cfg(pe_type=pe), seed=0)
            with torch.no_grad():
                if pe == "absolute":
                    model.abs_pe.zero_()
                outs[pe] = (model(x), model(swapped))
        # with no positional signal the kinematics token cannot tell channels apart
        torch.testing.assert_close(outs["absolute"][0], outs["absolute"][1], rtol=1e-5, atol=1e-6)
        assert not torch.allclose(outs["cyrope"][0], outs["cyrope"][1], rtol=1e-5, atol=1e-6)

    def test_output_shapes(self):
        model = SpectreModel(small_cfg())
        x = torch.randn(2, 3, 400)
        assert model(x).shape == (2, 5)
        masked = torch.tensor([[0, 3, 7], [1, 2, 11]])
        assert model(x, masked).shape == (2, 3, 32)

    @pytest.mark.parametrize("style", ["bert", "mae"])
    def test_visible_tokens_drive_ssl(self, style):
        model = SpectreModel(small_cfg(mask_style=style))
        x = torch.randn(1, 3, 400, generator=torch.Generator().manual_seed(2))
        masked = torch.tensor([[5]])
        y = x.clone()
        y[0, 1, 100:200] = 99.0  # token 5 itself: hidden from the encoder
        with torch.no_grad():
            assert torch.equal(model(x, masked), model(y, masked))


class TestParameters:
    def test_golden_count(self):
        assert parameter_count(SpectreModel(DESK)) == 236037

    def test_variants_add_parameters(self):
        base = parameter_count(SpectreModel(DESK))
        assert parameter_count(SpectreModel(replace(DESK, pe_type="absolute"))) == base + 240 * 64
        assert parameter_count(SpectreModel(replace(DESK, mask_style="mae"))) > base

    def test_seeded_init(self):
        a, b = SpectreModel(DESK, seed=3), SpectreModel(DESK, seed=3)
        for (n, p), (_, q) in zip(a.named_parameters(), b.named_parameters()):
            assert torch.equal(p, q), n
        c = SpectreModel(DESK, seed=4)
        assert not torch.equal(a.ssl_head.weight, c.ssl_head.weight)

    def test_init_statistics(self):
        m = SpectreModel(DESK)
        w = m.blocks[0].attn.qkv.weight
        assert abs(w.std().item() - 0.02) < 0.003 and w.abs().max() <= 0.04
        assert torch.all(m.final_norm.gain == 1) and torch.all(m.ssl_head.bias == 0)


class TestGradCheck:
    @pytest.mark.parametrize("op", ["linear", "rmsnorm"])
    def test_linear_and_norm_tight(self, op):
        assert grad_check(op) < 1e-6

    @pytest.mark.parametrize("op", ["swiglu", "mha", "cnn", "kin_head", "ssl_head", "block"])
    def test_ops(self, op):
        assert grad_check(op) < 1e-4

    def test_registry(self):
        assert set(GRAD_CHECK_OPS) >= {"linear", "rmsnorm", "swiglu", "mha", "model_ssl", "model_finetune"}
        with pytest.raises(ConfigError):
            grad_check("conv3d")

    def test_explicit_input(self):
        assert grad_check("linear", input=np.ones((2, 64))) < 1e-6
        with pytest.raises(ConfigError):
            grad_check("mha", input=np.ones((2, 64)))


class TestCheckpoint:
    def test_round_trip(self, tmp_path):
        a = SpectreModel(DESK, seed=1)
        write_checkpoint(tmp_path / "m.spck", a)
        h, tensors = read_checkpoint(tmp_path / "m.spck")
        assert h == DESK.config_hash() and list(tensors) == sorted(tensors)
        b = SpectreModel(DESK, seed=2)
        load_checkpoint(tmp_path / "m.spck", b)
        for (n, p), (_, q) in zip(a.named_parameters(), b.named_parameters()):
            assert torch.equal(p, q), n

    def test_bytes_deterministic(self, tmp_path):
        write_checkpoint(tmp_path / "a", SpectreModel(DESK, seed=1))
        write_checkpoint(tmp_path / "b", SpectreModel(DESK, seed=1))
        assert (tmp_path / "a").read_bytes() == (tmp_path / "b").read_bytes()

    def test_hash_mismatch(self, tmp_path):
        write_checkpoint(tmp_path / "m.spck", SpectreModel(DESK))
        with pytest.raises(HashMismatchError):
            load_checkpoint(tmp_path / "m.spck", SpectreModel(replace(DESK, pe_type="absolute")))

    def test_corrupt(self, tmp_path):
        p = tmp_path / "m.spck"
        write_checkpoint(p, SpectreModel(small_cfg()))
        raw = p.read_bytes()
        p.write_bytes(raw[:-7])
        with pytest.raises(TruncatedPayloadError):
            read_checkpoint(p)
        p.write_bytes(b"NOPE" + raw[4:])
        with pytest.raises(BadMagicError):
            read_checkpoint(p)


class TestPaperPreset:
    def test_forward_finite(self):
        cfg = PRESETS["paper"]
        model = SpectreModel(cfg)
        x = torch.randn(1, 12, 2000, generator=torch.Generator().manual_seed(0))
        with torch.no_grad():
            out = model(x)
            logits = model(x, torch.tensor([[0, 17, 239]]))
        assert out.shape == (1, 5) and torch.isfinite(out).all()
        assert logits.shape == (1, 3, 500) and torch.isfinite(logits).all()
