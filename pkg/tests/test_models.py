import math

import numpy as np
import pytest
import torch

from relayjscc.channel import average_power, complex_noise, RelayLinks
from relayjscc.errors import ConfigurationError
from relayjscc.models import (
    CAModule,
    Decoder,
    DFRelay,
    Encoder,
    EncoderConfig,
    GDN,
    PFRelay,
    count_parameters,
    set_ca_frozen,
)

SNR = (12.0, 8.0, 8.0)


class TestEncoderConfig:
    def test_cifar_bandwidth(self):
        cfg = EncoderConfig()
        assert cfg.k == 384
        assert cfg.c_out == 12
        assert cfg.latent_shape == (12, 8, 8)

    def test_for_cpp_derives_c_out(self):
        assert EncoderConfig.for_cpp(0.125).c_out == 12
        assert EncoderConfig.for_cpp(0.25).c_out == 24
        assert EncoderConfig.for_cpp(0.25).k == 768

    def test_inconsistent_c_out_rejected(self):
        with pytest.raises(ConfigurationError, match="c_out"):
            EncoderConfig(c_out=16)

    def test_indivisible_image_rejected(self):
        with pytest.raises(ConfigurationError):
            EncoderConfig(image_dims=(3, 30, 30))


class TestGDN:
    def test_identity_like_at_small_input(self):
        gdn = GDN(4)
        x = 1e-4 * torch.randn(2, 4, 3, 3)
        torch.testing.assert_close(gdn(x), x, rtol=1e-4, atol=1e-9)

    def test_large_input_finite(self):
        gdn, igdn = GDN(3), GDN(3, inverse=True)
        x = 10 * torch.randn(2, 3, 4, 4)
        assert torch.isfinite(gdn(x)).all() and torch.isfinite(igdn(x)).all()

    def test_zero_input_and_zero_params_stay_finite(self):
        gdn = GDN(3)
        with torch.no_grad():
            gdn.beta_sqrt.zero_()
            gdn.gamma_sqrt.zero_()
        out = gdn(torch.zeros(1, 3, 2, 2))
        assert torch.isfinite(out).all()

    def test_matches_per_pixel_formula(self):
        gdn = GDN(3)
        with torch.no_grad():
            gdn.beta_sqrt.uniform_(0.5, 1.5)
            gdn.gamma_sqrt.uniform_(0.0, 0.5)
        x = torch.randn(1, 3, 2, 2, dtype=torch.float64)
        gdn = gdn.double()
        beta = gdn.beta_sqrt.detach().numpy() ** 2 + gdn.eps
        gamma = gdn.gamma_sqrt.detach().numpy() ** 2
        xs = x.numpy()[0]
        expected = np.empty_like(xs)
        for i in range(3):
            expected[i] = xs[i] / np.sqrt(beta[i] + np.einsum("j,jhw->hw", gamma[i], xs**2))
        np.testing.assert_allclose(gdn(x).detach().numpy()[0], expected, rtol=1e-12)


class TestCAModule:
    def test_frozen_is_identity(self):
        ca = CAModule(8)
        ca.frozen = True
        x = torch.randn(2, 8, 4, 4)
        assert torch.equal(ca(x, torch.zeros(2, 3)), x)

    def test_gates_in_unit_interval(self):
        ca = CAModule(8)
        g = ca.gates(torch.randn(5, 8, 4, 4), torch.randn(5, 3) * 20)
        assert g.shape == (5, 8)
        assert bool(((g > 0) & (g < 1)).all())

    def test_infinite_snr_is_clamped(self, tiny_cfg):
        enc = Encoder(tiny_cfg)
        img = torch.rand(2, 3, 8, 8)
        a = enc(img, (math.inf, 5.0, 5.0))
        b = enc(img, (tiny_cfg.snr_clamp_db, 5.0, 5.0))
        assert torch.isfinite(torch.view_as_real(a)).all()
        torch.testing.assert_close(a, b)

    def test_set_ca_frozen_reaches_all_modules(self, tiny_cfg):
        dec = Decoder(tiny_cfg)
        set_ca_frozen(dec)
        assert all(m.frozen for m in dec.modules() if isinstance(m, CAModule))
        y = complex_noise((2, tiny_cfg.k), 1.0, 0)
        torch.testing.assert_close(dec(y, snr=(0.0, 0.0, 0.0)), dec(y, snr=(30.0, 30.0, 30.0)))


class TestEncoder:
    def test_output_shape_and_power(self, tiny_cfg):
        z = Encoder(tiny_cfg)(torch.rand(6, 3, 8, 8), SNR)
        assert z.shape == (6, tiny_cfg.k) and z.is_complex()
        np.testing.assert_allclose(average_power(z).detach().numpy(), 1.0, atol=1e-5)

    def test_cifar_codeword_length(self):
        cfg = EncoderConfig(c_feat=8)
        assert Encoder(cfg)(torch.rand(2, 3, 32, 32), SNR).shape == (2, 384)

    def test_rejects_wrong_image_shape(self, tiny_cfg):
        with pytest.raises(ConfigurationError):
            Encoder(tiny_cfg)(torch.rand(1, 3, 16, 16), SNR)

    def test_gradient_matches_finite_difference(self, tiny_cfg):
        torch.manual_seed(0)
        enc = Encoder(tiny_cfg).double()
        img = torch.rand(2, 3, 8, 8, dtype=torch.float64)
        target = complex_noise((2, tiny_cfg.k), 1.0, 1, dtype=torch.float64)

        def loss():
            return average_power(enc(img, SNR) - target).mean()

        p = enc.down[0][0].weight
        loss().backward()
        analytic = p.grad.flatten()[:3].clone()
        assert float(analytic.abs().max()) > 0
        h = 1e-6
        for i in range(3):
            with torch.no_grad():
                p.view(-1)[i] += h
                up = float(loss())
                p.view(-1)[i] -= 2 * h
                down = float(loss())
                p.view(-1)[i] += h
            assert analytic[i].item() == pytest.approx((up - down) / (2 * h), rel=1e-4, abs=1e-9)


class TestDecoder:
    @pytest.mark.parametrize("n_inputs", [1, 2])
    def test_output_shape_and_range(self, tiny_cfg, n_inputs):
        dec = Decoder(tiny_cfg, n_inputs=n_inputs)
        ys = [complex_noise((3, tiny_cfg.k), 4.0, i) for i in range(n_inputs)]
        with torch.no_grad():
            out = dec(*ys, snr=SNR)
        assert out.shape == (3, 3, 8, 8)
        assert float(out.min()) >= 0 and float(out.max()) <= 1

    def test_zero_signal_is_finite(self, tiny_cfg):
        out = Decoder(tiny_cfg)(torch.zeros(2, tiny_cfg.k, dtype=torch.complex64), snr=SNR)
        assert torch.isfinite(out).all()

    def test_wrong_number_of_inputs(self, tiny_cfg):
        y = complex_noise((1, tiny_cfg.k), 1.0, 0)
        with pytest.raises(ConfigurationError):
            Decoder(tiny_cfg, n_inputs=2)(y, snr=SNR)

    def test_wrong_codeword_length(self, tiny_cfg):
        with pytest.raises(ConfigurationError):
            Decoder(tiny_cfg)(complex_noise((1, tiny_cfg.k + 1), 1.0, 0), snr=SNR)

    def test_eval_output_clamped(self, tiny_cfg):
        dec = Decoder(tiny_cfg).eval()
        out = dec(complex_noise((2, tiny_cfg.k), 100.0, 0), snr=SNR)
        assert out.detach().min().item() >= 0 and out.detach().max().item() <= 1


class TestRelays:
    def test_df_relay_outputs(self, tiny_cfg):
        y = complex_noise((2, tiny_cfg.k), 1.0, 0)
        z, s = DFRelay(tiny_cfg)(y, SNR)
        assert z.shape == (2, tiny_cfg.k) and s.shape == (2, 3, 8, 8)
        np.testing.assert_allclose(average_power(z).detach().numpy(), 1.0, atol=1e-5)

    def test_pf_relay_outputs(self, tiny_cfg):
        z, s = PFRelay(tiny_cfg)(complex_noise((2, tiny_cfg.k), 1.0, 0), SNR)
        assert s is None and z.shape == (2, tiny_cfg.k)
        np.testing.assert_allclose(average_power(z).detach().numpy(), 1.0, atol=1e-5)

    def test_pf_smaller_than_df(self):
        cfg = EncoderConfig(c_feat=32)
        assert count_parameters(PFRelay(cfg)) < count_parameters(DFRelay(cfg))
