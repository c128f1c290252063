import math

import numpy as np
import pytest
import torch

from relayjscc.channel import LinkConfig, RelayLinks, average_power, awgn_link, make_generator
from relayjscc.errors import ConfigurationError
from relayjscc.protocols import (
    Protocol,
    ProtocolSpec,
    RelaySystem,
    forward_af,
    forward_df,
    forward_noncoop,
    forward_pf,
    mse,
)

LINKS = RelayLinks.from_snr_db(12.0, 6.0, 6.0)
ALL_SPECS = [ProtocolSpec("AF"), ProtocolSpec("DF", 1.0), ProtocolSpec("PF"), ProtocolSpec("NONCOOP")]


def build(spec, cfg, seed=0, **kw):
    torch.manual_seed(seed)
    return RelaySystem(spec, cfg, **kw).double()


class TestProtocolSpec:
    def test_parse_case_insensitive(self):
        assert Protocol.parse("af") is Protocol.AF

    def test_unknown(self):
        with pytest.raises(ConfigurationError):
            Protocol.parse("XF")

    def test_df_needs_lambda(self):
        with pytest.raises(ConfigurationError):
            ProtocolSpec("DF")
        with pytest.raises(ConfigurationError):
            ProtocolSpec("DF", -1.0)

    def test_lambda_only_for_df(self):
        with pytest.raises(ConfigurationError):
            ProtocolSpec("PF", 1.0)

    def test_dict_round_trip(self):
        for spec in ALL_SPECS:
            assert ProtocolSpec.from_dict(spec.to_dict()) == spec

    @pytest.mark.parametrize("spec,uses", [(ALL_SPECS[0], 768), (ALL_SPECS[1], 768), (ALL_SPECS[2], 768), (ALL_SPECS[3], 384)])
    def test_channel_uses(self, spec, uses):
        assert spec.channel_uses(384) == uses


@pytest.mark.parametrize("spec", ALL_SPECS, ids=lambda s: s.kind.value)
class TestForward:
    def test_shapes_and_channel_uses(self, spec, tiny_cfg, tiny_images):
        r = build(spec, tiny_cfg)(tiny_images, LINKS, 0)
        assert r.s_hat.shape == tiny_images.shape
        assert r.channel_uses == spec.channel_uses(tiny_cfg.k)

    def test_transmit_power(self, spec, tiny_cfg, tiny_images):
        r = build(spec, tiny_cfg)(tiny_images, LINKS, 0)
        for z in r.transmitted.values():
            np.testing.assert_allclose(average_power(z).detach().numpy(), 1.0, atol=1e-10)

    def test_deterministic_given_seed(self, spec, tiny_cfg, tiny_images):
        system = build(spec, tiny_cfg)
        a = system(tiny_images, LINKS, 5)
        b = system(tiny_images, LINKS, 5)
        assert torch.equal(a.s_hat, b.s_hat) and torch.equal(a.loss, b.loss)

    def test_different_seeds_differ(self, spec, tiny_cfg, tiny_images):
        system = build(spec, tiny_cfg)
        assert not torch.equal(system(tiny_images, LINKS, 1).s_hat, system(tiny_images, LINKS, 2).s_hat)

    def test_loss_is_destination_mse_plus_relay_term(self, spec, tiny_cfg, tiny_images):
        r = build(spec, tiny_cfg)(tiny_images, LINKS, 0)
        assert r.dest_loss.item() == pytest.approx(mse(tiny_images, r.s_hat).item(), rel=1e-12)
        extra = spec.lam * r.relay_loss.item() if spec.kind is Protocol.DF else 0.0
        assert r.loss.item() == pytest.approx(r.dest_loss.item() + extra, rel=1e-12)

    def test_gradient_reaches_every_network(self, spec, tiny_cfg, tiny_images):
        system = build(spec, tiny_cfg)
        system(tiny_images, LINKS, 0).loss.backward()
        parts = [system.encoder, system.decoder] + ([system.relay] if system.relay is not None else [])
        for part in parts:
            assert any(p.grad is not None and float(p.grad.abs().sum()) > 0 for p in part.parameters())


class TestAF:
    def test_dead_relay_equals_direct_pipeline(self, tiny_cfg, tiny_images):
        links = RelayLinks(sr=LinkConfig(1.0, 0.1), sd=LinkConfig(0.7, 0.2), rd=LinkConfig(0.0, 0.2))
        system = build(ProtocolSpec("AF"), tiny_cfg).eval()
        with torch.no_grad():
            got = system(tiny_images, links, 3).s_hat
            g = make_generator(3)
            x = system.encoder(tiny_images, links.snr())
            y_sd = awgn_link(x, links.sd, g)
            expected = system.decoder(y_sd / 0.7, snr=links.snr())
        torch.testing.assert_close(got, expected)

    def test_expected_power_mode_uses_fixed_gain(self, tiny_cfg, tiny_images):
        system = build(ProtocolSpec("AF"), tiny_cfg, af_power="expected")
        r = system(tiny_images, LINKS, 0)
        power = average_power(r.transmitted["relay"]).detach().numpy()
        assert not np.allclose(power, 1.0, atol=1e-6)
        assert abs(power.mean() - 1.0) < 0.5

    def test_bad_power_mode(self, tiny_cfg):
        with pytest.raises(ConfigurationError):
            RelaySystem(ProtocolSpec("AF"), tiny_cfg, af_power="peak")

    def test_noiseless_everything_is_lossless_transport(self, tiny_cfg, tiny_images):
        # MRC of two noiseless copies returns the codeword exactly, so AF == noiseless direct decode
        system = build(ProtocolSpec("AF"), tiny_cfg).eval()
        links = RelayLinks.noiseless()
        with torch.no_grad():
            got = system(tiny_images, links, 0).s_hat
            expected = system.decoder(system.encoder(tiny_images, links.snr()), snr=links.snr())
        torch.testing.assert_close(got, expected)


class TestDF:
    @pytest.mark.parametrize("lam", [0.5, 1.0, 2.0])
    def test_lambda_algebra(self, tiny_cfg, tiny_images, lam):
        torch.manual_seed(0)
        base = RelaySystem(ProtocolSpec("DF", 0.0), tiny_cfg).double()
        weighted = RelaySystem(ProtocolSpec("DF", lam), tiny_cfg).double()
        weighted.load_state_dict(base.state_dict())
        r0 = base(tiny_images, LINKS, 9)
        r1 = weighted(tiny_images, LINKS, 9)
        relay_mse = mse(tiny_images, r0.s_hat_r).item()
        assert r1.loss.item() - r0.loss.item() == pytest.approx(lam * relay_mse, abs=1e-6)

    def test_lambda_zero_still_trains_relay_through_destination(self, tiny_cfg, tiny_images):
        system = build(ProtocolSpec("DF", 0.0), tiny_cfg)
        system(tiny_images, LINKS, 0).loss.backward()
        assert any(float(p.grad.abs().sum()) > 0 for p in system.relay.encoder.parameters())


class TestWrappers:
    def test_wrappers_check_protocol(self, tiny_cfg, tiny_images):
        with pytest.raises(ConfigurationError):
            forward_df(build(ProtocolSpec("AF"), tiny_cfg), tiny_images, LINKS, 0)

    def test_wrapper_outputs(self, tiny_cfg, tiny_images):
        s, loss = forward_af(build(ProtocolSpec("AF"), tiny_cfg), tiny_images, LINKS, 0)
        assert s.shape == tiny_images.shape
        s, s_r, loss = forward_df(build(ProtocolSpec("DF", 1.0), tiny_cfg), tiny_images, LINKS, 0)
        assert s_r.shape == tiny_images.shape
        s, loss = forward_pf(build(ProtocolSpec("PF"), tiny_cfg), tiny_images, LINKS, 0)
        assert loss.ndim == 0

    def test_noncoop_accepts_single_link(self, tiny_cfg, tiny_images):
        system = build(ProtocolSpec("NONCOOP"), tiny_cfg)
        link = LinkConfig.from_snr_db(6.0)
        s1, _ = forward_noncoop(system, tiny_images, link, 4)
        s2, _ = forward_noncoop(system, tiny_images, RelayLinks(link, link, link), 4)
        torch.testing.assert_close(s1, s2)
