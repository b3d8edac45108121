"""FLOP accounting: formula checks, published-table windows, invariants."""

import numpy as np
import pytest

from sparseguide.costs import (
    DESK,
    XL2,
    ArchSpec,
    arch_preset,
    forward_flops,
    guidance_flops,
    layer_flops,
)
from sparseguide.denoiser import DenoiserConfig, RouteSpec
from sparseguide.errors import ConfigurationError
from sparseguide.guidance import GammaSchedule, GuidanceConfig, preset
from sparseguide.sampler import SamplerConfig

SCFG40 = SamplerConfig(num_steps=40, seed=0)


class TestLayerFlops:
    def test_unit_substitution(self):
        # d=1, T=1, heads=1, ratio=1 -> attention 8+4, feed-forward 4
        assert layer_flops(1, 1, 1, 1) == 16.0

    def test_doubling_structure(self):
        d, r, t = 3, 2, 5
        proj_mlp = 2 * 4 * d * d * t + 2 * 2 * r * d * d * t
        score = 2 * 2 * d * t * t
        assert layer_flops(d, 1, t, r) == proj_mlp + score
        # doubling T doubles projections and quadruples the score term
        assert layer_flops(d, 1, 2 * t, r) == 2 * proj_mlp + 4 * score

    def test_zero_tokens_skips_layer(self):
        assert layer_flops(64, 4, 0, 4) == 0.0

    def test_heads_do_not_change_total(self):
        assert layer_flops(64, 4, 10, 4) == layer_flops(64, 8, 10, 4)


class TestForwardFlops:
    def test_gamma_zero_mode_independent(self):
        for mode in ("dense", "mask", "route"):
            assert forward_flops(XL2, 0.0, mode=mode) == forward_flops(
                XL2, 0.0, mode="dense"
            )

    def test_xl2_dense_matches_published_value(self):
        dense = forward_flops(XL2, 0.0)
        assert abs(dense - 114.42e9) / 114.42e9 < 0.05

    def test_xl2_dense_with_scores_still_in_window(self):
        dense = forward_flops(XL2, 0.0, include_attention_scores=True)
        assert abs(dense - 114.42e9) / 114.42e9 < 0.05

    def test_routing_monotone_in_gamma(self):
        gammas = np.linspace(0.0, 0.9, 10)
        vals = [forward_flops(XL2, g, mode="route") for g in gammas]
        assert all(a > b for a, b in zip(vals, vals[1:]))

    def test_masking_full_cost_unless_dropping(self):
        assert forward_flops(XL2, 0.5, mode="mask") == forward_flops(XL2, 0.0)
        dropped = forward_flops(XL2, 0.5, mode="mask", drop_mode=True)
        assert dropped < forward_flops(XL2, 0.0)

    def test_invalid_route_rejected(self):
        bad = ArchSpec(
            name="bad",
            num_layers=4,
            model_dim=16,
            num_heads=2,
            mlp_ratio=4,
            tokens=4,
            in_dim=2,
            out_dim=2,
            freq_dim=16,
            route=RouteSpec(2, 4),
        )
        with pytest.raises(ConfigurationError):
            forward_flops(bad, 0.5, mode="route")


class TestGuidanceFlops:
    def test_cfg_exactly_twice_dense(self):
        rep = guidance_flops(XL2, preset("cfg"), SCFG40)
        assert rep.flops_per_step == 2.0 * forward_flops(XL2, 0.0)
        assert abs(rep.flops_per_step - 228.84e9) / 228.84e9 < 0.05

    def test_sg_flops_preset_window(self):
        rep = guidance_flops(XL2, preset("sg-flops"), SCFG40)
        assert abs(rep.flops_per_step - 97.67e9) / 97.67e9 < 0.10

    def test_sg_fid_preset_window(self):
        rep = guidance_flops(XL2, preset("sg-fid", aux_checkpoint="aux"), SCFG40)
        assert abs(rep.flops_per_step - 173.16e9) / 173.16e9 < 0.10

    def test_windows_hold_with_scores_included(self):
        rep = guidance_flops(
            XL2, preset("sg-flops"), SCFG40, include_attention_scores=True
        )
        assert abs(rep.flops_per_step - 97.67e9) / 97.67e9 < 0.10
        rep = guidance_flops(
            XL2,
            preset("sg-fid", aux_checkpoint="aux"),
            SCFG40,
            include_attention_scores=True,
        )
        assert abs(rep.flops_per_step - 173.16e9) / 173.16e9 < 0.10

    def test_report_consistency(self):
        rep = guidance_flops(XL2, preset("sg-flops"), SCFG40)
        dense = forward_flops(XL2, 0.0)
        assert rep.flops_per_step == rep.flops_strong + rep.flops_weak
        assert rep.delta_vs_unguided == rep.flops_per_step - dense
        assert rep.delta_vs_cfg == rep.flops_per_step - 2 * dense
        assert rep.flops_per_sample == rep.flops_per_step * 40
        assert rep.flops_strong >= 0 and rep.flops_weak >= 0

    def test_sg_below_cfg_whenever_sparse_under_routing(self):
        cfg_cost = guidance_flops(XL2, preset("cfg"), SCFG40).flops_per_step
        for gs, gw in [(0.0, 0.1), (0.3, 0.6), (0.5, 0.9)]:
            g = GuidanceConfig(mode="sg", omega=1.5, gamma_strong=gs, gamma_weak=gw)
            assert guidance_flops(XL2, g, SCFG40).flops_per_step < cfg_cost

    def test_schedule_average_uses_step_fractions(self):
        # a symmetric cosine averages to its midpoint rate on a uniform grid
        g = GuidanceConfig(
            mode="ag_sg",
            omega=1.5,
            schedule_strong=GammaSchedule("cosine", 0.0, 0.6),
            schedule_weak=GammaSchedule("cosine", 0.6, 0.0),
            aux_checkpoint="aux",
        )
        rep = guidance_flops(XL2, g, SCFG40)
        mid = forward_flops(XL2, 0.3)
        assert abs(rep.flops_strong - mid) / mid < 1e-9
        assert abs(rep.flops_weak - mid) / mid < 1e-9

    def test_mode_none_single_forward(self):
        rep = guidance_flops(DESK, GuidanceConfig(mode="none"), SCFG40)
        assert rep.flops_per_step == forward_flops(DESK, 0.0)
        assert rep.flops_weak == 0.0


class TestPresetsAndSpecs:
    def test_arch_preset_lookup(self):
        assert arch_preset("xl2") is XL2
        with pytest.raises(ConfigurationError):
            arch_preset("nope")

    def test_from_denoiser_config(self):
        cfg = DenoiserConfig()
        arch = ArchSpec.from_denoiser_config(cfg, name="desk-default")
        assert arch.tokens == cfg.tokens
        assert arch.model_dim == cfg.model_dim
        assert forward_flops(arch, 0.0) > 0
