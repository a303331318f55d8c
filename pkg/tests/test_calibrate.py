"""Threshold and response calibration against simulated ground truth."""
import numpy as np
import pytest

from conftest import MICROS, default_config, texture_frame, texture_sequence
from evdi import (EventStream, ImageBuffer, ResponseCurve, ThresholdConfig,
                  consistency_loss, events_from_frames, fit_response,
                  fit_threshold, golden_section_minimize, synthesize_blur)

TAU = 40_000.0


def _views(seq, n, period=40_000):
    mids = [float(TAU / 2 + k * period) for k in range(n)]
    blurs = [synthesize_blur(seq, m, TAU) for m in mids]
    return blurs, mids


class TestGoldenSection:
    def test_minimizes_quadratic(self):
        x, f, _ = golden_section_minimize(lambda v: (v - 0.37) ** 2,
                                          0.0, 1.0, rel_width=1e-4)
        assert abs(x - 0.37) < 1e-3
        assert f < 1e-6

    def test_bracket_shrinks_by_golden_ratio(self):
        trace = []
        _, _, widths = golden_section_minimize(
            lambda v: np.cosh(v - 0.2), -1.0, 1.0, rel_width=1e-3,
            trace=trace)
        widths = np.asarray(widths)
        # frozen: inverse golden ratio (sqrt(5)-1)/2
        ratios = widths[1:] / widths[:-1]
        np.testing.assert_allclose(ratios, 0.618033988750, atol=1e-9)
        assert widths[-1] <= 1e-3 * 2.0
        assert len(trace) == len(widths) + 2

    def test_invalid_bracket(self):
        with pytest.raises(ValueError):
            golden_section_minimize(lambda v: v, 1.0, 0.0)


class TestConsistencyLoss:
    def test_static_scene_exactly_zero(self):
        s = EventStream.from_arrays([], [], [], [], 6, 6)
        img = ImageBuffer(np.full((6, 6, 1), 0.4), "linear")
        loss = consistency_loss([img, img], [20_000.0, 60_000.0], TAU, s,
                                0.3)
        assert loss == 0.0

    def test_true_theta_beats_wrong_theta(self):
        seq = texture_sequence(201, 16, 16)
        stream = events_from_frames(seq, default_config(0.2))
        blurs, mids = _views(seq, 5)
        at_true = consistency_loss(blurs, mids, TAU, stream, 0.2)
        at_wrong = consistency_loss(blurs, mids, TAU, stream, 0.6)
        assert at_true < at_wrong * 0.2

    def test_scale_invariant(self):
        seq = texture_sequence(121, 12, 12)
        stream = events_from_frames(seq, default_config(0.2))
        blurs, mids = _views(seq, 3)
        scaled = [ImageBuffer(b.data * 0.5, "linear") for b in blurs]
        a = consistency_loss(blurs, mids, TAU, stream, 0.3)
        b = consistency_loss(scaled, mids, TAU, stream, 0.3)
        assert a == pytest.approx(b, rel=1e-9)

    def test_single_view_rejected(self):
        s = EventStream.from_arrays([], [], [], [], 4, 4)
        img = ImageBuffer(np.full((4, 4, 1), 0.4), "linear")
        with pytest.raises(ValueError, match="2 views"):
            consistency_loss([img], [20_000.0], TAU, s, 0.2)

    def test_gap_without_coverage_named(self):
        s = EventStream.from_arrays([5, 10], [0, 0], [0, 0], [1, 1], 4, 4)
        img = ImageBuffer(np.full((4, 4, 1), 0.4), "linear")
        with pytest.raises(ValueError, match="gap"):
            consistency_loss([img, img], [500_000.0, 540_000.0], TAU, s,
                             0.2)

    def test_unordered_mids_rejected(self):
        s = EventStream.from_arrays([], [], [], [], 4, 4)
        img = ImageBuffer(np.full((4, 4, 1), 0.4), "linear")
        with pytest.raises(ValueError, match="increasing"):
            consistency_loss([img, img], [60_000.0, 20_000.0], TAU, s, 0.2)


class TestFitThreshold:
    def test_recovers_simulated_theta(self):
        seq = texture_sequence(241, 20, 20)
        stream = events_from_frames(seq, default_config(0.2))
        blurs, mids = _views(seq, 6)
        fit = fit_threshold(blurs, mids, TAU, stream)
        assert fit.identifiable
        assert abs(fit.theta - 0.2) / 0.2 <= 0.10
        assert fit.evaluations == len(fit.trace)
        thetas = [t for t, _ in fit.trace]
        assert min(thetas) >= 0.05 and max(thetas) <= 1.0

    def test_flat_loss_flagged(self):
        s = EventStream.from_arrays([], [], [], [], 6, 6)
        img = ImageBuffer(np.full((6, 6, 1), 0.4), "linear")
        fit = fit_threshold([img, img], [20_000.0, 60_000.0], TAU, s)
        assert not fit.identifiable

    def test_bad_bounds(self):
        s = EventStream.from_arrays([], [], [], [], 4, 4)
        img = ImageBuffer(np.full((4, 4, 1), 0.4), "linear")
        with pytest.raises(ValueError):
            fit_threshold([img, img], [1e4, 5e4], TAU, s, bounds=(0.5, 0.1))


class TestResponseCurve:
    def test_identity_curve(self):
        c = ResponseCurve.identity()
        assert c.is_identity()
        v = np.linspace(0.001, 1.0, 100)
        np.testing.assert_allclose(c(v), v, atol=1e-12)

    def test_clamps_outside_domain(self):
        c = ResponseCurve.identity()
        assert c(2.0) == 1.0
        assert c(0.0) == 0.001

    def test_monotonicity_enforced(self):
        with pytest.raises(ValueError):
            ResponseCurve(np.array([0.0, 0.5, 1.0]),
                          np.array([0.0, 0.7, 0.6]))
        with pytest.raises(ValueError):
            ResponseCurve(np.array([0.0, 0.0, 1.0]),
                          np.array([0.0, 0.5, 1.0]))


def _s_curve(v):
    return v + 0.06 * np.sin(np.pi * (v - 1e-3) / (1 - 1e-3))


def _response_scene(curve=None, theta=0.025, n=401, hw=24, views=10):
    """Events see ``curve``-distorted frames; the reference latents are the
    true frames at the view midpoints. The span stretches to (0.02, 0.98)
    so samples reach both curve pins, and the fine threshold keeps the
    quantization walk well below the recovery tolerances."""
    span = (0.02, 0.98)
    seq = texture_sequence(n, hw, hw, curve=curve, span=span)
    stream = events_from_frames(seq, default_config(theta))
    mids = [float(TAU / 2 + k * 40_000) for k in range(views)]
    lats = [ImageBuffer(texture_frame(m / MICROS, hw, hw,
                                      span=span)[:, :, None], "linear")
            for m in mids]
    return lats, mids, stream


class TestFitResponse:
    def test_identity_data_stays_near_identity(self):
        lats, mids, stream = _response_scene()
        fit = fit_response(lats, mids, stream, 0.025)
        assert fit.loss_final <= fit.loss_initial
        v = np.linspace(0.1, 0.9, 81)
        assert np.max(np.abs(fit.curve_pos(v) - v)) <= 0.02
        assert np.max(np.abs(fit.curve_neg(v) - v)) <= 0.02

    def test_injected_curve_recovered(self):
        lats, mids, stream = _response_scene(curve=_s_curve)
        fit = fit_response(lats, mids, stream, 0.025)
        assert fit.loss_final < fit.loss_initial
        v = np.linspace(0.1, 0.9, 81)
        assert np.max(np.abs(fit.curve_pos(v) - _s_curve(v))) <= 0.05
        assert np.max(np.abs(fit.curve_neg(v) - _s_curve(v))) <= 0.05
        assert np.all(np.diff(fit.curve_pos.y) >= 0)
        assert np.all(np.diff(fit.curve_neg.y) >= 0)
        assert fit.curve_pos.y[0] == pytest.approx(1e-3)
        assert fit.curve_pos.y[-1] == pytest.approx(1.0)

    def test_event_derived_latents_fit_nothing(self):
        # latents recovered through the events themselves carry the same
        # distortion the fit is looking for, so the residuals stay near
        # zero at identity; the fit must not be fed such latents
        from evdi import edi_deblur

        span = (0.02, 0.98)
        seq = texture_sequence(241, 16, 16, curve=_s_curve, span=span)
        stream = events_from_frames(seq, default_config(0.025))
        blurs, mids = _views(texture_sequence(241, 16, 16, curve=_s_curve,
                                              span=span), 6)
        lats = [edi_deblur(b, stream, m, TAU,
                           ThresholdConfig.symmetric(0.025))
                for b, m in zip(blurs, mids)]
        fit = fit_response(lats, mids, stream, 0.025)
        v = np.linspace(0.1, 0.9, 81)
        # stays near identity even though the injected curve is present
        assert np.max(np.abs(fit.curve_pos(v) - v)) <= 0.03

    def test_zero_sweeps_returns_identity(self):
        lats, mids, stream = _response_scene(n=161, hw=16, views=4)
        fit = fit_response(lats, mids, stream, 0.025, max_sweeps=0)
        assert fit.curve_pos.is_identity()
        assert fit.loss_final == fit.loss_initial

    def test_sample_cap_deterministic(self):
        lats, mids, stream = _response_scene(n=161, hw=16, views=4)
        a = fit_response(lats, mids, stream, 0.025, max_samples=500,
                         seed=3)
        b = fit_response(lats, mids, stream, 0.025, max_samples=500,
                         seed=3)
        np.testing.assert_array_equal(a.curve_pos.y, b.curve_pos.y)
        assert a.samples_pos == b.samples_pos <= 500

    def test_too_few_samples_rejected(self):
        s = EventStream.from_arrays([20_001, 59_999], [0, 1], [0, 0],
                                    [1, -1], 4, 4)
        img = ImageBuffer(np.full((4, 4, 1), 0.4), "linear")
        with pytest.raises(ValueError, match="residual samples"):
            fit_response([img, img], [20_000.0, 60_000.0], s, 0.2)

    def test_latent_count_must_match_times(self):
        img = ImageBuffer(np.full((4, 4, 1), 0.4), "linear")
        s = EventStream.from_arrays([10], [0], [0], [1], 4, 4)
        with pytest.raises(ValueError, match="latents"):
            fit_response([img, img, img], [1.0, 2.0], s, 0.2)
