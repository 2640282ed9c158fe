"""Property tests for the pure arithmetic operations."""

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from dlczsim.photon_stats import alpha_model_curve
from dlczsim.physics import GradientWaveform
from dlczsim.sequencer import selectivity

US = 1e-6


@given(st.lists(st.floats(min_value=1e-9, max_value=1.0), min_size=1, max_size=6))
@settings(max_examples=200, deadline=None)
def test_selectivity_normalises_exactly(probs):
    s = selectivity(probs)
    assert abs(sum(s) - 1.0) < 1e-12
    assert all(0.0 <= x <= 1.0 for x in s)


@given(st.floats(min_value=1e-6, max_value=0.2),
       st.floats(min_value=0.3, max_value=1.0))
@settings(max_examples=200, deadline=None)
def test_alpha_model_curve_is_positive_and_bounded_by_its_slope(p, c):
    # on the fit formula's domain of validity (p well below c)
    alpha = alpha_model_curve(p, c)
    assert alpha > 0
    assert alpha <= 4 * p / c + 1e-12


@given(st.floats(min_value=0.0, max_value=30.0),
       st.floats(min_value=0.0, max_value=30.0),
       st.floats(min_value=0.0, max_value=30.0),
       st.floats(min_value=0.0, max_value=5.0),
       st.floats(min_value=-1.0, max_value=1.0))
@settings(max_examples=150, deadline=None)
def test_gradient_area_is_additive_over_subintervals(a, b, c, tau, target):
    t1, t2, t3 = sorted((a * US, b * US, c * US))
    wf = GradientWaveform(segments=((3 * US, target),),
                          coil_response_tau=tau * US, gamma_eff=1.0,
                          initial_amplitude=0.7)
    left = wf.area(t2) - wf.area(t1)
    right = wf.area(t3) - wf.area(t2)
    total = wf.area(t3) - wf.area(t1)
    assert abs((left + right) - total) < 1e-15


@given(st.floats(min_value=0.1, max_value=20.0),
       st.floats(min_value=0.0, max_value=3.0))
@settings(max_examples=100, deadline=None)
def test_amplitude_between_initial_and_target(t, tau):
    wf = GradientWaveform(segments=((0.0, -1.0),), coil_response_tau=tau * US,
                          gamma_eff=1.0, initial_amplitude=1.0)
    g = wf.amplitude(t * US)
    assert -1.0 - 1e-12 <= g <= 1.0 + 1e-12
