import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gatedtrader.config import DivergenceConfig
from gatedtrader.divergence import (
    align_windows,
    composite_omega,
    correlation_break,
    divergence_score,
    saturate_z,
)

from .test_kernels import brute_pearson


def test_identical_and_anticorrelated_series_give_zero():
    p = [100 + i + (i % 3) for i in range(30)]
    assert correlation_break(p, p) == (0.0, False)
    anti = [500 - x for x in p]
    rho, degenerate = correlation_break(p, anti)
    assert rho == pytest.approx(0.0, abs=1e-12) and not degenerate


def test_constant_series_is_degenerate():
    assert correlation_break([5.0] * 10, list(range(1, 11))) == (0.0, True)


def test_random_walks_match_pearson_oracle():
    rng = np.random.default_rng(8)
    for _ in range(20):
        a = list(np.cumsum(rng.normal(size=30)) + 200)
        b = list(np.cumsum(rng.normal(size=30)) + 200)
        rho, _ = correlation_break(a, b)
        assert rho == pytest.approx(1 - abs(brute_pearson(a, b)), abs=1e-12)


def test_sign_flip_symmetry():
    rng = np.random.default_rng(9)
    a = np.cumsum(rng.normal(size=30)) + 100
    b = np.cumsum(rng.normal(size=30)) + 100
    r1, _ = correlation_break(a, b)
    r2, _ = correlation_break(1000 - a, b)
    assert r1 == pytest.approx(r2, abs=1e-12)


def test_returns_basis_switch():
    a = [100 * 1.01**i for i in range(30)]
    b = [50 + i for i in range(30)]
    rho_p, _ = correlation_break(a, b, on="prices")
    rho_r, _ = correlation_break(a, b, on="returns")
    assert rho_p != rho_r
    with pytest.raises(ValueError):
        correlation_break(a, b, on="logs")


def test_saturation_boundaries():
    assert saturate_z(2.0) == 0.0
    assert saturate_z(1.5) == 0.0
    assert saturate_z(-1.5) == 0.0
    assert saturate_z(4.0) == pytest.approx(1 - math.exp(-1), abs=1e-12)
    assert saturate_z(-4.0) == saturate_z(4.0)
    assert saturate_z(2.0 + 1e-12) == pytest.approx(0.0, abs=1e-12)
    with pytest.raises(ValueError):
        saturate_z(3.0, kappa=0.0)


def test_composite_examples():
    assert composite_omega(0.0, 0.0) == 0.0
    assert composite_omega(1 - math.exp(-1), 0.85, 0.5) == pytest.approx(0.74106, abs=1e-5)
    # illustrative: a cited 0.83 with rho_cb 0.85 implies z_norm 0.81
    assert composite_omega(0.81, 0.85, 0.5) == pytest.approx(0.83)


@settings(max_examples=500, deadline=None)
@given(st.floats(0, 1, exclude_max=True), st.floats(0, 1), st.floats(0, 1), st.floats(0.01, 0.99))
def test_omega_monotone_and_bounded(zn, r1, r2, alpha):
    lo, hi = sorted((r1, r2))
    if hi - lo > 1e-9:
        assert composite_omega(zn, hi, alpha) > composite_omega(zn, lo, alpha)
    w = composite_omega(zn, hi, alpha)
    assert 0.0 <= w <= alpha + (1 - alpha) * hi


def test_alignment_and_partial_reference():
    cfg = DivergenceConfig()
    a = [(t, 100.0 + t % 7) for t in range(30)]
    ref = [(t, 50.0 + (t * 3) % 5) for t in range(0, 30, 2)]
    xs, ys = align_windows(a, ref)
    assert len(xs) == 15
    score = divergence_score(3.0, a, None, cfg)
    assert score.partial and score.rho_cb == 0.0
    assert score.omega == pytest.approx(0.5 * saturate_z(3.0))
    full = divergence_score(3.0, a, ref, cfg)
    assert not full.partial and 0 <= full.rho_cb <= 1
    assert divergence_score(None, a, ref, cfg).z_norm == 0.0
