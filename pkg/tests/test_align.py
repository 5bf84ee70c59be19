from __future__ import annotations

import numpy as np
import pytest

from tiil.align import (
    AlignConfig,
    align_embedding,
    alignment_loss_and_grad,
    project_to_ball,
)
from tiil.backends import encode_text, generate

from oracles import black_box_render_fit


def _tuned(**overrides) -> AlignConfig:
    base = dict(iterations=400, learning_rate=0.5, gamma=2.2, seed=0)
    base.update(overrides)
    return AlignConfig(**base)


# --------------------------------------------------------------- projection


def test_projection_inside_ball_is_identity():
    rng = np.random.default_rng(0)
    center = rng.standard_normal((4, 6))
    rows = center + 0.3 * rng.standard_normal((4, 6))
    out = project_to_ball(rows, center, gamma=10.0)
    assert np.array_equal(out, rows)


def test_projection_halves_a_double_radius_point():
    rng = np.random.default_rng(1)
    center = rng.standard_normal((3, 5))
    direction = rng.standard_normal((3, 5))
    direction /= np.linalg.norm(direction)
    gamma = 1.7
    rows = center + 2.0 * gamma * direction
    out = project_to_ball(rows, center, gamma)
    # scaling factor is exactly one half; direction is preserved
    assert np.allclose(out, center + gamma * direction, atol=1e-12)
    assert abs(np.linalg.norm(out - center) - gamma) < 1e-9


def test_projection_zero_gamma_returns_center():
    rng = np.random.default_rng(2)
    center = rng.standard_normal((2, 4))
    out = project_to_ball(center + 5.0, center, gamma=0.0)
    assert np.array_equal(out, center)


def test_projection_is_idempotent():
    rng = np.random.default_rng(3)
    for _ in range(50):
        center = rng.standard_normal((3, 4))
        rows = center + rng.standard_normal((3, 4)) * rng.uniform(0.0, 5.0)
        gamma = rng.uniform(0.0, 3.0)
        once = project_to_ball(rows, center, gamma)
        twice = project_to_ball(once, center, gamma)
        assert np.allclose(once, twice, atol=1e-9)
        assert np.linalg.norm(once - center) <= gamma + 1e-9


def test_projection_shape_mismatch():
    with pytest.raises(ValueError):
        project_to_ball(np.zeros((2, 3)), np.zeros((3, 2)), 1.0)


# ----------------------------------------------------------------- gradient


def test_analytic_gradient_matches_finite_differences(bundle):
    rng = np.random.default_rng(7)
    emb = encode_text(bundle, "anchor balloon")
    image = generate(bundle, None, emb)
    rows = emb.rows + 0.4 * rng.standard_normal(emb.rows.shape)
    x_t = rng.standard_normal(image.shape)

    loss, grad = alignment_loss_and_grad(bundle, image, x_t, rows)
    assert loss > 0.0

    h = 1e-6
    flat = rows.ravel()
    for idx in rng.choice(flat.size, size=24, replace=False):
        bumped = flat.copy()
        bumped[idx] += h
        up, _ = alignment_loss_and_grad(bundle, image, x_t, bumped.reshape(rows.shape))
        bumped[idx] -= 2 * h
        down, _ = alignment_loss_and_grad(bundle, image, x_t, bumped.reshape(rows.shape))
        numeric = (up - down) / (2 * h)
        analytic = grad.ravel()[idx]
        denom = max(abs(numeric), abs(analytic), 1e-8)
        assert abs(numeric - analytic) / denom < 1e-4


def test_gradient_is_zero_at_exact_reconstruction(bundle):
    emb = encode_text(bundle, "candle dolphin")
    image = generate(bundle, None, emb)
    loss, grad = alignment_loss_and_grad(bundle, image, image * 0.0, emb.rows)
    assert loss < 1e-12
    assert np.all(grad == 0.0)


# --------------------------------------------------------------- alignment


def test_align_zero_gamma_returns_original(bundle):
    rng = np.random.default_rng(8)
    emb = encode_text(bundle, "engine falcon")
    image = np.clip(generate(bundle, None, emb) + 0.2 * rng.uniform(size=(16, 16, 3)), 0, 1)
    result = align_embedding(image, emb, bundle, _tuned(gamma=0.0, iterations=50))
    assert np.array_equal(result.embedding.rows, emb.rows)
    assert result.final_frobenius_distance == 0.0


def test_align_already_aligned_image_is_a_fixed_point(bundle):
    emb = encode_text(bundle, "guitar harbor")
    image = generate(bundle, None, emb)
    result = align_embedding(image, emb, bundle, _tuned())
    assert result.final_frobenius_distance < 1e-3
    assert result.loss_trajectory[-1] < 1e-9


def test_align_recovers_planted_embedding(bundle):
    """Render a perturbed embedding inside the ball and align back to it; the
    result must reconstruct the image as well as a black-box scipy fit."""
    rng = np.random.default_rng(9)
    emb = encode_text(bundle, "island jacket")
    delta = rng.standard_normal(emb.rows.shape)
    delta *= 1.5 / np.linalg.norm(delta)
    target = emb.with_rows(emb.rows + delta)
    image = generate(bundle, None, target)

    result = align_embedding(image, emb, bundle, _tuned())
    rendered = generate(bundle, None, result.embedding)
    assert np.max(np.abs(rendered - image)) < 1e-2

    reference = black_box_render_fit(bundle, image, emb)
    ref_rendered = generate(bundle, None, reference)
    # the constrained optimum cannot beat the unconstrained fit by more
    # than floating-point noise, and must come close to it
    assert np.linalg.norm(rendered - image) <= np.linalg.norm(ref_rendered - image) + 1e-2


def test_align_respects_ball_at_every_recorded_step(bundle):
    rng = np.random.default_rng(10)
    emb = encode_text(bundle, "kettle lantern")
    far = emb.with_rows(emb.rows + 3.0 * rng.standard_normal(emb.rows.shape))
    image = generate(bundle, None, far)
    cfg = _tuned(gamma=0.9, iterations=150)
    result = align_embedding(image, emb, bundle, cfg)
    assert np.all(result.distance_trajectory <= cfg.gamma + 1e-6)
    assert result.final_frobenius_distance <= cfg.gamma + 1e-6
    assert len(result.loss_trajectory) == cfg.iterations + 1
    assert np.all(np.isfinite(result.loss_trajectory))


def test_align_returns_best_iterate_not_last(bundle):
    """With an absurd step size the loop oscillates; the reported embedding
    must still be the best one visited."""
    rng = np.random.default_rng(11)
    emb = encode_text(bundle, "mirror nutmeg")
    image = np.clip(generate(bundle, None, emb) + rng.uniform(-0.3, 0.3, (16, 16, 3)), 0, 1)
    result = align_embedding(image, emb, bundle, _tuned(learning_rate=250.0, iterations=60))
    rendered = generate(bundle, None, result.embedding)
    best_recorded = np.min(result.loss_trajectory[np.isfinite(result.loss_trajectory)])
    assert abs(np.linalg.norm(rendered - image) - best_recorded) < 1e-9


def test_align_is_deterministic(bundle):
    rng = np.random.default_rng(12)
    emb = encode_text(bundle, "orange piano")
    image = np.clip(generate(bundle, None, emb) + 0.1 * rng.standard_normal((16, 16, 3)), 0, 1)
    a = align_embedding(image, emb, bundle, _tuned())
    b = align_embedding(image, emb, bundle, _tuned())
    assert np.array_equal(a.embedding.rows, b.embedding.rows)
    assert np.array_equal(a.loss_trajectory, b.loss_trajectory)


def test_align_unconstrained_when_gamma_is_none(bundle):
    rng = np.random.default_rng(13)
    emb = encode_text(bundle, "quarry ribbon")
    far = emb.with_rows(emb.rows + 4.0 * rng.standard_normal(emb.rows.shape))
    image = generate(bundle, None, far)
    result = align_embedding(image, emb, bundle, _tuned(gamma=None))
    # free to travel beyond any small ball
    assert result.final_frobenius_distance > 2.2


def test_align_custom_start_is_projected_into_the_ball(bundle):
    rng = np.random.default_rng(14)
    emb = encode_text(bundle, "saddle temple")
    image = generate(bundle, None, emb)
    start = emb.rows + 50.0 * rng.standard_normal(emb.rows.shape)
    cfg = _tuned(iterations=5, gamma=1.0)
    result = align_embedding(image, emb, bundle, cfg, start_rows=start)
    assert np.all(result.distance_trajectory <= cfg.gamma + 1e-6)


def test_align_config_validation():
    with pytest.raises(ValueError):
        AlignConfig(iterations=-1)
    with pytest.raises(ValueError):
        AlignConfig(learning_rate=0.0)
    with pytest.raises(ValueError):
        AlignConfig(gamma=-0.5)
    assert AlignConfig(gamma=None).gamma is None
