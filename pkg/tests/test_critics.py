import numpy as np
import pytest

from linvoc import grad as G
from linvoc.critics import CriticConfig, CriticEnsemble, period_view
from linvoc.dsp import SpectrogramConfig
from linvoc.gradcheck import run_checks
from linvoc.losses import adv_loss_discriminator, adv_loss_generator
from linvoc.optim import Adam

SMALL = CriticConfig(spectral_cfg=SpectrogramConfig(64, 64, 16), widths=(4, 4, 4, 4), seed=2)


def test_config_defaults_and_invariants():
    cfg = CriticConfig()
    assert cfg.msd_scales == (1, 2) and cfg.mpd_periods == (2, 3) and cfg.n_scores == 5
    assert cfg.spectral_cfg == SpectrogramConfig(512, 512, 128)
    for bad in (dict(msd_scales=(0,)), dict(mpd_periods=(1,)), dict(widths=(4, 0))):
        with pytest.raises(ValueError):
            CriticConfig(**bad)


def test_ensemble_scores_shape_finite_and_deterministic():
    critics = CriticEnsemble()
    w = np.random.default_rng(0).uniform(-1, 1, (2, 4096))
    scores = critics(w)
    assert len(scores) == 5
    assert all(s.shape == (2,) and np.isfinite(s.data).all() for s in scores)
    again = critics(w)
    assert all(np.array_equal(a.data, b.data) for a, b in zip(scores, again))


def test_scale_critics_differ_and_zero_input_is_finite():
    critics = CriticEnsemble(SMALL)
    w = G.tensor(np.random.default_rng(1).standard_normal((1, 1024)))
    assert critics.msd[0](w).data[0] != critics.msd[1](w).data[0]
    zero = critics(np.zeros((1, 1024)))
    assert all(np.isfinite(s.data).all() for s in zero)


def test_input_errors():
    critics = CriticEnsemble(SMALL)
    with pytest.raises(ValueError):
        critics(np.zeros((1, 1023)))
    with pytest.raises(ValueError):
        critics.spectral(G.tensor(np.zeros((1, 32))))
    with pytest.raises(ValueError):
        period_view(np.zeros((1, 0)), 2)


def test_period_view_examples():
    a, b, c, d = 1.0, 2.0, 3.0, 4.0
    assert period_view(np.array([[a, b, c, d]]), 2)[0, 0].tolist() == [[a, c], [b, d]]
    v = period_view(np.arange(1.0, 6.0)[None], 2)[0, 0]
    assert v.tolist() == [[1, 3, 5], [2, 4, 0]]
    t = period_view(G.tensor(np.arange(1.0, 6.0)[None]), 2)
    assert np.array_equal(t.data[0, 0], v)


def test_sub_critic_gradients():
    results = run_checks(["spectral_critic", "scale_critic", "period_critic", "discriminator_loss"])
    assert all(r.passed for r in results), [(r.name, r.rel_err) for r in results]


def test_scores_stay_finite_over_adversarial_training():
    rng = np.random.default_rng(3)
    critics = CriticEnsemble(SMALL)
    fake = G.tensor(rng.standard_normal((2, 512)) * 0.1, requires_grad=True)
    real = np.sin(np.arange(512) * 0.3)[None].repeat(2, 0) * 0.8
    opt_d = Adam(critics.parameters(), lr=2e-4)
    opt_g = Adam({"fake": fake}, lr=2e-4)
    for _ in range(500):
        opt_d.zero_grad()
        G.backward(adv_loss_discriminator(critics(G.detach(fake)), critics(real)))
        opt_d.step()
        opt_g.zero_grad()
        G.backward(adv_loss_generator(critics(fake)))
        opt_g.step()
    final = critics(fake)
    assert all(np.isfinite(s.data).all() for s in final)
    assert all(np.isfinite(p.data).all() for p in critics.parameters().values())
