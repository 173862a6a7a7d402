import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from linvoc import grad as G
from linvoc.losses import (ADV_WEIGHT_STAGE3, LOG_COLUMNS, LossLog, LossReport, StftBank, adv_loss_discriminator,
                           adv_loss_generator, diffusion_loss, stft_loss, stft_mse, total_generator_loss)


def scores(*values):
    return [G.tensor([v]) for v in values]


def test_diffusion_loss_examples():
    x = np.random.default_rng(0).standard_normal(50)
    assert diffusion_loss(x, x).item() == 0.0
    assert diffusion_loss(x + 1.0, x).item() == pytest.approx(1.0)
    assert diffusion_loss(np.array([0.5]), np.array([-0.5])).item() == pytest.approx(1.0)
    with pytest.raises(ValueError):
        diffusion_loss(np.zeros(3), np.zeros(4))


@given(st.integers(0, 10_000))
def test_losses_symmetric_and_nonnegative(seed):
    rng = np.random.default_rng(seed)
    a, b = rng.uniform(-1, 1, (1, 2048)), rng.uniform(-1, 1, (1, 2048))
    assert diffusion_loss(a, b).item() == pytest.approx(diffusion_loss(b, a).item())
    bank = StftBank()
    la, ia = stft_loss(a, b, bank, np.random.default_rng(seed))
    lb, ib = stft_loss(b, a, bank, np.random.default_rng(seed))
    assert ia == ib and la.item() == pytest.approx(lb.item(), rel=1e-5) and la.item() >= 0


def test_stft_loss_zero_for_identical_under_every_config():
    x = G.tensor(np.random.default_rng(1).uniform(-1, 1, (1, 4096)))
    for cfg in StftBank().configs:
        assert stft_mse(x, x, cfg).item() == 0.0


def test_bank_defaults_and_size():
    pairs = [(c.win_length, c.hop_length, c.n_fft) for c in StftBank().configs]
    assert pairs == [(256, 64, 256), (512, 128, 512), (1024, 256, 1024), (2048, 512, 2048)]
    with pytest.raises(ValueError):
        StftBank(StftBank().configs[:3])


def test_bank_choice_uniform():
    rng = np.random.default_rng(2)
    bank = StftBank()
    counts = np.bincount([bank.choose(rng) for _ in range(10_000)], minlength=4)
    sigma = np.sqrt(10_000 * 0.25 * 0.75)
    assert np.abs(counts - 2500).max() < 5 * sigma
    assert stats.chisquare(counts).pvalue > 1e-3


def test_stft_loss_too_short_for_window():
    rng = np.random.default_rng(0)
    x = rng.uniform(-1, 1, (1, 600))
    # config 3 (n_fft 2048) cannot frame 600 samples
    seed = next(s for s in range(100) if StftBank().choose(np.random.default_rng(s)) == 3)
    with pytest.raises(ValueError):
        stft_loss(x, x * 0.5, StftBank(), np.random.default_rng(seed))


def test_stft_loss_gradient():
    rng = np.random.default_rng(3)
    with G.precision(np.float64):
        a = G.tensor(rng.uniform(-1, 1, (1, 512)), requires_grad=True)
        b = rng.uniform(-1, 1, (1, 512))
        err = G.grad_check(lambda: stft_mse(a, G.tensor(b), StftBank().configs[0]), [a])
    assert err < 1e-4


def test_adversarial_examples():
    assert adv_loss_generator(scores(1, 1, 1)).item() == 0.0
    assert adv_loss_generator(scores(0, 0)).item() == 1.0
    assert adv_loss_generator(scores(1, 0, 1, 0, 1)).item() == pytest.approx(0.4)
    assert adv_loss_discriminator(scores(0, 0), scores(1, 1)).item() == 0.0
    assert adv_loss_discriminator(scores(1, 1), scores(0, 0)).item() == pytest.approx(2.0)
    with pytest.raises(ValueError):
        adv_loss_discriminator(scores(0), scores(1, 1))


def test_adversarial_losses_average_batch_then_critics():
    fake = [G.tensor([0.0, 1.0]), G.tensor([0.5, 0.5])]
    # critic 0: mean((1,0)) = 0.5; critic 1: mean(0.25, 0.25) = 0.25
    assert adv_loss_generator(fake).item() == pytest.approx(0.375)


def test_total_generator_loss_stages():
    assert total_generator_loss(5.0, 0.3, 0.2, 1) == pytest.approx(0.5)
    assert total_generator_loss(1.0, 0.3, 0.2, 3) == pytest.approx(0.7)
    assert total_generator_loss(1.0, 0.3, 0.2, 2) == pytest.approx(1.5)
    assert ADV_WEIGHT_STAGE3 == 0.2
    with pytest.raises(ValueError):
        total_generator_loss(1.0, 0.3, 0.2, 4)


def test_loss_log_csv(tmp_path):
    log = LossLog(tmp_path / "log.csv")
    for step in range(1, 4):
        log.append(step, 1, LossReport(0.1 * step, 0.2, 0.0, 0.0, 0.1 * step + 0.2, step % 4))
    rows = LossLog.read(tmp_path / "log.csv")
    assert list(rows[0]) == list(LOG_COLUMNS) and len(rows) == 3
    log.truncate_after(2)
    assert [r["step"] for r in LossLog.read(tmp_path / "log.csv")] == ["1", "2"]
    assert not LossReport(float("nan"), 0, 0, 0, 0, 0).finite()
