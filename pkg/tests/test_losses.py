import math

import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st
from oracles import (
    central_diff,
    oracle_d_loss,
    oracle_g_loss,
    random_fixtures,
    rel_err,
    sample_scores,
)

from uegan.losses import (
    LossRecord,
    LossWeights,
    PerceptualExtractor,
    d_loss,
    discriminator_loss,
    fidelity_loss,
    g_quality_loss,
    generator_quality_loss,
    identity_loss,
    total_g_loss,
)

# -- hinge losses ----------------------------------------------------------

def test_forced_values_at_zero_scores():
    assert d_loss(0.0, 0.0, 0.0).item() == 4.0
    assert g_quality_loss(0.0, 0.0).item() == 2.0


def test_saturated_margins_give_zero():
    assert d_loss(-1.0, 1.0, -1.0).item() == 0.0
    # generated beats real by the full margin
    assert g_quality_loss([-1.0, -1.0], [1.0, 1.0]).item() == 0.0


def test_g_quality_reverse_ordering():
    assert g_quality_loss(1.0, -1.0).item() == 6.0


@pytest.mark.parametrize("low,high,gen", random_fixtures(24))
def test_hinge_losses_match_scalar_oracle(low, high, gen):
    assert d_loss(low, high, gen).item() == pytest.approx(oracle_d_loss(low, high, gen), abs=1e-6)
    assert g_quality_loss(high, gen).item() == pytest.approx(oracle_g_loss(high, gen), abs=1e-6)


dyadic = st.integers(-(2**20), 2**20).map(lambda k: k / 2**16)


@settings(max_examples=200, deadline=None)
@given(
    low=st.lists(dyadic, min_size=4, max_size=4),
    high=st.lists(dyadic, min_size=4, max_size=4),
    gen=st.lists(dyadic, min_size=4, max_size=4),
    c=st.integers(-10 * 2**16, 10 * 2**16).map(lambda k: k / 2**16),
)
def test_shift_invariance_is_exact(low, high, gen, c):
    # dyadic scores keep every sum and difference exact, so the cancellation is bitwise
    shift = lambda xs: torch.tensor(xs, dtype=torch.float64) + c  # noqa: E731
    t = lambda xs: torch.tensor(xs, dtype=torch.float64)  # noqa: E731
    assert d_loss(shift(low), shift(high), shift(gen)).item() == d_loss(t(low), t(high), t(gen)).item()
    assert g_quality_loss(shift(high), shift(gen)).item() == g_quality_loss(t(high), t(gen)).item()


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-50, 50), min_size=3, max_size=12))
def test_hinge_losses_nonnegative(xs):
    t = torch.tensor(xs, dtype=torch.float64)
    a, b, c = t[0::3], t[1::3], t[2::3]
    n = min(len(a), len(b), len(c))
    assert d_loss(a[:n], b[:n], c[:n]).item() >= 0
    assert g_quality_loss(a[:n], b[:n]).item() >= 0


def test_multiscale_losses_average_scales():
    low = [torch.full((2, 1, 4, 4), 0.0), torch.full((2, 1, 2, 2), 0.0)]
    high = [torch.full((2, 1, 4, 4), 1.0), torch.full((2, 1, 2, 2), 0.0)]
    gen = [torch.full((2, 1, 4, 4), -1.0), torch.full((2, 1, 2, 2), 0.0)]
    per_scale = [d_loss(torch.zeros(2), torch.ones(2), -torch.ones(2)).item(), 4.0]
    assert discriminator_loss(low, high, gen).item() == pytest.approx(sum(per_scale) / 2)
    assert generator_quality_loss(high, gen).item() == pytest.approx((6.0 + 2.0) / 2)


# -- gradients -----------------------------------------------------------------

@pytest.mark.parametrize("seed", range(10))
def test_hinge_gradients_match_finite_differences(seed):
    gen = torch.Generator().manual_seed(seed)
    low, high, fake = sample_scores(gen)
    packed = torch.cat([low, high, fake]).requires_grad_(True)

    def f_d(p):
        return d_loss(p[0:4], p[4:8], p[8:12])

    def f_g(p):
        return g_quality_loss(p[4:8], p[8:12])

    for f in (f_d, f_g):
        (analytic,) = torch.autograd.grad(f(packed), packed)
        numeric = [central_diff(f, packed.detach(), i) for i in range(12)]
        assert rel_err(analytic, numeric) <= 1e-4


@pytest.mark.parametrize("seed", range(10))
def test_identity_gradient_matches_finite_differences(seed):
    gen = torch.Generator().manual_seed(seed)
    x = torch.rand(1, 3, 6, 6, generator=gen, dtype=torch.float64)
    g = torch.rand(1, 3, 6, 6, generator=gen, dtype=torch.float64)
    g = torch.where((x - g).abs() < 1e-3, g + 0.01, g).requires_grad_(True)
    (analytic,) = torch.autograd.grad(identity_loss(x, g), g)
    numeric = [central_diff(lambda t: identity_loss(x, t), g.detach(), i) for i in range(g.numel())]
    assert rel_err(analytic.flatten(), numeric) <= 1e-4


@pytest.mark.parametrize("seed", range(3))
def test_fidelity_gradient_matches_finite_differences(seed, extractor64):
    gen = torch.Generator().manual_seed(seed)
    x_l = torch.rand(1, 3, 32, 32, generator=gen, dtype=torch.float64)
    x_g = torch.rand(1, 3, 32, 32, generator=gen, dtype=torch.float64).requires_grad_(True)
    (analytic,) = torch.autograd.grad(fidelity_loss(x_l, x_g, extractor64), x_g)
    coords = torch.randperm(x_g.numel(), generator=gen)[:12].tolist()
    numeric = [central_diff(lambda t: fidelity_loss(x_l, t, extractor64), x_g.detach(), i) for i in coords]
    assert rel_err(analytic.flatten()[coords], numeric) <= 1e-4


# -- fidelity / identity -----------------------------------------------------

def test_fidelity_zero_and_symmetric(extractor):
    gen = torch.Generator().manual_seed(1)
    a = torch.rand(2, 3, 32, 32, generator=gen)
    b = torch.rand(2, 3, 32, 32, generator=gen)
    assert fidelity_loss(a, a, extractor).item() == 0.0
    assert fidelity_loss(a, b, extractor).item() == fidelity_loss(b, a, extractor).item()
    assert fidelity_loss(a, b, extractor, squared=False).item() == fidelity_loss(b, a, extractor, squared=False).item()
    assert fidelity_loss(a, a, extractor, squared=False).item() == 0.0


def test_fidelity_shrinks_with_perturbation(extractor):
    gen = torch.Generator().manual_seed(2)
    x = torch.rand(1, 3, 32, 32, generator=gen)
    noise = torch.randn(1, 3, 32, 32, generator=gen)
    losses = [fidelity_loss(x, x + eps * noise, extractor).item() for eps in (1e-1, 1e-2, 1e-3)]
    assert losses[0] > losses[1] > losses[2] > 0


def test_fidelity_rejects_shape_mismatch(extractor):
    with pytest.raises(ValueError, match="shape"):
        fidelity_loss(torch.rand(1, 3, 32, 32), torch.rand(1, 3, 32, 16), extractor)


def test_identity_values():
    x = torch.full((3, 4, 4), 0.5)
    assert identity_loss(x, x).item() == 0.0
    assert identity_loss(x, torch.full((3, 4, 4), 0.25)).item() == 0.25
    with pytest.raises(ValueError):
        identity_loss(x, torch.rand(3, 4, 5))


def test_identity_loss_is_local():
    gen = torch.Generator().manual_seed(3)
    x = torch.rand(1, 1, 4, 4, generator=gen, dtype=torch.float64)
    g = torch.rand(1, 1, 4, 4, generator=gen, dtype=torch.float64)
    mask = torch.zeros(1, 1, 4, 4, dtype=torch.bool)
    mask[..., 1:3, 0:2] = True
    g2 = torch.where(mask, g * 0.3, g)
    change = identity_loss(x, g2) - identity_loss(x, g)
    per_pixel = ((x - g2).abs() - (x - g).abs())
    assert (per_pixel[~mask] == 0).all()
    assert change.item() == pytest.approx(per_pixel[mask].sum().item() / 16, abs=1e-15)


# -- extractor -----------------------------------------------------------------

def test_extractor_layer_geometry(extractor):
    feats = extractor(torch.rand(1, 3, 256, 256))
    assert len(feats) == 5
    # relu1_1 full res, then one 2x max-pool before each following block
    assert [tuple(f.shape[1:]) for f in feats] == [
        (64, 256, 256), (128, 128, 128), (256, 64, 64), (512, 32, 32), (512, 16, 16)
    ]


def test_extractor_deterministic_and_frozen(extractor):
    x = torch.rand(1, 3, 32, 32)
    for a, b in zip(extractor(x), extractor(x)):
        assert torch.equal(a, b)
    assert not any(p.requires_grad for p in extractor.parameters())
    extractor.train()
    assert not extractor.training


def test_extractor_requires_five_layers():
    with pytest.raises(ValueError, match="exactly 5"):
        PerceptualExtractor("random", layers=("relu1_1", "relu2_1"))


def test_missing_weights_names_path(tmp_path):
    missing = tmp_path / "nope" / "vgg19.pth"
    with pytest.raises(FileNotFoundError, match=str(missing)):
        PerceptualExtractor(missing)


def test_missing_weights_env_var(tmp_path, monkeypatch):
    missing = tmp_path / "env-vgg.pth"
    monkeypatch.setenv("UEGAN_VGG_WEIGHTS", str(missing))
    with pytest.raises(FileNotFoundError, match="env-vgg.pth"):
        PerceptualExtractor()


def test_weights_file_roundtrip_and_checksum(tmp_path, extractor):
    import hashlib

    state = {f"features.{k}": v for k, v in extractor.features.state_dict().items()}
    path = tmp_path / "vgg19-custom.pth"
    torch.save(state, path)
    digest = hashlib.sha256(path.read_bytes()).hexdigest()
    loaded = PerceptualExtractor(path, sha256=digest)
    x = torch.rand(1, 3, 32, 32)
    for a, b in zip(extractor(x), loaded(x)):
        assert torch.equal(a, b)
    with pytest.raises(ValueError, match="checksum"):
        PerceptualExtractor(path, sha256="0" * 64)
    # torchvision-style name carries a hash prefix that gets checked too
    bad = tmp_path / "vgg19-deadbeef.pth"
    bad.write_bytes(path.read_bytes())
    with pytest.raises(ValueError, match="checksum"):
        PerceptualExtractor(bad)


# -- total -----------------------------------------------------------------------

def test_total_with_default_weights():
    assert total_g_loss(1.0, 1.0, 1.0, LossWeights()) == pytest.approx(1.15, abs=1e-12)
    assert total_g_loss(0.0, 0.0, 0.0) == 0.0


def test_total_linear_in_fidelity_weight():
    base = total_g_loss(0.7, 0.3, 0.2, LossWeights(0.05, 1.0, 0.1))
    doubled = total_g_loss(0.7, 0.3, 0.2, LossWeights(0.05, 2.0, 0.1))
    assert doubled - base == pytest.approx(0.3, abs=1e-12)


@pytest.mark.parametrize("bad", ["g_qua", "g_fid", "g_idt"])
def test_total_rejects_non_finite(bad):
    parts = {"g_qua": 1.0, "g_fid": 1.0, "g_idt": 1.0}
    parts[bad] = math.nan
    with pytest.raises(ValueError, match=bad):
        total_g_loss(parts["g_qua"], parts["g_fid"], parts["g_idt"])
    parts[bad] = torch.tensor(math.inf)
    with pytest.raises(ValueError, match=bad):
        total_g_loss(parts["g_qua"], parts["g_fid"], parts["g_idt"])


def test_loss_weights_validation():
    assert LossWeights() == LossWeights(0.05, 1.0, 0.1)
    with pytest.raises(ValueError):
        LossWeights(-1.0, 1.0, 0.1)


@settings(max_examples=200)
@given(st.floats(0, 10), st.floats(0, 10), st.floats(0, 10), st.floats(0, 10))
def test_loss_record_reconstructs(d, q, f, i):
    w = LossWeights()
    rec = LossRecord.from_parts(d, q, f, i, w)
    assert rec.reconstructs(w)
    assert rec.g_total >= 0
