import numpy as np
import pytest
import torch

from in2out.diffcore import Conv3d, Conv3dSpec
from in2out.discriminator import (
    DESIGN_LABELS,
    TABLE_ORDER,
    DesignKind,
    DiscConfig,
    Discriminator,
    ProbeTooSmall,
    build_design,
    check_band_support,
    empirical_rf,
    feature_stride,
    heuristic_rf,
    receptive_field,
)
from in2out.losses import LossWeights
from in2out.masking import MaskError


class Stack(torch.nn.Module):
    def __init__(self, specs, seed=0):
        super().__init__()
        g = torch.Generator().manual_seed(seed)
        self.convs = torch.nn.ModuleList(Conv3d(s, generator=g) for s in specs)

    def forward(self, x):
        h = x.transpose(1, 2)
        for c in self.convs:
            h = torch.nn.functional.leaky_relu(c(h), 0.2)
        return h.transpose(1, 2)


def test_rf_recurrence_examples():
    one = [Conv3dSpec(1, 1, (1, 7, 7))]
    assert receptive_field(one)[-1][1] == 7
    cfg = DiscConfig()
    assert receptive_field(cfg.fem_layers)[-1] == (7, 43, 43)
    assert receptive_field(cfg.fem_layers + cfg.fcm_layers)[-1] == (13, 379, 379)
    assert heuristic_rf(7, [2, 2, 2]) == 56 and heuristic_rf(7, [2] * 6) == 448
    with pytest.raises(ValueError):
        receptive_field([])


def test_empirical_single_conv():
    net = Stack([Conv3dSpec(3, 2, 3, 1)])
    assert empirical_rf(net, (7, 9, 9)) == (3, 3, 3)


def test_empirical_default_fem():
    d = Discriminator(DiscConfig(spectral_norm=False), generator=torch.Generator().manual_seed(0))
    assert empirical_rf(d.fem_forward, (9, 64, 64)) == (7, 43, 43)


def test_empirical_rf_unit_independent():
    d = Discriminator(DiscConfig(spectral_norm=False), generator=torch.Generator().manual_seed(0))
    extents = {empirical_rf(d.fem_forward, (9, 96, 96), unit=(4, h, w)) for h in (5, 6) for w in (5, 7)}
    assert extents == {(7, 43, 43)}


def test_empirical_probe_too_small():
    d = Discriminator(DiscConfig(spectral_norm=False))
    with pytest.raises(ProbeTooSmall):
        empirical_rf(d.fem_forward, (5, 24, 24))


def test_empirical_rf_leaves_sn_state():
    d = Discriminator(DiscConfig(), generator=torch.Generator().manual_seed(0))
    u = d.fem[0].sn_u.clone()
    empirical_rf(d.fem_forward, (9, 64, 64))
    assert torch.equal(d.fem[0].sn_u, u) and d.training


def random_stack(rng):
    n = int(rng.integers(1, 4))
    specs = []
    for i in range(n):
        k = tuple(int(v) for v in rng.choice([1, 3, 5], size=3))
        s = tuple(int(v) for v in rng.integers(1, 3, size=3))
        specs.append(Conv3dSpec(3 if i == 0 else 2, 2, k, s))
    return specs


def test_empirical_equals_recurrence_random():
    rng = np.random.default_rng(11)
    for trial in range(10):
        specs = random_stack(rng)
        rf = receptive_field(specs)[-1]
        jump = [int(np.prod([s.stride[a] for s in specs])) for a in range(3)]
        probe = tuple(3 * r + 4 * j for r, j in zip(rf, jump))
        assert empirical_rf(Stack(specs, trial), probe) == rf, (trial, specs)


def test_fcm_shapes_and_zero():
    d = Discriminator(DiscConfig(spectral_norm=False))
    x = torch.rand(1, 4, 3, 64, 128)
    f = d(x)
    assert f.local.shape == (1, 4, 128, 8, 16)
    assert f.global_.shape == (1, 4, 1, 1, 2)  # 2**6 = 64 total spatial reduction
    with torch.no_grad():
        for c in d.fcm:
            c.bias.zero_()
    assert torch.equal(d.fcm_forward(torch.zeros(1, 2, 128, 4, 4)), torch.zeros(1, 2, 1, 1, 1))
    with pytest.raises(ValueError):
        d.fcm_forward(torch.zeros(1, 2, 64, 4, 4))
    with pytest.raises(ValueError):
        d(torch.zeros(1, 2, 4, 16, 16))


def test_config_invariants():
    cfg = DiscConfig()
    with pytest.raises(ValueError):
        DiscConfig(cfg.fem_layers, cfg.fcm_layers[:-1])
    assert feature_stride(cfg) == 8
    k9 = DiscConfig.with_kernel((3, 9, 9))
    assert receptive_field(k9.fem_layers)[-1][2] == 57


def test_design_labels_order():
    assert [DESIGN_LABELS[k] for k in TABLE_ORDER] == [
        "None",
        "Global (T-PatchGAN)",
        "Partial-only",
        "Global & partial",
        "Local-only",
        "Hierarchical",
    ]


@pytest.mark.parametrize("kind", list(DesignKind))
def test_designs_run(kind):
    g = torch.Generator().manual_seed(0)
    design = build_design(kind, DiscConfig(), LossWeights(), g)
    real = torch.rand(1, 3, 3, 16, 64, generator=g)
    fake = torch.rand(1, 3, 3, 16, 64, generator=g, requires_grad=True)
    loss, terms = design.d_loss(real, fake.detach(), 0.25)
    adv = design.g_adv(fake, 0.25)
    if kind is DesignKind.none:
        assert loss is None and terms == {} and adv == 0
        assert not list(design.parameters())
        return
    assert torch.isfinite(loss) and all(torch.isfinite(v) for v in terms.values())
    adv.backward()
    assert fake.grad is not None and fake.grad.abs().sum() > 0


def test_global_and_partial_disjoint_params():
    d = build_design("global_and_partial")
    a = {id(p) for p in d.global_branch.parameters()}
    b = {id(p) for p in d.partial_branch.parameters()}
    assert a and b and not a & b


def test_partial_only_sees_bands_only():
    g = torch.Generator().manual_seed(0)
    d = build_design("partial_only", DiscConfig(spectral_norm=False), generator=g)
    fake = torch.rand(1, 2, 3, 16, 64, generator=g, requires_grad=True)
    d.g_adv(fake, 0.25).backward()
    assert fake.grad[..., 8:-8].abs().sum() == 0


def test_local_only_has_no_fcm():
    d = build_design("local_only")
    assert len(d.disc.fcm) == 0


def test_band_support():
    cfg = DiscConfig()
    check_band_support("hierarchical", cfg, 96, 1 / 6)
    with pytest.raises(MaskError):
        check_band_support("hierarchical", cfg, 96, 1 / 12)
    check_band_support("global_tpatch", cfg, 96, 1 / 12)
    with pytest.raises(MaskError):
        check_band_support("partial_only", cfg, 16, 0.1)


def _mirror_kernels(d):
    # symmetrize every kernel horizontally so the network commutes with a width flip
    with torch.no_grad():
        for c in list(d.fem) + list(d.fcm):
            c.weight.copy_(0.5 * (c.weight + c.weight.flip(-1)))


def test_flip_invariance_of_fake_local_term():
    g = torch.Generator().manual_seed(0)
    design = build_design("hierarchical", DiscConfig(spectral_norm=False), generator=g).double()
    _mirror_kernels(design.disc)
    # width 8k+1 keeps every stride-2 sampling grid centered, so the flip is exact
    fake = torch.rand(1, 3, 3, 16, 97, generator=g, dtype=torch.float64)
    z = design.disc(fake).local
    zf = design.disc(fake.flip(-1)).local
    assert torch.allclose(zf, z.flip(-1), atol=1e-12)
    from in2out.losses import hinge_fake
    from in2out.masking import out_extract

    a = hinge_fake(out_extract(z, 0.5))
    b = hinge_fake(out_extract(zf, 0.5))
    assert abs(float((a - b).detach())) < 1e-12
