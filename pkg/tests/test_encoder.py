import pytest
import torch

from hyperdec.config import validate_config
from hyperdec.encoder import MKAB, Encoder, encode, mkab_forward
from oracles import central_difference_check


def test_desk_pyramid_shapes():
    enc = Encoder((8, 16, 32, 64, 128)).eval()
    pyr = encode(torch.randn(1, 2, 64, 64), enc)
    assert pyr.shapes == [(64, 64, 8), (32, 32, 16), (16, 16, 32), (8, 8, 64), (4, 4, 128)]


def test_paper_f5_shape():
    cfg = validate_config({"profile": "paper"})
    enc = Encoder(cfg.encoder_channels).eval()
    with torch.no_grad():
        pyr = enc(torch.randn(1, 2, 256, 256))
    assert pyr.shapes[4] == (16, 16, 512)


def test_rejects_indivisible_input():
    with pytest.raises(ValueError, match="divisible by 16"):
        Encoder((8, 16, 32, 64, 128))(torch.randn(1, 2, 40, 64))


def test_zero_input_gives_bn_shift_constants():
    torch.manual_seed(0)
    enc = Encoder((8, 16, 32, 64, 128)).eval()
    for m in enc.modules():
        if isinstance(m, torch.nn.BatchNorm2d):
            m.running_mean.uniform_(-0.5, 0.5)
            m.running_var.uniform_(0.5, 2)
            m.bias.data.uniform_(0.1, 1.0)
    with torch.no_grad():
        pyr = enc(torch.zeros(1, 2, 64, 64))
    assert all(torch.isfinite(f).all() for f in pyr.maps)
    # bias-free convs of a zero map give zero; the first BN output is its shift constant
    bn = enc.blocks[0][0][1]
    shift = bn.bias - bn.running_mean * bn.weight / torch.sqrt(bn.running_var + bn.eps)
    first = enc.blocks[0][0](torch.zeros(1, 2, 64, 64))
    assert torch.allclose(first[0, :, 10, 10], torch.relu(shift), atol=1e-6)
    # spatially constant everywhere away from the zero-padded border
    assert torch.allclose(first[0, :, 1:-1, 1:-1], first[0, :, 10:11, 10:11].expand(-1, 62, 62))


def test_encode_is_deterministic():
    enc = Encoder((8, 16, 32, 64, 128)).eval()
    x = torch.randn(2, 2, 32, 32)
    a, b = enc(x), enc(x)
    assert all(torch.equal(p, q) for p, q in zip(a.maps, b.maps))


def test_mkab_groups_and_shape():
    block = MKAB(32).eval()
    assert [p.kernel_size for p in block.paths] == [(1, 1), (3, 3), (5, 5), (7, 7)]
    assert all(p.in_channels == 8 and p.out_channels == 8 for p in block.paths)
    out = mkab_forward(torch.randn(2, 32, 16, 16), block)
    assert out.shape == (2, 32, 16, 16)


def test_mkab_rejects_bad_channels():
    with pytest.raises(ValueError):
        MKAB(10)


def test_mkab_constant_map_gives_factor_1_5():
    block = MKAB(8).eval()
    torch.nn.init.zeros_(block.mlp[2].weight)
    torch.nn.init.zeros_(block.mlp[2].bias)
    f = torch.randn(1, 8, 1, 1).expand(1, 8, 5, 5)
    assert torch.equal(block.attention(f), torch.full((1, 8), 1.5))


def test_mkab_attention_bounds():
    torch.manual_seed(1)
    block = MKAB(16)
    for _ in range(5):
        a = block.attention(torch.randn(4, 16, 6, 6) * 10)
        assert (a > 1).all() and (a < 2).all()


def test_mkab_gradient_check():
    torch.manual_seed(0)
    block = MKAB(8).double().train()
    x = torch.randn(2, 8, 4, 4, dtype=torch.float64)
    probe = torch.randn(2, 8, 4, 4, dtype=torch.float64)

    def loss():
        return (block(x) * probe).sum()

    for param in (block.paths[2].weight, block.mlp[0].weight, block.bn.weight):
        for _, a, n, rel in central_difference_check(loss, param):
            assert rel < 1e-3, (a, n)
