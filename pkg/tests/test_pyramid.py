import numpy as np
import pytest

from xsep.coupled_dl import DictionaryTriple
from xsep.errors import ArgumentError
from xsep.patchwork import PatchGridSpec, extract_grid
from xsep.pyramid import (
    Pyramid,
    PyramidSpec,
    decompose,
    dump_pyramid,
    reconstruct,
    scale_planes,
    separate_multiscale,
    separate_multiscale_detailed,
    upsample,
)
from xsep.storage import read_matrix

SPECS = [
    PyramidSpec.uniform(8, (4, 4, 7, 8)),
    PyramidSpec.uniform(8, (4, 4, 4)),
    PyramidSpec.uniform(8, (8, 8)),
    PyramidSpec.uniform(4, (1, 2, 3)),
    PyramidSpec((PatchGridSpec(8, 8), PatchGridSpec(4, 4), PatchGridSpec(4, 4))),
]


def test_reference_chain_sizes():
    shapes = PyramidSpec.uniform(8, (4, 4, 7, 8)).shapes(1024, 1024)
    assert shapes == [(1024, 1024), (256, 256), (64, 64), (9, 9), (1, 1)]


def test_non_overlapping_chain_sizes():
    spec = PyramidSpec((PatchGridSpec(8, 8), PatchGridSpec(4, 4), PatchGridSpec(4, 4)))
    assert [s[0] for s in spec.shapes(1024, 1024)] == [1024, 128, 32, 8]


def test_degenerate_scale_rejected():
    with pytest.raises(ArgumentError):
        PyramidSpec.uniform(8, (8, 8)).shapes(16, 16)
    with pytest.raises(ArgumentError):
        PyramidSpec(())


@pytest.mark.parametrize("spec", SPECS, ids=lambda s: "-".join(f"{g.patch_side}/{g.step}" for g in s.scales))
@pytest.mark.parametrize("size", [64, 100, 256])
def test_perfect_reconstruction(spec, size):
    try:
        spec.shapes(size, size)
    except ArgumentError:
        pytest.skip("spec does not fit this size")
    img = np.random.default_rng(size).uniform(0, 255, (size, size))
    assert np.max(np.abs(reconstruct(decompose(img, spec)) - img)) <= 1e-10


def test_reconstruction_on_reference_size():
    img = np.random.default_rng(0).uniform(0, 255, (1024, 1024))
    p = decompose(img, PyramidSpec.uniform(8, (4, 4, 7, 8)))
    assert [a.shape for a in p.low] == [(1024, 1024), (256, 256), (64, 64), (9, 9), (1, 1)]
    assert np.max(np.abs(reconstruct(p) - img)) <= 1e-10


def test_low_band_is_patch_dc_map():
    img = np.random.default_rng(1).random((40, 40))
    spec = PyramidSpec.uniform(4, (2, 3))
    p = decompose(img, spec)
    np.testing.assert_array_equal(p.low[1], extract_grid(img, spec.scales[0]).dc)
    np.testing.assert_array_equal(p.low[2], extract_grid(p.low[1], spec.scales[1]).dc)
    np.testing.assert_array_equal(scale_planes(img, spec, 1), p.low[1])


def test_constant_image_has_no_high_band():
    p = decompose(np.full((64, 64), 17.0), PyramidSpec.uniform(8, (4, 4)))
    for h in p.high:
        assert np.max(np.abs(h)) <= 1e-12
    np.testing.assert_allclose(p.low[-1], 17.0)


def test_zero_high_bands_chain_upsampling():
    spec = PyramidSpec.uniform(4, (2, 2))
    shapes = spec.shapes(32, 32)
    coarse = np.random.default_rng(2).random(shapes[-1])
    p = Pyramid(spec, [np.zeros(s) for s in shapes[:-1]] + [coarse], [np.zeros(s) for s in shapes[:-1]])
    ref = upsample(upsample(coarse, spec.scales[1], *shapes[1]), spec.scales[0], *shapes[0])
    np.testing.assert_allclose(reconstruct(p), ref, atol=1e-12)


def test_linearity():
    rng = np.random.default_rng(3)
    spec = PyramidSpec.uniform(8, (4, 4, 7))
    a, b = rng.random((2, 128, 128))
    pa, pb, pab = decompose(a, spec), decompose(b, spec), decompose(2 * a - 3 * b, spec)
    for u, v, w in zip(pa.high + pa.low, pb.high + pb.low, pab.high + pab.low):
        np.testing.assert_allclose(w, 2 * u - 3 * v, atol=1e-10)
    mix = Pyramid(spec, [2 * u - 3 * v for u, v in zip(pa.low, pb.low)],
                  [2 * u - 3 * v for u, v in zip(pa.high, pb.high)])
    np.testing.assert_allclose(reconstruct(mix), 2 * reconstruct(pa) - 3 * reconstruct(pb), atol=1e-10)


def test_upsample_reproduces_constants_and_samples():
    grid = PatchGridSpec(4, 4)
    plane = np.random.default_rng(4).random((5, 5))
    up = upsample(plane, grid, 20, 20)
    # patch centres sit at 4u + 1.5, halfway between pixels 4u + 1 and 4u + 2
    np.testing.assert_allclose(0.5 * (up[1::4, 1::4] + up[2::4, 2::4]) - plane, 0,
                               atol=np.ptp(plane))
    np.testing.assert_allclose(upsample(np.full((5, 5), 3.0), grid, 20, 20), 3.0)
    with pytest.raises(ArgumentError):
        upsample(plane, grid, 24, 20)


def test_reconstruct_shape_mismatch():
    spec = PyramidSpec.uniform(4, (2, 2))
    p = decompose(np.zeros((16, 16)), spec)
    p.high.pop()
    with pytest.raises(ArgumentError):
        reconstruct(p)


def random_dicts(n, seed):
    rng = np.random.default_rng(seed)
    return DictionaryTriple(*(rng.standard_normal((n, k)) for k in (20, 20, 12)))


def test_multiscale_zero_inputs():
    z = np.zeros((32, 32))
    x1, x2 = separate_multiscale(z, z, z, PyramidSpec.uniform(4, (2, 2)), [random_dicts(16, 0)])
    assert not x1.any() and not x2.any()


def test_coarse_conservation_is_exact():
    rng = np.random.default_rng(5)
    m, y1, y2 = rng.uniform(0, 255, (3, 32, 32))
    spec = PyramidSpec.uniform(4, (2, 2))
    with pytest.warns(RuntimeWarning):
        r = separate_multiscale_detailed(m, y1, y2, spec, [random_dicts(16, 1)], cfg=None)
    S1, S2 = r.coarse
    assert np.array_equal(S1 + S2, r.pyramids[0].low[-1])


def test_dump_pyramid(tmp_path):
    img = np.random.default_rng(6).random((32, 32))
    p = decompose(img, PyramidSpec.uniform(4, (2, 2)))
    dump_pyramid(p, tmp_path, "m")
    assert read_matrix(tmp_path / "m_low1.cdlm").tobytes() == img.tobytes()
    assert read_matrix(tmp_path / "m_high2.cdlm").shape == (16, 16)
    assert (tmp_path / "m_low3.cdlm").exists()
