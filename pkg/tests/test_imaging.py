import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from PIL import Image

from psltd.errors import DataError
from psltd.imaging import (
    Component, FilterPolicy, GrayImage, ManifestEntry, SizeBounds, binarize, extract_components,
    filter_components, load_image, otsu_threshold, read_manifest, save_image, write_manifest,
)
from psltd.synthgen import PrinterProfile, default_printers, render_page, synth_page


def _page(h=40, w=50, squares=()):
    a = np.full((h, w), 255, dtype=np.uint8)
    for y0, x0, sh, sw in squares:
        a[y0:y0 + sh, x0:x0 + sw] = 0
    return GrayImage(a)


def test_gray_image_validation():
    with pytest.raises(ValueError):
        GrayImage(np.array([[256]]), 8)
    with pytest.raises(ValueError):
        GrayImage(np.zeros((0, 3)))
    with pytest.raises(ValueError):
        GrayImage(np.zeros((2, 2)), 12)
    img = GrayImage(np.array([[0, 65535]]), 16)
    assert img.samples.dtype == np.uint16 and img.max_value == 65535


def test_blank_page():
    with pytest.warns(RuntimeWarning):
        assert not binarize(_page()).any()
    with pytest.warns(RuntimeWarning):
        assert extract_components(_page()) == []


def test_black_square():
    img = _page(squares=[(10, 20, 10, 10)])
    mask = binarize(img)
    expected = np.zeros_like(mask)
    expected[10:20, 20:30] = True
    assert np.array_equal(mask, expected)


def test_two_squares():
    img = _page(squares=[(20, 5, 6, 4), (3, 30, 5, 5)])
    comps = extract_components(img, "pg")
    # ordinals follow the top-left corner, top to bottom
    assert [c.bbox for c in comps] == [(30, 3, 5, 5), (5, 20, 4, 6)]
    assert [c.ordinal for c in comps] == [0, 1]
    assert [c.area for c in comps] == [25, 24]
    assert all(c.page_id == "pg" for c in comps)


def test_diagonal_touch_is_one_component():
    img = _page(squares=[(5, 5, 3, 3), (8, 8, 3, 3)])
    assert len(extract_components(img)) == 1


def test_otsu_two_levels():
    assert otsu_threshold(np.array([10, 10, 200, 200]), 256) == 10
    assert otsu_threshold(np.array([7, 7]), 256) is None


def _fake(area, w=10, h=10, i=0):
    return Component((0, 0, w, h), GrayImage(np.zeros((h, w), np.uint8)), area, "p", i)


def test_filter_example():
    comps = [_fake(a, i=i) for i, a in enumerate([10, 100, 100, 100, 500])]
    kept = filter_components(comps)
    assert [c.area for c in kept] == [100, 100, 100]
    assert [c.ordinal for c in kept] == [0, 1, 2]


def test_filter_single_and_empty():
    assert len(filter_components([_fake(37)])) == 1
    assert filter_components([]) == []


def test_filter_size_bounds():
    comps = [_fake(100, w=20, h=40), _fake(100, w=10, h=40), _fake(100, w=20, h=120)]
    policy = FilterPolicy(size_bounds=SizeBounds())
    assert [(c.width, c.height) for c in filter_components(comps, policy)] == [(20, 40)]
    with pytest.raises(ValueError):
        FilterPolicy(area_lo_factor=2, area_hi_factor=1)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.integers(1, 1000), min_size=1, max_size=15))
def test_filter_is_order_preserving_subset(areas):
    comps = [_fake(a, i=i) for i, a in enumerate(areas)]
    kept = filter_components(comps)
    seq = iter(areas)
    assert all(any(k.area == a for a in seq) for k in kept)
    assert len(kept) >= 1


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 15), st.integers(0, 15), st.integers(0, 10_000))
def test_translation_equivariance(dy, dx, seed):
    _, truth = render_page(3, "irregular", seed=seed, size=(200, 200))
    ink = truth.ink
    h, w = ink.shape
    a = np.where(ink, 0, 255).astype(np.uint8)
    b = np.full((h + 15, w + 15), 255, np.uint8)
    b[dy:dy + h, dx:dx + w] = a
    ca = extract_components(GrayImage(a))
    cb = extract_components(GrayImage(b))
    assert [(x + dx, y + dy, cw, ch) for x, y, cw, ch in (c.bbox for c in ca)] == [c.bbox for c in cb]


def test_crops_are_exact_subrectangles():
    img, _ = synth_page(default_printers(2)[1], 8, "slanted", 3, size=(300, 300))
    for c in extract_components(img):
        x0, y0, w, h = c.bbox
        assert c.crop.samples.shape == (h, w)
        assert np.array_equal(c.crop.samples, img.samples[y0:y0 + h, x0:x0 + w])
        assert 1 <= c.area <= w * h


@pytest.mark.parametrize("profile", [PrinterProfile(id="noise", toner_sigma=12, base_darkness=40),
                                     default_printers(1)[0]])
def test_binarized_ink_matches_generator(profile):
    img, truth = synth_page(profile, 30, "rounded", 5, size=(500, 500))
    fg = binarize(img).sum()
    assert abs(fg - truth.ink.sum()) <= 0.05 * truth.ink.sum()


def test_png_round_trip_8_and_16(tmp_path):
    rng = np.random.default_rng(0)
    for bd in (8, 16):
        img = GrayImage(rng.integers(0, 2**bd, (7, 9)), bd)
        save_image(img, tmp_path / f"x{bd}.png")
        back = load_image(tmp_path / f"x{bd}.png")
        assert back.bit_depth == bd and np.array_equal(back.samples, img.samples)


def test_pgm(tmp_path):
    a = np.arange(12, dtype=np.uint8).reshape(3, 4) * 20
    path = tmp_path / "x.pgm"
    path.write_bytes(b"P5\n4 3\n255\n" + a.tobytes())
    assert np.array_equal(load_image(path).samples, a)


def test_color_requires_luma(tmp_path):
    rgb = np.zeros((2, 2, 3), np.uint8)
    rgb[0, 0] = (255, 0, 0)
    rgb[1, 1] = (255, 255, 255)
    Image.fromarray(rgb, "RGB").save(tmp_path / "c.png")
    with pytest.raises(DataError):
        load_image(tmp_path / "c.png")
    img = load_image(tmp_path / "c.png", luma=True)
    assert img.samples.tolist() == [[76, 0], [0, 255]]


def test_unreadable_image(tmp_path):
    (tmp_path / "bad.png").write_bytes(b"not an image")
    with pytest.raises(DataError):
        load_image(tmp_path / "bad.png")
    with pytest.raises(DataError):
        load_image(tmp_path / "missing.png")


def test_manifest_round_trip(tmp_path):
    entries = [ManifestEntry(tmp_path / "a.png", "P1", "a", "serif"),
               ManifestEntry(tmp_path / "sub" / "b.png", "", "b")]
    write_manifest(entries, tmp_path / "m.csv")
    assert (tmp_path / "m.csv").read_text().splitlines()[0] == "path,printer_id,page_id,font_tag"
    back = read_manifest(tmp_path / "m.csv")
    assert [(e.path, e.printer_id, e.page_id, e.font_tag) for e in back] == \
        [(e.path, e.printer_id, e.page_id, e.font_tag) for e in entries]
    assert back[0].labeled and not back[1].labeled


def test_manifest_errors(tmp_path):
    (tmp_path / "dup.csv").write_text("path,printer_id,page_id,font_tag\na.png,P,x,\nb.png,P,x,\n")
    with pytest.raises(DataError):
        read_manifest(tmp_path / "dup.csv")
    (tmp_path / "cols.csv").write_text("file,printer\na.png,P\n")
    with pytest.raises(DataError):
        read_manifest(tmp_path / "cols.csv")
    with pytest.raises(DataError):
        read_manifest(tmp_path / "nope.csv")
