"""
Pruebas del pipeline de imagen táctil: preprocesamiento, resta del fondo,
umbral, ContactRate, captura del fondo y PGM.
"""

import numpy as np
import pytest

from app.tactile_image import (
    RAW_SHAPE,
    TACTILE_SHAPE,
    BackgroundCaptureError,
    InputShapeError,
    capture_background,
    contact_rate,
    load_pgm,
    preprocess,
    save_pgm,
    subtract_and_threshold,
)


class StubSource:
    def __init__(self, raw: np.ndarray, in_contact: bool):
        self.raw = raw
        self.in_contact = in_contact

    def read_noncontact_frame(self):
        return self.raw, self.in_contact


def test_preprocess_constant_image_is_fixed_point():
    raw = np.full(RAW_SHAPE, 100, dtype=np.uint8)
    out = preprocess(raw)
    assert out.shape == TACTILE_SHAPE
    assert out.dtype == np.uint8
    assert np.all(out == 100)


def test_preprocess_black_image():
    assert np.all(preprocess(np.zeros(RAW_SHAPE, dtype=np.uint8)) == 0)


def test_preprocess_checkerboard_block_mean():
    """Tablero 0/255 dentro de cada bloque: media 127.5, redondeo half-up → 128."""
    yy, xx = np.indices(RAW_SHAPE[:2])
    board = ((yy + xx) % 2 * 255).astype(np.uint8)
    raw = np.repeat(board[:, :, None], 3, axis=2)
    out = preprocess(raw)
    assert np.all(out == 128)


def test_preprocess_grayscale_is_rounded_channel_mean():
    raw = np.zeros(RAW_SHAPE, dtype=np.uint8)
    raw[..., 0], raw[..., 1], raw[..., 2] = 10, 11, 11  # media 10.67 → 11
    assert np.all(preprocess(raw) == 11)


@pytest.mark.parametrize("shape", [(480, 640), (640, 480, 3), (480, 640, 4)])
def test_preprocess_rejects_wrong_shape(shape):
    with pytest.raises(InputShapeError):
        preprocess(np.zeros(shape, dtype=np.uint8))


def test_subtract_self_is_empty():
    img = np.random.default_rng(0).integers(0, 256, TACTILE_SHAPE, dtype=np.uint8)
    for tau in (0, 20, 255):
        assert not subtract_and_threshold(img, img, tau).any()


def test_threshold_is_strict():
    bg = np.full(TACTILE_SHAPE, 50, dtype=np.uint8)
    assert not subtract_and_threshold(bg + 20, bg, 20).any()


def test_threshold_counts_exact_pixels():
    bg = np.full(TACTILE_SHAPE, 50, dtype=np.uint8)
    img = bg.copy()
    img.reshape(-1)[:100] += 21
    mask = subtract_and_threshold(img, bg, 20)
    assert mask.sum() == 100


def test_threshold_symmetric_in_sign():
    bg = np.full(TACTILE_SHAPE, 128, dtype=np.uint8)
    up, down = bg.copy(), bg.copy()
    up[0, :10] = 200
    down[0, :10] = 56
    np.testing.assert_array_equal(subtract_and_threshold(up, bg), subtract_and_threshold(down, bg))


def test_threshold_rejects_bad_tau_and_shapes():
    bg = np.zeros(TACTILE_SHAPE, dtype=np.uint8)
    with pytest.raises(ValueError):
        subtract_and_threshold(bg, bg, 256)
    with pytest.raises(InputShapeError):
        subtract_and_threshold(np.zeros((64, 48), dtype=np.uint8), bg)


def test_contact_rate_examples():
    mask = np.zeros(TACTILE_SHAPE, dtype=bool)
    assert contact_rate(mask) == 0.0
    assert contact_rate(~mask) == 1000.0
    mask.reshape(-1)[:123] = True
    assert contact_rate(mask) == pytest.approx(1000 * 123 / 3072)
    assert contact_rate(mask) == pytest.approx(40.039, abs=1e-3)


def test_contact_rate_is_monotone_and_quantized():
    rng = np.random.default_rng(1)
    mask = np.zeros(TACTILE_SHAPE, dtype=bool)
    previous = 0.0
    for idx in rng.permutation(mask.size)[:200]:
        mask.reshape(-1)[idx] = True
        value = contact_rate(mask)
        assert value >= previous
        k = round(value * 3072 / 1000)
        assert value == 1000.0 * k / 3072
        previous = value


def test_capture_background_uses_noncontact_frame():
    raw = np.full(RAW_SHAPE, 90, dtype=np.uint8)
    bg = capture_background(StubSource(raw, in_contact=False))
    assert np.all(bg == 90)


def test_capture_background_rejects_contact():
    with pytest.raises(BackgroundCaptureError):
        capture_background(StubSource(np.zeros(RAW_SHAPE, dtype=np.uint8), in_contact=True))


def test_pgm_export_and_import(tmp_path):
    img = np.random.default_rng(2).integers(0, 256, TACTILE_SHAPE, dtype=np.uint8)
    path = save_pgm(img, tmp_path / "frame.pgm")
    assert path.read_bytes().startswith(b"P5")
    np.testing.assert_array_equal(load_pgm(path), img)


def test_pgm_mask_export_uses_0_and_255(tmp_path):
    mask = np.zeros(TACTILE_SHAPE, dtype=bool)
    mask[10:20, 10:20] = True
    loaded = load_pgm(save_pgm(mask, tmp_path / "mask.pgm"))
    assert set(np.unique(loaded)) == {0, 255}
    assert (loaded == 255).sum() == 100


def test_load_pgm_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_pgm(tmp_path / "nada.pgm")
