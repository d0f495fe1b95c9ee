"""Image preprocessing algorithms: structured patch selection, boring-pixel
scale augmentation, and the MS-SSIM similarity metric.

Images are uint8 numpy arrays, (H, W) grayscale or (H, W, 3) RGB. All
operations are pure functions of (inputs, seed) and safe to run in
parallel. PPM (P5/P6) is the bit-exact reference file format; PNG I/O
goes through Pillow.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels

GRAY_WEIGHTS = (0.299, 0.587, 0.114)

# Wang et al. multi-scale exponents; subsets renormalize to sum 1.
MSSSIM_WEIGHTS = (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)
SSIM_C1 = (0.01 * 255.0) ** 2
SSIM_C2 = (0.03 * 255.0) ** 2
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5


def _check_image(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img)
    if img.dtype != np.uint8:
        raise ValueError(f"expected uint8 image, got dtype {img.dtype}")
    if img.ndim == 2:
        return img
    if img.ndim == 3 and img.shape[2] in (1, 3):
        return img[:, :, 0] if img.shape[2] == 1 else img
    raise ValueError(f"expected (H, W) or (H, W, 3) image, got shape {img.shape}")


def to_gray(img: np.ndarray) -> np.ndarray:
    """Luma conversion to a float64 (H, W) array on the 0..255 scale."""
    img = _check_image(img)
    if img.ndim == 2:
        return img.astype(np.float64)
    r, g, b = GRAY_WEIGHTS
    return r * img[:, :, 0] + g * img[:, :, 1] + b * img[:, :, 2]


def resize(img: np.ndarray, new_w: int, new_h: int) -> np.ndarray:
    """Bilinear resize (pixel-center aligned) to exactly (new_h, new_w)."""
    img = _check_image(img)
    if new_w < 1 or new_h < 1:
        raise ValueError(f"target dimensions must be positive, got {new_w}x{new_h}")
    if (img.shape[0], img.shape[1]) == (new_h, new_w):
        return img.copy()
    flat = img[:, :, None] if img.ndim == 2 else img
    out = kernels.bilinear_resize(flat.astype(np.float64), new_h, new_w)
    out = np.clip(np.rint(out), 0, 255).astype(np.uint8)
    return out[:, :, 0] if img.ndim == 2 else out


@dataclass(frozen=True)
class BoundingBox:
    """Inclusive pixel-coordinate rectangle."""

    x_min: int
    y_min: int
    x_max: int
    y_max: int

    def __post_init__(self):
        if self.x_min > self.x_max or self.y_min > self.y_max:
            raise ValueError(f"degenerate bounding box: {self}")

    @property
    def width(self) -> int:
        return self.x_max - self.x_min + 1

    @property
    def height(self) -> int:
        return self.y_max - self.y_min + 1


@dataclass(frozen=True)
class PatchSet:
    """Exactly four equal-size patches: center, two random cells, resized full."""

    patches: tuple[np.ndarray, ...]
    provenance: tuple[tuple, ...]  # ("center",), ("random", 0..7), ("resized_full",)

    def __post_init__(self):
        kinds = [tag[0] for tag in self.provenance]
        if len(self.patches) != 4 or kinds.count("center") != 1 or kinds.count("random") != 2 or kinds.count("resized_full") != 1:
            raise ValueError(f"invalid patch provenance: {self.provenance}")
        rand = [tag[1] for tag in self.provenance if tag[0] == "random"]
        if rand[0] == rand[1] or not all(0 <= r <= 7 for r in rand):
            raise ValueError(f"random cell indices must be distinct in 0..7: {rand}")


# grid cells in row-major order 0..8; cell 4 is the center
_NON_CENTER_CELLS = (0, 1, 2, 3, 5, 6, 7, 8)


def structured_patches(img: np.ndarray, rng_seed: int) -> PatchSet:
    """Split into a 3x3 grid and pick center + 2 seeded-random cells + the
    whole image resized to cell size, in that fixed order."""
    img = _check_image(img)
    h, w = img.shape[0], img.shape[1]
    if h % 3 or w % 3:
        raise ValueError(f"image dimensions must be divisible by 3, got {w}x{h}")
    ch, cw = h // 3, w // 3

    def cell(index: int) -> np.ndarray:
        r, c = divmod(index, 3)
        return img[r * ch : (r + 1) * ch, c * cw : (c + 1) * cw].copy()

    rng = np.random.default_rng(rng_seed)
    picks = rng.choice(8, size=2, replace=False)
    patches = (
        cell(4),
        cell(_NON_CENTER_CELLS[picks[0]]),
        cell(_NON_CENTER_CELLS[picks[1]]),
        resize(img, cw, ch),
    )
    provenance = (("center",), ("random", int(picks[0])), ("random", int(picks[1])), ("resized_full",))
    return PatchSet(patches=patches, provenance=provenance)


def _background_gray(gray: np.ndarray) -> float:
    # modal corner value; ties resolve to the lowest value
    corners = [gray[0, 0], gray[0, -1], gray[-1, 0], gray[-1, -1]]
    rounded = np.rint(corners).astype(np.int64)
    values, counts = np.unique(rounded, return_counts=True)
    return float(values[np.argmax(counts)])


def content_bbox(img: np.ndarray, background_tolerance: float = 10.0) -> BoundingBox:
    """Tight box around pixels that differ from the corner-modal background
    gray by more than the tolerance; the full image when nothing does."""
    img = _check_image(img)
    gray = to_gray(img)
    bg = _background_gray(gray)
    mask = np.abs(gray - bg) > background_tolerance
    if not mask.any():
        return BoundingBox(0, 0, img.shape[1] - 1, img.shape[0] - 1)
    rows = np.nonzero(mask.any(axis=1))[0]
    cols = np.nonzero(mask.any(axis=0))[0]
    return BoundingBox(int(cols[0]), int(rows[0]), int(cols[-1]), int(rows[-1]))


def _background_color(img: np.ndarray, bg_gray: float):
    if img.ndim == 2:
        return np.uint8(np.clip(np.rint(bg_gray), 0, 255))
    gray = to_gray(img)
    for y, x in ((0, 0), (0, img.shape[1] - 1), (img.shape[0] - 1, 0), (img.shape[0] - 1, img.shape[1] - 1)):
        if np.rint(gray[y, x]) == bg_gray:
            return img[y, x].copy()
    return img[0, 0].copy()


def scale_augment(
    img: np.ndarray,
    rng_seed: int,
    apply_threshold: float = 0.3,
    scale_range: tuple[float, float] = (0.6, 1.0),
) -> np.ndarray:
    """Randomly re-scale the content box onto a background-colored canvas.

    Draws u ~ Uniform(0, 1) from the seed; when u >= apply_threshold the
    input is returned unchanged. Otherwise the content box is cropped,
    scaled by a factor from `scale_range` of its maximal fit, and
    composited centered onto a canvas of the original size filled with
    the detected background color. Canvas dimensions and content aspect
    ratio are always preserved.
    """
    img = _check_image(img)
    rng = np.random.default_rng(rng_seed)
    if rng.random() >= apply_threshold:
        return img.copy()

    gray = to_gray(img)
    bg_gray = _background_gray(gray)
    box = content_bbox(img)
    crop = img[box.y_min : box.y_max + 1, box.x_min : box.x_max + 1]

    h, w = img.shape[0], img.shape[1]
    fit = min(w / box.width, h / box.height)
    factor = rng.uniform(scale_range[0], scale_range[1])
    new_w = int(np.rint(box.width * fit * factor))
    new_h = int(np.rint(box.height * fit * factor))
    if new_w < 1 or new_h < 1:
        raise ValueError(f"content box degenerates to {new_w}x{new_h} after scaling")
    new_w, new_h = min(new_w, w), min(new_h, h)

    scaled = resize(crop, new_w, new_h)
    canvas = np.empty_like(img)
    canvas[...] = _background_color(img, bg_gray)
    y0 = (h - new_h) // 2
    x0 = (w - new_w) // 2
    canvas[y0 : y0 + new_h, x0 : x0 + new_w] = scaled
    return canvas


def _gaussian_kernel(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    offsets = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    k = np.exp(-(offsets**2) / (2.0 * sigma**2))
    return k / k.sum()


def _ssim_means(a: np.ndarray, b: np.ndarray, kernel: np.ndarray) -> tuple[float, float]:
    """Mean luminance and contrast-structure terms over the valid region."""
    mu_a = kernels.sep_conv_valid(a, kernel)
    mu_b = kernels.sep_conv_valid(b, kernel)
    var_a = kernels.sep_conv_valid(a * a, kernel) - mu_a * mu_a
    var_b = kernels.sep_conv_valid(b * b, kernel) - mu_b * mu_b
    cov = kernels.sep_conv_valid(a * b, kernel) - mu_a * mu_b
    lum = (2.0 * mu_a * mu_b + SSIM_C1) / (mu_a * mu_a + mu_b * mu_b + SSIM_C1)
    cs = (2.0 * cov + SSIM_C2) / (var_a + var_b + SSIM_C2)
    return float(lum.mean()), float(cs.mean())


def _downsample2(img: np.ndarray) -> np.ndarray:
    h, w = img.shape
    img = img[: h - h % 2, : w - w % 2]
    return img.reshape(h // 2, 2, w // 2, 2).mean(axis=(1, 3))


def ms_ssim(a: np.ndarray, b: np.ndarray, num_scales: int = 5) -> float:
    """Multi-scale SSIM on the 0..255 range; 1.0 for identical images.

    Contrast-structure terms contribute at every scale, luminance only at
    the coarsest; scales are linked by 2x average-pool downsampling.
    Negative terms clamp to zero before exponentiation.
    """
    ga, gb = to_gray(a), to_gray(b)
    if ga.shape != gb.shape:
        raise ValueError(f"dimension mismatch: {ga.shape} vs {gb.shape}")
    if not (1 <= num_scales <= len(MSSSIM_WEIGHTS)):
        raise ValueError(f"num_scales must be in [1, {len(MSSSIM_WEIGHTS)}], got {num_scales}")
    min_side = SSIM_WINDOW * 2 ** (num_scales - 1)
    if min(ga.shape) < min_side:
        raise ValueError(
            f"image sides must be >= {min_side} for {num_scales} scales, got {ga.shape}"
        )
    weights = np.asarray(MSSSIM_WEIGHTS[:num_scales], dtype=np.float64)
    if num_scales != 5:
        weights = weights / weights.sum()

    kernel = _gaussian_kernel()
    score = 1.0
    for scale in range(num_scales):
        lum, cs = _ssim_means(ga, gb, kernel)
        if scale < num_scales - 1:
            score *= max(cs, 0.0) ** weights[scale]
            ga, gb = _downsample2(ga), _downsample2(gb)
        else:
            score *= (max(cs, 0.0) * max(lum, 0.0)) ** weights[scale]
    return float(score)


# -- file formats ------------------------------------------------------------


def write_ppm(path, img: np.ndarray) -> None:
    """Binary P5 (gray) / P6 (RGB) writer; bit-exact reference format."""
    img = _check_image(img)
    magic = b"P5" if img.ndim == 2 else b"P6"
    with open(path, "wb") as fh:
        fh.write(magic + b"\n%d %d\n255\n" % (img.shape[1], img.shape[0]))
        fh.write(img.tobytes())


def read_ppm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        data = fh.read()
    fields: list[bytes] = []
    pos = 0
    while len(fields) < 4:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":
            pos = data.index(b"\n", pos) + 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        fields.append(data[start:pos])
    magic, w, h, maxval = fields[0], int(fields[1]), int(fields[2]), int(fields[3])
    if magic not in (b"P5", b"P6") or maxval != 255:
        raise ValueError(f"unsupported PPM header: {magic!r} maxval={maxval}")
    pos += 1  # single whitespace byte after maxval
    channels = 1 if magic == b"P5" else 3
    pixels = np.frombuffer(data, dtype=np.uint8, count=w * h * channels, offset=pos)
    img = pixels.reshape(h, w) if channels == 1 else pixels.reshape(h, w, 3)
    return img.copy()


def write_png(path, img: np.ndarray) -> None:
    from PIL import Image as PILImage

    PILImage.fromarray(_check_image(img)).save(path, format="PNG")


def read_png(path) -> np.ndarray:
    from PIL import Image as PILImage

    with PILImage.open(path) as im:
        mode = "L" if im.mode in ("L", "1", "I;16", "I") else "RGB"
        return np.asarray(im.convert(mode))
