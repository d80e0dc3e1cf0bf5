"""Evaluation and rendering: accuracy, run aggregation, PGM sample grids.

Class grids put one latent draw per row and one class per column, so a row
shows how the conditional generator redraws the same z across labels.
Interpolation grids sweep z linearly between two draws along each row.
Grids are written as binary (P5) PGM, 8 bits per pixel.
"""

import numpy as np

from .errors import DomainError, FormatError
from .layers import EVAL
from .models import one_hot


def predict_labels(model, x, batch_size=512):
    """Eval-mode argmax labels (1-based) for a feature matrix."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] == 0:
        raise DomainError(f"predict_labels expects a non-empty (N, d) matrix, got {x.shape}")
    out = np.empty(x.shape[0], dtype=np.int64)
    for start in range(0, x.shape[0], batch_size):
        logits, _ = model.c_forward(x[start : start + batch_size], EVAL)
        out[start : start + batch_size] = np.argmax(logits.data, axis=1) + 1
    return out


def accuracy(model, x, y, batch_size=512):
    y = np.asarray(y)
    pred = predict_labels(model, x, batch_size)
    return float(np.mean(pred == y))


def split_accuracy(model, dataset, split="test", batch_size=512):
    idx = dataset.split(split)
    if idx.size == 0:
        raise DomainError(f"split {split!r} is empty")
    return accuracy(model, dataset.x[idx], dataset.y[idx], batch_size)


def aggregate_accuracies(values):
    """Format run accuracies as percent: 'MM.MM ± SS.SS%' (sample std, ddof=1)."""
    values = np.asarray(list(values), dtype=np.float64)
    if values.size < 2:
        raise DomainError(f"aggregation needs at least 2 runs, got {values.size}")
    mean = float(np.mean(values)) * 100.0
    std = float(np.std(values, ddof=1)) * 100.0
    return f"{mean:.2f} ± {std:.2f}%"


# ---------------------------------------------------------------------------
# PGM io

def write_pgm(path, image):
    image = np.asarray(image)
    if image.ndim != 2 or image.dtype != np.uint8:
        raise DomainError(f"write_pgm expects a 2-D uint8 array, got {image.dtype} {image.shape}")
    h, w = image.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(image.tobytes())


def _pgm_tokens(raw, path):
    """Header tokens of a PGM, honoring # comments; returns (tokens, offset)."""
    tokens = []
    i = 0
    while len(tokens) < 4:
        if i >= len(raw):
            raise FormatError(f"{path}: truncated PGM header")
        c = raw[i : i + 1]
        if c == b"#":
            while i < len(raw) and raw[i : i + 1] != b"\n":
                i += 1
            i += 1
        elif c.isspace():
            i += 1
        else:
            j = i
            while j < len(raw) and not raw[j : j + 1].isspace() and raw[j : j + 1] != b"#":
                j += 1
            tokens.append(raw[i:j])
            i = j
    return tokens, i + 1  # single whitespace byte after maxval


def read_pgm(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    tokens, offset = _pgm_tokens(raw, path)
    if tokens[0] != b"P5":
        raise FormatError(f"{path}: not a binary PGM (magic {tokens[0]!r})")
    try:
        w, h, maxval = (int(t) for t in tokens[1:4])
    except ValueError:
        raise FormatError(f"{path}: non-numeric PGM header fields")
    if maxval != 255:
        raise FormatError(f"{path}: unsupported maxval {maxval}, expected 255")
    pixels = raw[offset:]
    if len(pixels) != w * h:
        raise FormatError(f"{path}: expected {w * h} pixel bytes, found {len(pixels)}")
    return np.frombuffer(pixels, dtype=np.uint8).reshape(h, w)


# ---------------------------------------------------------------------------
# sample grids

def to_pixels(x):
    """[0,1] floats -> uint8 via round-half-even after scaling by 255."""
    return np.rint(np.clip(x, 0.0, 1.0) * 255.0).astype(np.uint8)


def _tile_side(model):
    side = int(round(np.sqrt(model.profile.input_dim)))
    if side * side != model.profile.input_dim:
        raise DomainError(
            f"input dim {model.profile.input_dim} is not a square image; grids need one"
        )
    return side


def grid_latents(model, rows, seed):
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 404]))
    return rng.random(size=(rows, model.profile.latent_dim))


def render_tile(model, z_row, label):
    """One eval-mode sample as a (side, side) uint8 tile."""
    side = _tile_side(model)
    y = one_hot(np.array([label]), model.profile.num_classes)
    x = model.gg_forward(z_row[None, :], y, EVAL).data[0]
    return to_pixels(x.reshape(side, side))


def render_class_grid(model, rows, seed):
    """rows x K tiles; each row reuses one z across all class labels."""
    if rows < 1:
        raise DomainError(f"need at least 1 row, got {rows}")
    side = _tile_side(model)
    k = model.profile.num_classes
    zs = grid_latents(model, rows, seed)
    grid = np.empty((rows * side, k * side), dtype=np.uint8)
    for r in range(rows):
        for c in range(k):
            grid[r * side : (r + 1) * side, c * side : (c + 1) * side] = render_tile(
                model, zs[r], c + 1
            )
    return grid


def render_interpolation_grid(model, steps, seed):
    """K rows; each row interpolates z linearly between two seeded draws.

    Column 0 is exactly the first draw and the last column exactly the
    second, so endpoints match direct renders bit for bit.
    """
    if steps < 2:
        raise DomainError(f"interpolation needs at least 2 steps, got {steps}")
    side = _tile_side(model)
    k = model.profile.num_classes
    ends = grid_latents(model, 2, seed)
    ts = np.linspace(0.0, 1.0, steps)
    grid = np.empty((k * side, steps * side), dtype=np.uint8)
    for r in range(k):
        for c, t in enumerate(ts):
            z = (1.0 - t) * ends[0] + t * ends[1]
            grid[r * side : (r + 1) * side, c * side : (c + 1) * side] = render_tile(
                model, z, r + 1
            )
    return grid
