"""Handwritten-digit reconstruction study.

IDX ingestion (with a seeded synthetic stroke-digit corpus as a hermetic
fallback), contamination of training images by multivariate t_3 noise,
subspace fits, reconstruction of held-out images and PGM emission.
"""

from __future__ import annotations

import gzip
import math
import os
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy.ndimage import gaussian_filter

from .aggregate import AggregatedModel, default_m, fit_phi_pca, make_partition
from .exceptions import ConfigError, ParameterError, ParseError, ValidationError
from .phi import AM, GM, HM
from .results import write_csv
from .simulation import multivariate_t

__all__ = [
    "IdxImageSet",
    "ReconConfig",
    "ReconResult",
    "ReconStudy",
    "parse_idx",
    "parse_idx_images",
    "parse_idx_labels",
    "serialize_idx_images",
    "serialize_idx_labels",
    "emit_pgm",
    "parse_pgm",
    "clamp_pixels",
    "synthetic_digits",
    "load_digit_split",
    "contaminate_images",
    "reconstruct",
    "setting_grid",
    "run_recon_study",
]

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801
DATA_DIR_ENV = "PHI_PCA_DATA_DIR"
SIDE = 28

_SPLIT_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}


# ---------------------------------------------------------------------------
# IDX


@dataclass
class IdxImageSet:
    """Images stored row-major as ``count x (rows * cols)`` bytes."""

    count: int
    rows: int
    cols: int
    pixels: np.ndarray
    labels: Optional[np.ndarray] = None

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, dtype=np.uint8)
        if self.pixels.shape != (self.count, self.rows * self.cols):
            raise ValidationError(f"pixels must have shape ({self.count}, {self.rows * self.cols}), got {self.pixels.shape}")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.uint8)
            if self.labels.shape != (self.count,):
                raise ValidationError("need one label per image")
            if self.labels.size and self.labels.max() > 9:
                raise ValidationError("labels must lie in 0..9")

    def images(self) -> np.ndarray:
        """Pixels as reals in [0, 255]."""
        return self.pixels.astype(float)

    def select(self, digit: int) -> np.ndarray:
        if self.labels is None:
            raise ValidationError("image set carries no labels")
        return self.images()[self.labels == digit]


def _read_header(data: bytes, magic: int, ndim: int, what: str):
    need = 4 * (1 + ndim)
    if len(data) < 4:
        raise ParseError(f"{what}: truncated magic number", offset=len(data))
    (got,) = struct.unpack(">I", data[:4])
    if got != magic:
        raise ParseError(f"{what}: bad magic 0x{got:08x}, expected 0x{magic:08x}", offset=0)
    if len(data) < need:
        raise ParseError(f"{what}: truncated header", offset=len(data))
    return struct.unpack(f">{ndim}I", data[4:need]), need


def _read_payload(data: bytes, start: int, size: int, what: str) -> np.ndarray:
    end = start + size
    if len(data) < end:
        raise ParseError(f"{what}: truncated payload, need {size} bytes after header", offset=len(data))
    if len(data) > end:
        raise ParseError(f"{what}: {len(data) - end} trailing bytes", offset=end)
    return np.frombuffer(data, dtype=np.uint8, count=size, offset=start).copy()


def parse_idx_images(data: bytes) -> IdxImageSet:
    (count, rows, cols), start = _read_header(data, IMAGES_MAGIC, 3, "images")
    pix = _read_payload(data, start, count * rows * cols, "images")
    return IdxImageSet(count, rows, cols, pix.reshape(count, rows * cols))


def parse_idx_labels(data: bytes) -> np.ndarray:
    (count,), start = _read_header(data, LABELS_MAGIC, 1, "labels")
    return _read_payload(data, start, count, "labels")


def serialize_idx_images(images: IdxImageSet) -> bytes:
    head = struct.pack(">4I", IMAGES_MAGIC, images.count, images.rows, images.cols)
    return head + images.pixels.tobytes()


def serialize_idx_labels(labels) -> bytes:
    labels = np.asarray(labels, dtype=np.uint8)
    return struct.pack(">2I", LABELS_MAGIC, labels.size) + labels.tobytes()


def _read_bytes(path) -> bytes:
    path = Path(path)
    raw = path.read_bytes()
    return gzip.decompress(raw) if path.suffix == ".gz" else raw


def parse_idx(images_path, labels_path=None) -> IdxImageSet:
    """Read an IDX image file and optionally its label file.

    Raises
    ------
    ParseError
        Bad magic, truncated or oversized payload, or an image/label count
        mismatch.  The message carries the byte offset of the problem.
    """
    images = parse_idx_images(_read_bytes(images_path))
    if labels_path is not None:
        labels = parse_idx_labels(_read_bytes(labels_path))
        if labels.size != images.count:
            raise ParseError(f"label count {labels.size} does not match image count {images.count}", offset=4)
        images.labels = labels
    return images


# ---------------------------------------------------------------------------
# PGM


def clamp_pixels(img) -> np.ndarray:
    """Round to the nearest integer and clip to [0, 255] as ``uint8``."""
    return np.clip(np.rint(np.asarray(img, dtype=float)), 0, 255).astype(np.uint8)


def emit_pgm(img, rows: Optional[int] = None, cols: Optional[int] = None) -> bytes:
    """Binary PGM (P5, maxval 255).  A flat vector needs ``rows``/``cols``
    unless it is square."""
    a = np.asarray(img, dtype=float)
    if a.ndim == 1:
        if rows is None or cols is None:
            side = math.isqrt(a.size)
            if side * side != a.size:
                raise ParameterError("flat image is not square; pass rows and cols")
            rows = cols = side
        a = a.reshape(rows, cols)
    elif a.ndim != 2:
        raise ParameterError(f"image must be 1-D or 2-D, got shape {a.shape}")
    h, w = a.shape
    return f"P5\n{w} {h}\n255\n".encode("ascii") + clamp_pixels(a).tobytes()


def parse_pgm(data: bytes) -> np.ndarray:
    """Decode a P5 PGM with maxval <= 255 into a ``rows x cols`` uint8 array."""
    pos = 0
    tokens = []
    while len(tokens) < 4:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ParseError("truncated PGM header", offset=pos)
        tokens.append((data[start:pos], start))
    magic, _ = tokens[0]
    if magic != b"P5":
        raise ParseError(f"not a binary PGM (magic {magic!r})", offset=0)
    try:
        w, h, maxval = (int(t) for t, _ in tokens[1:])
    except ValueError as exc:
        raise ParseError(f"non-integer PGM header field: {exc}", offset=tokens[1][1]) from exc
    if not 0 < maxval <= 255:
        raise ParseError(f"unsupported maxval {maxval}", offset=tokens[3][1])
    pos += 1  # single whitespace after maxval
    end = pos + w * h
    if len(data) < end:
        raise ParseError("truncated PGM raster", offset=len(data))
    return np.frombuffer(data, dtype=np.uint8, count=w * h, offset=pos).reshape(h, w).copy()


# ---------------------------------------------------------------------------
# Synthetic stroke digits


def _arc(cx, cy, rx, ry, t0, t1, k=9):
    t = np.radians(np.linspace(t0, t1, k))
    return np.column_stack([cx + rx * np.cos(t), cy - ry * np.sin(t)])


# Polylines per digit in a unit box (x to the right, y downward).
_TEMPLATES = {
    0: [_arc(0.5, 0.5, 0.28, 0.36, 0, 360, 17)],
    1: [np.array([[0.38, 0.3], [0.52, 0.14], [0.52, 0.86]])],
    2: [np.vstack([_arc(0.5, 0.34, 0.22, 0.2, 160, -40), [[0.28, 0.86], [0.74, 0.86]]])],
    3: [_arc(0.48, 0.32, 0.22, 0.18, 150, -90), _arc(0.48, 0.68, 0.25, 0.18, 90, -150)],
    4: [np.array([[0.62, 0.86], [0.62, 0.14], [0.26, 0.62], [0.78, 0.62]])],
    5: [np.vstack([[[0.72, 0.15], [0.36, 0.15], [0.33, 0.46]], _arc(0.5, 0.64, 0.24, 0.21, 130, -140)])],
    6: [np.vstack([[[0.64, 0.14]], _arc(0.5, 0.64, 0.22, 0.22, 160, -200, 17)])],
    7: [np.array([[0.26, 0.16], [0.74, 0.16], [0.44, 0.86]])],
    8: [_arc(0.5, 0.31, 0.19, 0.17, 0, 360, 15), _arc(0.5, 0.67, 0.23, 0.19, 0, 360, 15)],
    9: [_arc(0.5, 0.34, 0.21, 0.2, 0, 360, 15), np.array([[0.71, 0.34], [0.62, 0.86]])],
}


def _segments(polylines):
    return np.concatenate([np.stack([pl[:-1], pl[1:]], axis=1) for pl in polylines])


# Elastic displacement (pixels) and stroke texture amplitude.
_WARP_PX = 1.5
_TEXTURE = 0.2

_GRID = np.stack(np.meshgrid((np.arange(SIDE) + 0.5) / SIDE, (np.arange(SIDE) + 0.5) / SIDE), -1).reshape(-1, 2)


def _smooth_field(rng, sigma: float) -> np.ndarray:
    """Unit-variance Gaussian random field on the pixel grid."""
    f = gaussian_filter(rng.standard_normal((SIDE, SIDE)), sigma, mode="wrap")
    return (f / f.std()).ravel()


def _render(segs: np.ndarray, width: float, peak: float, grid: np.ndarray = _GRID) -> np.ndarray:
    a, b = segs[:, 0], segs[:, 1]
    ab = b - a
    t = np.einsum("psk,sk->ps", grid[:, None, :] - a[None], ab) / np.maximum((ab**2).sum(1), 1e-12)
    proj = a[None] + np.clip(t, 0, 1)[..., None] * ab[None]
    d = np.sqrt(((grid[:, None, :] - proj) ** 2).sum(-1)).min(axis=1) * SIDE
    return peak / (1.0 + np.exp((d - width) / 0.35))


def synthetic_digits(digit: int, count: int, seed) -> np.ndarray:
    """``count`` seeded 28x28 stroke renderings of ``digit`` as uint8 rows.

    Each image applies a random rotation, anisotropic scale, shear, shift,
    control-point jitter and stroke width to the digit's template, then an
    elastic distortion of the pixel grid and a multiplicative intensity
    texture along the strokes.
    """
    if digit not in _TEMPLATES:
        raise ParameterError(f"digit must lie in 0..9, got {digit}")
    rng = np.random.default_rng(seed)
    base = _TEMPLATES[digit]
    out = np.empty((count, SIDE * SIDE), dtype=np.uint8)
    for i in range(count):
        th = np.radians(rng.uniform(-14, 14))
        sx, sy = rng.uniform(0.8, 1.1, 2)
        sh = rng.uniform(-0.2, 0.2)
        A = np.array([[np.cos(th), -np.sin(th)], [np.sin(th), np.cos(th)]]) @ np.array([[sx, sh], [0, sy]]) * 0.72
        shift = rng.uniform(-0.05, 0.05, 2)
        lines = [0.5 + (pl + rng.normal(0, 0.018, pl.shape) - 0.5) @ A.T + shift for pl in base]
        warp = np.column_stack([_smooth_field(rng, 3.5), _smooth_field(rng, 3.5)]) * (_WARP_PX / SIDE)
        img = _render(_segments(lines), width=rng.uniform(0.9, 1.8), peak=rng.uniform(200, 255), grid=_GRID + warp)
        out[i] = clamp_pixels(img * np.clip(1.0 + _TEXTURE * _smooth_field(rng, 0.8), 0.0, None))
    return out


def synthetic_split(digit: int, n_train: int, n_test: int, seed: int):
    """Independent train/test draws keyed by ``(seed, digit)``."""
    tr, te = np.random.SeedSequence([int(seed), 7919, int(digit)]).spawn(2)
    return synthetic_digits(digit, n_train, tr).astype(float), synthetic_digits(digit, n_test, te).astype(float)


def _find_idx(data_dir: Path, stem: str) -> Optional[Path]:
    for name in (stem, stem + ".gz", stem.replace("-idx", ".idx")):
        if (data_dir / name).exists():
            return data_dir / name
    return None


def load_digit_split(data_dir, digit: int):
    """Training and test images of ``digit`` from IDX files in ``data_dir``."""
    data_dir = Path(data_dir)
    out = []
    for split in ("train", "test"):
        paths = [_find_idx(data_dir, stem) for stem in _SPLIT_FILES[split]]
        if None in paths:
            raise ConfigError(f"IDX {split} files not found in {data_dir}")
        out.append(parse_idx(*paths).select(digit))
    return tuple(out)


# ---------------------------------------------------------------------------
# Contamination and reconstruction


def contaminate_images(X, pi: float, sigma_out: float, seed):
    """Add ``t_3(0, sigma_out^2 I)`` noise to ``round(pi * n)`` random rows.

    Returns the contaminated copy (not clamped) and the boolean row mask.
    """
    X = np.array(X, dtype=float)
    if not 0 <= pi <= 1:
        raise ParameterError(f"pi must lie in [0, 1], got {pi}")
    if sigma_out < 0:
        raise ParameterError(f"sigma_out must be nonnegative, got {sigma_out}")
    n, p = X.shape
    k = int(math.floor(pi * n + 0.5))
    rng = np.random.default_rng(seed)
    rows = rng.choice(n, size=k, replace=False)
    mask = np.zeros(n, dtype=bool)
    mask[rows] = True
    if k:
        X[rows] += multivariate_t(rng, k, p, 3, sigma_out)
    return X, mask


def reconstruct(model, X_train_mean, X0, r: int) -> np.ndarray:
    """``X_bar + B_r B_r^T (X0 - X_bar)`` for one image or a stack of rows."""
    B = np.asarray(model.eigenvectors if hasattr(model, "eigenvectors") else model, dtype=float)
    p = B.shape[0]
    if not 1 <= r <= p:
        raise ParameterError(f"r must lie in [1, {p}], got {r}")
    if r > B.shape[1]:
        raise ParameterError(f"model has {B.shape[1]} components, fewer than r={r}")
    Br = B[:, :r]
    mean = np.asarray(X_train_mean, dtype=float)
    D = np.asarray(X0, dtype=float) - mean
    return mean + (D @ Br) @ Br.T


# ---------------------------------------------------------------------------
# Study


_METHODS = {"HM": HM, "GM": GM, "PCA": AM}


def setting_grid(setting: str):
    """``(pi, sigma_out)`` pairs of the two contamination sweeps."""
    if setting == "i":
        return [(round(0.05 * k, 2), 300.0) for k in range(7)]
    if setting == "ii":
        return [(0.1, float(s)) for s in range(100, 800, 100)]
    raise ConfigError(f"setting must be 'i' or 'ii', got {setting!r}")


@dataclass
class ReconConfig:
    digits: Sequence[int] = (1, 2)
    setting: Optional[str] = "i"
    grid: Optional[Sequence[Sequence[float]]] = None
    methods: Sequence[str] = ("HM", "GM", "PCA")
    r: int = 50
    n_train: Optional[int] = 2000
    n_test: int = 100
    emit_images: int = 5
    seed: int = 0
    data_dir: Optional[str] = None
    fallback_synthetic: bool = False
    scale: bool = False

    def __post_init__(self):
        self.digits = tuple(int(d) for d in self.digits)
        self.methods = tuple(self.methods)
        bad = [m for m in self.methods if m not in _METHODS]
        if bad:
            raise ConfigError(f"unknown reconstruction method(s) {bad}; choose from {sorted(_METHODS)}")
        if self.grid is not None:
            self.grid = tuple((float(pi), float(s)) for pi, s in self.grid)
        elif self.setting is None:
            raise ConfigError("give either a setting or an explicit grid")
        if self.r < 1 or self.n_test < 1 or self.emit_images < 0:
            raise ConfigError("r and n_test must be positive and emit_images nonnegative")

    def points(self):
        return list(self.grid) if self.grid is not None else setting_grid(self.setting)

    def resolved_data_dir(self) -> Optional[str]:
        return self.data_dir or os.environ.get(DATA_DIR_ENV) or None

    def to_dict(self) -> dict:
        d = asdict(self)
        for k in ("digits", "methods"):
            d[k] = list(d[k])
        if d["grid"] is not None:
            d["grid"] = [list(g) for g in d["grid"]]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ReconConfig":
        known = {f for f in cls.__dataclass_fields__}
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown reconstruction config key(s): {sorted(extra)}")
        return cls(**d)


@dataclass
class ReconResult:
    """Per-test-image MSE of one (digit, method, contamination) cell.

    ``reconstructions`` are unclamped; clamping happens only at emission.
    """

    digit: int
    method: str
    r: int
    pi: float
    sigma_out: float
    mse: np.ndarray
    reconstructions: np.ndarray = field(repr=False)

    @property
    def mean_mse(self) -> float:
        return float(self.mse.mean())


@dataclass
class ReconStudy:
    results: list
    source: str
    test_images: dict = field(repr=False)
    files: list = field(default_factory=list)

    def mean_mse(self, digit: int, method: str, pi: float, sigma_out: float) -> float:
        for res in self.results:
            if (res.digit, res.method) == (digit, method) and np.isclose(res.pi, pi) and np.isclose(res.sigma_out, sigma_out):
                return res.mean_mse
        raise KeyError((digit, method, pi, sigma_out))


def _load(config: ReconConfig, digit: int):
    data_dir = config.resolved_data_dir()
    if data_dir is not None and _find_idx(Path(data_dir), _SPLIT_FILES["train"][0]) is not None:
        train, test = load_digit_split(data_dir, digit)
        if config.n_train is not None:
            train = train[: config.n_train]
        return train, test[: config.n_test], "idx"
    if not config.fallback_synthetic:
        where = data_dir or f"${DATA_DIR_ENV} (unset)"
        raise ConfigError(f"no IDX dataset at {where} and the synthetic fallback is disabled")
    n_train = 2000 if config.n_train is None else config.n_train
    train, test = synthetic_split(digit, n_train, config.n_test, config.seed)
    return train, test, "synthetic"


def _cell(config, digit, idx, pi, s_out, train, test, scale):
    cont_ss, part_ss = np.random.SeedSequence([int(config.seed), int(digit), int(idx)]).spawn(2)
    Xc, _ = contaminate_images(train, pi, s_out / scale, cont_ss)
    n = Xc.shape[0]
    m = default_m(n)
    plan = make_partition(n, m, int(part_ss.generate_state(1, dtype=np.uint64)[0]))
    out = []
    for name in config.methods:
        if name == "PCA":
            model = fit_phi_pca(Xc, 1, AM, ridge_eps=0.0)
        else:
            model = fit_phi_pca(Xc, m, _METHODS[name], plan=plan)
        rec = reconstruct(model, model.mean, test, config.r)
        mse = ((rec - test) ** 2).mean(axis=1) * scale**2
        out.append(ReconResult(digit, name, config.r, pi, s_out, mse, rec * scale))
    return out


def run_recon_study(config: ReconConfig, out_dir=None, threads: int = 1) -> ReconStudy:
    """Fit every method on contaminated training images of each digit and
    reconstruct the held-out images.

    Training images of each digit are contaminated per grid point; the
    methods of one cell share the contaminated sample and the partition.
    With ``out_dir`` the per-image and summary MSE tables and PGM files of
    the first ``emit_images`` test images are written there.
    """
    scale = 255.0 if config.scale else 1.0
    tasks, test_images, sources = [], {}, set()
    for digit in config.digits:
        train, test, src = _load(config, digit)
        sources.add(src)
        if train.shape[1] < config.r:
            raise ConfigError(f"r={config.r} exceeds the pixel count {train.shape[1]}")
        test_images[digit] = test
        for idx, (pi, s_out) in enumerate(config.points()):
            tasks.append((digit, idx, pi, s_out, train / scale, test / scale))

    def run(t):
        return _cell(config, *t, scale)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            cells = list(pool.map(run, tasks))
    else:
        cells = [run(t) for t in tasks]
    study = ReconStudy([res for cell in cells for res in cell], "+".join(sorted(sources)), test_images)
    if out_dir is not None:
        study.files = write_recon_artifacts(study, out_dir, config.emit_images)
    return study


def _fmt(v: float) -> str:
    return f"{v:g}".replace(".", "p")


def write_recon_artifacts(study: ReconStudy, out_dir, emit_images: int = 5) -> list:
    out_dir = Path(out_dir)
    per_image, summary = [], []
    for res in study.results:
        key = (res.digit, res.method, res.r, res.pi, res.sigma_out)
        per_image.extend(key + (i, float(v)) for i, v in enumerate(res.mse))
        se = res.mse.std(ddof=1) / math.sqrt(res.mse.size) if res.mse.size > 1 else 0.0
        summary.append(key + (res.mean_mse, float(se), res.mse.size))
    head = ["digit", "method", "r", "pi", "sigma_out"]
    files = [
        write_csv(out_dir / "mse.csv", head + ["test_index", "mse"], per_image),
        write_csv(out_dir / "mse_summary.csv", head + ["mean_mse", "stderr", "n_test"], summary),
    ]
    img_dir = out_dir / "images"
    img_dir.mkdir(parents=True, exist_ok=True)
    for digit, test in study.test_images.items():
        for i in range(min(emit_images, test.shape[0])):
            path = img_dir / f"d{digit}_truth_{i:03d}.pgm"
            path.write_bytes(emit_pgm(test[i]))
            files.append(path)
    for res in study.results:
        for i in range(min(emit_images, res.reconstructions.shape[0])):
            path = img_dir / f"d{res.digit}_{res.method}_pi{_fmt(res.pi)}_s{_fmt(res.sigma_out)}_{i:03d}.pgm"
            path.write_bytes(emit_pgm(res.reconstructions[i]))
            files.append(path)
    return files
