"""Benchmark image generation: random fields, densities, shapes, normalization.

Classes 1-8 are generated here; classes 9-10 (real test images and microscopy
data) are load-only.  Every generated measure is normalized to non-negative
integer pixel masses with an exact average of `target_mean` (default 1e5), so
all members of a class/resolution share one total and every pair of members
is a balanced instance.

Randomness: numpy's PCG64 via `default_rng`, seeded per image through
`SeedSequence([master_seed, class_id, resolution, image_index])`.  This is
portable and bit-stable across platforms, so corpora are reproducible from
the manifest alone.

Gaussian random fields use a dense covariance Cholesky factorization with
jitter 1e-10 * variance for resolutions up to 64, and circulant embedding on
an enlarged torus for 128 and above (negative embedding eigenvalues are
clipped when tiny, otherwise the embedding is enlarged and retried).
"""

from __future__ import annotations

import functools
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cholesky as _scipy_cholesky
from scipy.special import expit, gammaln, kv

from .measures import GridMeasure, save_grid_csv

__all__ = [
    "MaternParams",
    "RawField",
    "ClassSpec",
    "CLASS_NAMES",
    "GENERATED_CLASSES",
    "bessel_k",
    "matern_cov",
    "sample_grf",
    "transform_log",
    "transform_logit",
    "gen_cauchy",
    "gen_shapes",
    "normalize_to_integer_masses",
    "build_class",
    "write_class",
]

CLASS_NAMES = {
    1: "WhiteNoise",
    2: "GRFrough",
    3: "GRFmoderate",
    4: "GRFsmooth",
    5: "LogGRF",
    6: "LogitGRF",
    7: "CauchyDensity",
    8: "Shapes",
    9: "ClassicImages",
    10: "Microscopy",
}
GENERATED_CLASSES = tuple(range(1, 9))
RESOLUTIONS = (32, 64, 128, 256, 512)
IMAGES_PER_CLASS = 10
DEFAULT_TARGET_MEAN = 100_000

_CHOLESKY_MAX_N = 64
_JITTER = 1e-10
_EMBED_CLIP_TOL = 1e-6
_EMBED_MAX_FACTOR = 8


@dataclass(frozen=True)
class MaternParams:
    """Variance, smoothness, and range of a Matern covariance."""

    variance: float = 1.0
    smoothness: float = 1.0
    range_: float = 0.15

    def __post_init__(self):
        for name in ("variance", "smoothness", "range_"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v > 0):
                raise ValueError(f"{name} must be finite and positive, got {v}")


@dataclass(frozen=True)
class RawField:
    """Pre-normalization pixel values on an n x n grid, row-major."""

    resolution: int
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        vals = np.ascontiguousarray(self.values, dtype=np.float64)
        if vals.shape != (self.resolution**2,):
            raise ValueError(f"expected {self.resolution ** 2} values, got {vals.shape}")
        if not np.isfinite(vals).all():
            raise ValueError("field values must be finite")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)


def bessel_k(order: float, x):
    """Modified Bessel function of the second kind K_order(x), x > 0."""
    if not np.isfinite(order) or order <= 0:
        raise ValueError(f"order must be finite and positive, got {order}")
    x_arr = np.asarray(x, dtype=np.float64)
    if not np.isfinite(x_arr).all():
        raise ValueError("x must be finite")
    if (x_arr <= 0).any():
        raise ValueError("x must be positive")
    out = kv(order, x_arr)
    return float(out) if np.isscalar(x) else out


def matern_cov(r, params: MaternParams):
    """Matern covariance at distance r (vectorized); k(0) = variance."""
    r_arr = np.asarray(r, dtype=np.float64)
    if not np.isfinite(r_arr).all():
        raise ValueError("distance must be finite")
    if (r_arr < 0).any():
        raise ValueError("distance must be non-negative")
    nu = params.smoothness
    scaled = math.sqrt(2.0 * nu) * r_arr / params.range_
    out = np.full_like(r_arr, params.variance, dtype=np.float64)
    pos = scaled > 0
    if pos.any():
        z = scaled[pos]
        # log-space for stability at large smoothness
        log_k = (
            (1.0 - nu) * math.log(2.0)
            - gammaln(nu)
            + nu * np.log(z)
            + np.log(kv(nu, z))
        )
        out[pos] = params.variance * np.exp(log_k)
        out[pos] = np.where(np.isfinite(out[pos]), out[pos], 0.0)  # far tail underflow
    return float(out) if np.isscalar(r) else out


def _pixel_centers(n: int) -> np.ndarray:
    """(n*n, 2) unit-square coordinates of pixel centers, row-major."""
    ax = (np.arange(n) + 0.5) / n
    rr, cc = np.meshgrid(ax, ax, indexing="ij")
    return np.column_stack([rr.ravel(), cc.ravel()])


@functools.lru_cache(maxsize=2)
def _cholesky_factor(params: MaternParams, n: int) -> np.ndarray:
    pts = _pixel_centers(n)
    diff_r = pts[:, 0][:, None] - pts[:, 0][None, :]
    diff_c = pts[:, 1][:, None] - pts[:, 1][None, :]
    dist = np.sqrt(diff_r**2 + diff_c**2)
    cov = matern_cov(dist, params)
    cov[np.diag_indices_from(cov)] += _JITTER * params.variance
    try:
        return _scipy_cholesky(cov, lower=True)
    except np.linalg.LinAlgError as exc:
        raise RuntimeError(f"covariance factorization failed for {params}") from exc


@functools.lru_cache(maxsize=4)
def _embedding_eigenvalues(params: MaternParams, n: int, factor: int):
    """sqrt of FFT eigenvalues of the torus-embedded covariance, or None."""
    M = factor * n
    h = 1.0 / n
    idx = np.arange(M)
    wrap = np.minimum(idx, M - idx).astype(np.float64)
    dist = h * np.sqrt(wrap[:, None] ** 2 + wrap[None, :] ** 2)
    base = matern_cov(dist, params)
    lam = np.fft.fft2(base).real
    lam_max = lam.max()
    if lam.min() < -_EMBED_CLIP_TOL * lam_max:
        return None
    return np.sqrt(np.clip(lam, 0.0, None))


def sample_grf(params: MaternParams, n: int, seed) -> RawField:
    """One zero-mean Gaussian random field sampled at the pixel centers.

    Deterministic given the seed.  Dense Cholesky for n <= 64; circulant
    embedding above.
    """
    if n < 2:
        raise ValueError("resolution must be at least 2")
    rng = np.random.default_rng(seed)
    if n <= _CHOLESKY_MAX_N:
        factor = _cholesky_factor(params, n)
        z = rng.standard_normal(n * n)
        return RawField(n, factor @ z)
    fac = 2
    while True:
        sqrt_lam = _embedding_eigenvalues(params, n, fac)
        if sqrt_lam is not None:
            break
        fac *= 2
        if fac > _EMBED_MAX_FACTOR:
            raise RuntimeError(
                f"circulant embedding not positive semidefinite up to factor "
                f"{_EMBED_MAX_FACTOR} for {params}"
            )
    M = fac * n
    noise = rng.standard_normal((M, M)) + 1j * rng.standard_normal((M, M))
    w = np.fft.fft2(sqrt_lam * noise) / M
    return RawField(n, np.ascontiguousarray(w.real[:n, :n]).ravel())


def transform_log(field: RawField) -> RawField:
    """Pointwise exp, clamped against overflow."""
    return RawField(field.resolution, np.exp(np.minimum(field.values, 700.0)))


def transform_logit(field: RawField) -> RawField:
    """Pointwise logistic function, numerically stable on both tails."""
    return RawField(field.resolution, expit(field.values))


def gen_cauchy(n: int, seed, scale_range=(0.05, 0.3)) -> RawField:
    """Bivariate Cauchy density with random center and random scale ellipse.

    Center uniform in [0.2, 0.8]^2; ellipse axes uniform in scale_range
    (forced >= 1e-3), rotation uniform in [0, pi).
    """
    lo, hi = scale_range
    if not (0 < lo <= hi):
        raise ValueError(f"invalid scale range {scale_range}")
    rng = np.random.default_rng(seed)
    center = rng.uniform(0.2, 0.8, size=2)
    axes = np.maximum(rng.uniform(lo, hi, size=2), 1e-3)
    angle = rng.uniform(0.0, np.pi)
    ca, sa = np.cos(angle), np.sin(angle)
    rot = np.array([[ca, -sa], [sa, ca]])
    sigma = rot @ np.diag(axes**2) @ rot.T
    sigma_inv = np.linalg.inv(sigma)
    det = float(np.linalg.det(sigma))

    pts = _pixel_centers(n) - center
    quad = np.einsum("ni,ij,nj->n", pts, sigma_inv, pts)
    values = (1.0 + quad) ** (-1.5) / (2.0 * np.pi * math.sqrt(det))
    return RawField(n, values)


def _shape_indicator(index: int, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Catalog of 10 geometric shapes as indicators on the unit square."""
    if index == 0:  # disk
        return (u - 0.5) ** 2 + (v - 0.5) ** 2 <= 0.3**2
    if index == 1:  # annulus
        r2 = (u - 0.5) ** 2 + (v - 0.5) ** 2
        return (r2 >= 0.15**2) & (r2 <= 0.32**2)
    if index == 2:  # square frame
        outer = (np.abs(u - 0.5) <= 0.32) & (np.abs(v - 0.5) <= 0.32)
        inner = (np.abs(u - 0.5) < 0.17) & (np.abs(v - 0.5) < 0.17)
        return outer & ~inner
    if index == 3:  # diagonal bar
        return np.abs(u - v) <= 0.12
    if index == 4:  # cross
        horiz = (np.abs(u - 0.5) <= 0.1) & (np.abs(v - 0.5) <= 0.35)
        vert = (np.abs(v - 0.5) <= 0.1) & (np.abs(u - 0.5) <= 0.35)
        return horiz | vert
    if index == 5:  # right triangle
        return (u >= 0.2) & (v >= 0.2) & (u + v <= 1.3)
    if index == 6:  # two disks
        d1 = (u - 0.3) ** 2 + (v - 0.3) ** 2 <= 0.17**2
        d2 = (u - 0.68) ** 2 + (v - 0.68) ** 2 <= 0.2**2
        return d1 | d2
    if index == 7:  # checker blocks
        return ((np.floor(u * 4) + np.floor(v * 4)) % 2) == 0
    if index == 8:  # L-shape
        bar1 = (u >= 0.2) & (u <= 0.8) & (v >= 0.2) & (v <= 0.4)
        bar2 = (u >= 0.6) & (u <= 0.8) & (v >= 0.2) & (v <= 0.8)
        return bar1 | bar2
    if index == 9:  # ring sector (three quarters of an annulus)
        r2 = (u - 0.5) ** 2 + (v - 0.5) ** 2
        ring = (r2 >= 0.14**2) & (r2 <= 0.36**2)
        angle = np.arctan2(v - 0.5, u - 0.5)
        return ring & ~((angle > 0) & (angle < np.pi / 2))
    raise ValueError(f"shape index {index} out of range 0..9")


def gen_shapes(n: int, image_index: int) -> RawField:
    """Deterministic binary field from the fixed shape catalog.

    Shapes are analytic regions of the unit square sampled at pixel centers,
    so renderings at different resolutions are coarsenings of one image.
    """
    if not 0 <= image_index < IMAGES_PER_CLASS:
        raise ValueError(f"image index {image_index} out of range 0..9")
    pts = _pixel_centers(n)
    mask = _shape_indicator(image_index, pts[:, 0], pts[:, 1])
    return RawField(n, mask.astype(np.float64))


def normalize_to_integer_masses(
    field: RawField,
    target_mean: int = DEFAULT_TARGET_MEAN,
    redistribution_fraction: float = 0.01,
    seed=0,
) -> GridMeasure:
    """Shift/scale a field to integer masses with exact mean `target_mean`.

    Shift by the field minimum, scale to the target mean, floor, then add the
    remaining deficit one unit at a time to pixels drawn proportionally to
    their fractional remainders.  A constant field falls back to the exact
    uniform measure.  Deterministic given the seed.
    """
    if target_mean <= 0:
        raise ValueError("target_mean must be positive")
    n = field.resolution
    total = int(target_mean) * n * n
    values = field.values
    span = float(values.max() - values.min())
    if span == 0.0:
        return GridMeasure(n, np.full(n * n, int(target_mean), dtype=np.int64))

    shifted = values - values.min()
    scaled = shifted * (total / shifted.sum())
    floored = np.floor(scaled).astype(np.int64)
    deficit = total - int(floored.sum())
    if deficit < 0:  # guard against pathological float rounding
        raise RuntimeError("flooring produced mass above the target total")
    if deficit > redistribution_fraction * total:
        raise RuntimeError(
            f"redistribution of {deficit} exceeds the allowed fraction "
            f"{redistribution_fraction} of total {total}"
        )
    if deficit > 0:
        frac = scaled - floored
        weight = frac.sum()
        if weight <= 0:
            probs = np.full(n * n, 1.0 / (n * n))
        else:
            probs = frac / weight
        rng = np.random.default_rng(seed)
        picks = rng.choice(n * n, size=deficit, replace=True, p=probs)
        np.add.at(floored, picks, 1)
    measure = GridMeasure(n, floored)
    assert measure.total == total
    return measure


_GRF_CLASS_PARAMS = {
    2: MaternParams(variance=1.0, smoothness=0.25, range_=0.05),
    3: MaternParams(variance=1.0, smoothness=1.0, range_=0.15),
    4: MaternParams(variance=1.0, smoothness=2.5, range_=0.3),
    5: MaternParams(variance=1.0, smoothness=0.5, range_=0.4),
    6: MaternParams(variance=4.0, smoothness=4.5, range_=0.1),
}


@dataclass(frozen=True)
class ClassSpec:
    """What to generate: class, resolution, master seed, class parameters."""

    class_id: int
    resolution: int
    seed: int = 0
    matern: MaternParams | None = None
    cauchy_scale_range: tuple[float, float] = (0.05, 0.3)
    target_mean: int = DEFAULT_TARGET_MEAN
    redistribution_fraction: float = 0.01

    def __post_init__(self):
        if self.class_id not in CLASS_NAMES:
            raise ValueError(f"unknown class id {self.class_id}")
        if self.resolution not in RESOLUTIONS:
            raise ValueError(f"resolution must be one of {RESOLUTIONS}")
        if self.class_id in _GRF_CLASS_PARAMS and self.matern is None:
            object.__setattr__(self, "matern", _GRF_CLASS_PARAMS[self.class_id])

    @property
    def name(self) -> str:
        return CLASS_NAMES[self.class_id]


def _image_seed(spec: ClassSpec, image_index: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(
        [int(spec.seed), int(spec.class_id), int(spec.resolution), int(image_index)]
    )


def _raw_field(spec: ClassSpec, image_index: int, rng_seed) -> RawField:
    cid = spec.class_id
    n = spec.resolution
    if cid == 1:
        rng = np.random.default_rng(rng_seed)
        return RawField(n, rng.random(n * n))
    if cid in (2, 3, 4):
        return sample_grf(spec.matern, n, rng_seed)
    if cid == 5:
        return transform_log(sample_grf(spec.matern, n, rng_seed))
    if cid == 6:
        return transform_logit(sample_grf(spec.matern, n, rng_seed))
    if cid == 7:
        return gen_cauchy(n, rng_seed, spec.cauchy_scale_range)
    if cid == 8:
        return gen_shapes(n, image_index)
    raise ValueError(f"class {cid} ({CLASS_NAMES.get(cid)}) is load-only, not generated")


def build_class(spec: ClassSpec) -> list[GridMeasure]:
    """The 10 measures of one class at one resolution (identical totals)."""
    if spec.class_id not in GENERATED_CLASSES:
        raise ValueError(f"class {spec.class_id} ({spec.name}) is load-only, not generated")
    measures = []
    for k in range(IMAGES_PER_CLASS):
        seed_seq = _image_seed(spec, k)
        sample_seed, norm_seed = seed_seq.spawn(2)
        raw = _raw_field(spec, k, sample_seed)
        measures.append(
            normalize_to_integer_masses(
                raw,
                target_mean=spec.target_mean,
                redistribution_fraction=spec.redistribution_fraction,
                seed=norm_seed,
            )
        )
    return measures


def class_filename(resolution: int, image_number: int) -> str:
    """DOT-corpus style file name, image_number in 1..10."""
    return f"data{resolution}_{1000 + image_number}.csv"


def write_class(spec: ClassSpec, out_dir) -> list[str]:
    """Generate a class and write CSV files plus a manifest; returns the paths."""
    import os

    measures = build_class(spec)
    class_dir = os.path.join(str(out_dir), spec.name)
    os.makedirs(class_dir, exist_ok=True)
    paths = []
    for k, measure in enumerate(measures, start=1):
        path = os.path.join(class_dir, class_filename(spec.resolution, k))
        save_grid_csv(measure, path)
        paths.append(path)
    manifest = {
        "schema": 1,
        "class_id": spec.class_id,
        "class_name": spec.name,
        "resolution": spec.resolution,
        "seed": spec.seed,
        "target_mean": spec.target_mean,
        "redistribution_fraction": spec.redistribution_fraction,
        "generator": "numpy PCG64 via SeedSequence([seed, class_id, resolution, image_index])",
        "matern": None
        if spec.matern is None
        else {
            "variance": spec.matern.variance,
            "smoothness": spec.matern.smoothness,
            "range": spec.matern.range_,
        },
        "cauchy_scale_range": list(spec.cauchy_scale_range),
        "files": [class_filename(spec.resolution, k) for k in range(1, IMAGES_PER_CLASS + 1)],
        "totals": [m.total for m in measures],
    }
    manifest_path = os.path.join(class_dir, f"manifest_{spec.resolution}.json")
    with open(manifest_path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2)
    return paths
