"""Desk-scale stand-ins for the heavy generative stack.

A procedural toy-image generator plays the role of the image source, a PCA
linear codec plays the latent encoder/decoder, a seeded orthonormal
projection plays the image embedder, and class-mean prototypes give the
zero-shot scoring head. Everything is deterministic given its seeds.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import latentmath as lm
from .errors import (
    CoverageError,
    DegenerateVectorError,
    NumericInputError,
    ParameterError,
    RankError,
    ShapeError,
)
from .rng import RngStream

# Ordered so small class counts pick mutually distinct silhouettes; the two
# stripe orientations sit in the default four so a 90-degree rotation maps
# one class onto another (which is what makes unfiltered augmentation risky).
SHAPE_FAMILIES = (
    "disc",
    "hstripes",
    "triangle",
    "vstripes",
    "square",
    "ring",
    "cross",
    "checker",
)

ORTHO_TOL = 1e-8


@dataclass(eq=False)
class Image:
    """A height-by-width-by-channels block of pixels in [0, 1], stored float32."""

    pixels: np.ndarray

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, dtype=np.float32)
        if self.pixels.ndim != 3:
            raise ShapeError(f"image must be 3-d (H, W, C), got shape {self.pixels.shape}")
        if not np.all(np.isfinite(self.pixels)):
            raise NumericInputError("image contains non-finite pixels")
        if self.pixels.min() < 0.0 or self.pixels.max() > 1.0:
            raise ParameterError(
                f"pixels must lie in [0, 1], got range "
                f"[{self.pixels.min()}, {self.pixels.max()}]"
            )

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def channels(self) -> int:
        return self.pixels.shape[2]

    def flat(self) -> np.ndarray:
        return self.pixels.astype(np.float64).ravel()


@dataclass(eq=False)
class LabeledDataset:
    """Images with integer labels and one name per class."""

    images: list
    labels: list
    class_names: list

    def __post_init__(self):
        if len(self.images) != len(self.labels):
            raise ShapeError(
                f"{len(self.images)} images but {len(self.labels)} labels"
            )
        if len(self.class_names) < 2:
            raise ParameterError("dataset needs at least two classes")
        c = len(self.class_names)
        for i, label in enumerate(self.labels):
            if not (0 <= int(label) < c):
                raise ParameterError(f"label {label} at index {i} outside [0, {c})")
        self.labels = [int(x) for x in self.labels]
        if self.images:
            shape = self.images[0].pixels.shape
            for img in self.images:
                if img.pixels.shape != shape:
                    raise ShapeError(
                        f"image shape mismatch: {img.pixels.shape} vs {shape}"
                    )

    def __len__(self) -> int:
        return len(self.images)

    @property
    def class_count(self) -> int:
        return len(self.class_names)

    @property
    def image_shape(self) -> tuple:
        if not self.images:
            raise ShapeError("empty dataset has no image shape")
        return self.images[0].pixels.shape

    def stacked_flat(self) -> np.ndarray:
        return np.stack([img.flat() for img in self.images], axis=0)

    def subset(self, indices) -> "LabeledDataset":
        return LabeledDataset(
            images=[self.images[i] for i in indices],
            labels=[self.labels[i] for i in indices],
            class_names=list(self.class_names),
        )


STRIPE_PERIOD = 4


def _render_family(family: str, side: int, gen: np.random.Generator) -> np.ndarray:
    """Draw one seeded instance of a shape family on a side*side canvas.

    Backgrounds sit near mid-gray and the compact shapes have one-pixel soft
    edges, so class identity lives in the silhouette rather than in global
    brightness. Draw order (bg, fg, center, radius, extras) is fixed.
    """
    ys, xs = np.mgrid[0:side, 0:side].astype(np.float64)
    bg = gen.uniform(0.45, 0.50)
    fg = gen.uniform(0.90, 1.00)
    cy = side / 2 + gen.uniform(-0.05, 0.05) * side
    cx = side / 2 + gen.uniform(-0.05, 0.05) * side
    r = gen.uniform(0.26, 0.36) * side
    dy, dx = ys - cy, xs - cx
    if family == "disc":
        dist = np.sqrt(dy * dy + dx * dx)
        m = np.clip(r - dist + 0.5, 0.0, 1.0)
    elif family == "square":
        half = 0.9 * r
        m = np.clip(half - np.maximum(np.abs(dy), np.abs(dx)) + 0.5, 0.0, 1.0)
    elif family == "triangle":
        top = cy - r
        m = np.clip(
            np.minimum.reduce([ys - top, cy + r - ys, 0.6 * (ys - top) - np.abs(dx)]) + 0.5,
            0.0,
            1.0,
        )
    elif family == "hstripes":
        phase = int(gen.integers(0, 2))
        m = (((ys.astype(np.int64) + phase) // STRIPE_PERIOD) % 2 == 0).astype(np.float64)
    elif family == "vstripes":
        phase = int(gen.integers(0, 2))
        m = (((xs.astype(np.int64) + phase) // STRIPE_PERIOD) % 2 == 0).astype(np.float64)
    elif family == "ring":
        dist = np.sqrt(dy * dy + dx * dx)
        m = np.clip(r - dist + 0.5, 0.0, 1.0) * np.clip(dist - 0.55 * r + 0.5, 0.0, 1.0)
    elif family == "cross":
        w = 0.30 * r
        arm_y = np.clip(w - np.abs(dy) + 0.5, 0.0, 1.0) * np.clip(r - np.abs(dx) + 0.5, 0.0, 1.0)
        arm_x = np.clip(w - np.abs(dx) + 0.5, 0.0, 1.0) * np.clip(r - np.abs(dy) + 0.5, 0.0, 1.0)
        m = np.maximum(arm_y, arm_x)
    elif family == "checker":
        py = int(gen.integers(0, 2))
        px = int(gen.integers(0, 2))
        cell = (ys.astype(np.int64) + py) // STRIPE_PERIOD + (
            xs.astype(np.int64) + px
        ) // STRIPE_PERIOD
        m = (cell % 2 == 0).astype(np.float64)
    else:
        raise ParameterError(f"unknown shape family {family!r}")
    return bg + (fg - bg) * m


def gen_toy_dataset(classes: int, per_class: int, side: int, seed: int) -> LabeledDataset:
    """Deterministic grayscale shape dataset, one shape family per class."""
    if not (2 <= classes <= len(SHAPE_FAMILIES)):
        raise ParameterError(f"classes must be in [2, {len(SHAPE_FAMILIES)}], got {classes}")
    if per_class < 1:
        raise ParameterError(f"per_class must be >= 1, got {per_class}")
    if not (8 <= side <= 64):
        raise ParameterError(f"side must be in [8, 64], got {side}")
    images, labels = [], []
    for c in range(classes):
        family = SHAPE_FAMILIES[c]
        for i in range(per_class):
            gen = RngStream(("toygen", int(seed), c, i)).generator()
            canvas = _render_family(family, side, gen)
            images.append(Image(canvas[:, :, None]))
            labels.append(c)
    return LabeledDataset(images=images, labels=labels, class_names=list(SHAPE_FAMILIES[:classes]))


@dataclass(eq=False)
class LinearCodec:
    """PCA codec: orthonormal basis rows over centered flattened pixels."""

    mean_image: np.ndarray
    basis: np.ndarray
    latent_shape: tuple
    image_shape: tuple

    def __post_init__(self):
        self.mean_image = np.asarray(self.mean_image, dtype=np.float64)
        self.basis = np.asarray(self.basis, dtype=np.float64)
        t, d = self.latent_shape
        if t * d != self.basis.shape[0]:
            raise ShapeError(
                f"latent_shape {self.latent_shape} does not factor latent_dim {self.basis.shape[0]}"
            )
        if self.basis.shape[1] != self.mean_image.size:
            raise ShapeError(
                f"basis width {self.basis.shape[1]} vs mean size {self.mean_image.size}"
            )
        gram = self.basis @ self.basis.T
        if np.max(np.abs(gram - np.eye(self.basis.shape[0]))) > ORTHO_TOL:
            raise ShapeError("codec basis rows are not orthonormal")

    @property
    def latent_dim(self) -> int:
        return self.basis.shape[0]

    def encode_flat(self, flat_pixels: np.ndarray) -> np.ndarray:
        flat = np.asarray(flat_pixels, dtype=np.float64).ravel()
        if flat.size != self.mean_image.size:
            raise ShapeError(f"pixel size {flat.size} vs codec size {self.mean_image.size}")
        return self.basis @ (flat - self.mean_image)

    def encode(self, image: Image) -> lm.Latent:
        if image.pixels.shape != self.image_shape:
            raise ShapeError(f"image shape {image.pixels.shape} vs codec {self.image_shape}")
        return lm.Latent(self.encode_flat(image.flat()).reshape(self.latent_shape))

    def decode_with_mask(self, flat_latent: np.ndarray):
        """Clamped flat pixels plus the mask of entries the clamp left alone."""
        flat = np.asarray(flat_latent, dtype=np.float64).ravel()
        if flat.size != self.latent_dim:
            raise ShapeError(f"latent size {flat.size} vs codec latent_dim {self.latent_dim}")
        raw = self.mean_image + self.basis.T @ flat
        mask = (raw > 0.0) & (raw < 1.0)
        return np.clip(raw, 0.0, 1.0), mask

    def decode(self, latent: lm.Latent) -> Image:
        if latent.values.shape != tuple(self.latent_shape):
            raise ShapeError(
                f"latent shape {latent.values.shape} vs codec {tuple(self.latent_shape)}"
            )
        clamped, _ = self.decode_with_mask(latent.flat())
        return Image(clamped.reshape(self.image_shape))


def fit_linear_codec(
    dataset: LabeledDataset, latent_dim: int = 32, latent_shape: tuple = (4, 8)
) -> LinearCodec:
    """Top principal directions of the centered pixel matrix, signs pinned."""
    if len(dataset) < 1:
        raise ParameterError("cannot fit a codec on an empty dataset")
    t, d = latent_shape
    if t < 1 or d < 1 or t * d != latent_dim:
        raise ParameterError(
            f"latent_shape {latent_shape} must factor latent_dim {latent_dim}"
        )
    x = dataset.stacked_flat()
    n, pixel_dim = x.shape
    if latent_dim > min(n, pixel_dim):
        raise ParameterError(
            f"latent_dim {latent_dim} exceeds min(samples, pixels) = {min(n, pixel_dim)}"
        )
    mean = x.mean(axis=0)
    centered = x - mean
    _, svals, vt = np.linalg.svd(centered, full_matrices=False)
    tol = max(n, pixel_dim) * np.finfo(np.float64).eps * (svals[0] if svals.size else 0.0)
    rank = int(np.sum(svals > tol))
    if rank < latent_dim:
        raise RankError(
            f"data rank {rank} is below requested latent_dim {latent_dim}"
        )
    basis = vt[:latent_dim].copy()
    for row in basis:
        nz = np.flatnonzero(np.abs(row) > 1e-12)
        if nz.size and row[nz[0]] < 0:
            row *= -1.0
    return LinearCodec(
        mean_image=mean,
        basis=basis,
        latent_shape=tuple(latent_shape),
        image_shape=dataset.image_shape,
    )


@dataclass(eq=False)
class Embedder:
    """Orthonormal random projection of centered pixels."""

    projection: np.ndarray
    image_shape: tuple

    def __post_init__(self):
        self.projection = np.asarray(self.projection, dtype=np.float64)
        gram = self.projection @ self.projection.T
        if np.max(np.abs(gram - np.eye(self.projection.shape[0]))) > ORTHO_TOL:
            raise ShapeError("embedder rows are not orthonormal")

    @property
    def embed_dim(self) -> int:
        return self.projection.shape[0]

    def embed_flat(self, flat_pixels: np.ndarray) -> np.ndarray:
        flat = np.asarray(flat_pixels, dtype=np.float64).ravel()
        if flat.size != self.projection.shape[1]:
            raise ShapeError(
                f"pixel size {flat.size} vs embedder input {self.projection.shape[1]}"
            )
        return self.projection @ (flat - 0.5)

    def embed(self, image: Image) -> np.ndarray:
        if image.pixels.shape != self.image_shape:
            raise ShapeError(f"image shape {image.pixels.shape} vs embedder {self.image_shape}")
        return self.embed_flat(image.flat())


def make_embedder(image_shape: tuple, embed_dim: int, seed: int) -> Embedder:
    """Gram-Schmidt orthonormalization of seeded Gaussian rows."""
    pixel_dim = int(np.prod(image_shape))
    if not (1 <= embed_dim <= pixel_dim):
        raise ParameterError(
            f"embed_dim must be in [1, {pixel_dim}] for shape {image_shape}, got {embed_dim}"
        )
    gen = RngStream(("embedder", int(seed))).generator()
    rows = gen.standard_normal((embed_dim, pixel_dim))
    q = np.zeros_like(rows)
    for i in range(embed_dim):
        v = rows[i]
        for _ in range(2):  # re-orthogonalize once for clean numerics
            for j in range(i):
                v = v - (v @ q[j]) * q[j]
        norm = np.linalg.norm(v)
        if norm < 1e-10:
            raise RankError(f"embedder row {i} collapsed during orthonormalization")
        q[i] = v / norm
    return Embedder(projection=q, image_shape=tuple(image_shape))


@dataclass(eq=False)
class ZeroShotHead:
    """Unit-norm class prototypes scored by cosine and a temperature softmax."""

    prototypes: np.ndarray
    tau: float = 1.0
    class_names: list = field(default_factory=list)

    def __post_init__(self):
        self.prototypes = np.asarray(self.prototypes, dtype=np.float64)
        if self.prototypes.ndim != 2 or self.prototypes.shape[0] < 2:
            raise ShapeError(
                f"prototypes must be (C >= 2, E), got {self.prototypes.shape}"
            )
        norms = np.linalg.norm(self.prototypes, axis=1)
        if np.max(np.abs(norms - 1.0)) > 1e-9:
            raise ParameterError("prototypes must have unit norm")
        if not (self.tau > 0):
            raise ParameterError(f"tau must be > 0, got {self.tau}")

    @property
    def class_count(self) -> int:
        return self.prototypes.shape[0]

    def predict(self, embedding: np.ndarray) -> lm.Prediction:
        return lm.classify(embedding, self.prototypes, self.tau)


def fit_prototype_head(
    exemplars: LabeledDataset, embedder: Embedder, tau: float = 1.0
) -> ZeroShotHead:
    """Class prototypes are the renormalized mean embeddings of each class."""
    protos = np.zeros((exemplars.class_count, embedder.embed_dim))
    labels = np.asarray(exemplars.labels)
    for c, name in enumerate(exemplars.class_names):
        idx = np.flatnonzero(labels == c)
        if idx.size == 0:
            raise CoverageError(f"class {c} ({name}) has no exemplars")
        mean_emb = np.mean(
            [embedder.embed(exemplars.images[i]) for i in idx], axis=0
        )
        norm = np.linalg.norm(mean_emb)
        if norm <= 1e-12:
            raise DegenerateVectorError(f"class {c} ({name}) mean embedding is zero")
        protos[c] = mean_emb / norm
    return ZeroShotHead(prototypes=protos, tau=tau, class_names=list(exemplars.class_names))


@dataclass(eq=False)
class EmbeddingDecoder:
    """Maps an embedding back to an image: orthonormal transpose into pixel
    space, then a round trip through the codec to stay on the image manifold."""

    embedder: Embedder
    codec: LinearCodec

    def __post_init__(self):
        if self.embedder.projection.shape[1] != self.codec.mean_image.size:
            raise ShapeError(
                f"embedder input {self.embedder.projection.shape[1]} vs codec "
                f"pixels {self.codec.mean_image.size}"
            )

    def __call__(self, embedding: np.ndarray) -> Image:
        e = np.asarray(embedding, dtype=np.float64).ravel()
        if e.size != self.embedder.embed_dim:
            raise ShapeError(
                f"embedding size {e.size} vs embedder dim {self.embedder.embed_dim}"
            )
        flat_pixels = self.embedder.projection.T @ e + 0.5
        latent = self.codec.encode_flat(flat_pixels)
        clamped, _ = self.codec.decode_with_mask(latent)
        return Image(clamped.reshape(self.codec.image_shape))
