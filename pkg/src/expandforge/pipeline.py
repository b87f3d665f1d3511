"""Dataset-level expansion: method dispatch, container format, manifest.

The GIFX container is a single self-describing little-endian binary so
round trips are bit-exact, and the manifest is canonical JSON so equal
manifests are byte-equal files. Every synthetic sample is a pure function
of (global_seed, method, config, seed sample bytes): per-seed RNG streams
are keyed by a content hash of the seed, never by its position, so
shuffling the input or changing worker counts cannot change any output.
"""

from __future__ import annotations

import hashlib
import json
import math
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import augment as ag
from . import guidance as gd
from . import latentmath as lm
from .backends import EmbeddingDecoder, Embedder, Image, LabeledDataset, LinearCodec, ZeroShotHead
from .errors import FormatError, InputError, ParameterError
from .rng import RngStream

TOOL_VERSION = "0.1.0"

MAGIC = b"GIFX"
FORMAT_VERSION = 1

METHOD_IDS = (
    "gif_embed",
    "gif_latent",
    "cutout",
    "gridmask",
    "randlite",
    "selective_randlite",
    "selective_cutout",
)


def parse_method(name: str) -> str:
    if name not in METHOD_IDS:
        raise ParameterError(
            f"unknown method {name!r}; choose one of {', '.join(METHOD_IDS)}"
        )
    return name


# ------------------------------------------------------------ GIFX container


def dataset_bytes(dataset: LabeledDataset) -> bytes:
    """Serialize to the GIFX layout; equal datasets give equal bytes."""
    n = len(dataset.labels)
    if n == 0:
        raise InputError("refusing to serialize an empty dataset")
    h, w, c = dataset.images[0].pixels.shape
    buf = bytearray()
    buf += MAGIC
    buf += struct.pack("<6I", FORMAT_VERSION, n, h, w, c, dataset.class_count)
    for name in dataset.class_names:
        raw = name.encode("utf-8")
        buf += struct.pack("<I", len(raw))
        buf += raw
    for label, image in zip(dataset.labels, dataset.images):
        buf += struct.pack("<I", int(label))
        buf += image.pixels.astype("<f4").tobytes()
    return bytes(buf)


def dataset_digest(dataset: LabeledDataset) -> str:
    return hashlib.sha256(dataset_bytes(dataset)).hexdigest()


def write_dataset(dataset: LabeledDataset, path) -> None:
    with open(path, "wb") as fh:
        fh.write(dataset_bytes(dataset))


class _Cursor:
    """Sequential reader that reports the byte offset of whatever failed."""

    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.buf):
            raise FormatError(
                f"truncated file: needed {n} bytes for {what} at byte {self.pos}, "
                f"have {len(self.buf) - self.pos}"
            )
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def u32(self, what: str) -> int:
        (value,) = struct.unpack("<I", self.take(4, what))
        return value


def dataset_from_bytes(buf: bytes) -> LabeledDataset:
    cur = _Cursor(buf)
    magic = cur.take(4, "magic")
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r} at byte 0, expected {MAGIC!r}")
    version = cur.u32("version")
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported version {version} at byte 4")
    n = cur.u32("sample count")
    if n == 0:
        raise FormatError("zero samples declared at byte 8")
    dims = []
    for offset, what in ((12, "height"), (16, "width"), (20, "channels")):
        value = cur.u32(what)
        if value == 0:
            raise FormatError(f"zero {what} in header at byte {offset}")
        dims.append(value)
    h, w, c = dims
    class_count = cur.u32("class count")
    if class_count < 2:
        raise FormatError(f"{class_count} classes declared at byte 24, need at least 2")
    names = []
    for i in range(class_count):
        length = cur.u32(f"class name {i} length")
        offset = cur.pos
        raw = cur.take(length, f"class name {i}")
        try:
            names.append(raw.decode("utf-8"))
        except UnicodeDecodeError as err:
            raise FormatError(f"undecodable class name {i} at byte {offset}") from err
    pixel_count = h * w * c
    images = []
    labels = []
    for i in range(n):
        label_offset = cur.pos
        label = cur.u32(f"label of sample {i}")
        if label >= class_count:
            raise FormatError(
                f"label {label} of sample {i} at byte {label_offset} is out of "
                f"range for {class_count} classes"
            )
        pixel_offset = cur.pos
        raw = cur.take(4 * pixel_count, f"pixels of sample {i}")
        pixels = np.frombuffer(raw, dtype="<f4").reshape(h, w, c)
        if not np.all(np.isfinite(pixels)):
            raise FormatError(f"non-finite pixels in sample {i} at byte {pixel_offset}")
        if pixels.min() < 0.0 or pixels.max() > 1.0:
            raise FormatError(
                f"pixels of sample {i} at byte {pixel_offset} fall outside [0, 1]"
            )
        images.append(Image(pixels))
        labels.append(label)
    if cur.pos != len(buf):
        raise FormatError(
            f"{len(buf) - cur.pos} trailing bytes after the last record at byte {cur.pos}"
        )
    return LabeledDataset(images=images, labels=np.array(labels), class_names=names)


def read_dataset(path) -> LabeledDataset:
    with open(path, "rb") as fh:
        return dataset_from_bytes(fh.read())


# ---------------------------------------------------------- canonical JSON


def _format_float(x: float) -> str:
    if not math.isfinite(x):
        raise InputError(f"canonical JSON cannot hold non-finite float {x}")
    return "%.9g" % x


def canonical_json(obj) -> str:
    """Deterministic JSON: sorted keys, 9-significant-digit floats."""
    if obj is None:
        return "null"
    if isinstance(obj, bool):
        return "true" if obj else "false"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return _format_float(float(obj))
    if isinstance(obj, str):
        return json.dumps(obj, ensure_ascii=False)
    if isinstance(obj, dict):
        for key in obj:
            if not isinstance(key, str):
                raise InputError(f"canonical JSON keys must be strings, got {key!r}")
        inner = ",".join(
            f"{json.dumps(k, ensure_ascii=False)}:{canonical_json(obj[k])}"
            for k in sorted(obj)
        )
        return "{" + inner + "}"
    if isinstance(obj, (list, tuple)):
        return "[" + ",".join(canonical_json(v) for v in obj) + "]"
    raise InputError(f"canonical JSON cannot hold {type(obj).__name__}")


# --------------------------------------------------------------- manifest


@dataclass(eq=False)
class ExpansionManifest:
    """Provenance for one expansion run, one record per synthetic sample."""

    version: str
    global_seed: int
    method: str
    config: dict
    seed_count: int
    ratio_k: int
    records: list
    original_digest: str
    expanded_digest: str

    def validate(self) -> None:
        parse_method(self.method)
        if self.seed_count < 1 or self.ratio_k < 1:
            raise InputError(
                f"manifest needs seed_count >= 1 and ratio_k >= 1, got "
                f"{self.seed_count}, {self.ratio_k}"
            )
        expected = self.seed_count * self.ratio_k
        if len(self.records) != expected:
            raise InputError(
                f"manifest holds {len(self.records)} records, expected "
                f"{self.seed_count} * {self.ratio_k} = {expected}"
            )
        for digest in (self.original_digest, self.expanded_digest):
            if len(digest) != 64 or any(ch not in "0123456789abcdef" for ch in digest):
                raise InputError(f"malformed sha256 digest {digest!r}")

    def as_dict(self) -> dict:
        return {
            "version": self.version,
            "global_seed": self.global_seed,
            "method": self.method,
            "config": self.config,
            "seed_count": self.seed_count,
            "ratio_k": self.ratio_k,
            "records": self.records,
            "original_digest": self.original_digest,
            "expanded_digest": self.expanded_digest,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ExpansionManifest":
        try:
            manifest = cls(
                version=data["version"],
                global_seed=data["global_seed"],
                method=data["method"],
                config=data["config"],
                seed_count=data["seed_count"],
                ratio_k=data["ratio_k"],
                records=data["records"],
                original_digest=data["original_digest"],
                expanded_digest=data["expanded_digest"],
            )
        except KeyError as err:
            raise FormatError(f"manifest is missing field {err.args[0]!r}") from err
        try:
            manifest.validate()
        except (InputError, ParameterError) as err:
            raise FormatError(f"manifest fails validation: {err}") from err
        return manifest

    def verify_against(self, original: LabeledDataset, expanded: LabeledDataset) -> None:
        if dataset_digest(original) != self.original_digest:
            raise FormatError("original dataset digest does not match the manifest")
        if dataset_digest(expanded) != self.expanded_digest:
            raise FormatError("expanded dataset digest does not match the manifest")


def write_manifest(manifest: ExpansionManifest, path) -> None:
    manifest.validate()
    text = canonical_json(manifest.as_dict()) + "\n"
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)


def read_manifest(path) -> ExpansionManifest:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as err:
            raise FormatError(f"manifest is not valid JSON: {err}") from err
    if not isinstance(data, dict):
        raise FormatError("manifest root must be a JSON object")
    return ExpansionManifest.from_dict(data)


# ------------------------------------------------------------ configuration


@dataclass(eq=False)
class ExpansionConfig:
    """Method-independent knobs; None means the method's own default."""

    ratio_k: int = 5
    epsilon: float | None = None
    steps: int = 10
    step_size: float = 0.1
    weights: tuple = (1.0, 1.0, 1.0)
    noise_mode: str | None = None
    retries: int = 2
    candidate_budget: int | None = None
    cutout_frac: float = 0.4
    grid_period: int = 8
    grid_keep: float = 0.5
    workers: int = 1

    def __post_init__(self):
        if self.ratio_k < 1:
            raise ParameterError(f"ratio_k must be >= 1, got {self.ratio_k}")
        if self.workers < 0:
            raise ParameterError(f"workers must be >= 0 (0 = auto), got {self.workers}")
        if self.candidate_budget is not None and self.candidate_budget < self.ratio_k:
            raise ParameterError(
                f"candidate_budget {self.candidate_budget} is below ratio_k {self.ratio_k}"
            )
        # delegate range checks shared with the guidance config
        gd.GuidanceConfig(
            epsilon=0.0 if self.epsilon is None else self.epsilon,
            ratio_k=self.ratio_k,
            steps=self.steps,
            step_size=self.step_size,
            weights=self.weights,
            noise_mode=self.noise_mode or "full",
            retries=self.retries,
        )
        self.weights = tuple(float(x) for x in self.weights)

    def guidance_config(self, method: str) -> gd.GuidanceConfig:
        base = (
            gd.GuidanceConfig.latent_defaults
            if method == "gif_latent"
            else gd.GuidanceConfig.embedding_defaults
        )
        overrides = dict(
            ratio_k=self.ratio_k,
            steps=self.steps,
            step_size=self.step_size,
            weights=self.weights,
            retries=self.retries,
        )
        if self.epsilon is not None:
            overrides["epsilon"] = self.epsilon
        if self.noise_mode is not None:
            overrides["noise_mode"] = self.noise_mode
        return base(**overrides)

    def as_dict(self) -> dict:
        # workers is execution plumbing, not content: manifests must be
        # byte-identical across worker counts, so it is not echoed
        return {
            "ratio_k": self.ratio_k,
            "epsilon": self.epsilon,
            "steps": self.steps,
            "step_size": self.step_size,
            "weights": list(self.weights),
            "noise_mode": self.noise_mode,
            "retries": self.retries,
            "candidate_budget": self.candidate_budget,
            "cutout_frac": self.cutout_frac,
            "grid_period": self.grid_period,
            "grid_keep": self.grid_keep,
        }


@dataclass(eq=False)
class BackendBundle:
    codec: LinearCodec
    embedder: Embedder
    head: ZeroShotHead

    @property
    def decoder(self) -> EmbeddingDecoder:
        return EmbeddingDecoder(self.embedder, self.codec)


# ---------------------------------------------------------------- expansion


def seed_content_key(image: Image, label: int) -> str:
    """Content hash keying a seed's RNG streams: position-independent."""
    h = hashlib.sha256()
    h.update(int(label).to_bytes(4, "little"))
    h.update(image.pixels.astype("<f4").tobytes())
    return h.hexdigest()


def _per_variant_embedding_scores(head, weights, seed_pred, embeddings):
    path = gd._EmbeddingScorePath(head, weights, seed_pred)
    latents = [lm.Latent(e[None, :]) for e in embeddings]
    return gd._per_variant_scores(path, seed_pred, latents, weights)


def _measured_records(images, head, embedder, weights, seed_pred, method, stream_ids):
    """Records for baseline variants: scores measured, never optimized."""
    embeddings = [embedder.embed(img) for img in images]
    scores, preds = _per_variant_embedding_scores(head, weights, seed_pred, embeddings)
    records = []
    for i, (sc, pred) in enumerate(zip(scores, preds)):
        consistent = pred.argmax_class == seed_pred.argmax_class
        records.append(
            gd.VariantRecord(
                seed_index=-1,
                variant_index=i,
                method=method,
                stream_id=stream_ids[i],
                scores_initial=sc,
                scores_final=sc,
                consistent=consistent,
                retry_count=0,
                fallback=False,
                qualified=consistent and sc.s_ent > 0.0,
            )
        )
    return records


def _expand_one_seed(image, label, method, config, backends, stream):
    """All K variants of one seed; pure in (stream id, method, config, seed)."""
    k = config.ratio_k
    if method == "gif_embed":
        gcfg = config.guidance_config(method)
        images, records, _ = gd.expand_seed_embedding_flow(
            image, backends.embedder, backends.head, backends.decoder, gcfg, stream
        )
        return images, records
    if method == "gif_latent":
        gcfg = config.guidance_config(method)
        images, records, _ = gd.expand_seed_latent_flow(
            image, backends.codec, backends.embedder, backends.head, gcfg, stream
        )
        return images, records

    seed_pred = backends.head.predict(backends.embedder.embed(image))
    if method in ("cutout", "gridmask", "randlite"):
        images = []
        stream_ids = []
        for i in range(k):
            sub = stream.child("variant", i)
            if method == "cutout":
                img = ag.cutout(image, config.cutout_frac, sub)
            elif method == "randlite":
                img = ag.rand_lite(image, sub)
            else:
                gen = sub.generator()
                phase = tuple(int(v) for v in gen.integers(0, config.grid_period, 2))
                img = ag.gridmask(image, config.grid_period, config.grid_keep, phase)
            images.append(img)
            stream_ids.append(sub.id)
        records = _measured_records(
            images, backends.head, backends.embedder, config.weights, seed_pred,
            method, stream_ids,
        )
        return images, records

    # selective methods: per-seed sample_wise selection over a candidate pool
    if method == "selective_cutout":
        augmenter = lambda im, st: ag.cutout(im, config.cutout_frac, st)
    else:
        augmenter = ag.rand_lite
    images, sel_records = ag.selective_expand(
        [image], augmenter, backends.embedder, backends.head, k, stream,
        mode="sample_wise", candidate_budget=config.candidate_budget,
    )
    embeddings = [backends.embedder.embed(img) for img in images]
    scores, _ = _per_variant_embedding_scores(
        backends.head, config.weights, seed_pred, embeddings
    )
    records = []
    for i, (sel, sc) in enumerate(zip(sel_records, scores)):
        records.append(
            gd.VariantRecord(
                seed_index=-1,
                variant_index=i,
                method=method,
                stream_id=sel.stream_id,
                scores_initial=sc,
                scores_final=sc,
                consistent=sel.consistent,
                retry_count=0,
                fallback=False,
                qualified=sel.qualified,
            )
        )
    return images, records


def expand_dataset(
    dataset: LabeledDataset,
    method: str,
    config: ExpansionConfig,
    backends: BackendBundle,
    global_seed: int,
):
    """Originals first and untouched, then K variants per seed, plus manifest."""
    parse_method(method)
    n = len(dataset.labels)
    if n == 0:
        raise InputError("cannot expand an empty dataset")
    root = RngStream.root(global_seed)

    def task(j: int):
        image = dataset.images[j]
        label = int(dataset.labels[j])
        stream = root.child("method", method, "seed", seed_content_key(image, label))
        return _expand_one_seed(image, label, method, config, backends, stream)

    workers = config.workers or None
    if config.workers == 1:
        results = [task(j) for j in range(n)]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(task, range(n)))

    images = list(dataset.images)
    labels = list(int(v) for v in dataset.labels)
    all_records = []
    for j, (variant_images, variant_records) in enumerate(results):
        for rec in variant_records:
            rec.seed_index = j
        images.extend(variant_images)
        labels.extend([int(dataset.labels[j])] * len(variant_images))
        all_records.extend(rec.as_dict() for rec in variant_records)

    expanded = LabeledDataset(
        images=images, labels=np.array(labels), class_names=list(dataset.class_names)
    )
    manifest = ExpansionManifest(
        version=TOOL_VERSION,
        global_seed=int(global_seed),
        method=method,
        config=config.as_dict(),
        seed_count=n,
        ratio_k=config.ratio_k,
        records=all_records,
        original_digest=dataset_digest(dataset),
        expanded_digest=dataset_digest(expanded),
    )
    manifest.validate()
    return expanded, manifest
