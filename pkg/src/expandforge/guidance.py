"""Guided expansion of a single seed: perturb, score, ascend, filter.

Two flows share one ascent loop. The embedding flow perturbs the seed's
scoring embedding directly and decodes once at the end; the latent flow
perturbs the codec latent, decoding an intermediate image for every scoring
evaluation. Both enforce prediction consistency with retries and a fallback
to the unperturbed seed reconstruction, so every emitted variant keeps the
seed's predicted class.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import latentmath as lm
from .backends import EmbeddingDecoder, Embedder, Image, LinearCodec, ZeroShotHead
from .errors import NumericDivergenceError, NumericInputError, ParameterError
from .rng import RngStream


@dataclass(eq=False)
class GuidanceConfig:
    """Knobs for one guided expansion run."""

    epsilon: float
    ratio_k: int = 5
    steps: int = 10
    step_size: float = 0.1
    weights: tuple = (1.0, 1.0, 1.0)
    noise_mode: str = "full"
    retries: int = 2

    def __post_init__(self):
        if not (self.epsilon >= 0):
            raise ParameterError(f"epsilon must be >= 0, got {self.epsilon}")
        if self.ratio_k < 1:
            raise ParameterError(f"ratio_k must be >= 1, got {self.ratio_k}")
        if self.steps < 0:
            raise ParameterError(f"steps must be >= 0, got {self.steps}")
        if not (self.step_size > 0):
            raise ParameterError(f"step_size must be > 0, got {self.step_size}")
        if self.retries < 0:
            raise ParameterError(f"retries must be >= 0, got {self.retries}")
        if self.noise_mode not in lm.NOISE_MODES:
            raise ParameterError(
                f"noise_mode must be one of {lm.NOISE_MODES}, got {self.noise_mode!r}"
            )
        w = tuple(float(x) for x in self.weights)
        if len(w) != 3 or any(not math.isfinite(x) or x < 0 for x in w):
            raise ParameterError(f"weights must be three nonnegative reals, got {self.weights}")
        self.weights = w

    @classmethod
    def embedding_defaults(cls, **overrides) -> "GuidanceConfig":
        kw = dict(epsilon=0.1, noise_mode="full")
        kw.update(overrides)
        return cls(**kw)

    @classmethod
    def latent_defaults(cls, **overrides) -> "GuidanceConfig":
        kw = dict(epsilon=5.0, noise_mode="channel")
        kw.update(overrides)
        return cls(**kw)


@dataclass(eq=False)
class OptimizationTrace:
    """Objective and component values, one entry per evaluation (steps + 1)."""

    objective: list = field(default_factory=list)
    s_con: list = field(default_factory=list)
    s_ent: list = field(default_factory=list)
    s_div: list = field(default_factory=list)

    def append(self, scores: lm.GuidanceScores):
        self.objective.append(scores.total)
        self.s_con.append(scores.s_con)
        self.s_ent.append(scores.s_ent)
        self.s_div.append(scores.s_div)

    def __len__(self) -> int:
        return len(self.objective)


@dataclass(eq=False)
class VariantRecord:
    """Provenance for one emitted synthetic sample."""

    seed_index: int
    variant_index: int
    method: str
    stream_id: str
    scores_initial: lm.GuidanceScores
    scores_final: lm.GuidanceScores
    consistent: bool
    retry_count: int
    fallback: bool = False
    qualified: bool = True

    def as_dict(self) -> dict:
        return {
            "seed_index": self.seed_index,
            "variant_index": self.variant_index,
            "method": self.method,
            "stream_id": self.stream_id,
            "scores_initial": self.scores_initial.as_dict(),
            "scores_final": self.scores_final.as_dict(),
            "consistent": self.consistent,
            "retry_count": self.retry_count,
            "fallback": self.fallback,
            "qualified": self.qualified,
        }


def _draw_params(shape: tuple, noise_mode: str, gen: np.random.Generator) -> lm.PerturbationParams:
    t, d = shape
    if noise_mode == "channel":
        z = np.tile(gen.uniform(0.0, 1.0, (1, d)), (t, 1))
        b = np.tile(gen.standard_normal((1, d)), (t, 1))
    elif noise_mode == "token":
        z = np.tile(gen.uniform(0.0, 1.0, (t, 1)), (1, d))
        b = np.tile(gen.standard_normal((t, 1)), (1, d))
    else:
        z = gen.uniform(0.0, 1.0, (t, d))
        b = gen.standard_normal((t, d))
    return lm.PerturbationParams(z=z, b=b, noise_mode=noise_mode)


def init_perturbations(
    shape: tuple, k: int, noise_mode: str, rng_stream: RngStream
) -> list:
    """One independent uniform/Gaussian noise draw per variant."""
    if k < 1:
        raise ParameterError(f"k must be >= 1, got {k}")
    if noise_mode not in lm.NOISE_MODES:
        raise ParameterError(f"noise_mode must be one of {lm.NOISE_MODES}, got {noise_mode!r}")
    return [
        _draw_params(shape, noise_mode, rng_stream.child("variant", i, "init").generator())
        for i in range(k)
    ]


def _tie_reduce(grad: np.ndarray, noise_mode: str) -> np.ndarray:
    """Gradient of a shared noise value is the sum over its tied entries."""
    if noise_mode == "channel":
        return np.tile(grad.sum(axis=0, keepdims=True), (grad.shape[0], 1))
    if noise_mode == "token":
        return np.tile(grad.sum(axis=1, keepdims=True), (1, grad.shape[1]))
    return grad


def optimize_guidance(
    seed_latent: lm.Latent,
    score_fn,
    k: int,
    config: GuidanceConfig,
    rng_stream: RngStream,
    initial_params: list | None = None,
):
    """Projected gradient ascent on the guidance objective over K variants.

    score_fn maps the list of K projected latents to (GuidanceScores, grads)
    where grads[i] is the gradient of the weighted total with respect to
    variant i's values. The clamp uses a straight-through backward: z and b
    receive the unprojected chain-rule gradient and the projection is
    re-applied on every forward pass.
    """
    params = initial_params
    if params is None:
        params = init_perturbations(seed_latent.values.shape, k, config.noise_mode, rng_stream)
    if len(params) != k:
        raise ParameterError(f"got {len(params)} parameter sets for k={k}")
    trace = OptimizationTrace()
    variants = []
    for step in range(config.steps + 1):
        try:
            variants = [lm.perturb_and_project(seed_latent, p, config.epsilon) for p in params]
            scores, grads = score_fn(variants)
        except NumericInputError as err:
            raise NumericDivergenceError(f"non-finite values at step {step}: {err}") from err
        if not math.isfinite(scores.total):
            raise NumericDivergenceError(f"objective non-finite at step {step}")
        trace.append(scores)
        if step == config.steps:
            break
        new_params = []
        # a non-finite update is flagged here with the step whose evaluation
        # it would have fed, so the nan warnings numpy would raise carry no
        # extra information
        with np.errstate(invalid="ignore", over="ignore"):
            for p, g in zip(params, grads):
                gz = _tie_reduce(g * seed_latent.values, p.noise_mode)
                gb = _tie_reduce(g, p.noise_mode)
                new_z = p.z + config.step_size * gz
                new_b = p.b + config.step_size * gb
                if not (np.all(np.isfinite(new_z)) and np.all(np.isfinite(new_b))):
                    raise NumericDivergenceError(f"non-finite values at step {step + 1}")
                new_params.append(
                    lm.PerturbationParams(z=new_z, b=new_b, noise_mode=p.noise_mode)
                )
        params = new_params
    return variants, trace


class _EmbeddingScorePath:
    """Scores variants that are themselves scoring embeddings (T = 1)."""

    def __init__(self, head: ZeroShotHead, weights: tuple, seed_pred: lm.Prediction):
        self.head = head
        self.weights = weights
        self.seed_pred = seed_pred
        self.seed_entropy = lm.entropy(seed_pred.probs)

    def predict(self, latent: lm.Latent) -> lm.Prediction:
        return self.head.predict(latent.flat())

    def __call__(self, variants):
        w_con, w_ent, w_div = self.weights
        target = self.seed_pred.argmax_class
        s_con = s_ent = 0.0
        grads = []
        for v in variants:
            pred, jac = lm.classify_grad(v.flat(), self.head.prototypes, self.head.tau)
            s_con += pred.probs[target]
            s_ent += lm.entropy(pred.probs) - self.seed_entropy
            g_e = lm.consistency_entropy_grad(
                pred, jac, self.head.tau, target, w_con, w_ent
            )
            grads.append(g_e.reshape(v.values.shape))
        s_div, div_grads = lm.diversity_score_grad([v.values for v in variants])
        for i in range(len(variants)):
            grads[i] = grads[i] + w_div * div_grads[i]
        scores = lm.GuidanceScores(s_con=s_con, s_ent=s_ent, s_div=s_div, weights=self.weights)
        return scores, grads


class _LatentScorePath:
    """Scores codec latents: decode an intermediate image, embed it, classify."""

    def __init__(
        self,
        codec: LinearCodec,
        embedder: Embedder,
        head: ZeroShotHead,
        weights: tuple,
        seed_pred: lm.Prediction,
    ):
        self.codec = codec
        self.embedder = embedder
        self.head = head
        self.weights = weights
        self.seed_pred = seed_pred
        self.seed_entropy = lm.entropy(seed_pred.probs)

    def predict(self, latent: lm.Latent) -> lm.Prediction:
        pixels, _ = self.codec.decode_with_mask(latent.flat())
        return self.head.predict(self.embedder.embed_flat(pixels))

    def __call__(self, variants):
        w_con, w_ent, w_div = self.weights
        target = self.seed_pred.argmax_class
        s_con = s_ent = 0.0
        grads = []
        for v in variants:
            pixels, mask = self.codec.decode_with_mask(v.flat())
            e = self.embedder.embed_flat(pixels)
            pred, jac = lm.classify_grad(e, self.head.prototypes, self.head.tau)
            s_con += pred.probs[target]
            s_ent += lm.entropy(pred.probs) - self.seed_entropy
            g_e = lm.consistency_entropy_grad(
                pred, jac, self.head.tau, target, w_con, w_ent
            )
            # chain through embed (linear) and the decode pixel clamp (masked)
            g_pix = (self.embedder.projection.T @ g_e) * mask
            g_lat = self.codec.basis @ g_pix
            grads.append(g_lat.reshape(v.values.shape))
        s_div, div_grads = lm.diversity_score_grad([v.values for v in variants])
        for i in range(len(variants)):
            grads[i] = grads[i] + w_div * div_grads[i]
        scores = lm.GuidanceScores(s_con=s_con, s_ent=s_ent, s_div=s_div, weights=self.weights)
        return scores, grads


def _per_variant_scores(score_path, seed_pred, latents, weights):
    """Decompose the objective into one GuidanceScores per emitted variant."""
    preds = [score_path.predict(v) for v in latents]
    seed_entropy = lm.entropy(seed_pred.probs)
    mean_flat = np.mean(np.stack([v.flat() for v in latents], axis=0), axis=0)
    r = lm.softmax(mean_flat)
    out = []
    for pred, lat in zip(preds, latents):
        s_div = lm.kl_divergence(lm.softmax(lat.flat()), r)
        out.append(
            lm.GuidanceScores(
                s_con=float(pred.probs[seed_pred.argmax_class]),
                s_ent=lm.entropy(pred.probs) - seed_entropy,
                s_div=s_div,
                weights=weights,
            )
        )
    return out, preds


def _expand_with_path(
    score_path,
    seed_latent: lm.Latent,
    seed_pred: lm.Prediction,
    method: str,
    config: GuidanceConfig,
    rng_stream: RngStream,
):
    """Joint ascent, then per-variant consistency retries and seed fallback."""
    k = config.ratio_k
    variants, trace = optimize_guidance(seed_latent, score_path, k, config, rng_stream)
    initial_scores, _ = _per_variant_scores(
        score_path,
        seed_pred,
        [
            lm.perturb_and_project(seed_latent, p, config.epsilon)
            for p in init_perturbations(
                seed_latent.values.shape, k, config.noise_mode, rng_stream
            )
        ],
        config.weights,
    )
    target = seed_pred.argmax_class
    emitted = list(variants)
    retry_counts = [0] * k
    fallbacks = [False] * k
    for i in range(k):
        if score_path.predict(emitted[i]).argmax_class == target:
            continue
        variant_stream = rng_stream.child("variant", i)
        fixed = False
        for attempt in range(1, config.retries + 1):
            retry_counts[i] = attempt
            params = _draw_params(
                seed_latent.values.shape,
                config.noise_mode,
                variant_stream.child("retry", attempt).generator(),
            )
            single, _ = optimize_guidance(
                seed_latent, score_path, 1, config, variant_stream, initial_params=[params]
            )
            if score_path.predict(single[0]).argmax_class == target:
                emitted[i] = single[0]
                fixed = True
                break
        if not fixed:
            emitted[i] = lm.Latent(seed_latent.values.copy())
            retry_counts[i] += 1
            fallbacks[i] = True
    final_scores, final_preds = _per_variant_scores(
        score_path, seed_pred, emitted, config.weights
    )
    records = []
    for i in range(k):
        records.append(
            VariantRecord(
                seed_index=-1,  # pipeline fills the real index
                variant_index=i,
                method=method,
                stream_id=rng_stream.child("variant", i).id,
                scores_initial=initial_scores[i],
                scores_final=final_scores[i],
                consistent=final_preds[i].argmax_class == target,
                retry_count=retry_counts[i],
                fallback=fallbacks[i],
            )
        )
    return emitted, records, trace


def expand_seed_embedding_flow(
    seed_image: Image,
    embedder: Embedder,
    head: ZeroShotHead,
    decoder: EmbeddingDecoder,
    config: GuidanceConfig,
    rng_stream: RngStream,
):
    """Optimize K perturbed copies of the seed's embedding, then decode them."""
    e0 = embedder.embed(seed_image)
    seed_latent = lm.Latent(e0[None, :])
    seed_pred = head.predict(e0)
    path = _EmbeddingScorePath(head, config.weights, seed_pred)
    emitted, records, trace = _expand_with_path(
        path, seed_latent, seed_pred, "gif_embed", config, rng_stream
    )
    images = [decoder(v.flat()) for v in emitted]
    return images, records, trace


def expand_seed_latent_flow(
    seed_image: Image,
    codec: LinearCodec,
    embedder: Embedder,
    head: ZeroShotHead,
    config: GuidanceConfig,
    rng_stream: RngStream,
):
    """Optimize K perturbed codec latents, scoring decoded intermediates."""
    f0 = codec.encode(seed_image)
    # the reference prediction goes through the same decode/embed path the
    # variants use, so the seed fallback is consistent by construction
    recon_pixels, _ = codec.decode_with_mask(f0.flat())
    seed_pred = head.predict(embedder.embed_flat(recon_pixels))
    path = _LatentScorePath(codec, embedder, head, config.weights, seed_pred)
    emitted, records, trace = _expand_with_path(
        path, f0, seed_pred, "gif_latent", config, rng_stream
    )
    images = [codec.decode(v) for v in emitted]
    return images, records, trace
