"""Numerical kernel: scoring math, the perturbation step, and the guidance objective.

Everything here is pure array math with no I/O and no randomness. The
guidance objective has hand-derived gradients (no autodiff); the
finite-difference oracle `objective_gradient_fd` is the independent check.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import (
    DegenerateVectorError,
    NumericInputError,
    ParameterError,
    ShapeError,
    SimplexError,
)

SIMPLEX_TOL = 1e-6
KL_FLOOR = 1e-12
NORM_FLOOR = 1e-12

NOISE_MODES = ("full", "channel", "token")


def _as_float_vector(v, name: str) -> np.ndarray:
    arr = np.asarray(v, dtype=np.float64)
    if arr.ndim != 1:
        raise ShapeError(f"{name} must be a 1-d vector, got shape {arr.shape}")
    return arr


def softmax(v, tau: float = 1.0) -> np.ndarray:
    """Temperature softmax of a real vector, stabilized by max subtraction."""
    arr = _as_float_vector(v, "softmax input")
    if not np.all(np.isfinite(arr)):
        raise NumericInputError("softmax input contains non-finite values")
    if not (tau > 0):
        raise ParameterError(f"softmax temperature must be > 0, got {tau}")
    scaled = arr / tau
    shifted = scaled - scaled.max()
    e = np.exp(shifted)
    return e / e.sum()


def _check_simplex(p: np.ndarray, name: str) -> np.ndarray:
    if np.any(p < -1e-12):
        raise SimplexError(f"{name} has negative entries")
    total = float(p.sum())
    if abs(total - 1.0) > SIMPLEX_TOL:
        raise SimplexError(f"{name} sums to {total}, expected 1 within {SIMPLEX_TOL}")
    return np.maximum(p, 0.0)


def entropy(p) -> float:
    """Shannon entropy in nats, with 0 * ln 0 taken as 0."""
    arr = _check_simplex(_as_float_vector(p, "entropy input"), "entropy input")
    nz = arr[arr > 0.0]
    return float(-(nz * np.log(nz)).sum())


def kl_divergence(p, q) -> float:
    """KL(p || q) in nats; q is floored at 1e-12 so the result stays finite."""
    parr = _as_float_vector(p, "kl p")
    qarr = _as_float_vector(q, "kl q")
    if parr.shape != qarr.shape:
        raise ShapeError(f"kl length mismatch: {parr.shape} vs {qarr.shape}")
    parr = _check_simplex(parr, "kl p")
    qarr = _check_simplex(qarr, "kl q")
    qarr = np.maximum(qarr, KL_FLOOR)
    mask = parr > 0.0
    val = float((parr[mask] * (np.log(parr[mask]) - np.log(qarr[mask]))).sum())
    # Gibbs' inequality puts KL at >= 0; near-identical inputs can round a
    # hair below, so clamp rather than report an impossible negative
    return max(val, 0.0)


def cosine(a, b) -> float:
    """Cosine similarity; rejects vectors shorter than the norm floor."""
    av = _as_float_vector(a, "cosine a")
    bv = _as_float_vector(b, "cosine b")
    if av.shape != bv.shape:
        raise ShapeError(f"cosine length mismatch: {av.shape} vs {bv.shape}")
    if not (np.all(np.isfinite(av)) and np.all(np.isfinite(bv))):
        raise NumericInputError("cosine input contains non-finite values")
    na = float(np.linalg.norm(av))
    nb = float(np.linalg.norm(bv))
    if na <= NORM_FLOOR or nb <= NORM_FLOOR:
        raise DegenerateVectorError(f"cosine norms too small: {na}, {nb}")
    return float(av @ bv / (na * nb))


@dataclass(eq=False)
class Latent:
    """A tokens-by-channels block of latent features (embedding rows use T=1)."""

    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise ShapeError(f"latent must be 2-d, got shape {self.values.shape}")
        if self.values.shape[0] < 1 or self.values.shape[1] < 1:
            raise ShapeError(f"latent needs at least one token and channel, got {self.values.shape}")
        if not np.all(np.isfinite(self.values)):
            raise NumericInputError("latent contains non-finite values")

    @property
    def tokens(self) -> int:
        return self.values.shape[0]

    @property
    def channels(self) -> int:
        return self.values.shape[1]

    def flat(self) -> np.ndarray:
        return self.values.ravel()


@dataclass(eq=False)
class Prediction:
    """Zero-shot prediction: cosine affinities and their softmax probabilities."""

    affinities: np.ndarray
    probs: np.ndarray
    argmax_class: int = field(init=False)

    def __post_init__(self):
        self.affinities = _as_float_vector(self.affinities, "affinities")
        self.probs = _as_float_vector(self.probs, "probs")
        if self.affinities.shape != self.probs.shape:
            raise ShapeError(
                f"affinities/probs length mismatch: {self.affinities.shape} vs {self.probs.shape}"
            )
        if self.probs.size < 2:
            raise ShapeError("prediction needs at least two classes")
        if np.any(self.probs < -1e-12):
            raise SimplexError("probs has negative entries")
        total = float(self.probs.sum())
        if abs(total - 1.0) > 1e-9:
            raise SimplexError(f"probs sums to {total}, expected 1 within 1e-9")
        self.probs = np.maximum(self.probs, 0.0)
        # np.argmax takes the first maximum, which is the required tie-break.
        self.argmax_class = int(np.argmax(self.probs))

    @property
    def class_count(self) -> int:
        return int(self.probs.size)

    @classmethod
    def from_probs(cls, probs) -> "Prediction":
        arr = _as_float_vector(probs, "probs")
        return cls(affinities=arr.copy(), probs=arr)


@dataclass(eq=False)
class PerturbationParams:
    """Multiplicative and additive noise fields for one latent variant.

    In channel mode z and b are constant along the token axis; in token mode
    constant along the channel axis; full mode has a free value per entry.
    """

    z: np.ndarray
    b: np.ndarray
    noise_mode: str = "full"

    def __post_init__(self):
        self.z = np.asarray(self.z, dtype=np.float64)
        self.b = np.asarray(self.b, dtype=np.float64)
        if self.z.shape != self.b.shape or self.z.ndim != 2:
            raise ShapeError(f"z/b must share a 2-d shape, got {self.z.shape} and {self.b.shape}")
        if self.noise_mode not in NOISE_MODES:
            raise ParameterError(f"noise_mode must be one of {NOISE_MODES}, got {self.noise_mode!r}")
        if self.noise_mode == "channel":
            if np.any(self.z != self.z[:1, :]) or np.any(self.b != self.b[:1, :]):
                raise ShapeError("channel-mode noise must be constant along the token axis")
        elif self.noise_mode == "token":
            if np.any(self.z != self.z[:, :1]) or np.any(self.b != self.b[:, :1]):
                raise ShapeError("token-mode noise must be constant along the channel axis")


def perturb_and_project(f: Latent, params: PerturbationParams, epsilon: float) -> Latent:
    """Apply (1+z)*f + b, then clamp each entry into [f - eps, f + eps]."""
    if not (epsilon >= 0):
        raise ParameterError(f"epsilon must be >= 0, got {epsilon}")
    if params.z.shape != f.values.shape:
        raise ShapeError(
            f"noise shape {params.z.shape} does not match latent shape {f.values.shape}"
        )
    raw = (1.0 + params.z) * f.values + params.b
    delta = np.clip(raw - f.values, -epsilon, epsilon)
    out = f.values + delta
    # the containment bound is exact, not toleranced: rounding in f + delta can
    # overshoot by an ulp, so nudge offending entries back toward f
    over = np.abs(out - f.values) > epsilon
    while np.any(over):
        out[over] = np.nextafter(out[over], f.values[over])
        over = np.abs(out - f.values) > epsilon
    return Latent(out)


@dataclass(eq=False)
class GuidanceScores:
    """Component scores of the guidance objective and their weighted total."""

    s_con: float
    s_ent: float
    s_div: float
    weights: tuple[float, float, float] = (1.0, 1.0, 1.0)
    total: float = field(init=False)

    def __post_init__(self):
        w = tuple(float(x) for x in self.weights)
        if len(w) != 3:
            raise ParameterError(f"weights must have three entries, got {len(w)}")
        if any(not math.isfinite(x) or x < 0 for x in w):
            raise ParameterError(f"weights must be nonnegative finite reals, got {w}")
        self.weights = w
        self.s_con = float(self.s_con)
        self.s_ent = float(self.s_ent)
        self.s_div = float(self.s_div)
        if self.s_div < 0:
            raise ParameterError(f"s_div must be >= 0, got {self.s_div}")
        self.total = w[0] * self.s_con + w[1] * self.s_ent + w[2] * self.s_div

    def as_dict(self) -> dict:
        return {
            "s_con": self.s_con,
            "s_ent": self.s_ent,
            "s_div": self.s_div,
            "total": self.total,
            "weights": list(self.weights),
        }


def consistency_score(s: Prediction, s_prime: Prediction) -> float:
    """Probability the variant assigns to the seed's predicted class."""
    if s.class_count != s_prime.class_count:
        raise ShapeError(
            f"class count mismatch: {s.class_count} vs {s_prime.class_count}"
        )
    return float(s_prime.probs[s.argmax_class])


def entropy_gain(s: Prediction, s_prime: Prediction) -> float:
    """Entropy of the variant prediction minus entropy of the seed prediction."""
    if s.class_count != s_prime.class_count:
        raise ShapeError(
            f"class count mismatch: {s.class_count} vs {s_prime.class_count}"
        )
    return entropy(s_prime.probs) - entropy(s.probs)


def _diversity_impl(values: Sequence[np.ndarray], with_grad: bool):
    k = len(values)
    shape = values[0].shape
    flats = [v.ravel() for v in values]
    mean_flat = np.mean(np.stack(flats, axis=0), axis=0)
    r = softmax(mean_flat)
    log_r = np.log(np.maximum(r, KL_FLOOR))
    qs, log_qs, kls = [], [], []
    for u in flats:
        q = softmax(u)
        log_q = np.log(np.maximum(q, KL_FLOOR))
        mask = q > 0.0
        kls.append(float((q[mask] * (log_q[mask] - log_r[mask])).sum()))
        qs.append(q)
        log_qs.append(log_q)
    total = max(float(sum(kls)), 0.0)
    if not with_grad:
        return total, None
    # d/dv of sum_k KL(q_k || softmax(v)) at v = mean of the flats; each flat
    # contributes 1/K to every coordinate of the mean.
    d_mean = k * r - np.sum(np.stack(qs, axis=0), axis=0)
    grads = []
    for q, log_q, kl_k in zip(qs, log_qs, kls):
        own = q * ((log_q - log_r) - kl_k)
        grads.append((own + d_mean / k).reshape(shape))
    return total, grads


def diversity_score(variants: Sequence[Latent]) -> float:
    """Sum over variants of KL(softmax(flat variant) || softmax(flat mean))."""
    if len(variants) < 1:
        raise ShapeError("diversity needs at least one variant")
    shape = variants[0].values.shape
    for v in variants:
        if v.values.shape != shape:
            raise ShapeError(f"variant shape mismatch: {v.values.shape} vs {shape}")
    total, _ = _diversity_impl([v.values for v in variants], with_grad=False)
    return total


def diversity_score_grad(values: Sequence[np.ndarray]):
    """Diversity score plus its gradient with respect to each variant's values."""
    if len(values) < 1:
        raise ShapeError("diversity needs at least one variant")
    arrs = [np.asarray(v, dtype=np.float64) for v in values]
    shape = arrs[0].shape
    for a in arrs:
        if a.shape != shape:
            raise ShapeError(f"variant shape mismatch: {a.shape} vs {shape}")
    return _diversity_impl(arrs, with_grad=True)


def guidance_objective(
    s: Prediction,
    s_primes: Sequence[Prediction],
    variants: Sequence[Latent],
    weights: tuple[float, float, float] = (1.0, 1.0, 1.0),
) -> GuidanceScores:
    """Aggregate consistency, entropy-gain, and diversity scores over K variants."""
    if len(s_primes) != len(variants):
        raise ShapeError(
            f"got {len(s_primes)} predictions for {len(variants)} variants"
        )
    if len(variants) < 1:
        raise ShapeError("objective needs at least one variant")
    s_con = sum(consistency_score(s, sp) for sp in s_primes)
    s_ent = sum(entropy_gain(s, sp) for sp in s_primes)
    s_div = diversity_score(variants)
    return GuidanceScores(s_con=s_con, s_ent=s_ent, s_div=s_div, weights=weights)


def objective_gradient_fd(
    objective: Callable[[np.ndarray], float], params: np.ndarray, h: float = 1e-5
) -> np.ndarray:
    """Central-difference gradient of a scalar objective, one coordinate at a time."""
    if not (h > 0):
        raise ParameterError(f"step h must be > 0, got {h}")
    base = np.asarray(params, dtype=np.float64)
    grad = np.zeros_like(base)
    it = np.nditer(base, flags=["multi_index"])
    while not it.finished:
        idx = it.multi_index
        plus = base.copy()
        minus = base.copy()
        plus[idx] += h
        minus[idx] -= h
        fp = float(objective(plus))
        fm = float(objective(minus))
        if not (math.isfinite(fp) and math.isfinite(fm)):
            raise NumericInputError(f"objective non-finite near coordinate {idx}")
        grad[idx] = (fp - fm) / (2.0 * h)
        it.iternext()
    return grad


def classify(e: np.ndarray, prototypes: np.ndarray, tau: float = 1.0) -> Prediction:
    """Zero-shot prediction of an embedding against unit-norm class prototypes."""
    pred, _ = classify_grad(e, prototypes, tau, need_jacobian=False)
    return pred


def classify_grad(
    e: np.ndarray, prototypes: np.ndarray, tau: float = 1.0, need_jacobian: bool = True
):
    """Prediction plus the Jacobian of the cosine affinities w.r.t. the embedding.

    Row c of the Jacobian is (w_c - a_c * unit(e)) / ||e||, the gradient of
    cos(e, w_c) for a unit-norm prototype w_c.
    """
    ev = _as_float_vector(e, "embedding")
    protos = np.asarray(prototypes, dtype=np.float64)
    if protos.ndim != 2 or protos.shape[1] != ev.size:
        raise ShapeError(
            f"prototypes shape {protos.shape} does not match embedding size {ev.size}"
        )
    if protos.shape[0] < 2:
        raise ShapeError("need at least two class prototypes")
    if not np.all(np.isfinite(ev)):
        raise NumericInputError("embedding contains non-finite values")
    norm = float(np.linalg.norm(ev))
    if norm <= NORM_FLOOR:
        raise DegenerateVectorError(f"embedding norm {norm} is below {NORM_FLOOR}")
    unit = ev / norm
    affinities = protos @ unit
    pred = Prediction(affinities=affinities, probs=softmax(affinities, tau))
    if not need_jacobian:
        return pred, None
    jac = (protos - np.outer(affinities, unit)) / norm
    return pred, jac


def consistency_entropy_grad(
    pred: Prediction,
    jac: np.ndarray,
    tau: float,
    target_class: int,
    lam_con: float,
    lam_ent: float,
) -> np.ndarray:
    """Gradient w.r.t. the embedding of lam_con * p[target] + lam_ent * H(p).

    Uses the softmax-logit identities dp_c/dl_j = p_c (delta_cj - p_j) and
    dH/dl_j = -p_j (ln p_j + H), then maps logits back through tau and the
    affinity Jacobian.
    """
    p = pred.probs
    logp = np.log(np.maximum(p, 1e-300))
    h_val = float(-(p * np.where(p > 0, logp, 0.0)).sum())
    d_logits = np.zeros_like(p)
    if lam_con != 0.0:
        row = -p[target_class] * p
        row[target_class] += p[target_class]
        d_logits += lam_con * row
    if lam_ent != 0.0:
        d_logits += lam_ent * (-(p * (logp + h_val)))
    return (d_logits / tau) @ jac
