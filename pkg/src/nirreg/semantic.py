"""Semantic injection of descriptors, the triplet / coarse / fine losses, and a
finite-difference fitting loop for the injection parameters."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

SIGMA_FLOOR = 1e-6

DEFAULT_MARGIN = 0.3
LOG_FLOOR = 1e-12


class DimensionError(ValueError):
    pass


class SingleClassError(ValueError):
    pass


class EmptySelectionError(ValueError):
    pass


@dataclass(frozen=True)
class SemanticLabelMap:
    """Per-patch semantic class id in 1..num_classes with a confidence in [0,1]."""

    class_ids: np.ndarray
    confidences: np.ndarray
    num_classes: int

    def __post_init__(self):
        ids = np.asarray(self.class_ids, dtype=int).ravel()
        conf = np.asarray(self.confidences, dtype=float).ravel()
        if ids.shape != conf.shape:
            raise DimensionError("class ids and confidences must align")
        if ids.size and (ids.min() < 1 or ids.max() > self.num_classes):
            raise ValueError(f"class ids must lie in 1..{self.num_classes}")
        if conf.size and (conf.min() < 0.0 or conf.max() > 1.0):
            raise ValueError("confidences must lie in [0, 1]")
        object.__setattr__(self, "class_ids", ids)
        object.__setattr__(self, "confidences", conf)

    def to_json(self):
        return {"class_ids": self.class_ids.tolist(),
                "confidences": self.confidences.tolist(),
                "num_classes": self.num_classes}

    @classmethod
    def from_json(cls, d):
        return cls(np.array(d["class_ids"]), np.array(d["confidences"]), d["num_classes"])


def label_map_from_images(index_img, confidence_img, num_classes):
    """Build a label map from an 8-bit index image plus a confidence image."""
    ids = np.rint(np.asarray(index_img.data) * 255.0).astype(int).ravel()
    ids = np.clip(ids, 1, num_classes)
    conf = np.asarray(confidence_img.data, dtype=float).ravel()
    if ids.shape != conf.shape:
        raise DimensionError("index and confidence images must share dimensions")
    return SemanticLabelMap(ids, conf, num_classes)


@dataclass(frozen=True)
class SimParams:
    """Affine maps from the semantic vector to per-channel scale and shift."""

    gamma_weight: np.ndarray  # (channels, semantic_dim)
    gamma_bias: np.ndarray  # (channels,)
    beta_weight: np.ndarray
    beta_bias: np.ndarray

    def __post_init__(self):
        gw = np.asarray(self.gamma_weight, dtype=float)
        gb = np.asarray(self.gamma_bias, dtype=float)
        bw = np.asarray(self.beta_weight, dtype=float)
        bb = np.asarray(self.beta_bias, dtype=float)
        if gw.ndim != 2 or bw.shape != gw.shape or gb.shape != (gw.shape[0],) \
                or bb.shape != gb.shape:
            raise DimensionError("inconsistent SIM parameter shapes")
        object.__setattr__(self, "gamma_weight", gw)
        object.__setattr__(self, "gamma_bias", gb)
        object.__setattr__(self, "beta_weight", bw)
        object.__setattr__(self, "beta_bias", bb)

    @property
    def channels(self):
        return self.gamma_weight.shape[0]

    @property
    def semantic_dim(self):
        return self.gamma_weight.shape[1]

    def gamma(self, h_s):
        return self.gamma_weight @ h_s + self.gamma_bias

    def beta(self, h_s):
        return self.beta_weight @ h_s + self.beta_bias

    def to_vector(self):
        return np.concatenate([self.gamma_weight.ravel(), self.gamma_bias,
                               self.beta_weight.ravel(), self.beta_bias])

    @classmethod
    def from_vector(cls, vec, channels, semantic_dim):
        k = channels * semantic_dim
        return cls(vec[:k].reshape(channels, semantic_dim),
                   vec[k:k + channels],
                   vec[k + channels:2 * k + channels].reshape(channels, semantic_dim),
                   vec[2 * k + channels:])

    def to_json(self):
        return {"gamma_weight": self.gamma_weight.tolist(),
                "gamma_bias": self.gamma_bias.tolist(),
                "beta_weight": self.beta_weight.tolist(),
                "beta_bias": self.beta_bias.tolist()}

    @classmethod
    def from_json(cls, d):
        return cls(np.array(d["gamma_weight"]), np.array(d["gamma_bias"]),
                   np.array(d["beta_weight"]), np.array(d["beta_bias"]))

    @classmethod
    def identity_like(cls, channels, semantic_dim):
        """Parameters mapping any semantic vector to gamma 1, beta 0."""
        zeros = np.zeros((channels, semantic_dim))
        return cls(zeros, np.ones(channels), zeros.copy(), np.zeros(channels))


@dataclass(frozen=True)
class DescriptorBatch:
    """n descriptors by d channels; statistics are taken across the n positions."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 2:
            raise DimensionError("descriptor batch must be 2-D (n, channels)")
        object.__setattr__(self, "values", v)

    @property
    def count(self):
        return self.values.shape[0]

    @property
    def channels(self):
        return self.values.shape[1]


@dataclass(frozen=True)
class LossWeights:
    lambda_st: float = 1e-2
    lambda_c: float = 1.0
    lambda_f: float = 1.0
    margin: float = DEFAULT_MARGIN
    top_t: int = 100

    def __post_init__(self):
        if min(self.lambda_st, self.lambda_c, self.lambda_f) < 0.0 or self.margin < 0.0:
            raise ValueError("loss weights and margin must be non-negative")
        if self.top_t < 1:
            raise ValueError("top-confidence count must be >= 1")


def sim_refine(batch, h_s, params):
    """Standardize each channel across positions and re-scale/shift it by the
    semantic-conditioned gamma/beta."""
    if batch.count < 2:
        raise DimensionError("need at least 2 descriptors for channel statistics")
    h_s = np.asarray(h_s, dtype=float)
    if params.channels != batch.channels or params.semantic_dim != h_s.shape[0]:
        raise DimensionError("SIM parameter dimensions do not match batch/vector")
    mu = batch.values.mean(axis=0)
    sigma = batch.values.std(axis=0)  # population std across positions
    denom = np.maximum(sigma, SIGMA_FLOOR)
    out = params.gamma(h_s) * (batch.values - mu) / denom + params.beta(h_s)
    return DescriptorBatch(out)


def _select_top_t(labels, top_t):
    """Per class, indices of the top-T patches by confidence (stable order)."""
    selected = {}
    for c in np.unique(labels.class_ids):
        idx = np.flatnonzero(labels.class_ids == c)
        order = np.argsort(-labels.confidences[idx], kind="stable")
        selected[int(c)] = idx[order[:top_t]]
    return selected


def semantic_triplet_loss(batch, labels, weights):
    """Batch-hard triplet loss over per-class top-T confidence selections.

    Every selected patch anchors one hinge term: margin plus its hardest
    (farthest) selected positive minus its hardest (nearest) selected negative.
    Anchors without a positive partner are skipped.
    """
    if batch.count != labels.class_ids.size:
        raise DimensionError("batch and label map sizes differ")
    selected = _select_top_t(labels, weights.top_t)
    if not selected or sum(len(v) for v in selected.values()) == 0:
        raise EmptySelectionError("no patches selected")
    if len(selected) < 2:
        raise SingleClassError("triplet loss needs at least 2 distinct classes")
    all_idx = np.concatenate([v for v in selected.values()])
    vals = batch.values
    total = 0.0
    for c, idx_c in selected.items():
        negatives = np.array([i for i in all_idx if labels.class_ids[i] != c])
        for a in idx_c:
            positives = idx_c[idx_c != a]
            if positives.size == 0:
                continue
            d_pos = np.linalg.norm(vals[positives] - vals[a], axis=1).max()
            d_neg = np.linalg.norm(vals[negatives] - vals[a], axis=1).min()
            total += max(weights.margin + d_pos - d_neg, 0.0)
    return float(total)


def coarse_matching_loss(m_ds, m_gt):
    """Mean negative log-probability of the ground-truth cells of M_ds."""
    if not m_gt:
        raise ValueError("empty ground-truth matrix")
    m = np.asarray(m_ds, dtype=float)
    total = 0.0
    for i, j in m_gt:
        total -= np.log(max(m[i, j], LOG_FLOOR))
    return float(total / len(m_gt))


def fine_matching_loss(pred, gt):
    """Mean squared Euclidean distance between predicted and true coordinates."""
    if len(pred) == 0 or len(pred) != len(gt):
        raise ValueError("need equal-length non-empty coordinate lists")
    p = np.array([[c.x, c.y] for c in pred], dtype=float)
    g = np.array([[c.x, c.y] for c in gt], dtype=float)
    return float(((p - g) ** 2).sum(axis=1).mean())


def total_loss(l_st, l_c, l_f, weights):
    """Weighted sum of the triplet, coarse and fine losses."""
    return weights.lambda_st * l_st + weights.lambda_c * l_c + weights.lambda_f * l_f


def fit_sim_params(batches, label_maps, h_s, params, weights,
                   steps=50, step_size=0.05, fd_step=1e-4):
    """Gradient descent on SIM parameters via central-difference gradients of the
    triplet loss after refinement. Returns the final parameters and loss trace."""
    if steps < 1:
        raise ValueError("steps must be >= 1")
    channels, sdim = params.channels, params.semantic_dim

    def loss_at(vec):
        p = SimParams.from_vector(vec, channels, sdim)
        return sum(semantic_triplet_loss(sim_refine(b, h_s, p), lm, weights)
                   for b, lm in zip(batches, label_maps))

    vec = params.to_vector().copy()
    trace = [loss_at(vec)]
    for _ in range(steps):
        grad = np.zeros_like(vec)
        for k in range(vec.size):
            delta = np.zeros_like(vec)
            delta[k] = fd_step
            grad[k] = (loss_at(vec + delta) - loss_at(vec - delta)) / (2.0 * fd_step)
        vec = vec - step_size * grad
        trace.append(loss_at(vec))
    return SimParams.from_vector(vec, channels, sdim), trace
