"""
W2SC Loss Engine v1.0
Training objectives for the generator G, discriminator D and Siamese
encoder S.

    transformation vector   t12 = S(a1) - S(a2),  t12' = S(G(a1)) - S(G(a2))
    Siamese transform       mean[(1 - cos(t12, t12')) + ||t12 - t12'||^2]
    Siamese margin          mean[max(0, delta - ||t12||)]
    identity                mean_b ||G(b) - b||_1
    D hinge                 mean[max(0, 1 - D(b))] + mean[max(0, 1 + D(G(a)))]
    G adversarial           -mean[D(G(a))]

Each network-level loss has an embedding- or score-level twin so the trainer
can run every network once per step and share the activations.
"""

from __future__ import annotations

from typing import Callable, NamedTuple, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from tensorcore.autodiff import Tensor, cosine_similarity, l1, l2, relu, squared_l2

Network = Callable[[Tensor], Tensor]

# ── Defaults ───────────────────────────────────────
DELTA = 1.0
LAMBDA_S = 10.0
LAMBDA_ID = 5.0


class LossWeights(BaseModel):
    model_config = ConfigDict(extra="forbid")

    delta: float = Field(DELTA, ge=0)
    lambda_s: float = Field(LAMBDA_S, ge=0)
    lambda_id: float = Field(LAMBDA_ID, ge=0)
    eq1_literal: bool = False       # add the cosine instead of (1 - cosine)


class TransformLoss(NamedTuple):
    value: Tensor
    degenerate: int                 # pairs excluded for a near-zero transformation vector


class GeneratorObjective(NamedTuple):
    g_loss: Tensor                  # L_adv + lambda_s * L_GS + lambda_id * L_id
    s_loss: Tensor                  # lambda_s * L_GS + L_margin
    combined: Tensor                # g_loss + L_margin; one backward serves G and S


# ---------------------------------------------------------------------------
# Embedding-level terms
# ---------------------------------------------------------------------------

def transformation_vector(e1: Tensor, e2: Tensor) -> Tensor:
    if e1.shape != e2.shape:
        raise ValueError(f"transformation_vector: embedding shapes differ {e1.shape} vs {e2.shape}")
    return e1 - e2


def cosine_pi(t: Tensor, t_prime: Tensor) -> Tuple[Tensor, np.ndarray]:
    """Row-wise cosine and the mask of degenerate rows (either norm < 1e-8, cosine 0)."""
    return cosine_similarity(t, t_prime, axis=-1)


def siamese_transform_from_vectors(t: Tensor, t_prime: Tensor, literal: bool = False) -> TransformLoss:
    cos, degenerate = cosine_pi(t, t_prime)
    keep = (~degenerate).astype(t.dtype)
    count = int(keep.sum())
    angle = cos if literal else 1.0 - cos
    per_pair = angle + squared_l2(t - t_prime, axis=-1)
    value = (per_pair * Tensor(keep)).sum() * (1.0 / max(count, 1))
    return TransformLoss(value, int(degenerate.sum()))


def siamese_margin_from_vectors(t: Tensor, delta: float) -> Tensor:
    return relu(delta - l2(t, axis=-1)).mean()


def d_hinge_from_scores(real: Tensor, fake: Tensor) -> Tensor:
    return relu(1.0 - real).mean() + relu(1.0 + fake).mean()


def g_adv_from_scores(fake: Tensor) -> Tensor:
    return -fake.mean()


def identity_from_outputs(g_b: Tensor, b: Tensor) -> Tensor:
    """Mean over the batch of the per-segment L1 distance."""
    axes = tuple(range(1, b.ndim))
    return l1(g_b - b, axis=axes).mean()


# ---------------------------------------------------------------------------
# Network-level losses
# ---------------------------------------------------------------------------

def loss_siamese_transform(G: Network, S: Network, a1: Tensor, a2: Tensor,
                           literal: bool = False) -> TransformLoss:
    """Transformation vectors of whisper pairs must survive conversion."""
    if a1.shape != a2.shape:
        raise ValueError(f"loss_siamese_transform: batch shapes differ {a1.shape} vs {a2.shape}")
    t = transformation_vector(S(a1), S(a2))
    t_prime = transformation_vector(S(G(a1)), S(G(a2)))
    return siamese_transform_from_vectors(t, t_prime, literal)


def loss_siamese_margin(S: Network, a1: Tensor, a2: Tensor, delta: float = DELTA) -> Tensor:
    return siamese_margin_from_vectors(transformation_vector(S(a1), S(a2)), delta)


def loss_identity(G: Network, b: Tensor) -> Tensor:
    return identity_from_outputs(G(b), b)


def loss_d_hinge(D: Network, b: Tensor, fake: Tensor) -> Tensor:
    """``fake`` is detached here; no gradient reaches the generator."""
    return d_hinge_from_scores(D(b), D(fake.detach()))


def loss_g_adv(D: Network, fake: Tensor) -> Tensor:
    return g_adv_from_scores(D(fake))


def total_generator_loss(l_adv: Tensor, l_gs: Tensor, l_id: Tensor, l_margin: Tensor,
                         weights: LossWeights = LossWeights()) -> GeneratorObjective:
    g_loss = l_adv + weights.lambda_s * l_gs + weights.lambda_id * l_id
    s_loss = weights.lambda_s * l_gs + l_margin
    return GeneratorObjective(g_loss, s_loss, g_loss + l_margin)
