"""
W2SC Trainer v1.0
The adversarial training loop.

Every call to ``train_step`` updates the generator and the Siamese encoder on
the combined objective; every ``g_steps_per_d_step``-th call first updates the
discriminator on the hinge loss. The batch for step n comes from a generator
seeded with (seed, n), so a resumed run draws the same batches as an
uninterrupted one.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, List, NamedTuple, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from tqdm import tqdm

from losses.loss_engine import (
    LossWeights,
    d_hinge_from_scores,
    g_adv_from_scores,
    identity_from_outputs,
    siamese_margin_from_vectors,
    siamese_transform_from_vectors,
    total_generator_loss,
)
from networks.base import NetworkConfig
from networks.discriminator import DiscriminatorParams, discriminator_forward
from networks.generator import GeneratorParams, generator_forward
from networks.siamese import SiameseParams, siamese_forward
from tensorcore.autodiff import NonFiniteError, Tensor, backward, concat, take
from tensorcore.optim import BETA1, BETA2, Adam
from training.corpus import Batch, Corpus, batch_rng, sample_batch
from w2sc_utils import log

# ── Defaults ───────────────────────────────────────
BATCH_SIZE = 16
TOTAL_GENERATOR_STEPS = 5000
G_STEPS_PER_D_STEP = 3
LR_G = 2e-4
LR_D = 1e-4
CHECKPOINT_INTERVAL = 500


class NonFiniteLossError(RuntimeError):
    """A loss term went NaN or infinite; training stops at that step."""

    def __init__(self, term: str, step: int):
        super().__init__(f"{term} is not finite at step {step}")
        self.term = term
        self.step = step


class TrainConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    batch_size: int = Field(BATCH_SIZE, ge=2)
    total_generator_steps: int = Field(TOTAL_GENERATOR_STEPS, ge=0)
    g_steps_per_d_step: int = Field(G_STEPS_PER_D_STEP, ge=1)
    lr_g: float = Field(LR_G, gt=0, lt=1)
    lr_d: float = Field(LR_D, gt=0, lt=1)
    beta1: float = Field(BETA1, ge=0, lt=1)
    beta2: float = Field(BETA2, ge=0, lt=1)
    seed: int = Field(0, ge=0)
    checkpoint_interval: int = Field(CHECKPOINT_INTERVAL, ge=1)
    holdout: int = Field(0, ge=0)


@dataclass
class TrainState:
    g: GeneratorParams
    d: DiscriminatorParams
    s: SiameseParams
    opt_g: Adam
    opt_d: Adam
    opt_s: Adam
    cfg: TrainConfig
    weights: LossWeights
    net_cfg: NetworkConfig
    step: int = 0

    @property
    def d_updates(self) -> int:
        return self.step // self.cfg.g_steps_per_d_step


class StepReport(NamedTuple):
    step: int                       # 1-based index of the step just taken
    l_d: Optional[float]            # None when the discriminator was not updated
    l_g_adv: float
    l_gs: float
    l_s: float
    l_id: float
    l_margin: float
    degenerate_pairs: int

    def row(self) -> dict:
        return {
            "step": self.step,
            "L_D": self.l_d,
            "L_G_adv": self.l_g_adv,
            "L_GS": self.l_gs,
            "L_S": self.l_s,
            "L_id": self.l_id,
        }


def init_train_state(cfg: TrainConfig = TrainConfig(), weights: LossWeights = LossWeights(),
                     net_cfg: NetworkConfig = NetworkConfig()) -> TrainState:
    """Fresh networks drawn from ``cfg.seed`` in the order G, D, S."""
    rng = np.random.default_rng(cfg.seed)
    g = GeneratorParams(rng, net_cfg)
    d = DiscriminatorParams(rng, net_cfg)
    s = SiameseParams(rng, net_cfg)
    return TrainState(
        g=g, d=d, s=s,
        opt_g=Adam(g.parameters(), cfg.lr_g, cfg.beta1, cfg.beta2),
        opt_d=Adam(d.parameters(), cfg.lr_d, cfg.beta1, cfg.beta2),
        opt_s=Adam(s.parameters(), cfg.lr_g, cfg.beta1, cfg.beta2),
        cfg=cfg, weights=weights, net_cfg=net_cfg,
    )


def _finite(term: str, step: int, compute: Callable[[], Tensor]) -> Tensor:
    try:
        value = compute()
    except NonFiniteError as exc:
        raise NonFiniteLossError(term, step) from exc
    if not np.all(np.isfinite(value.data)):
        raise NonFiniteLossError(term, step)
    return value


def _backward(term: str, step: int, loss: Tensor) -> None:
    try:
        backward(loss)
    except NonFiniteError as exc:
        raise NonFiniteLossError(f"{term} gradient", step) from exc


def _transform_loss(step: int, t: Tensor, t_prime: Tensor, literal: bool):
    try:
        loss = siamese_transform_from_vectors(t, t_prime, literal)
    except NonFiniteError as exc:
        raise NonFiniteLossError("L_GS", step) from exc
    if not np.isfinite(loss.value.item()):
        raise NonFiniteLossError("L_GS", step)
    return loss


def train_step(state: TrainState, batch: Batch) -> StepReport:
    """One generator step, preceded by a discriminator step on every k-th call."""
    step = state.step + 1
    weights = state.weights
    a = Tensor(batch.whisper)
    b = Tensor(batch.normal)
    G = lambda x: generator_forward(x, state.g)            # noqa: E731
    D = lambda x: discriminator_forward(x, state.d)        # noqa: E731
    S = lambda x: siamese_forward(x, state.s)              # noqa: E731

    # one generator pass over whisper and normal; the halves feed the adversarial and identity terms
    n = a.shape[0]
    both = _finite("G(a), G(b)", step, lambda: G(concat([a, b], axis=0)))
    fake = take(both, np.arange(n))
    fake_b = take(both, np.arange(n, 2 * n))

    l_d = None
    if step % state.cfg.g_steps_per_d_step == 0:
        d_loss = _finite("L_D", step, lambda: d_hinge_from_scores(D(b), D(fake.detach())))
        state.opt_d.zero_grad()
        _backward("L_D", step, d_loss)
        state.opt_d.step()
        l_d = d_loss.item()

    first, second = batch.pairs[:, 0], batch.pairs[:, 1]
    emb_a = _finite("S(a)", step, lambda: S(a))
    emb_fake = _finite("S(G(a))", step, lambda: S(fake))
    t = take(emb_a, first) - take(emb_a, second)
    t_prime = take(emb_fake, first) - take(emb_fake, second)

    transform = _transform_loss(step, t, t_prime, weights.eq1_literal)
    l_gs = transform.value
    l_margin = _finite("L_margin", step, lambda: siamese_margin_from_vectors(t, weights.delta))
    l_adv = _finite("L_G_adv", step, lambda: g_adv_from_scores(D(fake)))
    l_id = _finite("L_id", step, lambda: identity_from_outputs(fake_b, b))
    objective = total_generator_loss(l_adv, l_gs, l_id, l_margin, weights)

    state.opt_g.zero_grad()
    state.opt_s.zero_grad()
    _backward("L_G", step, objective.combined)
    state.opt_g.step()
    state.opt_s.step()
    for p in state.d:
        p.zero_grad()

    state.step = step
    return StepReport(
        step=step,
        l_d=l_d,
        l_g_adv=l_adv.item(),
        l_gs=l_gs.item(),
        l_s=objective.s_loss.item(),
        l_id=l_id.item(),
        l_margin=l_margin.item(),
        degenerate_pairs=transform.degenerate,
    )


def run_training(state: TrainState, corpus: Corpus, steps: Optional[int] = None,
                 on_checkpoint: Optional[Callable[[TrainState], None]] = None,
                 progress: bool = True) -> List[StepReport]:
    """Step until ``cfg.total_generator_steps`` (or ``steps`` more), checkpointing on the interval.

    The batch for step n is drawn from ``batch_rng(seed, n)``.
    """
    cfg = state.cfg
    end = cfg.total_generator_steps if steps is None else state.step + steps
    reports: List[StepReport] = []
    for _ in tqdm(range(state.step, end), desc="train", unit="step", disable=not progress):
        batch = sample_batch(corpus, cfg.batch_size, batch_rng(cfg.seed, state.step))
        report = train_step(state, batch)
        reports.append(report)
        if report.degenerate_pairs:
            log("train", f"step {report.step}: {report.degenerate_pairs} degenerate Siamese pairs excluded")
        if on_checkpoint is not None and state.step % cfg.checkpoint_interval == 0:
            on_checkpoint(state)
    if reports:
        last = reports[-1]
        log("train", f"step {last.step}: L_G_adv={last.l_g_adv:.4f} L_GS={last.l_gs:.4f} "
                     f"L_id={last.l_id:.4f} D updates={state.d_updates}")
    return reports
