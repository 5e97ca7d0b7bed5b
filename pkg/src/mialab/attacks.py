"""Black-box membership attacks and the advantage metric.

Bit conventions, used everywhere: decision 0 claims "member", 1 claims
"non-member"; truth 0 marks an actual member. TPR is the member-claim rate
on true members, FPR the member-claim rate on true non-members, and the
advantage is TPR - FPR.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Sequence

import numpy as np

from . import nn
from .dataio import Sample
from .errors import MialabError, ShadowPoolTooSmall
from .rngs import as_generator, subseed

MEMBER = 0
NONMEMBER = 1

DEFAULT_N_SHADOWS = 5
DEFAULT_ATTACK_HIDDEN = 64


def advantage(decisions, truth) -> tuple[float, float, float]:
    """(TPR, FPR, advantage), computed exactly in rationals then cast."""
    d = np.asarray(decisions, dtype=np.int64)
    t = np.asarray(truth, dtype=np.int64)
    if d.shape != t.shape:
        raise MialabError(f"decisions shape {d.shape} != truth shape {t.shape}")
    n_members = int(np.sum(t == MEMBER))
    n_nonmembers = int(np.sum(t == NONMEMBER))
    if n_members == 0 or n_nonmembers == 0:
        raise MialabError("truth must contain both members and non-members")
    tpr = Fraction(int(np.sum((t == MEMBER) & (d == MEMBER))), n_members)
    fpr = Fraction(int(np.sum((t == NONMEMBER) & (d == MEMBER))), n_nonmembers)
    return float(tpr), float(fpr), float(tpr - fpr)


@dataclass(frozen=True)
class AttackOutcome:
    decisions: np.ndarray
    truth: np.ndarray
    tpr: float
    fpr: float
    advantage: float

    @classmethod
    def from_decisions(cls, decisions, truth) -> "AttackOutcome":
        d = np.asarray(decisions, dtype=np.int64)
        t = np.asarray(truth, dtype=np.int64)
        tpr, fpr, adv = advantage(d, t)
        return cls(decisions=d, truth=t, tpr=tpr, fpr=fpr, advantage=adv)


def threshold_decisions(losses, tau: float) -> np.ndarray:
    """Claim member exactly when loss < tau (ties go to non-member)."""
    losses = np.asarray(losses, dtype=np.float64)
    return np.where(losses < tau, MEMBER, NONMEMBER)


def average_threshold(
    model: nn.MlpModel,
    train_losses: Sequence[float],
    samples: Sequence[Sample],
    truth,
) -> AttackOutcome:
    """Threshold attack using the mean training loss as the decision
    threshold."""
    if len(train_losses) == 0:
        raise MialabError("average_threshold needs at least one training loss")
    tau = float(np.mean(train_losses))
    losses = nn.loglosses(model, samples)
    return AttackOutcome.from_decisions(threshold_decisions(losses, tau), truth)


def optimal_threshold(
    member_losses, nonmember_losses
) -> tuple[float, AttackOutcome]:
    """Threshold attack with the advantage-maximizing threshold.

    Sweeps midpoints between consecutive distinct pooled losses plus both
    infinities; among maximizers the smallest threshold wins.
    """
    m = np.asarray(member_losses, dtype=np.float64)
    nm = np.asarray(nonmember_losses, dtype=np.float64)
    if m.size == 0 or nm.size == 0:
        raise MialabError("optimal_threshold needs losses on both sides")
    pooled = np.unique(np.concatenate([m, nm]))
    candidates = np.concatenate(
        [[-math.inf], (pooled[:-1] + pooled[1:]) / 2.0, [math.inf]]
    )
    m_sorted = np.sort(m)
    nm_sorted = np.sort(nm)
    tpr = np.searchsorted(m_sorted, candidates, side="left") / m.size
    fpr = np.searchsorted(nm_sorted, candidates, side="left") / nm.size
    adv = tpr - fpr
    best = int(np.argmax(adv))  # argmax returns the first (smallest) maximizer
    tau = float(candidates[best])
    losses = np.concatenate([m, nm])
    truth = np.concatenate([np.full(m.size, MEMBER), np.full(nm.size, NONMEMBER)])
    return tau, AttackOutcome.from_decisions(threshold_decisions(losses, tau), truth)


@dataclass(frozen=True)
class ShadowEnsemble:
    shadow_models: tuple[nn.MlpModel, ...]
    attack_models: dict
    fallback_model: nn.MlpModel
    n_classes: int


def _prob_samples(model: nn.MlpModel, samples: Sequence[Sample], membership: int):
    probs = nn.forward(model, np.stack([s.features for s in samples]))
    return [
        (probs[i], samples[i].label, membership) for i in range(len(samples))
    ]


def train_shadow_ensemble(
    shadow_pool: Sequence[Sample],
    layer_dims: Sequence[int],
    cfg: nn.TrainConfig,
    privacy=None,
    seed: int = 0,
    n_shadows: int = DEFAULT_N_SHADOWS,
    shadow_train_size: "int | None" = None,
    attack_hidden: int = DEFAULT_ATTACK_HIDDEN,
) -> ShadowEnsemble:
    """Train shadow models on in/out halves of the shadow pool, then one
    attack model per class (plus a pooled fallback) mapping the target's
    probability vector to a member/non-member decision.

    Shadow models use the target architecture and, by default, the same
    privacy setting as the target. Raises ShadowPoolTooSmall when the pool
    cannot supply disjoint in/out halves.
    """
    if n_shadows < 1:
        raise MialabError(f"need at least one shadow model, got {n_shadows}")
    pool = list(shadow_pool)
    size = shadow_train_size if shadow_train_size is not None else len(pool) // 2
    if size < 1 or len(pool) < 2 * size:
        raise ShadowPoolTooSmall(
            f"shadow attack skipped: pool of {len(pool)} cannot supply "
            f"{2 * size or 2} disjoint in/out samples"
        )
    n_classes = int(layer_dims[-1])
    shadows = []
    records = []
    for j in range(n_shadows):
        rng = as_generator(subseed(seed, 101, j))
        idx = rng.choice(len(pool), size=2 * size, replace=False)
        in_samples = [pool[int(i)] for i in idx[:size]]
        out_samples = [pool[int(i)] for i in idx[size:]]
        init = nn.init_model(layer_dims, subseed(seed, 102, j))
        shadow_cfg = nn.TrainConfig(
            epochs=cfg.epochs,
            batch_size=min(cfg.batch_size, size),
            learning_rate=cfg.learning_rate,
            l2_coefficient=cfg.l2_coefficient,
            adam_betas=cfg.adam_betas,
            adam_epsilon=cfg.adam_epsilon,
            seed=int(np.random.default_rng(subseed(seed, 103, j)).integers(2**31)),
        )
        shadow = nn.train(init, in_samples, shadow_cfg, privacy)
        shadows.append(shadow)
        records.extend(_prob_samples(shadow, in_samples, MEMBER))
        records.extend(_prob_samples(shadow, out_samples, NONMEMBER))

    def fit_attack_model(rows, fit_seed) -> nn.MlpModel:
        feats = [Sample(r[0], r[2]) for r in rows]
        init = nn.init_model((n_classes, attack_hidden, 2), fit_seed)
        attack_cfg = nn.TrainConfig(
            epochs=cfg.epochs,
            batch_size=min(cfg.batch_size, max(1, len(feats))),
            learning_rate=cfg.learning_rate,
            l2_coefficient=cfg.l2_coefficient,
            adam_betas=cfg.adam_betas,
            adam_epsilon=cfg.adam_epsilon,
            seed=int(np.random.default_rng(subseed(seed, 104)).integers(2**31)),
        )
        return nn.train(init, feats, attack_cfg, None)

    attack_models = {}
    for c in sorted({r[1] for r in records}):
        rows = [r for r in records if r[1] == c]
        if len({r[2] for r in rows}) == 2:
            attack_models[c] = fit_attack_model(rows, subseed(seed, 105, c))
    fallback = fit_attack_model(records, subseed(seed, 106))
    return ShadowEnsemble(
        shadow_models=tuple(shadows),
        attack_models=attack_models,
        fallback_model=fallback,
        n_classes=n_classes,
    )


def shadow_attack(
    ensemble: ShadowEnsemble,
    target_model: nn.MlpModel,
    samples: Sequence[Sample],
    truth,
) -> AttackOutcome:
    """Query the target's probability vector for each sample, route it to
    the attack model of the sample's class (or the pooled fallback), and
    claim member when the member score exceeds 0.5."""
    probs = nn.forward(target_model, np.stack([s.features for s in samples]))
    decisions = np.empty(len(samples), dtype=np.int64)
    labels = np.array([s.label for s in samples])
    for c in np.unique(labels):
        attack_model = ensemble.attack_models.get(int(c), ensemble.fallback_model)
        scores = nn.forward(attack_model, probs[labels == c])[:, MEMBER]
        decisions[labels == c] = np.where(scores > 0.5, MEMBER, NONMEMBER)
    return AttackOutcome.from_decisions(decisions, truth)


def strong_loss_attack(model: nn.MlpModel, z: Sample, z_prime: Sample, s_tilde) -> int:
    """Strong-adversary guess: the candidate with the lower loss is the one
    that was trained on (bit 0 means z)."""
    return MEMBER if nn.logloss(model, z) < nn.logloss(model, z_prime) else NONMEMBER


def average_threshold_decider(
    model: nn.MlpModel, members: Sequence[Sample]
) -> Callable[[Sample], int]:
    """Single-sample decision function for the membership games: member
    exactly when the sample's loss is below the mean training loss."""
    tau = float(nn.loglosses(model, members).mean())

    def decide(z: Sample) -> int:
        return MEMBER if nn.logloss(model, z) < tau else NONMEMBER

    return decide


def trace_rows(
    outcome: AttackOutcome,
    attack_name: str,
    losses=None,
    sample_ids: "Sequence[int] | None" = None,
) -> list[dict]:
    """Per-sample attack trace rows (sample_id, truth, loss, decision,
    attack_name) ready for CSV export."""
    n = len(outcome.decisions)
    ids = list(range(n)) if sample_ids is None else list(sample_ids)
    loss_list = [""] * n if losses is None else [float(x) for x in losses]
    return [
        {
            "sample_id": ids[i],
            "truth": int(outcome.truth[i]),
            "loss": loss_list[i],
            "decision": int(outcome.decisions[i]),
            "attack_name": attack_name,
        }
        for i in range(n)
    ]
