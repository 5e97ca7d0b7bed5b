"""Membership-experiment games and the batch advantage-estimation campaign.

Four single-draw games return one success bit each:

* exp_strong: the adversary knows all training samples but one and must
  tell which of two candidates completed the set.
* exp_iid: members and the challenge sample come from one pool.
* exp_mm: the training set comes from one hidden mixture component and the
  non-member challenge from a different component.
* exp_alt: like exp_iid, but both challenge candidates are drawn before
  the membership bit decides which one the attack sees.

batch_mm_campaign implements the batch methodology instead: train once per
privacy level, evaluate every attack on all members and non-members, then
re-partition the pooled samples (the IID counterfactual) and repeat, so
the gap between the "non-IID" and "IID" scenarios isolates the effect of
the data dependency. Repetitions use derived seeds and aggregate into
mean advantage with 95% Student-t confidence intervals.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy import stats

from . import attacks, dp, nn
from .dataio import Sample
from .errors import MialabError, ShadowPoolTooSmall, SplitError
from .rngs import as_generator, subseed
from .splits import BiasInfo, MixturePools, draw, iid_counterfactual

SCENARIO_DEPENDENT = "non-IID"
SCENARIO_IID = "IID"

KNOWN_ATTACKS = ("average_threshold", "optimal_threshold", "shadow")

# Trainer: (members, seed) -> model. AttackBuilder: (model, members) -> decide(z).
Trainer = Callable[[Sequence[Sample], object], nn.MlpModel]
AttackBuilder = Callable[[nn.MlpModel, Sequence[Sample]], Callable[[Sample], int]]


def _seed_int(ss: np.random.SeedSequence) -> int:
    return int(ss.generate_state(1)[0])


def exp_strong(attack, trainer: Trainer, s_tilde: Sequence[Sample],
               z: Sample, z_prime: Sample, seed) -> int:
    """One round of the strong-adversary game. The attack receives
    (model, z, z_prime, s_tilde) and outputs the bit it believes was used."""
    if z == z_prime:
        raise MialabError("z and z_prime must differ")
    rng = as_generator(subseed(seed, 11) if isinstance(seed, int) else seed)
    b = int(rng.integers(2))
    members = list(s_tilde) + [z if b == 0 else z_prime]
    model = trainer(members, rng)
    return int(attack(model, z, z_prime, list(s_tilde)) == b)


def exp_iid(attack_builder: AttackBuilder, trainer: Trainer, n: int,
            pool: Sequence[Sample], seed) -> int:
    """One round of the IID game over a finite pool (drawn without
    replacement)."""
    pool = list(pool)
    if len(pool) < n + 1:
        raise SplitError(f"pool of {len(pool)} cannot supply {n} members plus a challenge")
    rng = as_generator(subseed(seed, 12) if isinstance(seed, int) else seed)
    idx = rng.choice(len(pool), size=n, replace=False)
    members = [pool[int(i)] for i in idx]
    model = trainer(members, rng)
    b = int(rng.integers(2))
    if b == 0:
        z = members[int(rng.integers(n))]
    else:
        rest = [pool[i] for i in range(len(pool)) if i not in set(int(j) for j in idx)]
        z = rest[int(rng.integers(len(rest)))]
    decide = attack_builder(model, members)
    return int(decide(z) == b)


def exp_mm(attack_builder: AttackBuilder, trainer: Trainer, n: int,
           pools: MixturePools, seed) -> int:
    """One round of the mixture game: members from a uniformly chosen pool,
    the non-member challenge from a different uniformly chosen pool."""
    rng = as_generator(subseed(seed, 13) if isinstance(seed, int) else seed)
    k = int(rng.integers(pools.n_pools))
    pool = pools.pools[k]
    if len(pool) < n:
        raise SplitError(f"pool {k} has {len(pool)} samples, need {n}")
    idx = rng.choice(len(pool), size=n, replace=False)
    members = [pool[int(i)] for i in idx]
    model = trainer(members, rng)
    b = int(rng.integers(2))
    if b == 0:
        z = members[int(rng.integers(n))]
    else:
        others = [j for j in range(pools.n_pools) if j != k]
        k_prime = others[int(rng.integers(len(others)))]
        other_pool = pools.pools[k_prime]
        if not other_pool:
            raise SplitError(f"pool {k_prime} is empty")
        z = other_pool[int(rng.integers(len(other_pool)))]
    decide = attack_builder(model, members)
    return int(decide(z) == b)


def exp_alt(attack_builder: AttackBuilder, trainer: Trainer, n: int,
            pool: Sequence[Sample], seed) -> int:
    """One round of the alternative game: draw both the member candidate
    and the fresh candidate first, then flip the bit."""
    pool = list(pool)
    if len(pool) < n + 1:
        raise SplitError(f"pool of {len(pool)} cannot supply {n} members plus a challenge")
    rng = as_generator(subseed(seed, 14) if isinstance(seed, int) else seed)
    idx = rng.choice(len(pool), size=n, replace=False)
    members = [pool[int(i)] for i in idx]
    model = trainer(members, rng)
    z = members[int(rng.integers(n))]
    rest = [pool[i] for i in range(len(pool)) if i not in set(int(j) for j in idx)]
    z_prime = rest[int(rng.integers(len(rest)))]
    b = int(rng.integers(2))
    decide = attack_builder(model, members)
    return int(decide(z if b == 0 else z_prime) == b)


def two_proportion_z_test(successes_a: int, n_a: int,
                          successes_b: int, n_b: int) -> tuple[float, float]:
    """Two-sided two-proportion z-test; returns (z, p_value)."""
    if min(n_a, n_b) < 1:
        raise MialabError("both sample sizes must be positive")
    pa, pb = successes_a / n_a, successes_b / n_b
    pooled = (successes_a + successes_b) / (n_a + n_b)
    denom = math.sqrt(pooled * (1 - pooled) * (1 / n_a + 1 / n_b))
    if denom == 0.0:
        return 0.0, 1.0
    z = (pa - pb) / denom
    return z, math.erfc(abs(z) / math.sqrt(2))


@dataclass(frozen=True)
class ExperimentConfig:
    n_members: int
    n_nonmembers: int
    epsilon_grid: tuple[float, ...]
    train: nn.TrainConfig
    hidden_units: tuple[int, ...] = (256, 256)
    delta: float = 1e-5
    repetitions: int = 1
    attack_names: tuple[str, ...] = ("average_threshold", "optimal_threshold")
    clip_norm: float = 1.0
    seed: int = 0
    n_shadows: int = attacks.DEFAULT_N_SHADOWS
    shadow_privacy_mimic: bool = True
    n_classes: "int | None" = None
    split_spec: "Mapping | None" = None

    def __post_init__(self):
        if self.repetitions < 1:
            raise MialabError(f"repetitions must be >= 1, got {self.repetitions}")
        if not self.epsilon_grid:
            raise MialabError("epsilon grid is empty")
        if any(e <= 0 for e in self.epsilon_grid):
            raise MialabError("epsilon values must be positive (use inf for non-private)")
        if self.n_members < 1 or self.n_nonmembers < 1:
            raise MialabError("member and non-member counts must be >= 1")
        unknown = [a for a in self.attack_names if a not in KNOWN_ATTACKS]
        if unknown:
            raise MialabError(f"unknown attack(s) {unknown}; known: {list(KNOWN_ATTACKS)}")
        if not 0 < self.delta < 1:
            raise MialabError(f"delta must be in (0, 1), got {self.delta}")


@dataclass(frozen=True)
class CampaignRow:
    epsilon: float
    attack: str
    scenario: str
    repetition: int
    tpr: float
    fpr: float
    advantage: float
    member_acc: float
    nonmember_acc: float
    validation_acc: "float | None"
    sigma: float
    realized_epsilon: float


@dataclass(frozen=True)
class Aggregate:
    epsilon: float
    attack: str
    scenario: str
    mean_advantage: float
    ci_half_width: float  # NaN marks "not applicable" (single repetition)
    repetitions: int
    values: tuple[float, ...]


@dataclass(frozen=True)
class CampaignResult:
    rows: tuple[CampaignRow, ...]
    aggregates: tuple[Aggregate, ...]
    noise: dict
    notes: tuple[str, ...] = ()

    def aggregate(self, epsilon: float, attack: str, scenario: str) -> Aggregate:
        for agg in self.aggregates:
            same_eps = agg.epsilon == epsilon or (
                math.isinf(agg.epsilon) and math.isinf(epsilon)
            )
            if same_eps and agg.attack == attack and agg.scenario == scenario:
                return agg
        raise KeyError((epsilon, attack, scenario))


def noise_for_grid(cfg: ExperimentConfig) -> dict:
    """Per-epsilon (noise multiplier, accounted epsilon); computed once per
    campaign since the training-set size fixes the sampling rate."""
    q = nn.sampling_rate(cfg.n_members, cfg.train)
    steps = nn.training_steps(cfg.n_members, cfg.train)
    out = {}
    for eps in cfg.epsilon_grid:
        if math.isinf(eps):
            out[eps] = (0.0, math.inf)
        else:
            sigma = dp.calibrate_sigma(eps, cfg.delta, q, steps)
            out[eps] = (sigma, dp.account(q, sigma, steps, cfg.delta).epsilon)
    return out


def _privacy_for(cfg: ExperimentConfig, eps: float, sigma: float) -> "dp.PrivacyParams | None":
    if math.isinf(eps):
        return None
    return dp.PrivacyParams(
        epsilon=eps,
        delta=cfg.delta,
        clip_norm=cfg.clip_norm,
        noise_multiplier=sigma,
        sampling_rate=nn.sampling_rate(cfg.n_members, cfg.train),
        steps=nn.training_steps(cfg.n_members, cfg.train),
    )


def biased_validation(bias: BiasInfo, size: int, seed) -> "list[Sample] | None":
    """Validation set with the member pool's attribute bias, drawn from the
    leftover reserves; None when the reserves cannot supply it."""
    k_with = math.ceil(bias.p * size)
    k_without = size - k_with
    if len(bias.reserve_with) < k_with or len(bias.reserve_without) < k_without:
        return None
    rng = as_generator(seed)
    wi = rng.choice(len(bias.reserve_with), size=k_with, replace=False) if k_with else []
    wo = (
        rng.choice(len(bias.reserve_without), size=k_without, replace=False)
        if k_without
        else []
    )
    return [bias.reserve_with[int(i)] for i in wi] + [
        bias.reserve_without[int(i)] for i in wo
    ]


def _infer_n_classes(pools: MixturePools) -> int:
    return max(s.label for pool in pools.pools for s in pool) + 1


def _run_repetition(cfg: ExperimentConfig, pools: MixturePools,
                    pool_builder, noise: dict, rep: int, trace_sink=None):
    rows: list[CampaignRow] = []
    notes: list[str] = []
    if pool_builder is not None:
        pools = pool_builder(subseed(cfg.seed, 1, rep))
    n, m = cfg.n_members, cfg.n_nonmembers
    base = draw(pools, n, m, subseed(cfg.seed, 2, rep))
    counterfactual = iid_counterfactual(base, subseed(cfg.seed, 3, rep))
    val_set = None
    if pools.bias is not None:
        val_set = biased_validation(pools.bias, math.ceil(n / 4), subseed(cfg.seed, 4, rep))
    n_classes = cfg.n_classes if cfg.n_classes is not None else _infer_n_classes(pools)
    width = base.members[0].features.shape[0]
    dims = (width, *cfg.hidden_units, n_classes)
    for si, (scenario, d) in enumerate(
        ((SCENARIO_DEPENDENT, base), (SCENARIO_IID, counterfactual))
    ):
        truth = np.concatenate(
            [
                np.full(len(d.members), attacks.MEMBER),
                np.full(len(d.nonmembers), attacks.NONMEMBER),
            ]
        )
        eval_samples = list(d.members) + list(d.nonmembers)
        for ei, eps in enumerate(cfg.epsilon_grid):
            sigma, realized = noise[eps]
            privacy = _privacy_for(cfg, eps, sigma)
            tcfg = replace(cfg.train, seed=_seed_int(subseed(cfg.seed, 5, rep, si, ei)))
            init = nn.init_model(dims, subseed(cfg.seed, 6, rep, si, ei))
            model = nn.train(init, d.members, tcfg, privacy)
            member_losses = nn.loglosses(model, d.members)
            nonmember_losses = nn.loglosses(model, d.nonmembers)
            member_acc = nn.accuracy(model, d.members)
            nonmember_acc = nn.accuracy(model, d.nonmembers)
            validation_acc = None
            if scenario == SCENARIO_DEPENDENT and val_set is not None:
                validation_acc = nn.accuracy(model, val_set)

            eval_losses = np.concatenate([member_losses, nonmember_losses])

            def emit(name: str, outcome: attacks.AttackOutcome):
                rows.append(
                    CampaignRow(
                        epsilon=eps,
                        attack=name,
                        scenario=scenario,
                        repetition=rep,
                        tpr=outcome.tpr,
                        fpr=outcome.fpr,
                        advantage=outcome.advantage,
                        member_acc=member_acc,
                        nonmember_acc=nonmember_acc,
                        validation_acc=validation_acc,
                        sigma=sigma,
                        realized_epsilon=realized,
                    )
                )
                if trace_sink is not None:
                    trace_sink(eps, name, scenario, rep, outcome, eval_losses)

            for name in cfg.attack_names:
                if name == "average_threshold":
                    emit(name, attacks.average_threshold(
                        model, member_losses, eval_samples, truth))
                elif name == "optimal_threshold":
                    _, outcome = attacks.optimal_threshold(member_losses, nonmember_losses)
                    emit(name, outcome)
                elif name == "shadow":
                    try:
                        ensemble = attacks.train_shadow_ensemble(
                            d.shadow_pool,
                            dims,
                            tcfg,
                            privacy if cfg.shadow_privacy_mimic else None,
                            seed=_seed_int(subseed(cfg.seed, 7, rep, si, ei)),
                            n_shadows=cfg.n_shadows,
                            shadow_train_size=n,
                        )
                        emit(name, attacks.shadow_attack(ensemble, model, eval_samples, truth))
                    except ShadowPoolTooSmall as exc:
                        notes.append(
                            f"rep {rep} {scenario} eps={eps}: {exc}"
                        )
    return rows, notes


def _aggregate(rows: Sequence[CampaignRow], repetitions: int) -> tuple[Aggregate, ...]:
    keys = []
    for row in rows:
        key = (row.epsilon, row.attack, row.scenario)
        if key not in keys:
            keys.append(key)
    aggs = []
    for eps, attack, scenario in keys:
        values = tuple(
            r.advantage
            for r in rows
            if r.attack == attack and r.scenario == scenario and r.epsilon == eps
        )
        mean = float(np.mean(values))
        if len(values) > 1:
            sd = float(np.std(values, ddof=1))
            t_crit = float(stats.t.ppf(0.975, len(values) - 1))
            hw = t_crit * sd / math.sqrt(len(values))
        else:
            hw = math.nan
        aggs.append(
            Aggregate(
                epsilon=eps,
                attack=attack,
                scenario=scenario,
                mean_advantage=mean,
                ci_half_width=hw,
                repetitions=len(values),
                values=values,
            )
        )
    return tuple(aggs)


def batch_mm_campaign(
    cfg: ExperimentConfig,
    pools: "MixturePools | None" = None,
    pool_builder: "Callable | None" = None,
    jobs: int = 1,
    trace_sink=None,
) -> CampaignResult:
    """Run the full advantage-estimation campaign.

    Pass fixed pools (cluster/source splits build them once) or a
    pool_builder callable taking a seed (attribute-bias pools are
    regenerated per repetition). Repetitions may run in parallel; results
    are identical regardless of jobs.
    """
    if (pools is None) == (pool_builder is None):
        raise MialabError("pass exactly one of pools or pool_builder")
    if cfg.train.batch_size > cfg.n_members:
        raise MialabError(
            f"batch_size {cfg.train.batch_size} exceeds n_members {cfg.n_members}"
        )
    noise = noise_for_grid(cfg)
    all_rows: list[CampaignRow] = []
    all_notes: list[str] = []
    if jobs > 1:
        if trace_sink is not None:
            raise MialabError("per-sample traces require jobs=1")
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = [
                pool.submit(_run_repetition, cfg, pools, pool_builder, noise, rep)
                for rep in range(cfg.repetitions)
            ]
            results = [f.result() for f in futures]
    else:
        results = [
            _run_repetition(cfg, pools, pool_builder, noise, rep, trace_sink)
            for rep in range(cfg.repetitions)
        ]
    for rows, notes in results:
        all_rows.extend(rows)
        all_notes.extend(notes)
    return CampaignResult(
        rows=tuple(all_rows),
        aggregates=_aggregate(all_rows, cfg.repetitions),
        noise=noise,
        notes=tuple(all_notes),
    )
