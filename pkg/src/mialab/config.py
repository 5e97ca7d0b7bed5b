"""JSON experiment configs: fail-closed validation, default resolution,
stable digests, and materialization into datasets and pools.

Unknown keys are rejected with the offending field path so a typo in an
epsilon grid or attack list cannot silently change an experiment.
"""

from __future__ import annotations

import functools
import hashlib
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

from . import experiments, nn
from .dataio import Dataset, Schema, load_csv, preprocess
from .errors import ConfigError
from .splits import MixturePools, attribute_bias_pools, cluster_split, source_split
from .synthetic import GaussianComponent, halfspace_label, mixture_dataset, synthetic_mixture

SCHEMA_VERSION = 1

EXPERIMENT_KINDS = ("batch_mm", "iid", "mm", "alt", "strong")
GAME_KINDS = ("iid", "mm", "alt", "strong")
SPLIT_KINDS = ("cluster", "attribute_bias", "source", "mixture")

DEFAULT_EPSILON_GRID = (0.01, 0.1, 1.0, 10.0, 100.0, math.inf)

PROFILES = {
    "paper": {"hidden_units": (256, 256), "epochs": 100},
    "desk": {"hidden_units": (32, 32), "epochs": 30},
}

_TOP_KEYS = {
    "schema_version", "name", "experiment", "n_members", "n_nonmembers",
    "epsilon_grid", "delta", "repetitions", "seed", "attacks", "profile",
    "train", "privacy", "data", "split", "emit_traces",
}
_TRAIN_KEYS = {
    "hidden_units", "epochs", "batch_size", "learning_rate", "l2",
    "adam_betas", "adam_epsilon",
}
_PRIVACY_KEYS = {"clip_norm"}
_DATA_CSV_KEYS = {"kind", "path", "schema", "preprocess_seed"}
_DATA_SYNTH_KEYS = {"kind", "components", "n_per_component", "label_rule"}
_COMPONENT_KEYS = {"mean", "cov", "label"}
_LABEL_RULE_KEYS = {"kind", "weights", "bias"}
_SPLIT_KEYS = {
    "cluster": {"kind", "k", "k_member"},
    "attribute_bias": {"kind", "attribute", "value", "p"},
    "source": {"kind", "member_value", "k_member"},
    "mixture": {"kind", "k_member"},
}


def _check_keys(obj: dict, allowed: set, where: str) -> None:
    if not isinstance(obj, dict):
        raise ConfigError(where, f"expected an object, got {type(obj).__name__}")
    unknown = sorted(set(obj) - allowed)
    if unknown:
        raise ConfigError(where, f"unknown key(s) {unknown}; allowed: {sorted(allowed)}")


def _need(obj: dict, key: str, where: str):
    if key not in obj:
        raise ConfigError(f"{where}.{key}" if where else key, "required key is missing")
    return obj[key]


def _as_int(value, field: str, minimum=None) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(field, f"expected an integer, got {value!r}")
    if minimum is not None and value < minimum:
        raise ConfigError(field, f"must be >= {minimum}, got {value}")
    return value


def _as_number(value, field: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(field, f"expected a number, got {value!r}")
    return float(value)


def parse_epsilon(value, field: str) -> float:
    if isinstance(value, str):
        if value.lower() in ("inf", "infinity"):
            return math.inf
        raise ConfigError(field, f"expected a positive number or 'inf', got {value!r}")
    eps = _as_number(value, field)
    if not eps > 0:
        raise ConfigError(field, f"epsilon must be > 0, got {eps}")
    return eps


def epsilon_json(eps: float):
    return "inf" if math.isinf(eps) else eps


@dataclass(frozen=True)
class ResolvedConfig:
    name: str
    experiment: str
    cfg: experiments.ExperimentConfig
    data_spec: dict
    split_spec: "dict | None"
    emit_traces: bool
    canonical: dict

    @property
    def digest(self) -> str:
        blob = json.dumps(self.canonical, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def _resolve_train(doc: dict, profile: "str | None") -> tuple[nn.TrainConfig, tuple, dict]:
    block = doc.get("train", {})
    _check_keys(block, _TRAIN_KEYS, "train")
    prof = PROFILES.get(profile, {})
    hidden = block.get("hidden_units", prof.get("hidden_units", (256, 256)))
    if not (
        isinstance(hidden, (list, tuple))
        and hidden
        and all(isinstance(h, int) and not isinstance(h, bool) and h >= 1 for h in hidden)
    ):
        raise ConfigError("train.hidden_units", f"expected a list of positive ints, got {hidden!r}")
    epochs = _as_int(block.get("epochs", prof.get("epochs", 100)), "train.epochs", 1)
    batch_size = _as_int(block.get("batch_size", 200), "train.batch_size", 1)
    lr = _as_number(block.get("learning_rate", 1e-2), "train.learning_rate")
    l2 = _as_number(block.get("l2", 1e-5), "train.l2")
    betas = block.get("adam_betas", (0.9, 0.999))
    if not (isinstance(betas, (list, tuple)) and len(betas) == 2):
        raise ConfigError("train.adam_betas", f"expected two numbers, got {betas!r}")
    adam_eps = _as_number(block.get("adam_epsilon", 1e-8), "train.adam_epsilon")
    try:
        tc = nn.TrainConfig(
            epochs=epochs,
            batch_size=batch_size,
            learning_rate=lr,
            l2_coefficient=l2,
            adam_betas=(float(betas[0]), float(betas[1])),
            adam_epsilon=adam_eps,
        )
    except Exception as exc:
        raise ConfigError("train", str(exc)) from exc
    canonical = {
        "hidden_units": list(hidden),
        "epochs": epochs,
        "batch_size": batch_size,
        "learning_rate": lr,
        "l2": l2,
        "adam_betas": [float(betas[0]), float(betas[1])],
        "adam_epsilon": adam_eps,
    }
    return tc, tuple(int(h) for h in hidden), canonical


def _validate_data(doc: dict) -> dict:
    data = _need(doc, "data", "")
    if not isinstance(data, dict) or "kind" not in data:
        raise ConfigError("data.kind", "required key is missing")
    kind = data["kind"]
    if kind == "csv":
        _check_keys(data, _DATA_CSV_KEYS, "data")
        _need(data, "path", "data")
        _need(data, "schema", "data")
        if "preprocess_seed" in data:
            _as_int(data["preprocess_seed"], "data.preprocess_seed", 0)
    elif kind == "synthetic_mixture":
        _check_keys(data, _DATA_SYNTH_KEYS, "data")
        comps = _need(data, "components", "data")
        if not isinstance(comps, list) or not comps:
            raise ConfigError("data.components", "expected a non-empty list")
        for i, comp in enumerate(comps):
            _check_keys(comp, _COMPONENT_KEYS, f"data.components[{i}]")
            mean = _need(comp, "mean", f"data.components[{i}]")
            if not isinstance(mean, list) or not mean:
                raise ConfigError(f"data.components[{i}].mean", "expected a non-empty list")
            if "label" in comp:
                _as_int(comp["label"], f"data.components[{i}].label", 0)
            try:
                GaussianComponent(
                    mean=tuple(float(v) for v in mean),
                    cov=comp.get("cov", 1.0),
                    label=comp.get("label"),
                ).covariance()
            except Exception as exc:
                raise ConfigError(f"data.components[{i}]", str(exc)) from exc
        _as_int(_need(data, "n_per_component", "data"), "data.n_per_component", 1)
        if "label_rule" in data:
            rule = data["label_rule"]
            _check_keys(rule, _LABEL_RULE_KEYS, "data.label_rule")
            if rule.get("kind") != "halfspace":
                raise ConfigError("data.label_rule.kind", f"unknown rule {rule.get('kind')!r}")
            _need(rule, "weights", "data.label_rule")
        else:
            missing = [i for i, c in enumerate(comps) if "label" not in c]
            if missing:
                raise ConfigError(
                    f"data.components[{missing[0]}].label",
                    "required when no label_rule is given",
                )
    else:
        raise ConfigError("data.kind", f"unknown kind {kind!r}")
    return data


def _validate_split(doc: dict) -> "dict | None":
    split = doc.get("split")
    if split is None:
        return None
    if not isinstance(split, dict) or "kind" not in split:
        raise ConfigError("split.kind", "required key is missing")
    kind = split["kind"]
    if kind not in SPLIT_KINDS:
        raise ConfigError("split.kind", f"unknown kind {kind!r}; allowed: {list(SPLIT_KINDS)}")
    _check_keys(split, _SPLIT_KEYS[kind], "split")
    if kind == "attribute_bias":
        _need(split, "value", "split")
        p = _as_number(_need(split, "p", "split"), "split.p")
        if not 0 <= p <= 1:
            raise ConfigError("split.p", f"must be in [0, 1], got {p}")
    elif kind == "source":
        _need(split, "member_value", "split")
    elif kind == "cluster" and "k" in split:
        _as_int(split["k"], "split.k", 2)
    if "k_member" in split:
        _as_int(split["k_member"], "split.k_member", 0)
    return split


def resolve(
    doc: dict,
    profile_override: "str | None" = None,
    seed_override: "int | None" = None,
) -> ResolvedConfig:
    """Validate a config document and apply defaults and overrides."""
    _check_keys(doc, _TOP_KEYS, "config")
    version = _need(doc, "schema_version", "")
    if version != SCHEMA_VERSION:
        raise ConfigError("schema_version", f"expected {SCHEMA_VERSION}, got {version!r}")
    name = doc.get("name", "")
    if not isinstance(name, str):
        raise ConfigError("name", f"expected a string, got {name!r}")
    experiment = doc.get("experiment", "batch_mm")
    if experiment not in EXPERIMENT_KINDS:
        raise ConfigError(
            "experiment", f"unknown kind {experiment!r}; allowed: {list(EXPERIMENT_KINDS)}"
        )
    profile = profile_override if profile_override is not None else doc.get("profile")
    if profile is not None and profile not in PROFILES:
        raise ConfigError("profile", f"unknown profile {profile!r}; allowed: {list(PROFILES)}")
    n_members = _as_int(_need(doc, "n_members", ""), "n_members", 1)
    n_nonmembers = _as_int(doc.get("n_nonmembers", n_members), "n_nonmembers", 1)
    grid_raw = doc.get("epsilon_grid", [epsilon_json(e) for e in DEFAULT_EPSILON_GRID])
    if not isinstance(grid_raw, list) or not grid_raw:
        raise ConfigError("epsilon_grid", "expected a non-empty list")
    grid = tuple(parse_epsilon(v, f"epsilon_grid[{i}]") for i, v in enumerate(grid_raw))
    delta = _as_number(doc.get("delta", 1e-5), "delta")
    if not 0 < delta < 1:
        raise ConfigError("delta", f"must be in (0, 1), got {delta}")
    repetitions = _as_int(doc.get("repetitions", 1), "repetitions", 1)
    seed = seed_override if seed_override is not None else doc.get("seed", 0)
    seed = _as_int(seed, "seed", 0)
    attack_names = doc.get("attacks", ["average_threshold", "optimal_threshold"])
    if not isinstance(attack_names, list) or not attack_names:
        raise ConfigError("attacks", "expected a non-empty list")
    for i, a in enumerate(attack_names):
        if a not in experiments.KNOWN_ATTACKS:
            raise ConfigError(
                f"attacks[{i}]",
                f"unknown attack {a!r}; allowed: {list(experiments.KNOWN_ATTACKS)}",
            )
    privacy_block = doc.get("privacy", {})
    _check_keys(privacy_block, _PRIVACY_KEYS, "privacy")
    clip_norm = _as_number(privacy_block.get("clip_norm", 1.0), "privacy.clip_norm")
    if not clip_norm > 0:
        raise ConfigError("privacy.clip_norm", f"must be > 0, got {clip_norm}")
    train_cfg, hidden_units, train_canonical = _resolve_train(doc, profile)
    data_spec = _validate_data(doc)
    split_spec = _validate_split(doc)
    if experiment in ("batch_mm", "mm", "strong"):
        if split_spec is None and data_spec["kind"] != "synthetic_mixture":
            raise ConfigError("split", f"experiment {experiment!r} needs a split block")
        if split_spec is None:
            split_spec = {"kind": "mixture"}
    if experiment in GAME_KINDS:
        if len(grid) != 1:
            raise ConfigError("epsilon_grid", f"game experiment {experiment!r} needs exactly one epsilon")
        if list(attack_names) != ["average_threshold"]:
            raise ConfigError(
                "attacks", f"game experiment {experiment!r} supports only ['average_threshold']"
            )
        if experiment in ("mm", "strong") and split_spec is not None and (
            split_spec["kind"] == "attribute_bias"
        ):
            raise ConfigError(
                "split.kind",
                f"game experiment {experiment!r} needs fixed pools "
                "(cluster, source, or mixture)",
            )
    emit_traces = doc.get("emit_traces", False)
    if not isinstance(emit_traces, bool):
        raise ConfigError("emit_traces", f"expected true/false, got {emit_traces!r}")
    if experiment == "batch_mm" and train_cfg.batch_size > n_members:
        raise ConfigError(
            "train.batch_size",
            f"{train_cfg.batch_size} exceeds n_members {n_members}",
        )
    cfg = experiments.ExperimentConfig(
        n_members=n_members,
        n_nonmembers=n_nonmembers,
        epsilon_grid=grid,
        train=train_cfg,
        hidden_units=hidden_units,
        delta=delta,
        repetitions=repetitions,
        attack_names=tuple(attack_names),
        clip_norm=clip_norm,
        seed=seed,
        split_spec=split_spec,
    )
    canonical = {
        "schema_version": SCHEMA_VERSION,
        "experiment": experiment,
        "n_members": n_members,
        "n_nonmembers": n_nonmembers,
        "epsilon_grid": [epsilon_json(e) for e in grid],
        "delta": delta,
        "repetitions": repetitions,
        "seed": seed,
        "attacks": list(attack_names),
        "privacy": {"clip_norm": clip_norm},
        "train": train_canonical,
        "data": data_spec,
        "split": split_spec,
        "emit_traces": emit_traces,
    }
    return ResolvedConfig(
        name=name,
        experiment=experiment,
        cfg=cfg,
        data_spec=data_spec,
        split_spec=split_spec,
        emit_traces=emit_traces,
        canonical=canonical,
    )


def load_config(path: "str | Path") -> dict:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError("(file)", f"cannot read config: {exc}") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError("(file)", f"invalid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError("(file)", "top-level JSON value must be an object")
    return doc


def _components_from_spec(data_spec: dict):
    components = [
        GaussianComponent(
            mean=tuple(float(v) for v in comp["mean"]),
            cov=comp.get("cov", 1.0),
            label=comp.get("label"),
        )
        for comp in data_spec["components"]
    ]
    rule = None
    if "label_rule" in data_spec:
        spec = data_spec["label_rule"]
        rule = halfspace_label(spec["weights"], spec.get("bias", 0.0))
    return components, rule


def _bias_builder(dataset: Dataset, value: str, p: float, n: int, seed) -> MixturePools:
    return attribute_bias_pools(dataset, value, p, n, seed)


@dataclass(frozen=True)
class Materialized:
    dataset: "Dataset | None"
    pools: "MixturePools | None"
    pool_builder: "Callable | None"
    union_pool: "tuple | None"


def materialize(resolved: ResolvedConfig) -> Materialized:
    """Produce the dataset and pools (or pool builder) a config describes."""
    cfg = resolved.cfg
    data_spec = resolved.data_spec
    dataset = None
    base_pools = None
    if data_spec["kind"] == "csv":
        schema = Schema.from_json_file(data_spec["schema"])
        raw = load_csv(data_spec["path"], schema)
        dataset = preprocess(
            raw, schema, data_spec.get("preprocess_seed", 0), provenance=str(data_spec["path"])
        )
    else:
        components, rule = _components_from_spec(data_spec)
        n_per = data_spec["n_per_component"]
        if resolved.split_spec is not None and resolved.split_spec["kind"] == "mixture":
            base_pools = synthetic_mixture(components, n_per, cfg.seed, rule)
        else:
            dataset = mixture_dataset(components, n_per, cfg.seed, rule)
    split_spec = resolved.split_spec
    pools = None
    pool_builder = None
    if split_spec is not None:
        kind = split_spec["kind"]
        if kind == "mixture":
            if base_pools is None:
                raise ConfigError("split.kind", "'mixture' needs synthetic_mixture data")
            pools = base_pools
        elif kind == "cluster":
            pools = cluster_split(dataset, cfg.seed, k=split_spec.get("k", 2))
        elif kind == "source":
            pools = source_split(dataset, split_spec["member_value"])
        elif kind == "attribute_bias":
            if dataset is None:
                raise ConfigError("split.kind", "'attribute_bias' needs a dataset")
            declared = split_spec.get("attribute")
            actual = dataset.schema.split_attribute_column
            if actual is None:
                raise ConfigError("split.kind", "schema has no split-attribute column")
            if declared is not None and declared != actual.name:
                raise ConfigError(
                    "split.attribute",
                    f"schema's split-attribute column is {actual.name!r}, not {declared!r}",
                )
            pool_builder = functools.partial(
                _bias_builder,
                dataset,
                split_spec["value"],
                float(split_spec["p"]),
                cfg.n_members,
            )
        if pools is not None and "k_member" in split_spec:
            k_member = split_spec["k_member"]
            if k_member >= pools.n_pools:
                raise ConfigError("split.k_member", f"only {pools.n_pools} pools exist")
            pools = pools.with_member(k_member)
    if dataset is not None:
        union = tuple(dataset.samples)
    elif base_pools is not None:
        union = tuple(base_pools.flatten())
    else:
        union = None
    return Materialized(
        dataset=dataset, pools=pools, pool_builder=pool_builder, union_pool=union
    )
