"""Standard analysis variants built from one config: EX (full exchangeability),
EXNEX (robust mixture for the new study), STRAT (new study alone), and the
predictive-prior derivation from historical studies.

The analysis config is a JSON document:

    {
      "grid":      {"boundaries": [...], "unit": "years"},
      "new_study": "10",
      "times":     [1, 2, 3, 4],
      "priors":    { ... PriorConfig fields except p_exch ... },
      "exnex":     {"weight": 0.5, "nex_means": [...], "nex_sds": 1.0},
      "strat":     {"mu_mean": [0, 10], "mu_mode": "ndlm", "mu_priors": [...]}
    }

Variant rules: EX pins every exchangeability weight to 1; EXNEX keeps weight 1
for every study except the new one, which gets the configured mixture weight
and NEX priors; STRAT drops all other studies and swaps in the stand-alone
prior overrides (by default only a vague level prior).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .data import Dataset, grid_from_json, grid_to_json
from .mcmc import PosteriorSample, SamplerConfig, run
from .model import MacModel, PriorConfig
from .summaries import (
    SummaryTable,
    map_prior_from_sample,
    survival_summary,
)
from .survival import IntervalGrid

__all__ = ["AnalysisConfig", "VARIANTS", "build_model", "analyze", "derive_map_prior"]

VARIANTS = ("EX", "EXNEX", "STRAT")


@dataclass(frozen=True)
class AnalysisConfig:
    grid: IntervalGrid
    priors: PriorConfig
    new_study: str | None = None
    times: tuple[float, ...] = ()
    exnex_weight: float = 0.5
    nex_means: object = 0.0
    nex_sds: object = 1.0
    strat_overrides: dict = field(default_factory=dict)

    @classmethod
    def from_json_dict(cls, d: dict) -> "AnalysisConfig":
        known = {"grid", "new_study", "times", "priors", "exnex", "strat"}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown analysis config field(s): {sorted(unknown)}")
        if "grid" not in d:
            raise ValueError('analysis config needs a "grid" field')
        grid = grid_from_json(d["grid"])
        priors = PriorConfig.from_json_dict(d.get("priors", {}))
        exnex = d.get("exnex", {})
        strat = dict(d.get("strat", {}))
        return cls(
            grid=grid,
            priors=priors,
            new_study=d.get("new_study"),
            times=tuple(d.get("times", ())),
            exnex_weight=float(exnex.get("weight", 0.5)),
            nex_means=exnex.get("nex_means", 0.0),
            nex_sds=exnex.get("nex_sds", 1.0),
            strat_overrides=strat,
        )

    @classmethod
    def from_file(cls, path: str | Path) -> "AnalysisConfig":
        with Path(path).open() as fh:
            return cls.from_json_dict(json.load(fh))

    def to_json_dict(self) -> dict:
        d = {
            "grid": grid_to_json(self.grid),
            "priors": self.priors.to_json_dict(),
            "exnex": {
                "weight": self.exnex_weight,
                "nex_means": _plain(self.nex_means),
                "nex_sds": _plain(self.nex_sds),
            },
        }
        if self.new_study is not None:
            d["new_study"] = self.new_study
        if self.times:
            d["times"] = list(self.times)
        if self.strat_overrides:
            d["strat"] = self.strat_overrides
        return d


def _plain(x):
    return x.tolist() if isinstance(x, np.ndarray) else x


def _nex_matrix(values, J: int, K: int, name: str) -> np.ndarray:
    """Broadcast NEX settings to all studies; they are inert wherever the
    exchangeability weight is pinned to 1."""
    arr = np.asarray(values, dtype=float)
    if arr.ndim == 0:
        return np.full((J, K), float(arr))
    if arr.shape == (K,):
        return np.tile(arr, (J, 1))
    if arr.shape == (J, K):
        return arr.copy()
    raise ValueError(f"{name}: expected a scalar, {K} values, or a {J}x{K} matrix")


def build_model(dataset: Dataset, config: AnalysisConfig, variant: str) -> MacModel:
    """Bind one analysis variant to a dataset."""
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}; expected one of {VARIANTS}")
    if dataset.grid.boundaries != config.grid.boundaries:
        raise ValueError("dataset grid does not match the analysis config grid")
    base = config.priors.to_json_dict()
    if variant == "EX":
        base["p_exch"] = 1.0
        return MacModel(dataset, PriorConfig.from_json_dict(base))
    if variant == "EXNEX":
        if config.new_study is None:
            raise ValueError("EXNEX analysis needs new_study in the config")
        if not 0.0 < config.exnex_weight < 1.0:
            raise ValueError("EXNEX weight must lie strictly between 0 and 1")
        J, K = dataset.n_studies, dataset.grid.n_intervals
        new_idx = dataset.study_index(config.new_study)
        p = np.ones((J, K))
        p[new_idx, :] = config.exnex_weight
        base["p_exch"] = p.tolist()
        base["nex_means"] = _nex_matrix(config.nex_means, J, K, "nex_means").tolist()
        base["nex_sds"] = _nex_matrix(config.nex_sds, J, K, "nex_sds").tolist()
        return MacModel(dataset, PriorConfig.from_json_dict(base))
    # STRAT: the new study alone, stand-alone priors, no borrowing machinery
    if config.new_study is None:
        raise ValueError("STRAT analysis needs new_study in the config")
    alone = dataset.subset([config.new_study])
    base.update({"mu_mean": [0.0, 10.0], **config.strat_overrides})
    base["p_exch"] = 1.0
    base["random_effects"] = False
    return MacModel(alone, PriorConfig.from_json_dict(base))


def analyze(
    dataset: Dataset,
    config: AnalysisConfig,
    variant: str,
    sampler: SamplerConfig,
) -> tuple[PosteriorSample, SummaryTable]:
    """Fit one variant and summarize the new study's survival curve."""
    if config.new_study is None:
        raise ValueError("analysis needs new_study in the config")
    model = build_model(dataset, config, variant)
    sample = run(model, sampler)
    study_idx = model.dataset.study_index(config.new_study)
    theta = sample.theta_matrix(study_idx)
    times = config.times or (1.0, 2.0, 3.0, 4.0)
    return sample, survival_summary(theta, config.grid, times)


def derive_map_prior(
    historical: Dataset,
    config: AnalysisConfig,
    sampler: SamplerConfig,
    predictive_seed: int = 0,
) -> tuple[PosteriorSample, np.ndarray, SummaryTable]:
    """Fit the exchangeable model on historical studies and return predictive
    log-hazard draws for a new study plus their survival summary."""
    model = build_model(historical, config, "EX")
    sample = run(model, sampler)
    theta_star = map_prior_from_sample(sample, seed=predictive_seed)
    times = config.times or (1.0, 2.0, 3.0, 4.0)
    return sample, theta_star, survival_summary(theta_star, config.grid, times)
