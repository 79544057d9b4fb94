"""Toy user-item graphs with known cluster structure and their structural checks."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import geometry as geo
from .data import InteractionDataset
from .errors import ConfigError
from .optimizer import InitConfig, RsgdConfig
from .recommender import ModelConfig, TrainedModel, train

SCENARIOS = ("sim1", "sim2", "sim3")
# item purchased by every user in sim3
SHARED_ITEM = "7"

# 2-D symmetric hyperboloid BPR: lr 1, per-epoch decay 0.02, init width 0.01
SIM_LEARNING_RATE = 1.0
SIM_LR_DECAY = 0.02
SIM_INIT_WIDTH = 0.01
SIM_EPOCHS = 200
SIM_LAMBDA = 0.1


@dataclass(frozen=True)
class Scenario:
    name: str
    dataset: InteractionDataset
    # cluster index per user and per item (-1 for the shared item)
    user_groups: np.ndarray
    item_groups: np.ndarray


@dataclass(frozen=True)
class SimulationReport:
    scenario: str
    seed: int
    max_intra: float
    min_inter: float
    shared_radius: float
    min_group_radius: float
    separated: bool
    shared_central: bool | None

    @property
    def passed(self) -> bool:
        return self.separated and self.shared_central is not False

    def lines(self) -> list[str]:
        out = [f"scenario={self.scenario} seed={self.seed}",
               f"max_intra_distance={self.max_intra:.6f}",
               f"min_inter_distance={self.min_inter:.6f}",
               f"separation={'pass' if self.separated else 'fail'}"]
        if self.shared_central is not None:
            out += [f"item{SHARED_ITEM}_poincare_radius={self.shared_radius:.6f}",
                    f"min_other_item_radius={self.min_group_radius:.6f}",
                    f"item{SHARED_ITEM}_central={'pass' if self.shared_central else 'fail'}"]
        out.append(f"result={'pass' if self.passed else 'fail'}")
        return out


def build_scenario(name: str) -> Scenario:
    """Users A,B buy items 1,2 and C,D buy 3,4; sim2 adds E,F with 5,6; sim3 adds item 7 for all."""
    if name not in SCENARIOS:
        raise ConfigError(f"scenario must be one of {SCENARIOS}")
    n_groups = 2 if name == "sim1" else 3
    users, histories, user_groups = [], [], []
    for g in range(n_groups):
        items = [2 * g, 2 * g + 1]
        if name == "sim3":
            items.append(2 * n_groups)
        for u in range(2):
            users.append("ABCDEF"[2 * g + u])
            histories.append(np.array(items, dtype=np.int64))
            user_groups.append(g)
    n_items = 2 * n_groups + (name == "sim3")
    item_ids = [str(i + 1) for i in range(n_items)]
    item_groups = np.array([i // 2 if i < 2 * n_groups else -1 for i in range(n_items)])
    ds = InteractionDataset(users, item_ids, histories, {}, {})
    return Scenario(name, ds, np.array(user_groups), item_groups)


def simulation_config(seed: int = 0, epochs: int = SIM_EPOCHS) -> tuple[ModelConfig, RsgdConfig, InitConfig]:
    model_cfg = ModelConfig(geometry="hyperboloid", user_mode="symmetric", loss="bpr", dim=2,
                            negatives_per_positive=1, lambda_reg=SIM_LAMBDA, epochs=epochs,
                            batch_size=128, seed=seed, lr_decay=SIM_LR_DECAY)
    return model_cfg, RsgdConfig(learning_rate=SIM_LEARNING_RATE), InitConfig(width=SIM_INIT_WIDTH)


def check_structure(scenario: Scenario, model: TrainedModel, seed: int = 0) -> SimulationReport:
    """Cluster separation, plus the shared item's centrality for sim3.

    Separation holds when every user is closer to each item of its own group
    than any user is to an item of another group. The shared item is central
    when its Poincare radius is below that of every group item.
    """
    users, items = model.embeddings.users, model.embeddings.items
    d = geo.hyperboloid_distance(users[:, None, :], items[None, :, :])
    grouped = scenario.item_groups >= 0
    same = scenario.user_groups[:, None] == scenario.item_groups[None, :]
    max_intra = float(d[same].max())
    min_inter = float(d[~same & grouped[None, :]].min())
    radius = np.linalg.norm(geo.hyperboloid_to_poincare(items), axis=1)
    min_group_radius = float(radius[grouped].min())
    shared_radius = float("nan")
    central = None
    if not grouped.all():
        shared_radius = float(radius[~grouped].max())
        central = shared_radius < min_group_radius
    return SimulationReport(scenario.name, seed, max_intra, min_inter, shared_radius,
                            min_group_radius, max_intra < min_inter, central)


def run_simulation(name: str, seed: int = 0, epochs: int = SIM_EPOCHS):
    """Train the scenario's model and return ``(scenario, model, report)``."""
    scenario = build_scenario(name)
    model_cfg, rsgd_cfg, init_cfg = simulation_config(seed, epochs)
    model = train(scenario.dataset, model_cfg, rsgd_cfg, init_cfg, eval_cfg=None)
    return scenario, model, check_structure(scenario, model, seed)
