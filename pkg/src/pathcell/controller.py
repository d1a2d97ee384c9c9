"""Categorical architecture controller updated by natural policy gradient.

Each genotype component owns a categorical distribution in expectation
parametrization: a K-vector theta on the simplex where the update acts on the
first K-1 coordinates and the last is reconstructed as 1 - sum. Per update the
coordinate step is

    d_theta_j = rho/m * sum_i M_i * sign(T_ij - theta_j) * (T_ij - theta_j)^2

with T the one-hot of the sampled category without its K-th dimension and M_i
the (optionally batch-mean-centered) measurement. The quadratic factor is the
outer-product diagonal of the published iteration, oriented along the score
direction so that a positively rewarded sample always gains probability.
After every step the vector is floored at EPS_FLOOR and renormalized.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .genotype import (ALL_COMPONENTS, MACRO_COMPONENTS, MICRO_COMPONENTS,
                       Genotype, MacroGenotype, MicroGenotype, from_choices,
                       to_choices)

EPS_FLOOR = 1e-3

BASELINE_NONE = "none"
BASELINE_BATCH_MEAN = "batch-mean"


def floor_simplex(p: np.ndarray, eps: float = EPS_FLOOR) -> np.ndarray:
    """Project onto {p : p_i >= eps, sum p = 1} by clamping the low entries
    and rescaling the free mass (at most K passes)."""
    p = np.asarray(p, dtype=np.float64).copy()
    if len(p) * eps > 1.0:
        raise ValueError("floor too large for this simplex")
    clamped = np.zeros(len(p), dtype=bool)
    for _ in range(len(p)):
        low = (p < eps) & ~clamped
        if not low.any():
            break
        clamped |= low
        free = ~clamped
        budget = 1.0 - clamped.sum() * eps
        p[clamped] = eps
        total = p[free].sum()
        if total <= 0.0:
            p[free] = budget / max(free.sum(), 1)
        else:
            p[free] *= budget / total
    return p / p.sum()


@dataclass
class CategoricalParam:
    probs: np.ndarray

    def __post_init__(self):
        self.probs = np.asarray(self.probs, dtype=np.float64)
        if abs(self.probs.sum() - 1.0) > 1e-9 or (self.probs < 0).any():
            raise ValueError(f"not a probability vector: {self.probs}")

    @classmethod
    def uniform(cls, k: int) -> "CategoricalParam":
        return cls(np.full(k, 1.0 / k))


@dataclass
class ControllerState:
    """One categorical distribution per genotype component plus step sizes."""
    components: dict[str, CategoricalParam]
    rho_macro: float = 0.1
    rho_micro: float = 0.05
    m_samples: int = 2
    rng_seed: int = 0
    reward_baseline_mode: str = BASELINE_BATCH_MEAN
    rng: np.random.Generator = field(default=None, repr=False)

    def __post_init__(self):
        expected = [name for name, _ in ALL_COMPONENTS]
        if list(self.components) != expected:
            raise ValueError("controller components must mirror the genotype "
                             f"layout {expected}")
        if self.m_samples < 1:
            raise ValueError("m_samples must be >= 1")
        if self.reward_baseline_mode not in (BASELINE_NONE, BASELINE_BATCH_MEAN):
            raise ValueError(f"unknown baseline {self.reward_baseline_mode!r}")
        if self.rng is None:
            self.rng = np.random.Generator(np.random.PCG64(self.rng_seed))

    @classmethod
    def uniform(cls, **kw) -> "ControllerState":
        comps = {name: CategoricalParam.uniform(len(cats))
                 for name, cats in ALL_COMPONENTS}
        return cls(components=comps, **kw)

    # ---- persistence ---------------------------------------------------
    def to_json(self) -> str:
        return json.dumps({
            "components": {k: v.probs.tolist()
                           for k, v in self.components.items()},
            "rho_macro": self.rho_macro, "rho_micro": self.rho_micro,
            "m_samples": self.m_samples, "rng_seed": self.rng_seed,
            "reward_baseline_mode": self.reward_baseline_mode,
            "rng_state": _jsonable_rng_state(self.rng),
        }, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ControllerState":
        d = json.loads(text)
        ctrl = cls(components={k: CategoricalParam(np.asarray(v))
                               for k, v in d["components"].items()},
                   rho_macro=d["rho_macro"], rho_micro=d["rho_micro"],
                   m_samples=d["m_samples"], rng_seed=d["rng_seed"],
                   reward_baseline_mode=d["reward_baseline_mode"])
        ctrl.rng.bit_generator.state = _rng_state_from_json(d["rng_state"])
        return ctrl


def _jsonable_rng_state(rng: np.random.Generator) -> dict:
    st = rng.bit_generator.state
    return {"bit_generator": st["bit_generator"],
            "state": str(st["state"]["state"]), "inc": str(st["state"]["inc"]),
            "has_uint32": st["has_uint32"], "uinteger": st["uinteger"]}


def _rng_state_from_json(d: dict) -> dict:
    return {"bit_generator": d["bit_generator"],
            "state": {"state": int(d["state"]), "inc": int(d["inc"])},
            "has_uint32": d["has_uint32"], "uinteger": d["uinteger"]}


def sample_genotype(ctrl: ControllerState,
                    fixed_macro: MacroGenotype | None = None,
                    fixed_micro: MicroGenotype | None = None) -> Genotype:
    """Draw unpinned components independently from their categoricals."""
    pinned: dict[str, int] = {}
    if fixed_macro is not None:
        probe = Genotype(fixed_macro, _any_micro())
        pinned.update(zip((n for n, _ in MACRO_COMPONENTS),
                          to_choices(probe)[0]))
    if fixed_micro is not None:
        probe = Genotype(_any_macro(), fixed_micro)
        pinned.update(zip((n for n, _ in MICRO_COMPONENTS),
                          to_choices(probe)[1]))
    choices: dict[str, int] = {}
    for name, cats in ALL_COMPONENTS:
        if name in pinned:
            choices[name] = pinned[name]
        else:
            p = ctrl.components[name].probs
            choices[name] = int(ctrl.rng.choice(len(cats), p=p))
    macro_idx = tuple(choices[name] for name, _ in MACRO_COMPONENTS)
    micro_idx = tuple(choices[name] for name, _ in MICRO_COMPONENTS)
    return from_choices(macro_idx, micro_idx)


def _any_macro() -> MacroGenotype:
    from .genotype import COMBINATORS, CONNECTIONS
    return MacroGenotype(CONNECTIONS[0], CONNECTIONS[0], COMBINATORS[0],
                         COMBINATORS[0], COMBINATORS[0])


def _any_micro() -> MicroGenotype:
    from .genotype import DEFAULT_MICRO
    return DEFAULT_MICRO


def npg_update(ctrl: ControllerState, samples: list[tuple[Genotype, float]],
               part: str = "all", rho: float | None = None) -> None:
    """Natural-gradient step on the selected component group, in place.

    `samples` are (genotype, measurement) pairs, exactly m_samples of them.
    With the batch-mean baseline the measurements are centered across the
    batch, so equal rewards leave the distribution untouched.
    """
    if len(samples) != ctrl.m_samples:
        raise ValueError(f"expected {ctrl.m_samples} samples, "
                         f"got {len(samples)}")
    rewards = np.asarray([r for _, r in samples], dtype=np.float64)
    if not np.all(np.isfinite(rewards)):
        raise ValueError("non-finite reward")
    if ctrl.reward_baseline_mode == BASELINE_BATCH_MEAN:
        rewards = rewards - rewards.mean()
    groups = {"macro": MACRO_COMPONENTS, "micro": MICRO_COMPONENTS,
              "all": ALL_COMPONENTS}
    if part not in groups:
        raise ValueError(f"unknown component group {part!r}")
    names = [name for name, _ in groups[part]]
    default_rho = ctrl.rho_macro if part == "macro" else ctrl.rho_micro
    rho = default_rho if rho is None else rho
    sample_choices = []
    for g, _ in samples:
        macro_idx, micro_idx = to_choices(g)
        full = dict(zip((n for n, _ in MACRO_COMPONENTS), macro_idx))
        full.update(zip((n for n, _ in MICRO_COMPONENTS), micro_idx))
        sample_choices.append(full)
    for name in names:
        param = ctrl.components[name]
        k = len(param.probs)
        theta = param.probs[:k - 1].copy()
        delta = np.zeros_like(theta)
        for choice, m in zip(sample_choices, rewards):
            t_vec = np.zeros(k - 1)
            if choice[name] < k - 1:
                t_vec[choice[name]] = 1.0
            d = t_vec - theta
            delta += m * np.sign(d) * d * d
        theta = theta + (rho / ctrl.m_samples) * delta
        full_vec = np.concatenate([theta, [1.0 - theta.sum()]])
        param.probs = floor_simplex(full_vec)
