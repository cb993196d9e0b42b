"""Copenhagen Experiment replay with competing decision agents.

A gamble is a pair of distinct images, each image carrying a fixed wealth
effect (an additive delta or a multiplicative factor).  A trial offers two
gambles; the chosen gamble assigns one of its two images with equal
probability.  After the active phase a handful of assigned images are drawn
and applied to the endowment.

Randomness is shared across agents: the trial menus, the per-trial coin that
picks which image of the chosen gamble is assigned, and the settlement draws
all come from the config seed, so agents differ only through their choices.
"""

from __future__ import annotations

import csv
import itertools
import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy.special import logsumexp

__all__ = [
    "CEConfig",
    "Gamble",
    "TrialRecord",
    "AgentSpec",
    "Strategy",
    "AgentOutcome",
    "GameResult",
    "MAX_HORIZON",
    "WEALTH_FLOOR",
    "default_effects",
    "generate_trials",
    "passive_exposures",
    "decide_ergodicity",
    "decide_static_exponential",
    "decide_backward_induction",
    "enumerate_strategies",
    "utility_from_name",
    "run_game",
    "write_trials_csv",
    "write_summary_json",
]

MAX_HORIZON = 12
WEALTH_FLOOR = 1e-9
_TIE_RTOL = 1e-12

LEFT, RIGHT = "left", "right"


def default_effects(mode: str, n_images: int = 18) -> tuple[float, ...]:
    if mode == "additive":
        return tuple(float(v) for v in np.linspace(-428.0, 428.0, n_images))
    if mode == "multiplicative":
        return tuple(float(v) for v in np.geomspace(0.447, 2.236, n_images))
    raise ValueError(f"mode must be 'additive' or 'multiplicative', got {mode!r}")


@dataclass(frozen=True)
class CEConfig:
    """Protocol parameters.  ``image_effects`` defaults to the mode's symmetric grid."""

    mode: str = "additive"
    n_images: int = 18
    images_per_game: int = 9
    passive_repetitions: int = 37
    n_trials: int = 312
    settlement_draws: int = 10
    image_effects: tuple[float, ...] | None = None
    initial_endowment: float = 1000.0
    seed: int = 0
    per_trial_update: bool = False

    def __post_init__(self):
        if self.mode not in ("additive", "multiplicative"):
            raise ValueError(f"mode must be 'additive' or 'multiplicative', got {self.mode!r}")
        if self.n_images < 4:
            raise ValueError("need at least 4 images to form two disjoint gambles")
        if self.image_effects is None:
            object.__setattr__(self, "image_effects", default_effects(self.mode, self.n_images))
        else:
            object.__setattr__(self, "image_effects", tuple(float(v) for v in self.image_effects))
        if len(self.image_effects) != self.n_images:
            raise ValueError(f"image_effects has {len(self.image_effects)} entries, expected {self.n_images}")
        if not all(math.isfinite(v) for v in self.image_effects):
            raise ValueError("image_effects must be finite")
        if self.mode == "multiplicative" and min(self.image_effects) <= 0:
            raise ValueError("multiplicative factors must be positive")
        if not 1 <= self.images_per_game <= self.n_images:
            raise ValueError("images_per_game must lie in [1, n_images]")
        if self.passive_repetitions < 0 or self.n_trials < 1:
            raise ValueError("passive_repetitions must be >= 0 and n_trials >= 1")
        if not 0 <= self.settlement_draws <= self.n_trials:
            raise ValueError("settlement_draws must lie in [0, n_trials]")
        if self.mode == "multiplicative" and not self.initial_endowment > 0:
            raise ValueError("multiplicative game needs a positive endowment")

    @classmethod
    def from_effects(cls, effects: Sequence[float], mode: str, **kw) -> "CEConfig":
        n = len(effects)
        kw.setdefault("images_per_game", min(9, n))
        return cls(mode=mode, n_images=n, image_effects=tuple(effects), **kw)

    @property
    def effects(self) -> np.ndarray:
        return np.asarray(self.image_effects, dtype=float)

    def apply(self, wealth, effect):
        return wealth * effect if self.mode == "multiplicative" else wealth + effect


@dataclass(frozen=True, order=True)
class Gamble:
    """An equiprobable pair of distinct images, stored sorted."""

    images: tuple[int, int]

    def __post_init__(self):
        a, b = (int(i) for i in self.images)
        if a == b:
            raise ValueError(f"a gamble needs two different images, got {a} twice")
        object.__setattr__(self, "images", (min(a, b), max(a, b)))

    def effects(self, cfg: CEConfig) -> np.ndarray:
        return cfg.effects[list(self.images)]


@dataclass(frozen=True)
class TrialRecord:
    """A trial menu plus, once played, each agent's choice and assigned image.

    ``coin`` (0 or 1) selects which image of the chosen gamble is assigned.
    """

    trial_id: int
    left: Gamble
    right: Gamble
    coin: int = 0
    choices: dict = field(default_factory=dict, compare=False)
    assigned: dict = field(default_factory=dict, compare=False)
    wealth_after: dict = field(default_factory=dict, compare=False)

    def gamble(self, choice: str) -> Gamble:
        return self.left if choice == LEFT else self.right


def _rng(seed: int, stream: int) -> np.random.Generator:
    return np.random.Generator(np.random.SFC64(np.random.SeedSequence(seed, spawn_key=(stream,))))


def generate_trials(cfg: CEConfig) -> list[TrialRecord]:
    """Trial skeletons: each draws four distinct images, split into left and right gambles."""
    rng = _rng(cfg.seed, 1)
    coins = _rng(cfg.seed, 2).integers(0, 2, size=cfg.n_trials)
    out = []
    for k in range(cfg.n_trials):
        a, b, c, d = rng.choice(cfg.n_images, size=4, replace=False)
        out.append(TrialRecord(k, Gamble((a, b)), Gamble((c, d)), int(coins[k])))
    return out


def passive_exposures(cfg: CEConfig) -> list[tuple[int, int, int]]:
    """``(repetition, position, image)`` for the passive phase; agents do not learn from it."""
    images = _rng(cfg.seed, 0).choice(cfg.n_images, size=cfg.images_per_game, replace=False)
    return [(r, p, int(img)) for r in range(cfg.passive_repetitions) for p, img in enumerate(images)]


def _pick(trial: TrialRecord, score_left: float, score_right: float) -> str:
    """Higher score wins; near-ties go to the lexicographically smaller pair, then left."""
    tol = _TIE_RTOL * max(1.0, abs(score_left), abs(score_right))
    if abs(score_left - score_right) > tol:
        return LEFT if score_left > score_right else RIGHT
    return RIGHT if trial.right.images < trial.left.images else LEFT


def decide_ergodicity(trial: TrialRecord, cfg: CEConfig, wealth: float | None = None) -> str:
    """Maximise the expected change of the mode's ergodic transform (log or identity).

    The criterion does not depend on wealth in either mode.
    """
    if cfg.mode == "multiplicative":
        if wealth is not None and not wealth > 0:
            raise ValueError("multiplicative mode needs positive wealth")
        score = lambda g: float(np.mean(np.log(g.effects(cfg))))
    else:
        score = lambda g: float(np.mean(g.effects(cfg)))
    return _pick(trial, score(trial.left), score(trial.right))


def decide_static_exponential(trial: TrialRecord, cfg: CEConfig, wealth: float, lam: float) -> str:
    """Maximise ``E[-exp(-lam z)]`` over the wealth ``z`` after one image.

    Compared as ``-logsumexp(-lam (z - wealth))``, which is monotone in the
    expected utility and immune to overflow.
    """
    if not lam > 0:
        raise ValueError("lambda must be positive")

    def score(g: Gamble) -> float:
        delta = cfg.apply(wealth, g.effects(cfg)) - wealth
        return -float(logsumexp(-lam * delta))

    return _pick(trial, score(trial.left), score(trial.right))


# -- temporal expected utility by backward induction ------------------------------

def utility_from_name(name: str, lam: float | None = None) -> Callable[[np.ndarray], np.ndarray]:
    """Terminal-wealth utilities: identity, log, sqrt, exponential (needs ``lam``)."""
    if name == "identity":
        return lambda w: np.asarray(w, dtype=float)
    if name in ("log", "ln"):
        return lambda w: np.log(np.maximum(w, WEALTH_FLOOR))
    if name == "sqrt":
        return lambda w: np.sqrt(np.maximum(w, 0.0))
    if name == "exponential":
        if lam is None or not lam > 0:
            raise ValueError("exponential utility needs lam > 0")
        return lambda w: -np.exp(-lam * np.asarray(w, dtype=float))
    raise ValueError(f"unknown utility {name!r}")


@dataclass(frozen=True)
class Strategy:
    """Root choice, expected utility, and the contingent plan.

    ``plan[k]`` holds the choice (0 left, 1 right) at depth ``k`` for every
    history, an array with ``2k`` binary axes ordered ``(c1, o1, ..., ck, ok)``.
    """

    root: str
    value: float
    plan: tuple[np.ndarray, ...]

    def choice_at(self, history: Sequence[tuple[int, int]]) -> str:
        k = len(history)
        idx = tuple(v for pair in history for v in pair)
        return RIGHT if self.plan[k][idx] else LEFT


def _menu(trials: Sequence[TrialRecord], cfg: CEConfig) -> np.ndarray:
    """Effects with shape ``(h, 2, 2)``: trial, choice, outcome."""
    return np.array([[t.left.effects(cfg), t.right.effects(cfg)] for t in trials], dtype=float)


def decide_backward_induction(trials: Sequence[TrialRecord], cfg: CEConfig, horizon: int,
                              utility: Callable[[np.ndarray], np.ndarray], wealth: float) -> Strategy:
    """Exact expected-utility recursion over the next ``horizon`` trial menus.

    Menus are known in advance, outcomes are not.  Every assigned image is
    applied to wealth and ``utility`` is evaluated on terminal wealth.
    """
    if not 1 <= horizon <= MAX_HORIZON:
        raise ValueError(f"horizon must lie in [1, {MAX_HORIZON}] (tree has 4^horizon leaves)")
    if len(trials) < horizon:
        raise ValueError(f"need {horizon} trial menus, got {len(trials)}")
    trials = list(trials[:horizon])
    eff = _menu(trials, cfg)
    w = np.asarray(float(wealth))
    for k in range(horizon):
        w = cfg.apply(w[..., None, None], eff[k])
    v = np.asarray(utility(w), dtype=float)
    plan = []
    for k in range(horizon - 1, -1, -1):
        v = v.mean(axis=-1)
        vl, vr = v[..., 0], v[..., 1]
        tol = _TIE_RTOL * np.maximum(1.0, np.maximum(np.abs(vl), np.abs(vr)))
        tie_right = trials[k].right.images < trials[k].left.images
        right = np.where(np.abs(vl - vr) > tol, vr > vl, tie_right)
        plan.append(right)
        v = np.where(right, vr, vl)
    plan.reverse()
    plan[0] = np.asarray(plan[0])
    return Strategy(RIGHT if plan[0] else LEFT, float(v), tuple(plan))


def enumerate_strategies(trials: Sequence[TrialRecord], cfg: CEConfig, horizon: int,
                         utility: Callable[[np.ndarray], np.ndarray], wealth: float) -> list[tuple[object, float]]:
    """Every contingent strategy with its expected utility, by brute force.

    A strategy is ``(c, (s0, s1))``: root choice ``c`` and one sub-strategy per
    outcome; the count is ``2^(2^h - 1)``.
    """
    eff = _menu(list(trials[:horizon]), cfg)

    def walk(k: int, w: float):
        if k == horizon:
            yield None, float(utility(np.asarray(w)))
            return
        for c in (0, 1):
            subs = [list(walk(k + 1, float(cfg.apply(w, eff[k, c, o])))) for o in (0, 1)]
            for (s0, v0), (s1, v1) in itertools.product(*subs):
                yield (c, (s0, s1)), 0.5 * (v0 + v1)

    return list(walk(0, float(wealth)))


# -- agents and the game loop -------------------------------------------------------

@dataclass(frozen=True)
class AgentSpec:
    """``kind`` is ``ergodicity``, ``static_exponential`` (needs ``lam``) or
    ``backward_induction`` (needs ``horizon``; ``utility`` names the terminal utility)."""

    kind: str
    lam: float | None = None
    horizon: int | None = None
    utility: str = "log"
    name: str | None = None

    def __post_init__(self):
        if self.kind == "static_exponential":
            if self.lam is None or not self.lam > 0:
                raise ValueError("static_exponential needs lam > 0")
        elif self.kind == "backward_induction":
            if self.horizon is None or not 1 <= self.horizon <= MAX_HORIZON:
                raise ValueError(f"backward_induction needs 1 <= horizon <= {MAX_HORIZON}")
            utility_from_name(self.utility, self.lam)
        elif self.kind != "ergodicity":
            raise ValueError(f"unknown agent kind {self.kind!r}")

    @property
    def label(self) -> str:
        if self.name:
            return self.name
        if self.kind == "static_exponential":
            return f"static_exponential({self.lam:g})"
        if self.kind == "backward_induction":
            return f"backward_induction({self.horizon},{self.utility})"
        return self.kind


@dataclass(frozen=True)
class AgentOutcome:
    choices: tuple[str, ...]
    assigned: tuple[int, ...]
    settlement_trials: tuple[int, ...]
    terminal_wealth: float
    flagged: bool


@dataclass(frozen=True)
class GameResult:
    config: CEConfig
    records: tuple[TrialRecord, ...]
    passive: tuple[tuple[int, int, int], ...]
    outcomes: dict
    agreement: dict

    def agreement_fraction(self, a: str, b: str) -> float:
        return self.agreement[a][b] / len(self.records)

    def summary(self) -> dict:
        cfg = asdict(self.config)
        cfg["image_effects"] = list(self.config.image_effects)
        return {
            "config": cfg,
            "n_trials": len(self.records),
            "n_passive_exposures": len(self.passive),
            "agreement": self.agreement,
            "agents": {
                name: {"terminal_wealth": o.terminal_wealth, "flagged": o.flagged,
                       "settlement_trials": list(o.settlement_trials),
                       "n_right": sum(c == RIGHT for c in o.choices)}
                for name, o in self.outcomes.items()
            },
        }


def _decider(agent: AgentSpec, cfg: CEConfig, trials: list[TrialRecord]):
    if agent.kind == "ergodicity":
        return lambda k, w: decide_ergodicity(trials[k], cfg, w)
    if agent.kind == "static_exponential":
        return lambda k, w: decide_static_exponential(trials[k], cfg, w, agent.lam)
    u = utility_from_name(agent.utility, agent.lam)

    def bi(k, w):
        h = min(agent.horizon, len(trials) - k)
        return decide_backward_induction(trials[k:k + h], cfg, h, u, w).root

    return bi


def _step(cfg: CEConfig, wealth: float, effect: float) -> tuple[float, bool]:
    w = cfg.apply(wealth, effect)
    if cfg.mode == "multiplicative" and w < WEALTH_FLOOR:
        return WEALTH_FLOOR, True
    return w, False


def run_game(cfg: CEConfig, agents: Sequence[AgentSpec]) -> GameResult:
    """Play the active phase for every agent and settle.

    By default wealth stays at the endowment during the active phase and
    ``settlement_draws`` assigned images, drawn without replacement from the
    trials, are applied in draw order.  With ``per_trial_update`` every
    assigned image is applied as it happens and there is no settlement draw.
    """
    names = [a.label for a in agents]
    if len(set(names)) != len(names):
        raise ValueError(f"agent labels must be unique: {names}")
    trials = generate_trials(cfg)
    draws = tuple(int(i) for i in _rng(cfg.seed, 3).choice(cfg.n_trials, size=cfg.settlement_draws, replace=False))
    records = [dict(choices={}, assigned={}, wealth_after={}) for _ in trials]
    outcomes = {}
    for agent, name in zip(agents, names):
        decide = _decider(agent, cfg, trials)
        wealth, flagged = cfg.initial_endowment, False
        choices, assigned = [], []
        for k, t in enumerate(trials):
            c = decide(k, wealth)
            img = t.gamble(c).images[t.coin]
            if cfg.per_trial_update:
                wealth, hit = _step(cfg, wealth, cfg.image_effects[img])
                flagged |= hit
            choices.append(c)
            assigned.append(img)
            records[k]["choices"][name] = c
            records[k]["assigned"][name] = img
            records[k]["wealth_after"][name] = wealth
        settle = () if cfg.per_trial_update else draws
        for k in settle:
            wealth, hit = _step(cfg, wealth, cfg.image_effects[assigned[k]])
            flagged |= hit
        outcomes[name] = AgentOutcome(tuple(choices), tuple(assigned), settle, float(wealth), flagged)
    agreement = {a: {b: sum(x == y for x, y in zip(outcomes[a].choices, outcomes[b].choices))
                     for b in names} for a in names}
    played = tuple(replace(t, **r) for t, r in zip(trials, records))
    return GameResult(cfg, played, tuple(passive_exposures(cfg)), outcomes, agreement)


def write_trials_csv(result: GameResult, path: str | Path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["trial_id", "agent", "choice", "assigned", "wealth_after"])
        for t in result.records:
            for name in result.outcomes:
                w.writerow([t.trial_id, name, t.choices[name], t.assigned[name], repr(float(t.wealth_after[name]))])
    return path


def write_summary_json(result: GameResult, path: str | Path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(result.summary(), indent=2, sort_keys=True) + "\n")
    return path
