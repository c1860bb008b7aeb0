"""Experiment configuration: JSON tree with a versioned schema key.

Validation collects every violation before reporting, each tagged with the
name of the assumption it breaks:

``weight-lower-bound``, ``uniform-strong-connectivity``, ``hurwitz-mean``,
``chain-ergodic``, ``step-size-shape``, ``step-size-feasibility``,
``pi-limit``, ``weight-orientation`` and ``config-schema``.
"""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from . import graphs as G
from . import noise as Nz
from .engines import ENGINES, PUSH, StepSchedule
from .weights import COLUMN, ROW, ExplicitWeights, GraphWeights, WeightError

SCHEMA = "distsa/1"
NON_SEMANTIC_KEYS = ("out", "workers")
MASK64 = (1 << 64) - 1
GOLDEN64 = 0x9E3779B97F4A7C15

__all__ = [
    "SCHEMA",
    "ConfigError",
    "Experiment",
    "splitmix64",
    "trial_seeds",
    "fingerprint",
    "preset_names",
    "load_preset",
    "load_config",
    "parse_config",
    "build_graph",
    "build_noise",
    "build_steps",
]


class ConfigError(ValueError):
    """Carries the full list of ``(assumption, message)`` violations."""

    def __init__(self, violations):
        self.violations = list(violations)
        lines = [f"[{name}] {msg}" for name, msg in self.violations]
        super().__init__("invalid configuration:\n  " + "\n  ".join(lines))

    def to_json(self) -> dict:
        return {"errors": [{"assumption": n, "message": m} for n, m in self.violations]}


def splitmix64(x: int) -> int:
    z = x & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def trial_seeds(master: int, n: int) -> list[int]:
    """Trial i gets the (i+1)-th output of the splitmix64 stream started at ``master``."""
    return [splitmix64((master + (i + 1) * GOLDEN64) & MASK64) for i in range(n)]


def _semantic(raw: dict) -> dict:
    return {k: v for k, v in raw.items() if k not in NON_SEMANTIC_KEYS}


def fingerprint(raw: dict) -> str:
    """sha256 of the canonical JSON of the semantic part of a config."""
    text = json.dumps(_semantic(raw), sort_keys=True, separators=(",", ":"), allow_nan=False)
    return hashlib.sha256(text.encode()).hexdigest()


def preset_names() -> list[str]:
    root = resources.files("distsa") / "presets"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".json"))


def load_preset(name: str) -> dict:
    path = resources.files("distsa") / "presets" / f"{name}.json"
    if not path.is_file():
        raise ConfigError([("config-schema", f"unknown preset {name!r}; available: {', '.join(preset_names())}")])
    return json.loads(path.read_text())


def load_config(path_or_name) -> dict:
    """Read a config file, or a shipped preset when given a bare preset name."""
    p = Path(path_or_name)
    if p.is_file():
        try:
            return json.loads(p.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError([("config-schema", f"{p}: {exc}")]) from exc
    return load_preset(str(path_or_name))


# ---------------------------------------------------------------------------
# builders

_FAMILIES = {
    "complete": G.complete_graph,
    "self_loops": G.self_loop_graph,
    "ring": G.ring_graph,
    "bidirectional_ring": G.bidirectional_ring_graph,
    "path": G.path_graph,
}


def _single_graph(spec: dict, n: int) -> G.DirectedGraph:
    if "family" in spec:
        fam = spec["family"]
        if fam not in _FAMILIES:
            raise G.GraphError(f"unknown graph family {fam!r}")
        return _FAMILIES[fam](n)
    if "arcs" in spec:
        # 1-based (j, i) pairs: j is an in-neighbor of i; self-arcs are added
        return G.DirectedGraph.from_arcs(n, [(int(j), int(i)) for j, i in spec["arcs"]])
    raise G.GraphError("graph needs 'family' or 'arcs'")


def build_graph(spec: dict, n: int, L: int) -> G.GraphSequence:
    kind = spec.get("kind", "constant")
    if kind == "constant":
        return G.ConstantSchedule(_single_graph(spec, n), L)
    if kind == "periodic":
        return G.PeriodicSchedule(tuple(_single_graph(g, n) for g in spec["graphs"]), L)
    if kind == "template":
        return G.TemplateSchedule(n, L, float(spec.get("p_extra", 0.2)), int(spec.get("seed", 0)))
    if kind == "switch":
        return G.SwitchSchedule(build_graph(spec["before"], n, L), build_graph(spec["after"], n, L),
                                int(spec["switch_time"]), L)
    raise G.GraphError(f"unknown graph kind {kind!r}")


def _build_chain(spec, initial=None) -> Nz.MarkovChain:
    if isinstance(spec, list):
        return Nz.MarkovChain(np.asarray(spec, dtype=float), initial)
    preset = spec.get("preset")
    if preset == "iid":
        P = Nz.iid_chain(int(spec["n_states"]), int(spec.get("seed", 0))).transition
    elif preset == "lazy2":
        P = Nz.lazy_two_state_chain(float(spec["p"])).transition
    elif preset == "lambda2":
        P = Nz.chain_with_lambda2(int(spec["n_states"]), float(spec["lambda"]), int(spec.get("seed", 0)),
                                  spec.get("stationary")).transition
    else:
        raise Nz.NoiseError(f"unknown chain preset {preset!r}", "config-schema")
    return Nz.MarkovChain(P, initial)


def build_noise(spec: dict, n: int, K: int):
    """Return ``(NoiseModel, TDInstance or None)``; the model is built non-strict."""
    if "td" in spec:
        td = spec["td"]
        inst = Nz.td_instance(int(td.get("seed", 0)), int(td.get("n_states", 3)), K, n,
                              float(td.get("gamma", 0.9)), td.get("rewards"))
        return inst.model, inst
    initial = spec.get("initial")
    chain = _build_chain(spec["transition"], initial)
    maps = spec["maps"]
    if maps.get("generator") == "random_hurwitz":
        A, b = Nz.random_hurwitz_maps(chain.n_states, n, K, int(maps.get("seed", 0)), float(maps.get("decay", 1.0)),
                                      float(maps.get("spread", 0.2)), float(maps.get("b_scale", 1.0)))
    elif "A" in maps:
        A = np.asarray(maps["A"], dtype=float).reshape(chain.n_states, K, K)
        b = np.asarray(maps["b"], dtype=float).reshape(chain.n_states, n, K)
    else:
        raise Nz.NoiseError("noise maps need inline 'A'/'b' or a generator", "config-schema")
    return Nz.NoiseModel(chain, A, b, strict=False), None


def build_steps(spec: dict) -> StepSchedule:
    kind = spec.get("kind")
    if kind == "fixed":
        return StepSchedule("fixed", float(spec["alpha"]))
    if kind == "harmonic":
        return StepSchedule("harmonic", float(spec["alpha0"]))
    if kind == "table":
        return StepSchedule("table", table=tuple(spec["values"]))
    raise ValueError(f"unknown step kind {kind!r}")


# ---------------------------------------------------------------------------


@dataclass(eq=False)
class Experiment:
    raw: dict
    name: str
    n_agents: int
    dim: int
    L: int
    engine: str
    graphs: G.GraphSequence
    weights: object
    noise: Nz.NoiseModel
    steps: StepSchedule
    horizon: int
    trials: int
    seed: int
    stride: int | None
    initial_scale: float = 1.0
    bounds: dict = field(default_factory=dict)
    td: object = None
    beta: float = float("nan")
    delta_max: int = 0
    notes: list = field(default_factory=list)

    @property
    def fingerprint(self) -> str:
        return fingerprint(self.raw)

    @property
    def bounds_enabled(self) -> bool:
        return bool(self.bounds.get("enabled", False))

    def seeds(self) -> list[int]:
        return trial_seeds(self.seed, self.trials)

    def with_overrides(self, **kw) -> "Experiment":
        raw = copy.deepcopy(self.raw)
        raw.update({k: v for k, v in kw.items() if v is not None})
        return parse_config(raw)


def _require(raw, key, errors, kind=None):
    if key not in raw:
        errors.append(("config-schema", f"missing key {key!r}"))
        return None
    val = raw[key]
    if kind is not None and not isinstance(val, kind):
        errors.append(("config-schema", f"key {key!r} must be {kind.__name__ if isinstance(kind, type) else kind}"))
        return None
    return val


def parse_config(raw: dict, **overrides) -> Experiment:
    """Build and validate an experiment, listing every violated condition at once."""
    raw = copy.deepcopy(raw)
    raw.update({k: v for k, v in overrides.items() if v is not None})
    errors: list = []
    if raw.get("schema") != SCHEMA:
        errors.append(("config-schema", f"schema must be {SCHEMA!r}, got {raw.get('schema')!r}"))
    n = _require(raw, "n_agents", errors, int)
    K = _require(raw, "dim", errors, int)
    engine = _require(raw, "engine", errors, str)
    horizon = _require(raw, "horizon", errors, int)
    if engine is not None and engine not in ENGINES:
        errors.append(("config-schema", f"engine must be one of {ENGINES}"))
        engine = None
    if horizon is not None and horizon < 0:
        errors.append(("config-schema", "horizon must be >= 0"))
    if n is not None and n < 1:
        errors.append(("config-schema", "n_agents must be >= 1"))
        n = None
    if K is not None and K < 1:
        errors.append(("config-schema", "dim must be >= 1"))
        K = None
    L = int(raw.get("L", 1))
    if L < 1:
        errors.append(("config-schema", "L must be >= 1"))
        L = 1
    trials = int(raw.get("trials", 1))
    seed = int(raw.get("seed", 0))
    if trials < 1:
        errors.append(("config-schema", "trials must be >= 1"))
    if not 0 <= seed <= MASK64:
        errors.append(("config-schema", "seed must be an unsigned 64-bit integer"))
    if n is None or K is None or engine is None or horizon is None:
        raise ConfigError(errors)

    # steps
    steps = None
    try:
        steps = build_steps(raw.get("steps", {}))
    except (ValueError, KeyError, TypeError) as exc:
        errors.append(("step-size-shape", f"step schedule: {exc}"))

    # weights and graphs
    wspec = raw.get("weights", {"rule": "push" if engine == PUSH else "equal_neighbor"})
    rule = wspec.get("rule", "equal_neighbor")
    graphs = weights = None
    beta = float("nan")
    dmax = 0
    try:
        if rule == "explicit":
            orient = wspec.get("orientation", COLUMN if engine == PUSH else ROW)
            weights = ExplicitWeights(wspec["matrices"], orient, wspec.get("beta"), tuple(wspec.get("tail", ())),
                                      int(wspec.get("switch_time", 0)))
            if weights.n_agents != n:
                errors.append(("config-schema", f"weight matrices are {weights.n_agents}x{weights.n_agents}, n_agents={n}"))
            graphs = weights.graph_sequence(L)
        elif rule in ("equal_neighbor", "push"):
            graphs = build_graph(raw.get("graph", {"kind": "constant", "family": "complete"}), n, L)
            if graphs.n_agents != n:
                errors.append(("config-schema", "graph size does not match n_agents"))
            weights = GraphWeights(graphs, ROW if rule == "equal_neighbor" else COLUMN)
        else:
            errors.append(("config-schema", f"unknown weight rule {rule!r}"))
    except (G.GraphError, WeightError, KeyError, TypeError, ValueError) as exc:
        errors.append(("weight-lower-bound" if isinstance(exc, WeightError) else "config-schema", f"weights: {exc}"))
        graphs = weights = None
    if weights is not None:
        want = COLUMN if engine == PUSH else ROW
        if weights.orientation != want:
            errors.append(("weight-orientation", f"{engine} engine needs {want}-stochastic weights, got {weights.orientation}"))
        check_T = max(horizon, L, 1)
        beta = weights.beta(min(check_T, 1 << 16))
        declared = wspec.get("beta")
        if not beta > 0:
            errors.append(("weight-lower-bound", f"smallest positive weight {beta} is not bounded away from 0"))
        elif declared is not None and beta < float(declared) - 1e-15:
            errors.append(("weight-lower-bound", f"smallest positive weight {beta:.6g} below declared beta {declared}"))
        if declared is not None:
            beta = float(declared)
        try:
            if not G.verify_uniform_strong_connectivity(graphs, L, check_T):
                errors.append(("uniform-strong-connectivity",
                               f"some window of length L={L} within horizon {check_T} has a union that is not strongly connected"))
            else:
                dmax = G.delta_max(graphs, L, check_T)
        except G.GraphError as exc:
            errors.append(("uniform-strong-connectivity", str(exc)))

    # noise
    noise = td = None
    try:
        noise, td = build_noise(raw.get("noise", {}), n, K)
        for name, msg in noise.violations():
            errors.append((name, msg))
        if noise.n_agents != n or noise.dim != K:
            errors.append(("config-schema", f"noise maps have N={noise.n_agents}, K={noise.dim}; config says N={n}, K={K}"))
    except Nz.NoiseError as exc:
        errors.append((exc.assumption or "config-schema", f"noise: {exc}"))
    except (KeyError, TypeError, ValueError) as exc:
        errors.append(("config-schema", f"noise: {exc!r}"))

    notes = []
    if steps is not None and steps.kind == "table":
        notes.append("step-size-shape unverified: custom table checked for positivity and non-increase only")
    bounds = dict(raw.get("bounds", {}))
    if bounds.get("enabled") and steps is not None and steps.kind == "table":
        errors.append(("step-size-shape", "bounds need a fixed or harmonic step schedule"))
    if errors:
        raise ConfigError(errors)
    return Experiment(
        raw=raw,
        name=str(raw.get("name", "experiment")),
        n_agents=n,
        dim=K,
        L=L,
        engine=engine,
        graphs=graphs,
        weights=weights,
        noise=noise,
        steps=steps,
        horizon=horizon,
        trials=trials,
        seed=seed,
        stride=raw.get("stride"),
        initial_scale=float(raw.get("initial_scale", 1.0)),
        bounds=bounds,
        td=td,
        beta=beta,
        delta_max=dmax,
        notes=notes,
    )
