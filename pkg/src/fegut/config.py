"""Experiment configuration: one YAML file describes scenario, estimators and evaluation.

Missing keys fall back to the defaults below; unknown keys are rejected so a
typo never silently runs the default experiment.
"""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass, fields
from importlib import resources
from pathlib import Path

import yaml

from .ekf import EkfConfig
from .errors import ConfigurationError
from .fgo import SolverConfig
from .hybrid import FeedbackMode, PipelineConfig
from .scene import (
    DEFAULT_SKY,
    ClockTruth,
    NoiseSpec,
    build_constellation,
    place_anchors,
    synthesize_dataset,
)
from .trajectory import DEFAULT_ORIGIN, TrajectorySpec, build_truth_table


def _dataclass_defaults(cls, skip=()):
    return {f.name: f.default for f in fields(cls) if f.name not in skip and not callable(f.default_factory)}


DEFAULTS = {
    "scenario": {
        "trajectory": {
            "shape": "lemniscate",
            "origin": list(DEFAULT_ORIGIN),
            "horizontal_extent": 200.0,
            "radius": 100.0,
            "average_speed": 5.0,
            "duration": 240.0,
            "table_rate": 1000.0,
            "lead_time": 1.0,
        },
        "anchors": {"half_spacing": 50.0, "height": 5.0},
        "constellation": {
            "altitude": 20200e3,
            "elevation_mask": 15.0,
            "sky": [list(p) for p in DEFAULT_SKY],
        },
        "clock": _dataclass_defaults(ClockTruth),
        "noise": {"pseudorange": 2.0, "doppler": 0.1, "uwb": 0.1},
        "td": 0.04,
        "rates": {"gnss_hz": 1.0, "uwb_hz": 10.0},
    },
    "estimator": {
        "ekf": _dataclass_defaults(EkfConfig, skip=("noise",)),
        # null: the estimator assumes the scenario noise levels
        "noise": None,
        "fgo": _dataclass_defaults(SolverConfig),
        "feedback": {"mode": "every_solve", "alpha": 1.0},
        "cold_start_iterations": 20,
    },
    "evaluation": {"cut": 10.0},
    "montecarlo": {"seeds": [0, 1, 2, 3, 4], "workers": None},
    "output": {"dir": "out"},
}

_LEAF_DICTS = {("estimator", "noise")}


def _merge(base, override, path=()):
    if not isinstance(override, dict):
        raise ConfigurationError(f"section {'.'.join(path) or '<root>'} must be a mapping")
    out = copy.deepcopy(base)
    for key, val in override.items():
        here = path + (key,)
        if key not in base:
            raise ConfigurationError(f"unknown config key {'.'.join(here)}")
        if isinstance(base[key], dict) and here not in _LEAF_DICTS:
            out[key] = _merge(base[key], val if val is not None else {}, here)
        else:
            out[key] = copy.deepcopy(val)
    return out


def _build(cls, values, where):
    try:
        return cls(**values)
    except TypeError as exc:
        raise ConfigurationError(f"{where}: {exc}") from None


@dataclass(frozen=True)
class ExperimentConfig:
    """A fully merged configuration tree plus the source it came from."""

    data: dict
    source: str = "<defaults>"

    @classmethod
    def from_dict(cls, tree=None, source="<dict>"):
        merged = _merge(DEFAULTS, tree or {})
        cfg = cls(merged, source)
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path):
        path = Path(path)
        try:
            text = path.read_text()
        except OSError as exc:
            raise ConfigurationError(f"cannot read config {path}: {exc.strerror}") from None
        try:
            tree = yaml.safe_load(text)
        except yaml.YAMLError as exc:
            raise ConfigurationError(f"{path}: invalid YAML ({exc})") from None
        return cls.from_dict(tree or {}, str(path))

    @classmethod
    def packaged(cls, name="default"):
        ref = resources.files("fegut") / "configs" / f"{name}.yaml"
        if not ref.is_file():
            raise ConfigurationError(f"no packaged config named {name!r}")
        return cls.from_dict(yaml.safe_load(ref.read_text()) or {}, f"<packaged:{name}>")

    # typed views ---------------------------------------------------------
    @property
    def scenario(self):
        return self.data["scenario"]

    @property
    def seeds(self):
        return [int(s) for s in self.data["montecarlo"]["seeds"]]

    @property
    def cut(self):
        return float(self.data["evaluation"]["cut"])

    @property
    def td_truth(self):
        return float(self.scenario["td"])

    def trajectory_spec(self):
        t = dict(self.scenario["trajectory"])
        t["origin"] = tuple(float(v) for v in t["origin"])
        return _build(TrajectorySpec, t, "scenario.trajectory").validate()

    def clock(self):
        return _build(ClockTruth, self.scenario["clock"], "scenario.clock")

    def noise(self, seed=0):
        return _build(NoiseSpec, {**self.scenario["noise"], "seed": int(seed)}, "scenario.noise")

    def ekf_config(self):
        est = self.data["estimator"]
        noise = est["noise"] if est["noise"] is not None else self.scenario["noise"]
        noise = _build(NoiseSpec, noise, "estimator.noise").validate(allow_zero=False)
        return _build(EkfConfig, {**est["ekf"], "noise": noise}, "estimator.ekf")

    def solver_config(self):
        return _build(SolverConfig, self.data["estimator"]["fgo"], "estimator.fgo")

    def pipeline_config(self):
        est = self.data["estimator"]
        fb = est["feedback"]
        try:
            mode = FeedbackMode(fb["mode"])
        except ValueError:
            raise ConfigurationError(f"unknown feedback mode {fb['mode']!r}") from None
        return PipelineConfig(
            ekf=self.ekf_config(),
            solver=self.solver_config(),
            feedback=mode,
            alpha=float(fb["alpha"]),
            cold_start_iterations=int(est["cold_start_iterations"]),
        )

    def validate(self):
        try:
            self.trajectory_spec()
            self.noise().validate()
            self.pipeline_config().validate()
        except ConfigurationError:
            raise
        except Exception as exc:  # contract violations from nested configs
            raise ConfigurationError(str(exc)) from None
        if self.td_truth < 0:
            raise ConfigurationError("scenario.td must be non-negative")
        if self.cut < 0:
            raise ConfigurationError("evaluation.cut must be non-negative")
        if not self.seeds:
            raise ConfigurationError("montecarlo.seeds must not be empty")
        rates = self.scenario["rates"]
        if not 0 < rates["gnss_hz"] <= rates["uwb_hz"]:
            raise ConfigurationError("need 0 < gnss_hz <= uwb_hz")
        return self

    # provenance ----------------------------------------------------------
    def canonical_json(self):
        return json.dumps(self.data, sort_keys=True, separators=(",", ":"))

    @property
    def hash(self):
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()

    def dump_yaml(self):
        return yaml.safe_dump(self.data, sort_keys=True)


@dataclass
class Scenario:
    table: object
    dataset: object
    anchors: object
    constellation: object


def build_scenario(cfg: ExperimentConfig, seed=0) -> Scenario:
    """Truth table, constellation, anchors and a synthetic dataset for one seed."""
    spec = cfg.trajectory_spec()
    sc = cfg.scenario
    table = build_truth_table(spec)
    frame = table.frame
    con = sc["constellation"]
    constellation = build_constellation(
        spec.origin,
        sky=[tuple(p) for p in con["sky"]],
        altitude=float(con["altitude"]),
        elevation_mask=float(con["elevation_mask"]),
    )
    anc = sc["anchors"]
    anchors = place_anchors(
        frame.to_ecef(spec.center_enu), float(anc["half_spacing"]), float(anc["height"]), frame
    )
    dataset = synthesize_dataset(
        table,
        constellation,
        anchors,
        cfg.clock(),
        cfg.noise(seed),
        cfg.td_truth,
        gnss_hz=float(sc["rates"]["gnss_hz"]),
        uwb_hz=float(sc["rates"]["uwb_hz"]),
        duration=spec.duration,
        metadata={"config_hash": cfg.hash, "shape": spec.shape.value},
    )
    return Scenario(table, dataset, anchors, constellation)
