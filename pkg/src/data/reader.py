"""
Scenario reader and validation.
 * Scenario files are JSON documents validated against `ScenarioConfig`.
 * Defaults are filled in and echoed back with the run reports.
 * `config_hash` fingerprints the canonical (sorted, defaults applied) document.
"""

import hashlib
import json
import logging
import os
from typing import List, Literal, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from tool.cost import PricingRule
from tool.policies import RetryPolicySpec
from tool.retryguard import ControllerConfig
from tool.services import AutoscalerSpec, TrafficProfile

logger = logging.getLogger(__name__)


class ScenarioError(ValueError):
    """Invalid or unreadable scenario"""


class ServiceConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    name: str
    model: Optional[Literal["mm1m", "capacity-slot", "bernoulli", "unbounded"]] = None
    capacity: float = Field(default=1.0, gt=0)
    buffer_size: int = Field(default=20, ge=0)
    service_time: float = Field(default=0.0, ge=0)
    slot_interval: float = Field(default=1.0, gt=0)
    reject_prob: float = Field(default=0.0, ge=0, le=1)
    scaler: Optional[AutoscalerSpec] = None
    pricing: PricingRule = PricingRule()


class VariantConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    name: str
    policy: RetryPolicySpec
    controller: Optional[ControllerConfig] = None


OUTPUTS = ("summary", "metrics", "stages", "trajectories", "costs", "transitions")


class ScenarioConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    name: str
    horizon: float = Field(gt=0)
    seeds: List[int] = Field(default_factory=lambda: [1], min_length=1)
    warmup: float = Field(default=0.0, ge=0)
    traffic: TrafficProfile
    services: List[ServiceConfig] = Field(min_length=2)
    edge: Tuple[str, str] = ("A", "B")
    service_model: Literal["mm1m", "capacity-slot", "bernoulli"] = "capacity-slot"
    policy: RetryPolicySpec = RetryPolicySpec()
    controller: Optional[ControllerConfig] = None
    variants: List[VariantConfig] = Field(default_factory=list)
    baseline: Optional[str] = None
    request_timeout: Optional[float] = Field(default=None, gt=0)
    flush_period: float = Field(default=10.0, gt=0)
    outputs: List[Literal[OUTPUTS]] = Field(default_factory=lambda: list(OUTPUTS))

    @model_validator(mode="after")
    def _references(self):
        names = [s.name for s in self.services]

        if len(set(names)) != len(names):
            raise ValueError(f"duplicate service names: {names}")

        for name in self.edge:
            if name not in names:
                raise ValueError(f"edge references unknown service '{name}' (services: {names})")

        if self.edge[0] == self.edge[1]:
            raise ValueError("edge must connect two different services")

        if self.warmup >= self.horizon:
            raise ValueError(f"warmup ({self.warmup}) must be shorter than horizon ({self.horizon})")

        variants = [v.name for v in self.resolved_variants()]
        if len(set(variants)) != len(variants):
            raise ValueError(f"duplicate variant names: {variants}")

        if self.baseline is not None and self.baseline not in variants:
            raise ValueError(f"baseline '{self.baseline}' is not a variant ({variants})")

        return self

    def service(self, name):
        return next(s for s in self.services if s.name == name)

    @property
    def upstream(self):
        return self.service(self.edge[0])

    @property
    def downstream(self):
        return self.service(self.edge[1])

    def resolved_variants(self):
        if self.variants:
            return list(self.variants)
        return [VariantConfig(name=self.policy.kind, policy=self.policy, controller=self.controller)]

    def variant(self, name):
        for v in self.resolved_variants():
            if v.name == name:
                return v
        raise ScenarioError(f"unknown variant '{name}'")


def canonical_json(config):
    return json.dumps(config.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))


def config_hash(config):
    return hashlib.sha256(canonical_json(config).encode()).hexdigest()


def parse_scenario(document):
    """Validate a decoded JSON document"""

    try:
        return ScenarioConfig.model_validate(document)
    except ValidationError as err:
        raise ScenarioError(f"invalid scenario: {err}") from err


def load_scenario(path):
    """Read and validate a scenario file"""

    if not os.path.isfile(path):
        raise ScenarioError(f"scenario file not found: {path}")

    try:
        with open(path) as f:
            document = json.load(f)
    except json.JSONDecodeError as err:
        raise ScenarioError(f"{path}: malformed JSON ({err})") from err

    config = parse_scenario(document)
    logger.info("loaded scenario '%s' from %s (%d variants)", config.name, path, len(config.resolved_variants()))

    return config


def parse_value(text):
    """Decode a command-line value as JSON when possible, else keep the string"""

    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(config, overrides):
    """Return a re-validated copy with dotted-path overrides (`traffic.base_rate`, `services.1.capacity`)"""

    document = config.model_dump(mode="json")

    for path, value in overrides.items():
        keys = path.split(".")
        node = document

        try:
            for key in keys[:-1]:
                node = node[int(key)] if isinstance(node, list) else node[key]

            last = keys[-1]
            if isinstance(node, list):
                node[int(last)] = value
            else:
                node[last] = value

        except (KeyError, IndexError, ValueError, TypeError) as err:
            raise ScenarioError(f"cannot override '{path}': {err}") from err

    return parse_scenario(document)
