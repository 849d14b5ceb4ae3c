import argparse
import os
from dataclasses import (
  asdict,
  dataclass,
  field,
)
from typing import (
  List,
  Optional,
  Sequence,
)

import toml
import voluptuous
from voluptuous import (
  All,
  Any,
  Coerce,
  In,
  Invalid,
  Length,
  MultipleInvalid,
  Range,
  Schema,
)

from library import model_util
from library.attack_util import DEFAULT_EPS_GRID, AttackConfig
from library.mnist_util import DEFAULT_PER_CLIENT, DEFAULT_TEST_SIZE
from library.optimizer_util import OptimizerConfig
from library.train_util import (
  DEFAULT_BATCH_SIZE,
  DEFAULT_CLIENTS,
  DEFAULT_COVERAGES,
  DEFAULT_LOCAL_EPOCHS,
  DEFAULT_ROUNDS_ADV,
  DEFAULT_ROUNDS_BASELINE,
  FederationConfig,
)

RESOLVED_CONFIG_NAME = "resolved_config.toml"
# options that may differ between a run and its resume
RESUME_IGNORED_OPTIONS = ["resume", "out", "num_threads", "logging_dir"]


@dataclass
class ExperimentSpec:
  train_images: Optional[str] = None
  train_labels: Optional[str] = None
  test_images: Optional[str] = None
  test_labels: Optional[str] = None
  clients: List[int] = field(default_factory=lambda: list(DEFAULT_CLIENTS))
  coverage: List[float] = field(default_factory=lambda: list(DEFAULT_COVERAGES))
  eps_grid: List[float] = field(default_factory=lambda: list(DEFAULT_EPS_GRID))
  rounds: int = DEFAULT_ROUNDS_BASELINE
  adv_rounds: int = DEFAULT_ROUNDS_ADV
  per_client: int = DEFAULT_PER_CLIENT
  test_size: int = DEFAULT_TEST_SIZE
  epochs: int = DEFAULT_LOCAL_EPOCHS
  batch_size: int = DEFAULT_BATCH_SIZE
  lr: float = 0.01
  beta1: float = 0.9
  beta2: float = 0.999
  adam_eps: float = 1e-8
  train_eps: float = 0.1
  train_alpha: float = 0.01
  attack_iterations: int = 10
  seed: int = 0
  grad_method: str = "adjoint"
  num_threads: Optional[int] = None
  out: str = "output"
  resume: bool = False
  logging_dir: Optional[str] = None

  def optimizer_config(self) -> OptimizerConfig:
    return OptimizerConfig(self.lr, self.beta1, self.beta2, self.adam_eps)

  def federation_config(self, num_clients: int, coverage: float, rounds: int) -> FederationConfig:
    return FederationConfig(
      num_clients=num_clients,
      rounds=rounds,
      local_epochs=self.epochs,
      batch_size=self.batch_size,
      coverage=coverage,
      seed=self.seed,
      optimizer=self.optimizer_config(),
      grad_method=self.grad_method,
      num_threads=self.num_threads,
    )

  def attack_config(self) -> AttackConfig:
    return AttackConfig(self.train_eps, self.train_alpha, self.attack_iterations)

  @property
  def adversarial_coverages(self) -> List[float]:
    return [c for c in self.coverage if c > 0]


def _starts_with_zero(value: Sequence[float]) -> Sequence[float]:
  if len(value) == 0 or value[0] != 0:
    raise Invalid("eps_grid must start with 0 (the clean column) / eps_gridは0から始めてください")
  return value


def _strictly_increasing(value: Sequence[float]) -> Sequence[float]:
  if any(b <= a for a, b in zip(value, value[1:])):
    raise Invalid("values must be strictly increasing")
  return value


class ConfigSanitizer:
  POSITIVE_INT = All(Coerce(int), Range(min=1))
  NON_NEGATIVE_INT = All(Coerce(int), Range(min=0))
  OPTIONAL_PATH = Any(None, str)

  EXPERIMENT_SCHEMA = {
    "train_images": OPTIONAL_PATH,
    "train_labels": OPTIONAL_PATH,
    "test_images": OPTIONAL_PATH,
    "test_labels": OPTIONAL_PATH,
    "clients": All([POSITIVE_INT], Length(min=1)),
    "coverage": All([All(Coerce(float), Range(min=0.0, max=1.0))], Length(min=1), _strictly_increasing),
    "eps_grid": All([All(Coerce(float), Range(min=0.0, max=1.0))], Length(min=1), _starts_with_zero, _strictly_increasing),
    "rounds": NON_NEGATIVE_INT,
    "adv_rounds": NON_NEGATIVE_INT,
    "per_client": POSITIVE_INT,
    "test_size": POSITIVE_INT,
    "epochs": POSITIVE_INT,
    "batch_size": POSITIVE_INT,
    "lr": All(Coerce(float), Range(min=0.0)),
    "beta1": All(Coerce(float), Range(min=0.0, max=1.0, max_included=False)),
    "beta2": All(Coerce(float), Range(min=0.0, max=1.0, max_included=False)),
    "adam_eps": All(Coerce(float), Range(min=0.0, min_included=False)),
    "train_eps": All(Coerce(float), Range(min=0.0, max=1.0)),
    "train_alpha": All(Coerce(float), Range(min=0.0, min_included=False)),
    "attack_iterations": POSITIVE_INT,
    "seed": NON_NEGATIVE_INT,
    "grad_method": In(model_util.GRAD_METHODS),
    "num_threads": Any(None, POSITIVE_INT),
    "out": str,
    "resume": bool,
    "logging_dir": OPTIONAL_PATH,
  }

  def __init__(self) -> None:
    # the namespace also holds options such as config_file, which are not part of an experiment
    self.validator = Schema(self.EXPERIMENT_SCHEMA, extra=voluptuous.ALLOW_EXTRA)

  def sanitize_config(self, config: dict) -> dict:
    try:
      return self.validator(config)
    except MultipleInvalid as e:
      print(f"Invalid experiment config / 実験設定の形式が正しくないようです: {e}")
      raise

  def sanitize_argparse_namespace(self, argparse_namespace: argparse.Namespace) -> dict:
    return self.sanitize_config(vars(argparse_namespace))


class ExperimentSpecGenerator:
  def __init__(self, sanitizer: ConfigSanitizer):
    self.sanitizer = sanitizer

  def generate(self, argparse_namespace: argparse.Namespace, **runtime_params) -> ExperimentSpec:
    argparse_config = self.sanitizer.sanitize_argparse_namespace(argparse_namespace)
    runtime_config = self.sanitizer.sanitize_config(runtime_params) if runtime_params else {}

    spec = self.generate_params_by_fallbacks(ExperimentSpec, [runtime_config, argparse_config])
    spec.clients = [int(k) for k in spec.clients]
    spec.coverage = [float(c) for c in spec.coverage]
    spec.eps_grid = [float(e) for e in spec.eps_grid]

    # the adversarial phases warm-start from the baseline, so it always runs
    if 0.0 not in spec.coverage:
      print("coverage list has no 0, adding the baseline / ベースライン（coverage 0）を追加します")
      spec.coverage = [0.0] + spec.coverage
    return spec

  @staticmethod
  def generate_params_by_fallbacks(param_klass, fallbacks: Sequence[dict]):
    search_value = ExperimentSpecGenerator.search_value
    default_params = asdict(param_klass())
    params = {name: search_value(name, fallbacks, default) for name, default in default_params.items()}
    return param_klass(**params)

  @staticmethod
  def search_value(key: str, fallbacks: Sequence[dict], default_value=None):
    for cand in fallbacks:
      value = cand.get(key)
      if value is not None:
        return value

    return default_value


def write_resolved_config(spec: ExperimentSpec, out_dir: str) -> str:
  path = os.path.join(out_dir, RESOLVED_CONFIG_NAME)
  os.makedirs(out_dir, exist_ok=True)
  # toml cannot express None, so unset options are left out
  resolved = {key: value for key, value in asdict(spec).items() if value is not None}
  with open(path, "w", encoding="utf-8") as f:
    toml.dump({"experiment": resolved}, f)
  return path


def load_resolved_config(path: str) -> ExperimentSpec:
  if not os.path.isfile(path):
    raise FileNotFoundError(f"file not found / ファイルが見つかりません: {path}")
  try:
    config = toml.load(path)
  except Exception:
    print(f"Error on parsing TOML config file. Please check the format. / TOML 形式の設定ファイルの読み込みに失敗しました。: {path}")
    raise

  sanitizer = ConfigSanitizer()
  sanitized = sanitizer.sanitize_config(config.get("experiment", {}))
  return ExperimentSpecGenerator.generate_params_by_fallbacks(ExperimentSpec, [sanitized])


def changed_options(previous: ExperimentSpec, current: ExperimentSpec) -> List[str]:
  """Names of the options that differ between two runs, ignoring those that cannot change results."""
  before, after = asdict(previous), asdict(current)
  return [key for key in after if key not in RESUME_IGNORED_OPTIONS and before[key] != after[key]]
