# common functions for federated training

import argparse
import math
import os
import pathlib
import sys
from dataclasses import dataclass, field, replace
from typing import (
    List,
    Optional,
    Sequence,
    Set,
    Tuple,
)

import numpy as np
import toml
from tqdm import tqdm

from library import model_util
from library.attack_util import DEFAULT_EPS_GRID, AttackConfig, pgd_attack_batch
from library.mnist_util import DEFAULT_PER_CLIENT, DEFAULT_TEST_SIZE, ClientDataset, Sample
from library.optimizer_util import AdamState, OptimizerConfig, adam_step
from library.quantum_util import LayerTemplate
from library.report_util import PHASE_ADV, PHASE_BASELINE, SPLIT_CLEAN, MetricsRecord
from library.utils import get_num_threads, map_in_threads

# checkpoint file
CHECKPOINT_MAGIC = "qfal-checkpoint v1"
CHECKPOINT_EXT = ".qfal"
PHASE_FILE_NAME = "k{}_cov{}"  # client count, coverage in percent
REQUIRED_HEADER_KEYS = ["qubits", "layers", "classes", "round", "coverage", "seed"]

DEFAULT_CLIENTS = [5, 10, 15]
DEFAULT_COVERAGES = [0.0, 0.2, 0.5, 1.0]
DEFAULT_ROUNDS_BASELINE = 50
DEFAULT_ROUNDS_ADV = 20
DEFAULT_LOCAL_EPOCHS = 4
DEFAULT_BATCH_SIZE = 64


class ClientTrainingError(RuntimeError):
    pass


class CheckpointError(ValueError):
    pass


@dataclass(frozen=True)
class FederationConfig:
    num_clients: int = 5
    rounds: int = DEFAULT_ROUNDS_BASELINE
    local_epochs: int = DEFAULT_LOCAL_EPOCHS
    batch_size: int = DEFAULT_BATCH_SIZE
    coverage: float = 0.0
    seed: int = 0
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    grad_method: str = "adjoint"
    num_threads: Optional[int] = None

    def __post_init__(self):
        assert self.num_clients >= 1, f"num_clients must be >= 1: {self.num_clients}"
        assert self.rounds >= 0, f"rounds must not be negative: {self.rounds}"
        assert self.local_epochs >= 1, f"local_epochs must be >= 1: {self.local_epochs}"
        assert self.batch_size >= 1, f"batch_size must be >= 1: {self.batch_size}"
        assert 0.0 <= self.coverage <= 1.0, f"coverage must be in [0, 1]: {self.coverage}"
        assert self.grad_method in model_util.GRAD_METHODS, f"unknown gradient method: {self.grad_method}"


@dataclass
class Provenance:
    coverage: float
    num_clients: int
    seed: int
    template: LayerTemplate
    phases: List[Tuple[str, int]] = field(default_factory=list)


@dataclass
class GlobalModel:
    params: np.ndarray
    round: int
    provenance: Provenance

    @staticmethod
    def fresh(template: LayerTemplate, num_clients: int, seed: int) -> "GlobalModel":
        params = model_util.init_params(template, seed)
        return GlobalModel(params, 0, Provenance(0.0, num_clients, seed, template))


@dataclass
class ClientState:
    client_id: int
    dataset: ClientDataset
    adversarial: bool
    adam: AdamState
    local_params: np.ndarray


def phase_file_name(num_clients: int, coverage: float) -> str:
    return PHASE_FILE_NAME.format(num_clients, int(round(coverage * 100)))


# region federation


def select_adversarial_clients(num_clients: int, coverage: float) -> Set[int]:
    assert num_clients >= 1 and 0.0 <= coverage <= 1.0, f"invalid selection: K={num_clients}, coverage={coverage}"
    # round() guards against 0.2 * 15 == 3.0000000000000004
    count = math.ceil(round(coverage * num_clients, 9))
    return set(range(min(count, num_clients)))


def client_rng(seed: int, client_id: int, round_no: int) -> np.random.Generator:
    # one independent stream per (seed, client, round), so scheduling cannot change results
    return np.random.default_rng([seed, client_id, round_no])


def _local_train(
    client: ClientState,
    global_params: np.ndarray,
    cfg: FederationConfig,
    round_no: int,
    attack: Optional[AttackConfig],
    template: Optional[LayerTemplate] = None,
) -> np.ndarray:
    dataset = client.dataset
    assert len(dataset) > 0, f"client {client.client_id} has no data"

    rng = client_rng(cfg.seed, client.client_id, round_no)
    params = np.array(global_params, dtype=np.float64, copy=True)
    client.adam = AdamState.zeros(params.shape)
    pixels, labels = dataset.as_arrays()

    for epoch in range(cfg.local_epochs):
        order = rng.permutation(len(labels))
        for start in range(0, len(order), cfg.batch_size):
            index = order[start : start + cfg.batch_size]
            x, y = pixels[index], labels[index]

            num_adv = len(index) // 2
            if attack is not None and num_adv > 0:
                # first half clean, second half replaced by PGD examples against the current local model
                x = x.copy()
                x[-num_adv:] = pgd_attack_batch(params, x[-num_adv:], y[-num_adv:], attack, template)

            grads = model_util.grad_params(params, (x, y), cfg.grad_method, template)
            params, client.adam = adam_step(params, grads, client.adam, cfg.optimizer)

    client.local_params = params
    return params


def local_train_clean(
    client: ClientState,
    global_params: np.ndarray,
    cfg: FederationConfig,
    round_no: int = 0,
    template: Optional[LayerTemplate] = None,
) -> np.ndarray:
    return _local_train(client, global_params, cfg, round_no, None, template)


def local_train_adv(
    client: ClientState,
    global_params: np.ndarray,
    cfg: FederationConfig,
    attack: AttackConfig,
    round_no: int = 0,
    template: Optional[LayerTemplate] = None,
) -> np.ndarray:
    return _local_train(client, global_params, cfg, round_no, attack, template)


def fedavg(updates: Sequence[Tuple[np.ndarray, int]]) -> np.ndarray:
    """
    theta = sum_k |D_k| / sum_i |D_i| * theta_k, element-wise.
    Sums are exactly rounded (fsum), so the result does not depend on client order.
    """
    assert len(updates) > 0, "fedavg needs at least one update"
    first = np.asarray(updates[0][0], dtype=np.float64)
    for params, _ in updates:
        assert np.shape(params) == first.shape, f"shape mismatch in fedavg: {np.shape(params)} vs {first.shape}"
    sizes = [float(size) for _, size in updates]
    total = sum(sizes)
    assert total > 0, "total dataset size must be positive / データ数の合計が0です"

    weights = [size / total for size in sizes]
    stacked = np.stack([np.asarray(params, dtype=np.float64).reshape(-1) for params, _ in updates])
    averaged = np.array([math.fsum(w * v for w, v in zip(weights, column)) for column in stacked.T], dtype=np.float64)

    # identical client values are a fixed point
    identical = np.all(stacked == stacked[0], axis=0)
    averaged = np.where(identical, stacked[0], averaged)
    return averaged.reshape(first.shape)


def evaluate_global(
    params: np.ndarray,
    test: Sequence[Sample],
    cfg: FederationConfig,
    phase: str,
    round_no: int,
    template: Optional[LayerTemplate] = None,
) -> MetricsRecord:
    loss, acc = model_util.evaluate(params, test, template)
    return MetricsRecord(phase, cfg.num_clients, cfg.coverage, round_no, SPLIT_CLEAN, 0.0, loss, acc)


def warm_start(model: GlobalModel) -> GlobalModel:
    # parameters only; Adam moments and round counters start over
    provenance = replace(model.provenance, phases=list(model.provenance.phases))
    return GlobalModel(np.array(model.params, copy=True), 0, provenance)


def run_phase(
    global_model: GlobalModel,
    fed_cfg: FederationConfig,
    attack_cfg: AttackConfig,
    data: Sequence[ClientDataset],
    test: Sequence[Sample],
    phase: Optional[str] = None,
    writer=None,
    show_progress: bool = True,
) -> Tuple[GlobalModel, List[MetricsRecord]]:
    assert len(data) == fed_cfg.num_clients, f"expected {fed_cfg.num_clients} client datasets, got {len(data)}"
    if phase is None:
        phase = PHASE_BASELINE if fed_cfg.coverage == 0 else PHASE_ADV
    if fed_cfg.rounds == 0:
        return global_model, []

    adversarial = select_adversarial_clients(fed_cfg.num_clients, fed_cfg.coverage)
    params = np.array(global_model.params, dtype=np.float64, copy=True)
    clients = [
        ClientState(k, dataset, k in adversarial, AdamState.zeros(params.shape), params.copy()) for k, dataset in enumerate(data)
    ]
    num_threads = get_num_threads(fed_cfg.num_threads)
    print(
        f"{phase}: {fed_cfg.num_clients} clients, coverage {fed_cfg.coverage:g} (adversarial clients: {sorted(adversarial)}), "
        f"{fed_cfg.rounds} rounds, {num_threads} thread(s)"
    )

    template = global_model.provenance.template
    start_round = global_model.round
    records = [evaluate_global(params, test, fed_cfg, phase, start_round, template)]

    progress_bar = tqdm(range(start_round + 1, start_round + fed_cfg.rounds + 1), smoothing=0, desc=f"{phase} K={fed_cfg.num_clients}", disable=not show_progress)
    for round_no in progress_bar:
        broadcast = params.copy()
        broadcast.setflags(write=False)

        def train_client(client: ClientState) -> np.ndarray:
            try:
                if client.adversarial:
                    return local_train_adv(client, broadcast, fed_cfg, attack_cfg, round_no, template)
                return local_train_clean(client, broadcast, fed_cfg, round_no, template)
            except Exception as e:
                raise ClientTrainingError(
                    f"client {client.client_id} failed in round {round_no} ({'adversarial' if client.adversarial else 'clean'}): {e}"
                ) from e

        # any failure propagates here before aggregation
        updates = map_in_threads(train_client, clients, num_threads)
        params = fedavg([(update, len(client.dataset)) for update, client in zip(updates, clients)])

        record = evaluate_global(params, test, fed_cfg, phase, round_no, template)
        records.append(record)
        progress_bar.set_postfix(loss=f"{record.loss:.4f}", acc=f"{record.accuracy:.4f}")
        if writer is not None:
            writer.add_scalar("loss/test", record.loss, round_no)
            writer.add_scalar("accuracy/test", record.accuracy, round_no)

    provenance = replace(
        global_model.provenance,
        coverage=fed_cfg.coverage,
        num_clients=fed_cfg.num_clients,
        seed=fed_cfg.seed,
        phases=list(global_model.provenance.phases) + [(phase, fed_cfg.rounds)],
    )
    return GlobalModel(params, start_round + fed_cfg.rounds, provenance), records


# endregion

# region checkpoint


def save_checkpoint(model: GlobalModel, path: str):
    template = model.provenance.template
    params = np.asarray(model.params, dtype=np.float64)
    assert params.shape == template.param_shape, f"params {params.shape} do not match template {template.param_shape}"

    lines = [
        CHECKPOINT_MAGIC,
        f"qubits={template.num_wires}",
        f"layers={template.num_layers}",
        f"classes={model_util.NUM_CLASSES}",
        f"round={model.round}",
        f"coverage={model.provenance.coverage!r}",
        f"seed={model.provenance.seed}",
        f"clients={model.provenance.num_clients}",
        f"ranges={','.join(str(r) for r in template.ranges)}",
        f"phases={','.join(f'{tag}:{rounds}' for tag, rounds in model.provenance.phases)}",
        "",
    ]
    # 17 significant digits round-trip every double exactly
    lines += [f"{value:.17g}" for value in params.reshape(-1)]

    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        f.write("\n".join(lines) + "\n")


def load_checkpoint(path: str) -> GlobalModel:
    if not os.path.isfile(path):
        raise FileNotFoundError(f"checkpoint not found / チェックポイントが見つかりません: {path}")
    with open(path, "r", encoding="utf-8") as f:
        lines = f.read().split("\n")

    if not lines or lines[0].strip() != CHECKPOINT_MAGIC:
        raise CheckpointError(f"not a {CHECKPOINT_MAGIC} file: {path} (first line {lines[0][:40]!r})")

    header = {}
    i = 1
    while i < len(lines) and lines[i].strip() != "":
        key, sep, value = lines[i].partition("=")
        if not sep:
            raise CheckpointError(f"malformed header line {i + 1} in {path}: {lines[i]!r}")
        header[key.strip()] = value.strip()
        i += 1
    missing = [key for key in REQUIRED_HEADER_KEYS if key not in header]
    if missing:
        raise CheckpointError(f"checkpoint header lacks {missing}: {path}")

    try:
        qubits, layers, classes = int(header["qubits"]), int(header["layers"]), int(header["classes"])
        round_no, seed = int(header["round"]), int(header["seed"])
        coverage = float(header["coverage"])
        clients = int(header.get("clients", "0"))
        ranges = tuple(int(r) for r in header["ranges"].split(",")) if header.get("ranges") else None
        phases = []
        for entry in filter(None, header.get("phases", "").split(",")):
            tag, _, rounds = entry.partition(":")
            phases.append((tag, int(rounds)))
        values = [float(line) for line in lines[i + 1 :] if line.strip() != ""]
    except ValueError as e:
        raise CheckpointError(f"malformed checkpoint {path}: {e}") from e

    if classes != model_util.NUM_CLASSES:
        raise CheckpointError(f"checkpoint has {classes} classes, model measures {model_util.NUM_CLASSES}")
    try:
        template = LayerTemplate(layers, qubits, ranges)
    except AssertionError as e:
        raise CheckpointError(f"invalid template in {path}: {e}") from e
    if len(values) != template.num_params:
        raise CheckpointError(f"checkpoint {path} has {len(values)} angles, header implies {template.num_params}")

    params = np.array(values, dtype=np.float64).reshape(template.param_shape)
    return GlobalModel(params, round_no, Provenance(coverage, clients, seed, template, phases))


# endregion

# region arguments


def _add(parser: argparse.ArgumentParser, name: str, **kwargs):
    # --name_with_underscores and --name-with-hyphens are both accepted
    flags = [f"--{name}"]
    if "_" in name:
        flags.append(f"--{name.replace('_', '-')}")
    parser.add_argument(*flags, dest=name, **kwargs)


def add_dataset_arguments(parser: argparse.ArgumentParser):
    _add(parser, "train_images", type=str, default=None, help="MNIST training images (IDX, optionally gzipped) / 学習用画像ファイル（IDX形式）")
    _add(parser, "train_labels", type=str, default=None, help="MNIST training labels / 学習用ラベルファイル")
    _add(parser, "test_images", type=str, default=None, help="MNIST test images / テスト用画像ファイル")
    _add(parser, "test_labels", type=str, default=None, help="MNIST test labels / テスト用ラベルファイル")
    _add(
        parser,
        "per_client",
        type=int,
        default=DEFAULT_PER_CLIENT,
        help=f"training samples per client (default {DEFAULT_PER_CLIENT}) / クライアントごとの学習サンプル数",
    )
    _add(parser, "test_size", type=int, default=DEFAULT_TEST_SIZE, help=f"shared test samples (default {DEFAULT_TEST_SIZE}) / 共有テストサンプル数")


def add_federation_arguments(parser: argparse.ArgumentParser):
    _add(parser, "clients", type=int, nargs="+", default=DEFAULT_CLIENTS, help="client counts to run / クライアント数（複数指定可）")
    _add(
        parser,
        "coverage",
        type=float,
        nargs="+",
        default=DEFAULT_COVERAGES,
        help="fractions of adversarially training clients; 0 is the baseline / 敵対的学習を行うクライアントの割合（0はベースライン）",
    )
    _add(parser, "rounds", type=int, default=DEFAULT_ROUNDS_BASELINE, help="rounds of the 0%% baseline / ベースラインのラウンド数")
    _add(parser, "adv_rounds", type=int, default=DEFAULT_ROUNDS_ADV, help="rounds after warm start / ウォームスタート後のラウンド数")
    _add(parser, "epochs", type=int, default=DEFAULT_LOCAL_EPOCHS, help="local epochs per round / ラウンドごとのローカルエポック数")
    _add(parser, "batch_size", type=int, default=DEFAULT_BATCH_SIZE, help="mini-batch size / ミニバッチサイズ")
    _add(parser, "seed", type=int, default=0, help="master random seed / 乱数シード")
    _add(
        parser,
        "grad_method",
        type=str,
        default="adjoint",
        choices=model_util.GRAD_METHODS,
        help="parameter gradient: adjoint (fast) or shift (parameter-shift rule) / パラメータ勾配の計算方法",
    )
    _add(
        parser,
        "num_threads",
        type=int,
        default=None,
        help="worker threads for clients (default: QFAL_THREADS or 1) / クライアント並列実行のスレッド数",
    )


def add_optimizer_arguments(parser: argparse.ArgumentParser):
    _add(parser, "lr", type=float, default=0.01, help="Adam learning rate / 学習率")
    _add(parser, "beta1", type=float, default=0.9, help="Adam beta1")
    _add(parser, "beta2", type=float, default=0.999, help="Adam beta2")
    _add(parser, "adam_eps", type=float, default=1e-8, help="Adam epsilon for numerical stability")


def add_attack_arguments(parser: argparse.ArgumentParser):
    _add(parser, "eps_grid", type=float, nargs="+", default=DEFAULT_EPS_GRID, help="evaluation epsilons, starting with 0 / 評価に使うεの一覧（0から始めること）")
    _add(parser, "train_eps", type=float, default=0.1, help="PGD epsilon for adversarial training / 敵対的学習のε")
    _add(parser, "train_alpha", type=float, default=0.01, help="PGD step size for adversarial training / 敵対的学習のステップ幅")
    _add(parser, "attack_iterations", type=int, default=10, help="PGD iterations / PGDの反復回数")


def add_output_arguments(parser: argparse.ArgumentParser):
    _add(parser, "out", type=str, default="output", help="output directory / 出力先ディレクトリ")
    _add(parser, "resume", action="store_true", help="reuse existing phase checkpoints / 既存のチェックポイントを再利用する")
    _add(parser, "logging_dir", type=str, default=None, help="enable TensorBoard logging into this directory / TensorBoardのログ出力先")
    _add(parser, "config_file", type=str, default=None, help="load options from a .toml file / 設定をtomlファイルから読み込む")
    _add(parser, "output_config", action="store_true", help="write the command line options to --config_file and exit / コマンドライン引数を設定ファイルに保存して終了する")


def read_config_from_file(args: argparse.Namespace, parser: argparse.ArgumentParser, argv: Optional[Sequence[str]] = None):
    if not args.config_file:
        return args

    config_path = args.config_file + ".toml" if not args.config_file.endswith(".toml") else args.config_file

    if args.output_config:
        # check if config file exists
        if os.path.exists(config_path):
            print(f"Config file already exists. Aborting... / 出力先の設定ファイルが既に存在します: {config_path}")
            sys.exit(1)

        args_dict = vars(args)
        for key in ["config_file", "output_config"]:
            if key in args_dict:
                del args_dict[key]

        # keep only values that differ from the parser defaults
        default_args = vars(parser.parse_args([]))
        for key, value in list(args_dict.items()):
            if key in default_args and value == default_args[key]:
                del args_dict[key]
        for key, value in args_dict.items():
            if isinstance(value, pathlib.Path):
                args_dict[key] = str(value)

        with open(config_path, "w") as f:
            toml.dump(args_dict, f)

        print(f"Saved config file / 設定ファイルを保存しました: {config_path}")
        sys.exit(0)

    if not os.path.exists(config_path):
        print(f"{config_path} not found.")
        sys.exit(1)

    print(f"Loading settings from {config_path}...")
    with open(config_path, "r") as f:
        config_dict = toml.load(f)

    # combine all sections into one
    ignore_nesting_dict = {}
    for section_name, section_dict in config_dict.items():
        if not isinstance(section_dict, dict):
            ignore_nesting_dict[section_name] = section_dict
            continue
        for key, value in section_dict.items():
            ignore_nesting_dict[key] = value

    # values already in the namespace are not replaced by parser defaults, so the command line wins
    config_args = argparse.Namespace(**ignore_nesting_dict)
    args = parser.parse_args(argv, namespace=config_args)
    return args


# endregion
