import argparse
import os
import sys
import time
from typing import List, Optional, Sequence, Tuple

import voluptuous

from library import train_util
from library.attack_util import evaluate_robustness
from library.config_util import (
    RESOLVED_CONFIG_NAME,
    ConfigSanitizer,
    ExperimentSpec,
    ExperimentSpecGenerator,
    changed_options,
    load_resolved_config,
    write_resolved_config,
)
from library.mnist_util import ClientDataset, Sample, load_mnist_split, partition_iid, select_test_samples
from library.quantum_util import LayerTemplate
from library.report_util import (
    PHASE_ADV,
    PHASE_BASELINE,
    SPLIT_ADV,
    SPLIT_CLEAN,
    MetricsRecord,
    emit_baseline_table,
    emit_convergence_plot,
    emit_final_table,
    emit_round_metrics,
    emit_tradeoff_table,
    format_fraction,
    read_round_metrics,
)
from library.train_util import (
    CHECKPOINT_EXT,
    ClientTrainingError,
    GlobalModel,
    load_checkpoint,
    phase_file_name,
    run_phase,
    save_checkpoint,
    warm_start,
)


class SweepPaths:
    def __init__(self, out_dir: str):
        self.out_dir = out_dir

    def checkpoint(self, num_clients: int, coverage: float) -> str:
        return os.path.join(self.out_dir, "checkpoints", phase_file_name(num_clients, coverage) + CHECKPOINT_EXT)

    def phase_metrics(self, num_clients: int, coverage: float) -> str:
        return os.path.join(self.out_dir, "metrics", f"rounds_{phase_file_name(num_clients, coverage)}.csv")

    def plot(self, num_clients: int, coverage: float) -> str:
        return os.path.join(self.out_dir, "plots", f"convergence_{phase_file_name(num_clients, coverage)}.svg")

    def final_table(self, num_clients: int) -> str:
        return os.path.join(self.out_dir, "tables", f"final_table_k{num_clients}.csv")

    def tradeoff_table(self, num_clients: int) -> str:
        return os.path.join(self.out_dir, "tables", f"tradeoff_k{num_clients}.csv")

    @property
    def baseline_table(self) -> str:
        return os.path.join(self.out_dir, "tables", "baseline_table.csv")

    @property
    def round_metrics(self) -> str:
        return os.path.join(self.out_dir, "round_metrics.csv")

    @property
    def robustness_metrics(self) -> str:
        return os.path.join(self.out_dir, "robustness_metrics.csv")


def get_summary_writer(spec: ExperimentSpec, run_name: str):
    if spec.logging_dir is None:
        return None
    # torch is only needed when TensorBoard logging is requested
    from torch.utils.tensorboard import SummaryWriter

    return SummaryWriter(os.path.join(spec.logging_dir, run_name))


def load_datasets(spec: ExperimentSpec) -> Tuple[List[Sample], List[Sample]]:
    for name in ["train_images", "train_labels", "test_images", "test_labels"]:
        if getattr(spec, name) is None:
            raise ValueError(f"--{name} is required / --{name} を指定してください")

    train = load_mnist_split(spec.train_images, spec.train_labels)
    test = load_mnist_split(spec.test_images, spec.test_labels)
    test = select_test_samples(test, spec.test_size, spec.seed)
    print(f"train samples: {len(train)}, test samples: {len(test)}")
    return train, test


def robustness_records(
    model: GlobalModel, test: Sequence[Sample], spec: ExperimentSpec, phase: str, num_clients: int, coverage: float, writer=None
) -> List[MetricsRecord]:
    rows = evaluate_robustness(model.params, test, spec.eps_grid, spec.attack_iterations, model.provenance.template)

    records = []
    for row in rows:
        split = SPLIT_CLEAN if row.epsilon == 0 else SPLIT_ADV
        records.append(
            MetricsRecord(phase, num_clients, coverage, model.round, split, row.epsilon, row.loss, row.accuracy)
        )
        if writer is not None:
            writer.add_scalar(f"robust_accuracy/eps_{format_fraction(row.epsilon)}", row.accuracy, model.round)

    summary = ", ".join(f"{format_fraction(r.epsilon)}: {r.accuracy * 100:.2f}%" for r in records)
    print(f"robust accuracy K={num_clients} coverage={format_fraction(coverage)} -> {summary}")
    return records


def train_or_resume_phase(
    spec: ExperimentSpec,
    paths: SweepPaths,
    start: GlobalModel,
    data: Sequence[ClientDataset],
    test: Sequence[Sample],
    coverage: float,
    rounds: int,
    phase: str,
) -> Tuple[GlobalModel, List[MetricsRecord], List[MetricsRecord]]:
    num_clients = len(data)
    checkpoint_path = paths.checkpoint(num_clients, coverage)
    metrics_path = paths.phase_metrics(num_clients, coverage)
    run_name = phase_file_name(num_clients, coverage)

    writer = get_summary_writer(spec, run_name)
    try:
        if spec.resume and os.path.isfile(checkpoint_path) and os.path.isfile(metrics_path):
            print(f"resume: reusing {checkpoint_path} / 既存のチェックポイントを再利用します")
            model = load_checkpoint(checkpoint_path)
            records = read_round_metrics(metrics_path)
        else:
            fed_cfg = spec.federation_config(num_clients, coverage, rounds)
            model, records = run_phase(start, fed_cfg, spec.attack_config(), data, test, phase, writer)
            save_checkpoint(model, checkpoint_path)
            emit_round_metrics(records, metrics_path)

        emit_convergence_plot(records, paths.plot(num_clients, coverage), f"K={num_clients}, coverage={coverage * 100:g}%")
        robust = robustness_records(model, test, spec, phase, num_clients, coverage, writer)
    finally:
        if writer is not None:
            writer.close()
    return model, records, robust


def run_sweep(spec: ExperimentSpec) -> int:
    """
    For each client count: train the 0% baseline from scratch, then warm-start one adversarial
    phase per coverage > 0 from the saved baseline. Every phase ends with a robustness evaluation.
    """
    paths = SweepPaths(spec.out)
    resolved_path = os.path.join(spec.out, RESOLVED_CONFIG_NAME)
    if spec.resume and os.path.isfile(resolved_path):
        changed = changed_options(load_resolved_config(resolved_path), spec)
        if changed:
            print(f"warning: resuming with changed options {changed}, reused phases will not match / 前回と異なる設定で再開します: {changed}")
    write_resolved_config(spec, spec.out)

    train, test = load_datasets(spec)
    template = LayerTemplate()

    all_rounds: List[MetricsRecord] = []
    all_robust: List[MetricsRecord] = []
    start_time = time.time()
    for num_clients in spec.clients:
        data = partition_iid(train, num_clients, spec.per_client, spec.seed)
        print(f"K={num_clients}: {len(data)} clients x {spec.per_client} samples, class counts {[c.class_counts().tolist() for c in data]}")

        k_robust: List[MetricsRecord] = []
        fresh = GlobalModel.fresh(template, num_clients, spec.seed)
        _, records, robust = train_or_resume_phase(spec, paths, fresh, data, test, 0.0, spec.rounds, PHASE_BASELINE)
        all_rounds.extend(records)
        k_robust.extend(robust)

        baseline_path = paths.checkpoint(num_clients, 0.0)
        for coverage in spec.adversarial_coverages:
            # always start from the saved file, so every coverage sees the same baseline
            start = warm_start(load_checkpoint(baseline_path))
            _, records, robust = train_or_resume_phase(spec, paths, start, data, test, coverage, spec.adv_rounds, PHASE_ADV)
            all_rounds.extend(records)
            k_robust.extend(robust)

        emit_final_table(k_robust, paths.final_table(num_clients), spec.eps_grid)
        if spec.adversarial_coverages:
            emit_tradeoff_table(k_robust, paths.tradeoff_table(num_clients), spec.eps_grid)
        all_robust.extend(k_robust)

    emit_round_metrics(all_rounds, paths.round_metrics)
    emit_round_metrics(all_robust, paths.robustness_metrics)
    emit_baseline_table(all_robust, paths.baseline_table, spec.eps_grid)

    print(f"sweep finished in {time.time() - start_time:.1f}s, results in {spec.out} / 完了しました")
    return 0


def setup_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description="federated adversarial training of a 6-qubit classifier on MNIST 0/1/2")

    train_util.add_dataset_arguments(parser)
    train_util.add_federation_arguments(parser)
    train_util.add_optimizer_arguments(parser)
    train_util.add_attack_arguments(parser)
    train_util.add_output_arguments(parser)

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = setup_parser()

    args = parser.parse_args(argv)
    args = train_util.read_config_from_file(args, parser, argv)

    try:
        spec = ExperimentSpecGenerator(ConfigSanitizer()).generate(args)
        return run_sweep(spec)
    except (FileNotFoundError, OSError, ValueError, voluptuous.Invalid, ClientTrainingError) as e:
        print(f"error: {e} / エラーが発生しました")
        return 1


if __name__ == "__main__":
    sys.exit(main())
