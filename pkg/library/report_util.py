# metrics records, CSV tables, convergence plots and prediction reports

import csv
import os
from dataclasses import dataclass
from typing import (
    Dict,
    Iterable,
    List,
    NamedTuple,
    Optional,
    Sequence,
    Tuple,
)

import matplotlib
import numpy as np
from matplotlib.figure import Figure

from library import model_util
from library.attack_util import DEFAULT_EPS_GRID, DEFAULT_ITERATIONS, AttackConfig, pgd_attack_batch
from library.mnist_util import stack_samples
from library.quantum_util import LayerTemplate


SPLIT_CLEAN = "clean"
SPLIT_ADV = "adv"
PHASE_BASELINE = "baseline"
PHASE_ADV = "adv"

ROUND_METRICS_COLUMNS = ["phase", "clients", "coverage", "round", "split", "epsilon", "loss", "accuracy"]


class MissingCellError(ValueError):
    pass


@dataclass(frozen=True)
class MetricsRecord:
    phase: str
    num_clients: int
    coverage: float
    round: int
    split: str
    epsilon: float
    loss: float
    accuracy: float  # fraction

    def __post_init__(self):
        assert 0.0 <= self.accuracy <= 1.0, f"accuracy out of range: {self.accuracy}"
        assert (self.epsilon == 0) == (self.split == SPLIT_CLEAN), f"split {self.split} does not match epsilon {self.epsilon}"

    def to_row(self) -> List[str]:
        return [
            self.phase,
            str(self.num_clients),
            format_fraction(self.coverage),
            str(self.round),
            self.split,
            format_fraction(self.epsilon),
            f"{self.loss:.10f}",
            f"{self.accuracy:.10f}",
        ]

    @staticmethod
    def from_row(row: Dict[str, str]) -> "MetricsRecord":
        return MetricsRecord(
            row["phase"],
            int(row["clients"]),
            float(row["coverage"]),
            int(row["round"]),
            row["split"],
            float(row["epsilon"]),
            float(row["loss"]),
            float(row["accuracy"]),
        )


def format_fraction(value: float) -> str:
    # 0 -> "0", 0.01 -> "0.01", 1.0 -> "1"
    return f"{value:g}"


def eps_column(eps: float) -> str:
    return f"eps_{format_fraction(eps)}"


def format_percent(accuracy: float) -> str:
    return f"{accuracy * 100.0:.2f}"


def _ensure_parent(path: str):
    parent = os.path.dirname(os.path.abspath(path))
    os.makedirs(parent, exist_ok=True)


# region CSV


def emit_round_metrics(records: Iterable[MetricsRecord], path: str):
    _ensure_parent(path)
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(ROUND_METRICS_COLUMNS)
        for record in records:
            writer.writerow(record.to_row())


def read_round_metrics(path: str) -> List[MetricsRecord]:
    with open(path, "r", newline="", encoding="utf-8") as f:
        reader = csv.DictReader(f)
        if reader.fieldnames != ROUND_METRICS_COLUMNS:
            raise ValueError(f"unexpected metrics columns in {path}: {reader.fieldnames}")
        return [MetricsRecord.from_row(row) for row in reader]


def _accuracy_cells(records: Iterable[MetricsRecord]) -> Dict[Tuple[int, float, float], float]:
    cells = {}
    for r in records:
        cells[(r.num_clients, r.coverage, r.epsilon)] = r.accuracy
    return cells


def _write_table(path: str, header: List[str], rows: List[List[str]]):
    _ensure_parent(path)
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def emit_final_table(records: Sequence[MetricsRecord], path: str, eps_grid: Sequence[float] = DEFAULT_EPS_GRID):
    """
    One row per coverage, one column per epsilon, accuracy in percent with 2 decimals.
    Records must come from one client count.
    """
    header = ["coverage"] + [eps_column(e) for e in eps_grid]
    clients = sorted({r.num_clients for r in records})
    assert len(clients) <= 1, f"final table mixes client counts: {clients}"

    cells = _accuracy_cells(records)
    rows = []
    for coverage in sorted({r.coverage for r in records}):
        row = [format_fraction(coverage)]
        for eps in eps_grid:
            key = (clients[0], coverage, float(eps))
            if key not in cells:
                raise MissingCellError(f"no accuracy for coverage={coverage}, eps={eps} / 表のセルが欠けています")
            row.append(format_percent(cells[key]))
        rows.append(row)
    _write_table(path, header, rows)


def emit_baseline_table(records: Sequence[MetricsRecord], path: str, eps_grid: Sequence[float] = DEFAULT_EPS_GRID):
    """client-count comparison of the 0% coverage models"""
    header = ["clients"] + [eps_column(e) for e in eps_grid]
    baseline = [r for r in records if r.coverage == 0]
    cells = _accuracy_cells(baseline)
    rows = []
    for k in sorted({r.num_clients for r in baseline}):
        row = [str(k)]
        for eps in eps_grid:
            key = (k, 0.0, float(eps))
            if key not in cells:
                raise MissingCellError(f"no baseline accuracy for clients={k}, eps={eps}")
            row.append(format_percent(cells[key]))
        rows.append(row)
    _write_table(path, header, rows)


def emit_tradeoff_table(records: Sequence[MetricsRecord], path: str, eps_grid: Sequence[float] = DEFAULT_EPS_GRID):
    """percentage-point change of each adversarially trained model against the baseline of the same client count"""
    header = ["coverage"] + [eps_column(e) for e in eps_grid]
    clients = sorted({r.num_clients for r in records})
    assert len(clients) <= 1, f"tradeoff table mixes client counts: {clients}"

    cells = _accuracy_cells(records)
    rows = []
    for coverage in sorted({r.coverage for r in records if r.coverage > 0}):
        row = [format_fraction(coverage)]
        for eps in eps_grid:
            base = cells.get((clients[0], 0.0, float(eps)))
            value = cells.get((clients[0], coverage, float(eps)))
            if base is None or value is None:
                raise MissingCellError(f"cannot compare coverage={coverage} with baseline at eps={eps}")
            row.append(f"{(value - base) * 100.0:+.2f}")
        rows.append(row)
    _write_table(path, header, rows)


# endregion

# region convergence plot

PLOT_SIZE = (6.4, 4.0)
LOSS_COLOR = "#d62728"
ACCURACY_COLOR = "#1f77b4"
# fixed hash salt and no date keep the svg reproducible; text stays text and every round keeps its vertex
SVG_RC = {"svg.fonttype": "none", "svg.hashsalt": "qfal", "path.simplify": False}


def convergence_figure(records: Sequence[MetricsRecord], title: Optional[str] = None) -> Optional[Figure]:
    """
    Global test loss (left axis, auto-scaled) and accuracy (right axis, fixed to [0, 1]) against round.
    Only clean per-round records from round 1 on are plotted. Returns None with fewer than 2 rounds.
    """
    points = sorted((r.round, r.loss, r.accuracy) for r in records if r.split == SPLIT_CLEAN and r.round >= 1)
    if len(points) < 2:
        return None
    rounds, losses, accs = (list(c) for c in zip(*points))

    fig = Figure(figsize=PLOT_SIZE, layout="tight")
    loss_ax = fig.add_subplot()
    (loss_line,) = loss_ax.plot(rounds, losses, color=LOSS_COLOR, linewidth=2)
    loss_line.set_gid("loss")
    loss_ax.set_xlabel("round")
    loss_ax.set_ylabel("test loss", color=LOSS_COLOR)
    loss_ax.grid(True, alpha=0.3)

    acc_ax = loss_ax.twinx()
    (acc_line,) = acc_ax.plot(rounds, accs, color=ACCURACY_COLOR, linewidth=2)
    acc_line.set_gid("accuracy")
    acc_ax.set_ylim(0.0, 1.0)
    acc_ax.set_ylabel("test accuracy", color=ACCURACY_COLOR)

    if title:
        loss_ax.set_title(title)
    return fig


def emit_convergence_plot(records: Sequence[MetricsRecord], path: str, title: Optional[str] = None) -> bool:
    fig = convergence_figure(records, title)
    if fig is None:
        print(f"skip convergence plot, fewer than 2 rounds: {path} / ラウンド数が2未満のためプロットを省略します")
        return False

    _ensure_parent(path)
    with matplotlib.rc_context(SVG_RC):
        fig.savefig(path, format="svg", metadata={"Date": None})
    return True


# endregion

# region prediction report


class SampleReportRow(NamedTuple):
    index: int
    label: int
    clean_class: int
    clean_confidence: float
    attacked_class: int
    attacked_confidence: float
    clean_pixels: np.ndarray
    attacked_pixels: np.ndarray

    @property
    def clean_correct(self) -> bool:
        return self.clean_class == self.label

    @property
    def attacked_correct(self) -> bool:
        return self.attacked_class == self.label


ASCII_SHADES = " .:-=+*#%@"


def ascii_thumbnail(pixels: np.ndarray, side: int = 8) -> List[str]:
    levels = np.clip((np.asarray(pixels).reshape(side, side) * (len(ASCII_SHADES) - 1)).round().astype(int), 0, len(ASCII_SHADES) - 1)
    return ["".join(ASCII_SHADES[v] * 2 for v in row) for row in levels]


def _mark(correct: bool) -> str:
    return "OK " if correct else "NG "


def format_sample_report(rows: Sequence[SampleReportRow], epsilon: float, show_images: bool = False) -> str:
    lines = [f"# predictions on clean and PGD (eps={format_fraction(epsilon)}) inputs", "index,label,clean_pred,clean_conf,clean_ok,adv_pred,adv_conf,adv_ok"]
    for row in rows:
        lines.append(
            f"{row.index},{row.label},{row.clean_class},{row.clean_confidence * 100:.1f}%,{_mark(row.clean_correct).strip()},"
            f"{row.attacked_class},{row.attacked_confidence * 100:.1f}%,{_mark(row.attacked_correct).strip()}"
        )
        if show_images:
            for clean_line, adv_line in zip(ascii_thumbnail(row.clean_pixels), ascii_thumbnail(row.attacked_pixels)):
                lines.append(f"    {clean_line}   {adv_line}")
    return "\n".join(lines) + "\n"


# endregion


def show_samples(
    params: np.ndarray, test: Sequence, n: int, epsilon: float, iterations: int = DEFAULT_ITERATIONS, template: Optional[LayerTemplate] = None
) -> List[SampleReportRow]:
    """clean vs. PGD-attacked predictions of the first n test samples, confidence = max softmax"""
    assert n >= 0, "n must not be negative"
    chosen = list(test[:n])
    if not chosen:
        return []

    pixels, labels = stack_samples(chosen)
    if epsilon > 0:
        attacked = pgd_attack_batch(params, pixels, labels, AttackConfig.for_evaluation(epsilon, iterations), template)
    else:
        attacked = pixels.copy()

    _, clean_probs = model_util.forward_batch(params, pixels, template)
    _, adv_probs = model_util.forward_batch(params, attacked, template)
    rows = []
    for i, sample in enumerate(chosen):
        rows.append(
            SampleReportRow(
                sample.index,
                int(labels[i]),
                int(np.argmax(clean_probs[i])),
                float(np.max(clean_probs[i])),
                int(np.argmax(adv_probs[i])),
                float(np.max(adv_probs[i])),
                pixels[i],
                attacked[i],
            )
        )
    return rows
