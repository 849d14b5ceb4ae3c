# prints clean vs. PGD-attacked predictions of a trained checkpoint

import argparse
import os
import sys
from typing import Optional, Sequence

from library.attack_util import DEFAULT_ITERATIONS
from library.mnist_util import DEFAULT_TEST_SIZE, load_mnist_split, select_test_samples
from library.report_util import format_sample_report, show_samples
from library.train_util import load_checkpoint


def report(args: argparse.Namespace) -> str:
    model = load_checkpoint(args.checkpoint)
    print(f"loaded {args.checkpoint}: round {model.round}, phases {model.provenance.phases}")

    test = load_mnist_split(args.test_images, args.test_labels)
    test = select_test_samples(test, args.test_size, args.seed)

    rows = show_samples(model.params, test, args.n, args.epsilon, args.attack_iterations, model.provenance.template)
    text = format_sample_report(rows, args.epsilon, args.show_images)

    if args.out is not None:
        os.makedirs(os.path.dirname(os.path.abspath(args.out)), exist_ok=True)
        with open(args.out, "w", encoding="utf-8") as f:
            f.write(text)
        print(f"report saved / レポートを保存しました: {args.out}")
    return text


def setup_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description="show predictions of a checkpoint on clean and attacked test samples")
    parser.add_argument("--checkpoint", type=str, required=True, help="checkpoint (.qfal) to load / 読み込むチェックポイント")
    parser.add_argument("--test_images", "--test-images", dest="test_images", type=str, default=None, help="MNIST test images / テスト用画像ファイル")
    parser.add_argument("--test_labels", "--test-labels", dest="test_labels", type=str, default=None, help="MNIST test labels / テスト用ラベルファイル")
    parser.add_argument(
        "--test_size", "--test-size", dest="test_size", type=int, default=DEFAULT_TEST_SIZE, help="shared test samples / 共有テストサンプル数"
    )
    parser.add_argument("--seed", type=int, default=0, help="seed used to select the test set / テストセット選択の乱数シード")
    parser.add_argument("--n", type=int, default=8, help="number of samples to show / 表示するサンプル数")
    parser.add_argument("--epsilon", type=float, default=0.1, help="PGD epsilon / PGDのε")
    parser.add_argument(
        "--attack_iterations", "--attack-iterations", dest="attack_iterations", type=int, default=DEFAULT_ITERATIONS, help="PGD iterations"
    )
    parser.add_argument("--show_images", "--show-images", dest="show_images", action="store_true", help="print 8x8 ASCII thumbnails / 8x8の画像を文字で表示する")
    parser.add_argument("--out", type=str, default=None, help="also write the report to this file / レポートの保存先")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = setup_parser()
    args = parser.parse_args(argv)
    try:
        text = report(args)
    except (FileNotFoundError, OSError, ValueError) as e:
        print(f"error: {e} / エラーが発生しました")
        return 1
    print(text, end="")
    return 0


if __name__ == "__main__":
    sys.exit(main())
