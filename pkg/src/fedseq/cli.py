"""Command-line entry point: ``fedseq generate | run | compare``."""

import argparse
import logging
import sys
from pathlib import Path

from . import compare, rng
from . import sequence_data as sd
from .config import ConfigError, ExperimentConfig, format_config, load_config
from .federation import run_federated

log = logging.getLogger("fedseq")


def _source_images(cfg, stream):
    n_train = cfg.examples_per_client * cfg.n_clients
    if cfg.source == "synthetic":
        train_seed, test_seed = stream.integers(0, 2**63, size=2)
        images, labels = sd.generate_synthetic_digits(n_train, int(train_seed))
        test_images, test_labels = sd.generate_synthetic_digits(cfg.test_size, int(test_seed))
        return images, labels, test_images, test_labels
    if not cfg.idx_images or not cfg.idx_labels:
        raise ConfigError("source = idx needs idx_images and idx_labels")
    images, labels = sd.load_idx_files(cfg.resolve(cfg.idx_images), cfg.resolve(cfg.idx_labels))
    if cfg.idx_test_images and cfg.idx_test_labels:
        test_images, test_labels = sd.load_idx_files(
            cfg.resolve(cfg.idx_test_images), cfg.resolve(cfg.idx_test_labels)
        )
        test_images, test_labels = test_images[: cfg.test_size], test_labels[: cfg.test_size]
    else:
        if len(labels) < n_train + cfg.test_size:
            raise ConfigError(
                f"IDX file holds {len(labels)} images, need {n_train + cfg.test_size} for train + test"
            )
        test_images = images[n_train : n_train + cfg.test_size]
        test_labels = labels[n_train : n_train + cfg.test_size]
    return images[:n_train], labels[:n_train], test_images, test_labels


def build_dataset(cfg):
    stream = rng.dataset_rng(cfg.seed)
    images, labels, test_images, test_labels = _source_images(cfg, stream)
    build = sd.build_vl_dataset if cfg.construction == "vl" else sd.build_fl_dataset
    return build(images, labels, test_images, test_labels, cfg.n_clients, cfg.size_menu, stream)


def manifest_path(dataset_path):
    p = Path(dataset_path)
    return p.with_name(p.stem + ".manifest.csv")


def cmd_generate(cfg):
    path = cfg.dataset_path()
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {path.parent}: {exc}") from exc
    data = build_dataset(cfg)
    sd.save_dataset(data, path)
    sd.write_manifest(data, manifest_path(path))
    log.info("wrote %s (%d clients, %d test sequences)", path, len(data.clients), len(data.test_set))
    return data


def _load_checked(cfg):
    path = cfg.dataset_path()
    if not path.exists():
        raise FileNotFoundError(f"dataset {path} not found; run `fedseq generate` first")
    data = sd.load_dataset(path)
    if len(data.clients) != cfg.n_clients:
        raise ConfigError(f"config has n_clients={cfg.n_clients}, dataset {path} has {len(data.clients)}")
    menu = tuple(s * s for s in cfg.size_menu)
    if tuple(data.length_menu) != menu:
        raise ConfigError(f"config length menu {menu} does not match dataset {data.length_menu}")
    if data.d != 1:
        raise ConfigError(f"dataset feature width {data.d} != 1")
    return data


def run_experiment(cfg, data=None):
    data = data if data is not None else _load_checked(cfg)
    ckpt = None
    if cfg.checkpoints:
        ckpt = Path(cfg.data_dir()) / f"{cfg.run_id}_checkpoints"
    return run_federated(data, cfg.fed(), checkpoint_dir=ckpt)


def cmd_run(cfg, out):
    history = run_experiment(cfg)
    text = compare.metrics_csv(history, cfg.run_id, cfg.strategy, cfg.n_clients)
    Path(out).write_text(text)
    print(f"final test accuracy: {history[-1].test_accuracy:.4f}")
    return history


def cmd_compare(cfg_vl, cfg_fl, out):
    for a in ("seed", "hidden", "rounds", "n_clients"):
        if getattr(cfg_vl, a) != getattr(cfg_fl, a):
            raise ConfigError(f"arms disagree on {a}: {getattr(cfg_vl, a)} vs {getattr(cfg_fl, a)}")
    histories = []
    out = Path(out)
    for arm, cfg in (("vl", cfg_vl), ("fl", cfg_fl)):
        if not cfg.dataset_path().exists():
            cmd_generate(cfg)
        history = run_experiment(cfg)
        arm_csv = out.with_name(f"{out.stem}.{arm}.csv")
        arm_csv.write_text(compare.metrics_csv(history, cfg.run_id, cfg.strategy, cfg.n_clients))
        histories.append(history)
    out.write_text(compare.compare_csv(*histories))
    print(
        f"final test accuracy: vl {histories[0][-1].test_accuracy:.4f}, "
        f"fl {histories[1][-1].test_accuracy:.4f}"
    )
    return histories


def make_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="override the root seed")
    common.add_argument("--threads", type=int, default=None, help="client worker threads")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="fedseq", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    g = sub.add_parser("generate", parents=[common], help="build a federated dataset and manifest")
    g.add_argument("--config", required=True)
    r = sub.add_parser("run", parents=[common], help="run FedAvg and write a metrics CSV")
    r.add_argument("--config", required=True)
    r.add_argument("--out", required=True)
    c = sub.add_parser("compare", parents=[common], help="run both arms and write a comparison CSV")
    c.add_argument("--vl", required=True)
    c.add_argument("--fl", required=True)
    c.add_argument("--out", required=True)
    sub.add_parser("show-config", parents=[common], help="print the effective config").add_argument(
        "--config", default=None
    )
    return parser


def main(argv=None):
    args = make_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(asctime)s %(name)s %(message)s",
    )
    overrides = {"seed": args.seed, "threads": args.threads}
    try:
        if args.command == "generate":
            cmd_generate(load_config(args.config, **overrides))
        elif args.command == "run":
            cmd_run(load_config(args.config, **overrides), args.out)
        elif args.command == "compare":
            cmd_compare(
                load_config(args.vl, **overrides), load_config(args.fl, **overrides), args.out
            )
        else:
            cfg = load_config(args.config, **overrides) if args.config else ExperimentConfig()
            sys.stdout.write(format_config(cfg))
    except (ConfigError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
