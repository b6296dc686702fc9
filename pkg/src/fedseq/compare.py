"""Metrics CSV I/O and the two-arm comparison table."""

import csv
import io

import numpy as np

THRESHOLDS = (0.5, 0.8, 0.9)


def fmt(x):
    """Locale-free decimal with exactly nine significant digits."""
    x = float(x)
    if not np.isfinite(x):
        raise ValueError(f"refusing to write non-finite value {x!r}")
    return f"{x:.8e}"


def metrics_header(n_clients):
    return (
        ["run_id", "strategy", "round", "test_acc", "avg_train_loss"]
        + [f"div_{i}" for i in range(n_clients)]
        + [f"loss_{i}" for i in range(n_clients)]
    )


def metrics_csv(history, run_id, strategy, n_clients):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(metrics_header(n_clients))
    for m in history:
        w.writerow(
            [run_id, strategy, m.round, fmt(m.test_accuracy), fmt(m.avg_train_loss)]
            + [fmt(v) for v in m.divergence]
            + [fmt(v) for v in m.client_losses]
        )
    return buf.getvalue()


def read_metrics(path_or_text):
    text = path_or_text
    if "\n" not in str(path_or_text):
        with open(path_or_text) as fh:
            text = fh.read()
    rows = list(csv.DictReader(io.StringIO(text)))
    return rows


def auc(acc):
    """Trapezoid area under the per-round accuracy curve (unit spacing)."""
    return float(np.trapezoid(np.asarray(acc, dtype=np.float64)))


def rounds_to_fraction(rounds, acc, fraction):
    """First round whose accuracy reaches ``fraction`` of the final accuracy."""
    target = fraction * acc[-1]
    for r, a in zip(rounds, acc):
        if a >= target:
            return int(r)
    return int(rounds[-1])


def compare_rows(vl_history, fl_history):
    if len(vl_history) != len(fl_history):
        raise ValueError(f"round count mismatch: vl has {len(vl_history)}, fl has {len(fl_history)}")
    header = [
        "kind", "round",
        "vl_test_acc", "fl_test_acc", "delta_test_acc",
        "vl_avg_train_loss", "fl_avg_train_loss", "delta_avg_train_loss",
    ]
    rows = [header]
    for a, b in zip(vl_history, fl_history):
        if a.round != b.round:
            raise ValueError(f"round index mismatch: {a.round} vs {b.round}")
        rows.append([
            "round", a.round,
            fmt(a.test_accuracy), fmt(b.test_accuracy), fmt(b.test_accuracy - a.test_accuracy),
            fmt(a.avg_train_loss), fmt(b.avg_train_loss), fmt(b.avg_train_loss - a.avg_train_loss),
        ])
    rounds = [m.round for m in vl_history]
    vl_acc = [m.test_accuracy for m in vl_history]
    fl_acc = [m.test_accuracy for m in fl_history]
    a_vl, a_fl = auc(vl_acc), auc(fl_acc)
    rows.append(["auc", "", fmt(a_vl), fmt(a_fl), fmt(a_fl - a_vl), "", "", ""])
    for frac in THRESHOLDS:
        r_vl = rounds_to_fraction(rounds, vl_acc, frac)
        r_fl = rounds_to_fraction(rounds, fl_acc, frac)
        rows.append([f"reach_{frac:g}", "", r_vl, r_fl, r_fl - r_vl, "", "", ""])
    return rows


def compare_csv(vl_history, fl_history):
    buf = io.StringIO()
    csv.writer(buf, lineterminator="\n").writerows(compare_rows(vl_history, fl_history))
    return buf.getvalue()
