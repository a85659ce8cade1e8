"""Per-example SI-SDRi evaluation, ablation tables and per-split curves."""

from __future__ import annotations

import csv
import io
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .config import config_hash
from .metrics import accuracy, si_sdr


@dataclass
class EvalResult:
    rows: list[dict] = field(default_factory=list)
    errors: list[dict] = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    @property
    def si_sdri(self) -> np.ndarray:
        return np.array([r["si_sdri"] for r in self.rows])

    @property
    def mean_si_sdri(self) -> float:
        return float(self.si_sdri.mean())

    @property
    def accuracy(self) -> float:
        return accuracy(self.si_sdri)

    def aggregate(self) -> dict:
        return {
            "n": len(self.rows),
            "n_errors": len(self.errors),
            "mean_si_sdri": self.mean_si_sdri,
            "accuracy": self.accuracy,
        }

    def to_jsonl(self, path) -> None:
        lines = [json.dumps({"type": "meta", **self.meta}, sort_keys=True)]
        lines += [json.dumps({"type": "example", **r}, sort_keys=True) for r in self.rows]
        lines += [json.dumps({"type": "error", **e}, sort_keys=True) for e in self.errors]
        lines.append(json.dumps({"type": "aggregate", **self.aggregate()}, sort_keys=True))
        Path(path).write_text("\n".join(lines) + "\n")

    @classmethod
    def from_jsonl(cls, path) -> "EvalResult":
        res = cls()
        for n, line in enumerate(Path(path).read_text().splitlines(), 1):
            try:
                d = json.loads(line)
                kind = d.pop("type")
            except (json.JSONDecodeError, KeyError) as exc:
                raise ValueError(f"{path}:{n}: malformed results line") from exc
            if kind == "meta":
                res.meta = d
            elif kind == "example":
                missing = {"utterance_id", "target_speaker", "si_sdr_mix", "si_sdr_est", "si_sdri"} - d.keys()
                if missing:
                    raise ValueError(f"{path}:{n}: example row lacks {sorted(missing)}")
                res.rows.append(d)
            elif kind == "error":
                res.errors.append(d)
            elif kind != "aggregate":
                raise ValueError(f"{path}:{n}: unknown record type {kind!r}")
        if "config_hash" in res.meta:
            body = {k: v for k, v in res.meta.items() if k != "config_hash"}
            if config_hash(body) != res.meta["config_hash"]:
                raise ValueError(f"{path}: config hash does not match the recorded metadata")
        return res


def model_estimator(model):
    """Wrap an extractor as ``example -> estimate`` (eval mode, no grad)."""

    def run(ex):
        model.eval()
        with torch.no_grad():
            mix = torch.as_tensor(ex.mixture, dtype=torch.float32)[None]
            enr = torch.as_tensor(ex.enrollment, dtype=torch.float32)[None]
            return model(mix, enr)[0].numpy()

    return run


def score_example(ex, estimate) -> dict:
    """Metrics for one example. Estimate/reference lengths are truncated to the shorter."""
    n = min(len(estimate), len(ex.target), len(ex.mixture))
    ref = np.asarray(ex.target[:n], dtype=np.float64)
    s_mix = si_sdr(np.asarray(ex.mixture[:n], dtype=np.float64), ref)
    s_est = si_sdr(np.asarray(estimate[:n], dtype=np.float64), ref)
    return {
        "utterance_id": ex.mixture_id,
        "target_speaker": ex.target_speaker,
        "enrollment_id": ex.enrollment_id,
        "si_sdr_mix": s_mix,
        "si_sdr_est": s_est,
        "si_sdri": s_est - s_mix,
    }


def evaluate_examples(estimator, examples) -> EvalResult:
    if isinstance(estimator, torch.nn.Module):
        estimator = model_estimator(estimator)
    return EvalResult(rows=[score_example(ex, estimator(ex)) for ex in examples])


def evaluate(
    estimator, dataset, both_directions: bool = True, limit: int | None = None, workers: int = 1
) -> EvalResult:
    """Score every (mixture, target speaker) pair of a dataset in manifest order.

    ``estimator`` is an extractor or any ``example -> estimate`` callable.
    Examples whose audio cannot be read are recorded in ``errors`` and left
    out of the aggregate. With ``workers > 1`` examples are scored in threads;
    the row order is unchanged.
    """
    if isinstance(estimator, torch.nn.Module):
        estimator = model_estimator(estimator)
    keys = [(i, d) for i in range(len(dataset)) for d in ((0, 1) if both_directions else (0,))]

    def one(key):
        i, d = key
        try:
            ex = dataset.example(i, d)
        except (OSError, ValueError) as exc:
            return None, {"utterance_id": dataset.entries[i].mixture_id, "direction": d, "error": str(exc)}
        return score_example(ex, estimator(ex)), None

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            outcomes = list(pool.map(one, keys[:limit]))
    else:
        outcomes = [one(k) for k in keys[:limit]]
    res = EvalResult()
    for row, err in outcomes:
        if err is None:
            res.rows.append(row)
        else:
            res.errors.append(err)
    return res


# --------------------------------------------------------------------------
# reports

TABLE_COLUMNS = ("config", "tf_map", "contextual", "spk_emb", "si_sdri", "accuracy", "delta_si_sdri", "delta_accuracy")


def ablation_rows(results: dict[str, tuple[dict, EvalResult]], baseline: str | None = None) -> list[dict]:
    """One row per configuration; deltas are relative to ``baseline`` if given.

    ``results`` maps a config name to ``(feature_flags, EvalResult)`` where
    feature flags hold ``tf_map``/``contextual``/``spk_emb``.
    """
    rows = []
    for name, (flags, res) in results.items():
        rows.append(
            {
                "config": name,
                "tf_map": {"off": "", "spec": "Spec.", "emb": "Emb."}[flags.get("tf_map", "off")],
                "contextual": "yes" if flags.get("contextual") else "",
                "spk_emb": "yes" if flags.get("spk_emb") else "",
                "si_sdri": res.mean_si_sdri,
                "accuracy": res.accuracy,
            }
        )
    base = next((r for r in rows if r["config"] == baseline), None)
    for r in rows:
        r["delta_si_sdri"] = r["si_sdri"] - base["si_sdri"] if base else None
        r["delta_accuracy"] = r["accuracy"] - base["accuracy"] if base else None
    return rows


def _fmt(v):
    if v is None:
        return ""
    return f"{v:.2f}" if isinstance(v, float) else str(v)


def ablation_markdown(rows: list[dict]) -> str:
    header = ["Config", "TF Map", "Contextual Embedding", "Speaker Embedding", "SI-SDRi / dB", "Accuracy / %", "Δ SI-SDRi", "Δ Acc."]
    lines = ["| " + " | ".join(header) + " |", "|" + "---|" * len(header)]
    for r in rows:
        lines.append("| " + " | ".join(_fmt(r[c]) for c in TABLE_COLUMNS) + " |")
    return "\n".join(lines) + "\n"


def ablation_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=TABLE_COLUMNS, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({c: ("" if r[c] is None else r[c]) for c in TABLE_COLUMNS})
    return buf.getvalue()


def curves_csv(histories: dict[str, list[dict]]) -> str:
    """Long-format ``config,epoch,split,si_sdri`` rows from training logs."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["config", "epoch", "split", "si_sdri"])
    for name, records in histories.items():
        for rec in records:
            for key, val in rec.items():
                if key.endswith("_si_sdri"):
                    w.writerow([name, rec["epoch"], key[: -len("_si_sdri")], val])
    return buf.getvalue()


def plot_curves(curves_path, out_path) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    with open(curves_path, newline="") as f:
        rows = list(csv.DictReader(f))
    fig, ax = plt.subplots(figsize=(6, 4))
    for key in sorted({(r["config"], r["split"]) for r in rows}):
        pts = [(int(r["epoch"]), float(r["si_sdri"])) for r in rows if (r["config"], r["split"]) == key]
        ax.plot(*zip(*pts), label=f"{key[0]} / {key[1]}")
    ax.set_xlabel("epoch")
    ax.set_ylabel("SI-SDRi (dB)")
    ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(out_path)
    plt.close(fig)
