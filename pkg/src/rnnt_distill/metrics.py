"""Token error rate, edit distance, and run metrics persistence."""

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path


def edit_distance(ref, hyp) -> int:
    """Levenshtein distance with unit insert/delete/substitute costs."""
    ref = list(ref)
    hyp = list(hyp)
    prev = list(range(len(hyp) + 1))
    for i, r in enumerate(ref, start=1):
        cur = [i] + [0] * len(hyp)
        for j, h in enumerate(hyp, start=1):
            cur[j] = min(
                prev[j] + 1,
                cur[j - 1] + 1,
                prev[j - 1] + (0 if r == h else 1),
            )
        prev = cur
    return prev[-1]


def token_error_rate(refs, hyps) -> float:
    """Aggregate TER: total edit distance over total reference length."""
    total_dist = sum(edit_distance(r, h) for r, h in zip(refs, hyps, strict=True))
    total_len = sum(len(list(r)) for r in refs)
    if total_len == 0:
        return 0.0 if total_dist == 0 else float("inf")
    return total_dist / total_len


@dataclass
class MetricsRecord:
    """One train or distill invocation's outcome."""

    run_id: str
    role: str
    generation: int
    ter: float
    final_loss: float
    loss_curve: list = field(default_factory=list)  # list of (step, value)


def write_metrics(records, out_dir) -> None:
    """Writes metrics.csv plus a metrics.json mirror carrying loss curves.

    Output bytes depend only on the records, so identical runs produce
    identical files.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "metrics.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["run_id", "role", "generation", "ter", "final_loss"])
        for rec in records:
            writer.writerow(
                [rec.run_id, rec.role, rec.generation,
                 f"{rec.ter:.10g}", f"{rec.final_loss:.10g}"]
            )
    payload = [
        {
            "run_id": rec.run_id,
            "role": rec.role,
            "generation": rec.generation,
            "ter": rec.ter,
            "final_loss": rec.final_loss,
            "loss_curve": [[int(s), float(v)] for s, v in rec.loss_curve],
        }
        for rec in records
    ]
    with open(out / "metrics.json", "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
