"""CSV renderers for filter outputs.

Every table ends with a ``# config_sha256=<hex>`` comment line. Floats are
written with ``repr`` so equal runs give byte-identical files.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
from typing import Iterable, Mapping, Sequence

import numpy as np

from .filter import EssTrace, FilterOutput, WeightTrace

__all__ = [
    "config_hash",
    "csv_table",
    "ensemble_weights_csv",
    "ess_trace_csv",
    "estimates_csv",
    "weight_trace_csv",
]


def config_hash(config: Mapping) -> str:
    """SHA-256 of the canonical JSON form of ``config``."""
    text = json.dumps(dict(config), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()


def _cell(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def csv_table(header: Sequence[str], rows: Iterable[Sequence], digest: str) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([_cell(v) for v in row])
    buf.write(f"# config_sha256={digest}\n")
    return buf.getvalue()


def ess_trace_csv(trace: EssTrace, digest: str) -> str:
    return csv_table(("t", "k", "ess", "did_resample"), trace.rows(), digest)


def weight_trace_csv(trace: WeightTrace, digest: str) -> str:
    return csv_table(("t", "k", "particle", "log_beta", "reward_part", "girsanov_part"), trace.rows, digest)


def estimates_csv(means: np.ndarray, truth: np.ndarray | None, digest: str) -> str:
    """Posterior means per observation time (``t`` counts from 1), next to the truth."""
    means = np.atleast_2d(means)
    D = means.shape[1]
    header = ["t"] + [f"mean{i + 1}" for i in range(D)]
    if truth is not None:
        header += [f"true{i + 1}" for i in range(D)]
    rows = []
    for t, m in enumerate(means):
        row = [t + 1, *m]
        if truth is not None:
            row += list(truth[t])
        rows.append(row)
    return csv_table(header, rows, digest)


def ensemble_weights_csv(output: FilterOutput, digest: str) -> str:
    """Particles and normalized weights for every stored ensemble."""
    D = output.ensembles[0].dim
    header = ["t", "particle"] + [f"x{i + 1}" for i in range(D)] + ["weight"]
    rows = []
    for t, ens in enumerate(output.ensembles):
        w = ens.normalized_weights()
        for i, x in enumerate(ens.particles):
            rows.append([t + 1, i, *x, w[i]])
    return csv_table(header, rows, digest)
