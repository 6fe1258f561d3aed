"""Writers for fit reports, comparison tables, oracle chains and run metadata."""

from __future__ import annotations

import json
import math
from pathlib import Path
from typing import Mapping, Optional, Sequence

import pandas as pd

from .comparison import OracleResult
from .inla_pipeline import FitReport
from .lgm.model import SCHEMA_VERSION, Dataset, LatentModel, model_to_dict

FLOAT_FORMAT = "%.17g"


def _finite_or_null(value):
    """NaN and infinite floats become null; the writers emit strict JSON."""
    if isinstance(value, float) and not math.isfinite(value):
        return None
    if isinstance(value, dict):
        return {key: _finite_or_null(item) for key, item in value.items()}
    if isinstance(value, (list, tuple)):
        return [_finite_or_null(item) for item in value]
    return value


def write_json(path: Path, payload) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    text = json.dumps(_finite_or_null(payload), indent=2, allow_nan=False)
    path.write_text(text + "\n", encoding="utf-8")
    return path


def write_csv(path: Path, frame: pd.DataFrame) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
    return path


def marginals_frame(report: FitReport) -> pd.DataFrame:
    rows = []
    for marginal in report.marginals:
        rows.extend(marginal.density.to_frame_rows(marginal.name))
    return pd.DataFrame(rows, columns=["component", "abscissa", "density"])


def traces_frame(report: FitReport, indices: Sequence[int]) -> pd.DataFrame:
    index_label = " ".join(str(int(i)) for i in indices)
    rows = [
        {
            "kind": row["kind"],
            "indices": index_label,
            "iteration": row["iteration"],
            "objective": row["objective"],
            "grad_norm": row["grad_norm"],
            "delta": " ".join(FLOAT_FORMAT % v for v in row["delta"]),
        }
        for row in report.traces
    ]
    return pd.DataFrame(rows, columns=["kind", "indices", "iteration", "objective", "grad_norm", "delta"])


def write_fit_report(report: FitReport, out_dir: Path, *, correction_indices: Sequence[int] = ()) -> list[Path]:
    """report_<strategy>.json, marginals_<strategy>.csv and, for corrected strategies, traces_<strategy>.csv."""
    out_dir = Path(out_dir)
    written = [
        write_json(out_dir / f"report_{report.strategy}.json", report.to_json_data()),
        write_csv(out_dir / f"marginals_{report.strategy}.csv", marginals_frame(report)),
    ]
    if report.traces:
        written.append(write_csv(out_dir / f"traces_{report.strategy}.csv", traces_frame(report, correction_indices)))
    return written


def timings_payload(reports: Mapping[str, FitReport], oracle: Optional[OracleResult] = None) -> dict:
    payload = {"schema_version": SCHEMA_VERSION, "strategies": {s: dict(r.timings) for s, r in reports.items()}}
    if oracle is not None:
        payload["oracle"] = {"kind": oracle.kind, "seconds": oracle.seconds}
    return payload


def status_payload(
    strategies: Sequence[str],
    failures: Mapping[str, str],
    *,
    oracle_status: Optional[str] = None,
    oracle_error: Optional[str] = None,
) -> dict:
    entries = []
    for strategy in strategies:
        if strategy in failures:
            entries.append({"strategy": strategy, "status": "failed", "error": failures[strategy]})
        else:
            entries.append({"strategy": strategy, "status": "ok"})
    payload = {"schema_version": SCHEMA_VERSION, "strategies": entries}
    if oracle_status is not None:
        payload["oracle"] = {"status": oracle_status}
        if oracle_error:
            payload["oracle"]["error"] = oracle_error
    return payload


def chain_frame(oracle: OracleResult) -> pd.DataFrame:
    """Post-burn-in draws of every chain, stacked, with a chain column first."""
    frames = []
    for chain in oracle.chains:
        kept = chain.post_burn_in()
        frame = pd.DataFrame(kept, columns=list(chain.names))
        frame.insert(0, "chain", chain.chain_index)
        frames.append(frame)
    if not frames:
        return pd.DataFrame(columns=["chain", *oracle.names])
    return pd.concat(frames, ignore_index=True)


def write_oracle(oracle: OracleResult, out_dir: Path) -> list[Path]:
    out_dir = Path(out_dir)
    written = []
    if oracle.kind == "mcmc":
        written.append(write_csv(out_dir / "chain.csv", chain_frame(oracle)))
        written.append(write_json(out_dir / "chain_summary.json", oracle.summary))
    rows = []
    for name, grid in zip(oracle.names, oracle.densities):
        rows.extend(grid.to_frame_rows(name))
    written.append(write_csv(out_dir / f"marginals_{oracle.kind}.csv", pd.DataFrame(rows)))
    return written


def write_model(model: LatentModel, data: Dataset, path: Path) -> Path:
    return write_json(path, model_to_dict(model, data))

