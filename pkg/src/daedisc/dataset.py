"""Trajectory datasets: noisy training views over a hidden full record.

A dataset starts with only the state trajectories and their numerically
differentiated derivatives visible; every other catalog signal stays in the
hidden (noiseless) full record until a discovery run reveals it.  Noise is
Gaussian with a per-state standard deviation of ``noise_sigma`` times the
signal amplitude, where amplitude means the max absolute value over the
record.  Derivatives come from central differences on the noisy states with
one-sided differences at the endpoints.

CSV export writes the visible view plus the full record and a JSON metadata
sidecar; import reproduces every value exactly (floats serialized with
``repr``).
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .benchmarks import FullRecord, ScenarioConfig, get_model
from .evaluator import SampleBatch


class UnknownSignal(KeyError):
    pass


class SchemaMismatch(ValueError):
    pass


def central_difference(values: np.ndarray, dt: float) -> np.ndarray:
    """Central differences inside, one-sided at both endpoints."""
    out = np.empty_like(values)
    out[1:-1] = (values[2:] - values[:-2]) / (2.0 * dt)
    out[0] = (values[1] - values[0]) / dt
    out[-1] = (values[-1] - values[-2]) / dt
    return out


def deriv_name(state: str) -> str:
    return f"d{state}_dt"


@dataclass
class TrajectoryDataset:
    """Visible training columns plus a handle on the hidden full record."""

    time: np.ndarray
    states: dict[str, np.ndarray]
    derivs: dict[str, np.ndarray]
    revealed: dict[str, np.ndarray] = field(default_factory=dict)
    full: FullRecord | None = None
    metadata: dict = field(default_factory=dict)

    @property
    def state_names(self) -> tuple[str, ...]:
        return tuple(self.states)

    @property
    def n_samples(self) -> int:
        return int(self.time.shape[0])

    @property
    def dt(self) -> float:
        return float(self.time[1] - self.time[0])

    def revealed_names(self) -> tuple[str, ...]:
        return tuple(self.revealed)

    def revealable_names(self) -> tuple[str, ...]:
        if self.full is None:
            return ()
        return tuple(n for n in self.full.columns if n not in self.full.state_names)

    def reveal(self, names) -> None:
        """Copy catalog columns from the hidden record into the visible view."""
        if self.full is None:
            raise UnknownSignal("dataset has no hidden record to reveal from")
        allowed = set(self.revealable_names())
        for name in names:
            if name not in allowed:
                raise UnknownSignal(name)
            if name in self.revealed:
                continue
            self.revealed[name] = self.full.columns[name]

    def to_batch(self) -> SampleBatch:
        cols: dict[str, np.ndarray] = {}
        cols.update(self.states)
        cols.update(self.derivs)
        cols.update(self.revealed)
        return SampleBatch.from_columns(cols)

    def visible_columns(self) -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {"t": self.time}
        out.update(self.states)
        out.update(self.derivs)
        out.update(self.revealed)
        return out


def make_dataset(record: FullRecord, scen: ScenarioConfig) -> TrajectoryDataset:
    """Noisy training view of a simulation record.

    Noise is applied to state trajectories only; derivative columns are
    central differences of the noisy states.  Deterministic in
    (record, scenario, seed).
    """
    rng = np.random.default_rng(scen.seed)
    dt = record.dt
    states: dict[str, np.ndarray] = {}
    derivs: dict[str, np.ndarray] = {}
    for name in record.state_names:
        clean = record.columns[name]
        amplitude = float(np.max(np.abs(clean)))
        sigma = scen.noise_sigma * amplitude
        noisy = clean + rng.normal(0.0, sigma, clean.shape) if sigma > 0 else clean.copy()
        states[name] = noisy
        derivs[deriv_name(name)] = central_difference(noisy, dt)
    return TrajectoryDataset(
        time=record.time.copy(), states=states, derivs=derivs, revealed={},
        full=record,
        metadata={"model": record.model_id, "scenario": record.scenario,
                  "seed": scen.seed})


def dataset_from_simulation(model_id: str, scen: ScenarioConfig) -> TrajectoryDataset:
    from .benchmarks import simulate

    return make_dataset(simulate(get_model(model_id), scen), scen)


# ---------------------------------------------------------------------------
# CSV + sidecar persistence


def _write_csv(path: Path, header: list[str], columns: list[np.ndarray]) -> None:
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in zip(*columns):
            writer.writerow([repr(float(v)) for v in row])


def _read_csv(path: Path) -> tuple[list[str], dict[str, np.ndarray]]:
    with path.open("r", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaMismatch(f"{path} is empty") from None
        rows = [[float(v) for v in row] for row in reader]
    data = np.array(rows, dtype=np.float64) if rows else np.empty((0, len(header)))
    if data.shape[1] != len(header):
        raise SchemaMismatch(f"{path}: row width does not match header")
    return header, {name: data[:, i] for i, name in enumerate(header)}


def export_dataset(dataset: TrajectoryDataset, prefix: str | Path) -> None:
    """Write ``<prefix>.csv``, ``<prefix>.full.csv`` and ``<prefix>.meta.json``."""
    prefix = Path(prefix)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    states = list(dataset.states)
    header = (["t"] + states + [deriv_name(s) for s in states]
              + list(dataset.revealed))
    columns = ([dataset.time] + [dataset.states[s] for s in states]
               + [dataset.derivs[deriv_name(s)] for s in states]
               + [dataset.revealed[n] for n in dataset.revealed])
    _write_csv(prefix.with_suffix(".csv"), header, columns)
    full = dataset.full
    if full is not None:
        full_header = ["t"] + list(full.columns)
        full_columns = [full.time] + [full.columns[n] for n in full.columns]
        _write_csv(Path(str(prefix) + ".full.csv"), full_header, full_columns)
    meta = {
        "format": "daedisc-dataset",
        "version": 1,
        "model": dataset.metadata.get("model"),
        "scenario": dataset.metadata.get("scenario"),
        "seed": dataset.metadata.get("seed"),
        "states": states,
        "revealed": list(dataset.revealed),
        "full_columns": list(full.columns) if full is not None else None,
        "full_states": list(full.state_names) if full is not None else None,
    }
    prefix.with_suffix(".meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True))


def import_dataset(prefix: str | Path) -> TrajectoryDataset:
    prefix = Path(prefix)
    meta_path = prefix.with_suffix(".meta.json")
    if not meta_path.exists():
        raise SchemaMismatch(f"missing sidecar {meta_path}")
    meta = json.loads(meta_path.read_text())
    if meta.get("format") != "daedisc-dataset":
        raise SchemaMismatch("sidecar is not a dataset descriptor")
    header, data = _read_csv(prefix.with_suffix(".csv"))
    states = meta["states"]
    expected = (["t"] + states + [deriv_name(s) for s in states] + meta["revealed"])
    if header != expected:
        raise SchemaMismatch(
            f"column order mismatch: expected {expected}, found {header}")
    full = None
    full_path = Path(str(prefix) + ".full.csv")
    if meta.get("full_columns") is not None:
        if not full_path.exists():
            raise SchemaMismatch(f"missing full record {full_path}")
        full_header, full_data = _read_csv(full_path)
        if full_header != ["t"] + meta["full_columns"]:
            raise SchemaMismatch("full record columns do not match sidecar")
        full = FullRecord(
            model_id=meta["model"], time=full_data["t"],
            columns={n: full_data[n] for n in meta["full_columns"]},
            state_names=tuple(meta["full_states"]), scenario=meta["scenario"])
    return TrajectoryDataset(
        time=data["t"],
        states={s: data[s] for s in states},
        derivs={deriv_name(s): data[deriv_name(s)] for s in states},
        revealed={n: data[n] for n in meta["revealed"]},
        full=full,
        metadata={"model": meta["model"], "scenario": meta["scenario"],
                  "seed": meta["seed"]},
    )
