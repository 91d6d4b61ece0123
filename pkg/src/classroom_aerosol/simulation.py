"""Coupled run loop: flow, droplets, dose, exports, checkpoints and refinement studies."""
from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import math
import pickle
import struct
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .analytic import AnalyticFlow
from .breathing import Breathing
from .classtime import class_time_report
from .deposition import EfficiencyTable, deposition_counts, deposition_csv, deposition_report
from .droplets import (
    DropletArrays, DropletModel, StepStats, SurfaceGeometry, SurfaceLedger, advance, inject, injection_spec,
)
from .exposure import BoxArrays, ExposureLedger, accumulate_dose, risk_heatmap, summary
from .fomite import fomite_csv, fomite_table, surface_loading
from .scene import build_scene, teacher_id
from .solver import BoussinesqSolver, ResourceLimitError, export_fields

log = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"CACKPT01"
CHECKPOINT_VERSION = 1
TABULATION_SPACING = 0.05


class CheckpointError(RuntimeError):
    pass


class CorruptCheckpointError(CheckpointError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


def make_breathing(cfg) -> Breathing:
    b = cfg.breathing
    if abs(b.inhale_duration - 0.5 * b.period) > 1e-12:
        raise ValueError("the sinusoidal signal needs inhale_duration = period / 2")
    return Breathing(b.period, b.phase, cfg.dose.pulmonary_rate)


@dataclass
class SimulationState:
    """Everything needed to continue a run bit-identically."""

    t: float
    step: int
    droplets: DropletArrays
    ledger: ExposureLedger
    surfaces: SurfaceLedger
    flow: object = None
    deposition: dict = field(default_factory=dict)   # receptor index -> [(olf, ba), ...]
    next_sample: int = 0                              # index of the next inhale midpoint
    next_snapshot: int = 1
    clamped: int = 0
    substeps: int = 0
    config_digest: str = ""


class Simulation:
    """One scenario: scene, flow provider, droplet model and bookkeeping."""

    def __init__(self, cfg, out_dir=None, tabulation_spacing: float = TABULATION_SPACING):
        self.cfg = cfg
        self.out_dir = Path(out_dir) if out_dir is not None else None
        self.scene = build_scene(cfg)
        self.breathing = make_breathing(cfg)
        self.model = DropletModel.from_config(cfg)
        self.geometry = SurfaceGeometry(self.scene)
        self.occupant_ids = tuple(self.scene.occupant_ids)
        self.boxes = BoxArrays.from_scene(self.scene, self.occupant_ids)
        self.table = EfficiencyTable.from_csv(cfg.deposition.table)
        for i in cfg.infected:
            self.scene.occupant(i)
        tid = teacher_id(cfg)
        self.sources = [(self.scene.occupant_index(i), self.scene.occupant(i),
                         injection_spec(cfg, self.scene.occupant(i), teacher=(i == tid)))
                        for i in cfg.infected]
        self.solver = None
        self.flow = None
        if cfg.flow_provider == "solver":
            self.solver = BoussinesqSolver(self.scene, cfg.ambient, cfg.numerics, self.breathing)
        else:
            cells = np.prod(np.round(np.asarray(self.scene.room.extents) / tabulation_spacing) + 1)
            if cells > cfg.numerics.max_cells:
                raise ResourceLimitError(f"tabulation needs {int(cells)} nodes")
            exact = AnalyticFlow(self.scene, cfg.ambient, cfg.analytic, self.breathing)
            self.flow = exact.tabulate(tabulation_spacing)

    # ---- state
    def initial_state(self) -> SimulationState:
        ledger = ExposureLedger(self.occupant_ids, tuple(self.cfg.infected), self.cfg.dose.sigma)
        return SimulationState(0.0, 0, DropletArrays.empty(), ledger, SurfaceLedger.for_scene(self.scene),
                               self.solver.initial_state() if self.solver else None,
                               config_digest=self.cfg.digest())

    def _sample_time(self, k: int) -> float:
        b = self.breathing
        return b.phase + k * b.period + 0.75 * b.period

    def step(self, state: SimulationState) -> None:
        cfg = self.cfg
        dt = min(cfg.numerics.flow_dt, cfg.numerics.droplet_dt_max)
        t0 = state.t
        t1 = min(t0 + dt, cfg.duration)
        if t1 - t0 <= 1e-12:
            state.t = cfg.duration
            return
        if self.solver is not None:
            state.flow = self.solver.step(state.flow, t1 - t0)
            flow = self.solver.sampler(state.flow)
        else:
            flow = self.flow
        arr = state.droplets
        for idx, occ, spec in self.sources:
            arr.extend(inject(t0, t1 - t0, occ, spec, self.breathing, self.model, source_index=idx))
        stats = StepStats()

        def on_substep(ids, p_mid, t_a, t_b):
            accumulate_dose(state.ledger, self.boxes, self.breathing, cfg.dose,
                            arr.source[ids], arr.d0[ids], p_mid, t_a, t_b)

        advance(arr, flow, t1, self.model, self.geometry, state.step, state.surfaces,
                cfg.dose.viral_load, on_substep, stats)
        state.clamped += stats.clamped
        state.substeps += stats.substeps
        state.t = t1
        state.step += 1
        # deposition histograms at inhale midpoints
        while self._sample_time(state.next_sample) <= t1 + 1e-12:
            self._deposition_sample(state)
            state.next_sample += 1
        state.ledger.record(t1)
        every = cfg.output.snapshot_every
        if every > 0 and t1 + 1e-9 >= state.next_snapshot * every:
            self._snapshot(state)
            state.next_snapshot = int(math.floor((t1 + 1e-9) / every)) + 1

    def _deposition_sample(self, state: SimulationState) -> None:
        arr = state.droplets
        live = arr.status == 0
        pos, d = arr.pos[live], arr.d[live]
        infected = set(self.cfg.infected)
        for r, oid in enumerate(self.occupant_ids):
            if oid in infected:
                continue
            inside = np.all((pos >= self.boxes.lo[r]) & (pos <= self.boxes.hi[r]), axis=1) if len(pos) else []
            dd = d[inside] if len(pos) else np.zeros(0)
            state.deposition.setdefault(r, []).append(deposition_counts((dd, np.ones(len(dd))), self.table))

    def _snapshot(self, state: SimulationState) -> None:
        if self.out_dir is None:
            return
        tag = f"{state.t:09.3f}"
        if self.cfg.output.droplet_snapshots:
            d = self.out_dir / "droplets"
            d.mkdir(parents=True, exist_ok=True)
            with open(d / f"droplets_{tag}.jsonl", "w", encoding="utf-8") as fh:
                state.droplets.to_jsonl(fh, state.t)
        if self.cfg.output.field_snapshots and self.solver is not None:
            d = self.out_dir / "fields"
            d.mkdir(parents=True, exist_ok=True)
            export_fields(d / f"fields_{tag}.bin", state.flow, self.solver.grid)

    # ---- driver
    def run(self, state: SimulationState | None = None, until: float | None = None,
            checkpoint_at: float | None = None, checkpoint_path=None) -> SimulationState:
        state = self.initial_state() if state is None else state
        if state.config_digest != self.cfg.digest():
            raise CheckpointError("checkpoint belongs to a different configuration")
        end = self.cfg.duration if until is None else min(until, self.cfg.duration)
        saved = checkpoint_at is None
        while state.t < end - 1e-12:
            if not saved and state.t >= checkpoint_at - 1e-12:
                save_checkpoint(checkpoint_path, state)
                saved = True
            try:
                self.step(state)
            except Exception:
                if self.out_dir is not None:
                    self.out_dir.mkdir(parents=True, exist_ok=True)
                    save_checkpoint(self.out_dir / "abort.ckpt", state)
                raise
        if not saved and checkpoint_path is not None:
            save_checkpoint(checkpoint_path, state)
        return state

    # ---- reporting
    def report(self, state: SimulationState, wall_clock: float | None = None) -> dict:
        cfg = self.cfg
        arr = state.droplets
        counts = arr.status_counts()
        injected = len(arr)
        exp = summary(state.ledger) if cfg.infected else {}
        loads = surface_loading(self.scene, state.surfaces, cfg.fomite, state.t)
        fom = fomite_table(loads, cfg.fomite, cfg.dose.sigma)
        dep = deposition_report(state.deposition, self.occupant_ids, set(cfg.infected))
        series = state.ledger.series
        ct = class_time_report(series, cfg.class_time.threshold, cfg.class_time.fit_start)
        surfaces = [{"id": s.id, "name": s.name, "kind": s.kind, "count": int(state.surfaces.count[s.id]),
                     "volume": float(state.surfaces.volume[s.id]), "virions": float(state.surfaces.virions[s.id])}
                    for s in self.scene.surfaces if state.surfaces.count[s.id] > 0]
        salt_ok = bool(np.array_equal(arr.m_s, self.model.initial_masses(arr.d0)[1])) if injected else True
        rep = {
            "version": __version__,
            "config_digest": cfg.digest(),
            "intervention": cfg.intervention,
            "infected": list(cfg.infected),
            "seed": cfg.seed,
            "duration": cfg.duration,
            "simulated_time": state.t,
            "steps": state.step,
            "flow_provider": cfg.flow_provider,
            "parameters": {"sigma": cfg.dose.sigma, "viral_load": cfg.dose.viral_load,
                           "pulmonary_rate": cfg.dose.pulmonary_rate, "box_volume": cfg.dose.box_volume,
                           "dispersion": cfg.droplet.dispersion_diffusivity},
            "audit": {"injected": injected, **counts,
                      "balanced": injected == sum(counts.values()), "salt_mass_conserved": salt_ok,
                      "clamped_evaporation": state.clamped, "droplet_substeps": state.substeps},
            "exposure": exp,
            "fomite": fom,
            "deposition": dep,
            "class_time": ct,
            "surfaces": surfaces,
        }
        if wall_clock is not None:
            rep["wall_clock"] = {"seconds": wall_clock,
                                 "per_step": wall_clock / state.step if state.step else 0.0}
        return rep

    def write_outputs(self, state: SimulationState, report: dict) -> None:
        if self.out_dir is None:
            return
        out = self.out_dir
        out.mkdir(parents=True, exist_ok=True)
        risk_heatmap(state.ledger, out / "risk_matrix.csv")
        deposition_csv(report["deposition"], out / "deposition.csv")
        fomite_csv(report["fomite"], out / "fomite.csv")
        with open(out / "max_risk.csv", "w", encoding="utf-8") as fh:
            fh.write("t,max_risk\n")
            for t, r in state.ledger.series:
                fh.write(f"{t:.6f},{r:.9g}\n")
        with open(out / "report.json", "w", encoding="utf-8") as fh:
            json.dump(report, fh, indent=2, sort_keys=True)
        if self.solver is not None and self.cfg.output.field_snapshots:
            (out / "fields").mkdir(exist_ok=True)
            export_fields(out / "fields" / "fields_final.bin", state.flow, self.solver.grid)


@dataclass
class RunResult:
    state: SimulationState
    report: dict
    simulation: Simulation


def run(cfg, out_dir=None, checkpoint_at=None, checkpoint_path=None, restore_from=None) -> RunResult:
    """Execute a scenario to ``cfg.duration`` and write every export into ``out_dir``."""
    start = time.perf_counter()
    sim = Simulation(cfg, out_dir)
    state = load_checkpoint(restore_from) if restore_from is not None else None
    state = sim.run(state, checkpoint_at=checkpoint_at, checkpoint_path=checkpoint_path)
    report = sim.report(state, time.perf_counter() - start)
    sim.write_outputs(state, report)
    return RunResult(state, report, sim)


# ------------------------------------------------------------------ checkpoints


def save_checkpoint(path, state: SimulationState) -> None:
    """Magic, JSON header, pickled state and a SHA-256 of the payload."""
    payload = pickle.dumps(state, protocol=pickle.HIGHEST_PROTOCOL)
    header = json.dumps({"version": CHECKPOINT_VERSION, "package": __version__, "t": state.t,
                         "step": state.step, "config_digest": state.config_digest}).encode()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        fh.write(struct.pack("<Q", len(payload)))
        fh.write(payload)
        fh.write(hashlib.sha256(payload).digest())


def read_checkpoint_header(path) -> dict:
    with open(path, "rb") as fh:
        if fh.read(8) != CHECKPOINT_MAGIC:
            raise CorruptCheckpointError("not a checkpoint file")
        raw = fh.read(4)
        if len(raw) != 4:
            raise CorruptCheckpointError("truncated header")
        (n,) = struct.unpack("<I", raw)
        try:
            return json.loads(fh.read(n))
        except ValueError as exc:
            raise CorruptCheckpointError("unreadable header") from exc


def load_checkpoint(path, expected_version: int = CHECKPOINT_VERSION) -> SimulationState:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:8] != CHECKPOINT_MAGIC or len(data) < 12:
        raise CorruptCheckpointError("not a checkpoint file")
    (n,) = struct.unpack_from("<I", data, 8)
    off = 12 + n
    try:
        header = json.loads(data[12:off])
    except ValueError as exc:
        raise CorruptCheckpointError("unreadable header") from exc
    if header.get("version") != expected_version:
        raise CheckpointVersionError(f"checkpoint version {header.get('version')} != {expected_version}")
    if len(data) < off + 8:
        raise CorruptCheckpointError("truncated checkpoint")
    (m,) = struct.unpack_from("<Q", data, off)
    payload = data[off + 8: off + 8 + m]
    digest = data[off + 8 + m: off + 8 + m + 32]
    if len(payload) != m or len(digest) != 32 or hashlib.sha256(payload).digest() != digest:
        raise CorruptCheckpointError("checksum mismatch or truncated payload")
    return pickle.loads(payload)


# ------------------------------------------------------------------ refinement study


def convergence_harness(cfg, grids, dts, duration: float | None = None, log_fn=None) -> list[dict]:
    """Max receptor risk for every (grid, dt) pair with relative changes between successive cases.

    For the solver provider ``grid`` is the cell count per axis. For the
    analytic provider it sets the tabulation lattice to the smallest of
    extents / grid.
    """
    grids = [tuple(int(x) for x in g) for g in grids]
    if len(grids) < 2 or len(dts) < 2:
        raise ValueError("need at least two grids and two time steps")
    rows = []
    prev = None
    for g in grids:
        if int(np.prod(g)) > cfg.numerics.max_cells:
            raise ResourceLimitError(f"grid {g} exceeds {cfg.numerics.max_cells} cells")
        for dt in dts:
            c = cfg.with_updates({"numerics.grid": g, "numerics.flow_dt": dt, "numerics.droplet_dt_max": dt,
                                  **({"duration": duration} if duration is not None else {})})
            spacing = float(np.min(np.asarray(c.room.extents) / np.asarray(g)))
            start = time.perf_counter()
            sim = Simulation(c, tabulation_spacing=spacing)
            state = sim.run()
            risk = state.ledger.max_receptor_risk()
            change = None if prev is None or prev == 0 else abs(risk - prev) / abs(prev)
            row = {"grid": list(g), "dt": dt, "max_risk": risk, "relative_change": change,
                   "seconds": time.perf_counter() - start}
            rows.append(row)
            if log_fn:
                log_fn(row)
            prev = risk
    return rows


def convergence_table(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["grid", "dt", "max_risk", "relative_change_percent"])
    for r in rows:
        ch = "" if r["relative_change"] is None else f"{100.0 * r['relative_change']:.3f}"
        w.writerow(["x".join(map(str, r["grid"])), r["dt"], f"{r['max_risk']:.9g}", ch])
    return buf.getvalue()
