"""Prediction reports, traversal safety verdicts and dataset-level evaluation."""

from __future__ import annotations

import json
import math
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .condition import Condition
from .physics import BEAM_MATERIAL_BINS, WHEELS
from .voxel import VoxelGrid, column_top, grid_metrics, profile_bottom

DEFAULT_CLEARANCE = 0.015

_BEAM_MATERIAL_NAMES = {v: k for k, v in BEAM_MATERIAL_BINS.items()}


def deflection_profile(reference: VoxelGrid | np.ndarray, deformed: VoxelGrid | np.ndarray, surface: str = "bottom") -> np.ndarray:
    """Downward displacement per x-slice, in voxels.

    ``surface="bottom"`` tracks the lowest occupied voxel (beams),
    ``"top"`` the deepest point of the upper surface (settling ground), so a
    local dent under a wheel registers even when the rest of the slice stays
    level. Slices empty in either grid are NaN.
    """
    ref = reference.occupancy if isinstance(reference, VoxelGrid) else np.asarray(reference)
    out = deformed.occupancy if isinstance(deformed, VoxelGrid) else np.asarray(deformed)
    pick = {"bottom": profile_bottom, "top": _lowest_top}[surface]
    r, d = pick(ref), pick(out)
    prof = (r - d).astype(float)
    prof[(r < 0) | (d < 0)] = np.nan
    return prof


def _lowest_top(occ: np.ndarray) -> np.ndarray:
    top = column_top(occ).astype(float)
    top[top < 0] = np.inf
    low = top.min(axis=1)
    return np.where(np.isfinite(low), low, -1).astype(int)


@dataclass
class PredictionReport:
    predicted_grid: VoxelGrid
    threshold: float
    column_deflections_cm: list
    max_deflection_voxels: float
    max_deflection_cm: float
    inference_ms: float
    surface: str = "bottom"
    condition: tuple = ()

    @property
    def max_deflection_m(self) -> float:
        return self.max_deflection_cm / 100.0

    @classmethod
    def from_grids(cls, reference, predicted: VoxelGrid, threshold=0.5, inference_ms=0.0, surface="bottom", condition=()):
        prof = deflection_profile(reference, predicted, surface)
        valid = prof[~np.isnan(prof)]
        max_vox = float(max(valid.max(), 0.0)) if valid.size else float("nan")
        cols = [None if np.isnan(v) else float(v * predicted.pitch * 100.0) for v in prof]
        return cls(predicted, threshold, cols, max_vox, max_vox * predicted.pitch * 100.0, inference_ms, surface, tuple(condition))

    def write(self, path) -> None:
        """Line-delimited records; the predicted grid goes to ``<path>.voxg``."""
        path = Path(path)
        grid_path = path.with_name(path.name + ".voxg")
        self.predicted_grid.save(grid_path)
        head = {
            "record": "prediction",
            "threshold": self.threshold,
            "surface": self.surface,
            "condition": list(self.condition),
            "max_deflection_voxels": _num(self.max_deflection_voxels),
            "max_deflection_cm": _num(self.max_deflection_cm),
            "inference_ms": self.inference_ms,
            "pitch": self.predicted_grid.pitch,
            "grid_file": grid_path.name,
        }
        lines = [json.dumps(head)]
        for i, d in enumerate(self.column_deflections_cm):
            lines.append(json.dumps({"record": "column", "x_index": i, "deflection_cm": d}))
        path.write_text("\n".join(lines) + "\n")

    @classmethod
    def read(cls, path) -> "PredictionReport":
        path = Path(path)
        records = [json.loads(line) for line in path.read_text().splitlines() if line.strip()]
        heads = [r for r in records if r.get("record") == "prediction"]
        if len(heads) != 1:
            raise ValueError(f"{path}: expected one prediction record, found {len(heads)}")
        head = heads[0]
        grid = VoxelGrid.load(path.parent / head["grid_file"])
        cols = [r["deflection_cm"] for r in sorted((r for r in records if r.get("record") == "column"), key=lambda r: r["x_index"])]
        return cls(
            grid,
            head["threshold"],
            cols,
            _unnum(head["max_deflection_voxels"]),
            _unnum(head["max_deflection_cm"]),
            head["inference_ms"],
            head.get("surface", "bottom"),
            tuple(head.get("condition", ())),
        )


def _num(x):
    return None if x is None or (isinstance(x, float) and math.isnan(x)) else x


def _unnum(x):
    return float("nan") if x is None else float(x)


@dataclass
class SafetyVerdict:
    safe: bool
    clearance: float
    margin: float
    rationale: str

    def to_record(self) -> dict:
        return {"record": "verdict", "safe": self.safe, "clearance": self.clearance, "margin": _num(self.margin), "rationale": self.rationale}


def assess(max_deflection, clearance: float = DEFAULT_CLEARANCE) -> SafetyVerdict:
    """Safe iff the maximum deflection (metres, or a report) stays strictly below the clearance."""
    if not clearance > 0:
        raise ValueError("clearance must be positive")
    if isinstance(max_deflection, PredictionReport):
        max_deflection = max_deflection.max_deflection_m
    if max_deflection is None or math.isnan(max_deflection):
        return SafetyVerdict(False, clearance, float("nan"), "no structure predicted under the probe columns; cannot certify")
    margin = clearance - max_deflection
    safe = margin > 0
    verb = "below" if safe else "at or above"
    return SafetyVerdict(
        safe,
        clearance,
        margin,
        f"max deflection {max_deflection * 100:.2f} cm is {verb} the {clearance * 100:.2f} cm ground clearance",
    )


def oracle_predictor(dataset):
    """A predictor that returns the dataset's own targets (for self-comparison)."""
    lookup = {dataset.inputs[i].tobytes() + bytes(dataset.conditions[i]): dataset.targets[i] for i in range(len(dataset))}

    def predict(inputs, conditions):
        return np.stack([lookup[x.tobytes() + bytes(np.asarray(c, np.uint8))] for x, c in zip(inputs, conditions)])

    return predict


def _material_name(meta: dict, cond: Condition) -> str:
    return meta.get("material") or _BEAM_MATERIAL_NAMES.get(cond.material_bin, str(cond.material_bin))


def _span_of(dataset, i: int) -> float:
    meta = dataset.meta[i] if dataset.meta else {}
    if "span" in meta:
        return float(meta["span"])
    # fall back to the occupied x-extent of the input shell
    xs = np.flatnonzero(dataset.inputs[i].any(axis=(1, 2)))
    return float(len(xs) * dataset.pitch) if xs.size else float("nan")


def _rmse(values) -> float:
    arr = np.asarray([v for v in values if not math.isnan(v)], float)
    return float(np.sqrt(np.mean(arr**2))) if arr.size else float("nan")


def evaluate(predictor, dataset, mode: str, clearance: float = DEFAULT_CLEARANCE) -> list[dict]:
    """Score a predictor ``(inputs, conditions) -> binary grids`` on a dataset.

    ``table``: RMSE (cm) of the maximum-deflection error per
    (material, payload, location). ``holdout``: voxel error of the deepest
    point per sample and per span. ``wheels``: settlement per contact patch,
    flagged when it reaches the clearance.
    """
    if mode not in ("table", "holdout", "wheels"):
        raise ValueError(f"unknown mode {mode!r}")
    preds = np.asarray(predictor(dataset.inputs, dataset.conditions))
    if preds.shape != dataset.targets.shape:
        raise ValueError(f"predictor returned shape {preds.shape}, expected {dataset.targets.shape}")
    pitch_cm = dataset.pitch * 100.0
    surface = "top" if mode == "wheels" else "bottom"
    rows = []
    for i in range(len(dataset)):
        cond = Condition(*dataset.conditions[i])
        meta = dataset.meta[i] if dataset.meta else {}
        pred = VoxelGrid(preds[i], dataset.pitch)
        truth = VoxelGrid(dataset.targets[i], dataset.pitch)
        metrics = grid_metrics(pred, truth)
        p_prof = deflection_profile(dataset.inputs[i], pred.occupancy, surface)
        t_prof = deflection_profile(dataset.inputs[i], truth.occupancy, surface)
        p_max = float(np.nanmax(p_prof)) if np.isfinite(p_prof).any() else float("nan")
        t_max = float(np.nanmax(t_prof)) if np.isfinite(t_prof).any() else float("nan")
        rows.append(dict(
            index=i,
            condition=cond,
            meta=meta,
            iou=metrics.iou,
            max_error_voxels=metrics.max_deflection_error_voxels,
            column_rmse_cm=metrics.rmse_deflection_cm,
            pred_max_voxels=p_max,
            true_max_voxels=t_max,
        ))

    records = []
    if mode == "table":
        groups = defaultdict(list)
        for r in rows:
            c = r["condition"]
            groups[(_material_name(r["meta"], c), c.force_bin, c.location_bin)].append(r)
        for (material, force_bin, loc), members in sorted(groups.items()):
            errs = [(m["pred_max_voxels"] - m["true_max_voxels"]) * pitch_cm for m in members]
            records.append({
                "record": "table",
                "material": material,
                "payload": bool(force_bin),
                "location_bin": loc,
                "n": len(members),
                "rmse_cm": _rmse(errs),
                "column_rmse_cm": _rmse([m["column_rmse_cm"] for m in members]),
            })
    elif mode == "holdout":
        by_span = defaultdict(list)
        for r in rows:
            span = _span_of(dataset, r["index"])
            c = r["condition"]
            err = r["max_error_voxels"]
            records.append({
                "record": "sample",
                "index": r["index"],
                "span": span,
                "material": _material_name(r["meta"], c),
                "force_bin": c.force_bin,
                "iou": r["iou"],
                "max_error_voxels": err,
                "max_error_cm": err * pitch_cm,
                "within_1_voxel": bool(err <= 1),
                "within_2_voxels": bool(err <= 2),
            })
            by_span[round(span, 6)].append(err)
        for span, errs in sorted(by_span.items()):
            worst = float(np.nanmax(errs)) if np.isfinite(errs).any() else float("nan")
            records.append({"record": "span", "span": span, "n": len(errs), "worst_error_voxels": worst, "worst_error_cm": worst * pitch_cm})
    else:
        for r in rows:
            c = r["condition"]
            wheel = WHEELS[c.location_bin].name if c.location_bin < len(WHEELS) else f"contact {c.location_bin}"
            pred_cm = r["pred_max_voxels"] * pitch_cm
            oracle_m = r["meta"].get("oracle_max_deflection")
            oracle_cm = oracle_m * 100.0 if oracle_m is not None else r["true_max_voxels"] * pitch_cm
            records.append({
                "record": "wheel",
                "index": r["index"],
                "wheel": wheel,
                "payload": bool(c.force_bin),
                "predicted_settlement_cm": pred_cm,
                "voxel_truth_settlement_cm": r["true_max_voxels"] * pitch_cm,
                "oracle_settlement_cm": oracle_cm,
                "error_cm": pred_cm - r["true_max_voxels"] * pitch_cm,
                "flagged": not assess(pred_cm / 100.0, clearance).safe,
                "oracle_flagged": not assess(oracle_cm / 100.0, clearance).safe,
            })
    return [{k: _num(v) for k, v in rec.items()} for rec in records]


def write_records(path, records) -> None:
    Path(path).write_text("".join(json.dumps(r) + "\n" for r in records))


def plot_records(path, records, mode: str, clearance: float = DEFAULT_CLEARANCE) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(7, 3.5))
    if mode == "table":
        labels = [f"{r['material'][:3]}{'+p' if r['payload'] else ''}@{r['location_bin']}" for r in records]
        ax.bar(labels, [r["rmse_cm"] or 0 for r in records])
        ax.set_ylabel("RMSE (cm)")
    elif mode == "holdout":
        samples = [r for r in records if r["record"] == "sample"]
        labels = [f"{r['span']:.2f}m f{r['force_bin']} {r['material'][:3]}" for r in samples]
        ax.bar(labels, [r["max_error_voxels"] or 0 for r in samples])
        for level in (1, 2):
            ax.axhline(level, ls="--", lw=0.8, color="k")
        ax.set_ylabel("max-deflection error (voxels)")
    else:
        labels = [f"{r['wheel']}{' +p' if r['payload'] else ''}" for r in records]
        x = np.arange(len(records))
        ax.bar(x - 0.2, [r["predicted_settlement_cm"] or 0 for r in records], 0.4, label="predicted")
        ax.bar(x + 0.2, [r["oracle_settlement_cm"] or 0 for r in records], 0.4, label="oracle")
        ax.axhline(clearance * 100, ls="--", color="r", label="clearance")
        ax.set_xticks(x)
        ax.legend()
        ax.set_ylabel("settlement (cm)")
    ax.tick_params(axis="x", labelrotation=60, labelsize=7)
    fig.tight_layout()
    fig.savefig(path, dpi=100, metadata={"Software": None})
    plt.close(fig)
