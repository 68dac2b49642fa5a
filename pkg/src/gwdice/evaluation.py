"""Segmentation evaluation: confusion-Dice matrices, region Dice and reports."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .dice_losses import EPS, _binary_dice, _prepare, per_class_dice, wasserstein_dice
from .label_metric import GroundMetric, LabelSpace
from .wasserstein import ShapeError


@dataclass(frozen=True)
class RegionSpec:
    name: str
    members: frozenset[int]

    def __init__(self, name: str, members):
        object.__setattr__(self, "name", str(name))
        object.__setattr__(self, "members", frozenset(int(m) for m in members))
        if not self.members:
            raise ValueError(f"region {name!r} is empty")

    def check(self, space: LabelSpace | int):
        n = space if isinstance(space, int) else len(space)
        bad = sorted(m for m in self.members if not 0 <= m < n)
        if bad:
            raise ValueError(f"region {self.name!r} has unknown labels {bad}")
        if not isinstance(space, int) and space.background in self.members:
            raise ValueError(f"region {self.name!r} contains the background label")


BRATS_REGIONS = (
    RegionSpec("whole", (1, 2, 3, 4)),
    RegionSpec("core", (1, 3, 4)),
    RegionSpec("enhancing", (4,)),
)


def parse_regions(text: str) -> list[RegionSpec]:
    """Parse ``name: id,id,...`` lines."""
    regions = []
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        name, sep, ids = line.partition(":")
        if not sep:
            raise ValueError(f"bad region line {line!r}")
        try:
            members = [int(x) for x in ids.split(",") if x.strip()]
        except ValueError as exc:
            raise ValueError(f"bad label id in region line {line!r}") from exc
        regions.append(RegionSpec(name.strip(), members))
    return regions


def confusion_dice(p, g, validate: bool = True) -> np.ndarray:
    """All-pairs soft Dice; row = ground-truth label, column = predicted label."""
    p, g = _prepare(p, g, None, validate)
    gh = np.eye(p.shape[1])[g]
    inter = gh.T @ p
    den = np.sum(gh, axis=0)[:, None] + np.sum(p, axis=0)[None, :]
    return (2 * inter + EPS) / (den + EPS)


def region_dice(p, g, region: RegionSpec, validate: bool = True) -> float:
    p, g = _prepare(p, g, None, validate)
    region.check(p.shape[1])
    members = np.array(sorted(region.members))
    p_fg = np.sum(p[:, members], axis=1)
    g_fg = np.isin(g, members).astype(np.float64)
    return _binary_dice(p_fg, g_fg)


def confusion_mass(confusion, metric: GroundMetric) -> float:
    """Distance-weighted off-diagonal overlap ``sum_{l != l'} M[l,l'] D[l,l']``.

    Rows marked absent (``None`` / NaN) are skipped.
    """
    d = np.array([[np.nan if v is None else v for v in row] for row in confusion], dtype=np.float64)
    if d.shape != metric.m.shape:
        raise ShapeError(f"confusion matrix {d.shape} does not match metric {metric.m.shape}")
    off = ~np.eye(len(metric), dtype=bool) & ~np.isnan(d)
    return float(np.sum(metric.m[off] * d[off]))


@dataclass
class ScoreReport:
    regions: dict[str, float]
    mean_dice: float
    wasserstein_dice: dict[str, float]
    confusion: list[list[float | None]]
    meta: dict = field(default_factory=dict)
    std: dict | None = None

    def to_dict(self) -> dict:
        out = {
            "regions": self.regions,
            "mean_dice": self.mean_dice,
            "wasserstein_dice": self.wasserstein_dice,
            "confusion": self.confusion,
            "meta": self.meta,
        }
        if self.std is not None:
            out["std"] = self.std
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    @classmethod
    def from_dict(cls, d: Mapping) -> "ScoreReport":
        return cls(
            regions=dict(d["regions"]),
            mean_dice=float(d["mean_dice"]),
            wasserstein_dice=dict(d["wasserstein_dice"]),
            confusion=[list(r) for r in d["confusion"]],
            meta=dict(d.get("meta", {})),
            std=d.get("std"),
        )

    def render_table(self) -> str:
        lines = []
        width = max([10] + [len(k) for k in self.regions] + [len(k) for k in self.wasserstein_dice]) + 2

        def row(name, value, std=None):
            s = f"{name:<{width}}{value:>8.4f}"
            if std is not None:
                s += f"  ({std:.4f})"
            lines.append(s)

        std = self.std or {}
        for k, v in self.regions.items():
            row(k, v, std.get("regions", {}).get(k))
        row("mean dice", self.mean_dice, std.get("mean_dice"))
        for k, v in self.wasserstein_dice.items():
            row(f"D^{k}", v, std.get("wasserstein_dice", {}).get(k))
        names = self.meta.get("labels") or [str(i) for i in range(len(self.confusion))]
        lines.append("")
        lines.append("confusion Dice (row = ground truth, column = prediction)")
        cw = max(8, max(len(n) for n in names) + 1)
        lines.append(" " * cw + "".join(f"{n[:cw - 1]:>{cw}}" for n in names))
        for name, r in zip(names, self.confusion):
            cells = "".join(f"{'n/a':>{cw}}" if v is None else f"{v:>{cw}.4f}" for v in r)
            lines.append(f"{name[:cw - 1]:<{cw}}" + cells)
        return "\n".join(lines) + "\n"


def build_report(
    p,
    g,
    metrics: Sequence[GroundMetric],
    regions: Sequence[RegionSpec] = BRATS_REGIONS,
    meta: Mapping | None = None,
    validate: bool = True,
    threads: int = 1,
) -> ScoreReport:
    """Assemble region Dice, mean Dice, Wasserstein Dice per metric and the
    confusion matrix for one volume. Confusion rows of labels absent from
    the ground truth are reported as ``None``.
    """
    fp, fg = _prepare(p, g, None, validate)
    n = fp.shape[1]
    for r in regions:
        r.check(metrics[0].space if metrics else n)
    for m in metrics:
        if len(m) != n:
            raise ShapeError(f"metric {m.name!r} has {len(m)} labels, prediction has {n}")
    conf = confusion_dice(fp, fg, validate=False)
    present = np.bincount(fg, minlength=n) > 0
    confusion = [[float(v) for v in conf[l]] if present[l] else [None] * n for l in range(n)]
    info = {
        "grid": list(np.shape(g)),
        "labels": list(metrics[0].space.names) if metrics else [str(i) for i in range(n)],
        "metrics": [m.name for m in metrics],
        "absent_labels": [int(l) for l in np.flatnonzero(~present)],
        "timestamp": None,
    }
    if meta:
        info.update(meta)
    return ScoreReport(
        regions={r.name: region_dice(fp, fg, r, validate=False) for r in regions},
        mean_dice=float(np.mean(per_class_dice(fp, fg, validate=False))),
        wasserstein_dice={m.name: wasserstein_dice(fp, fg, m, validate=False, threads=threads).score for m in metrics},
        confusion=confusion,
        meta=info,
    )


def aggregate_reports(reports: Sequence[ScoreReport], meta: Mapping | None = None) -> ScoreReport:
    """Mean (and population std) of per-volume reports.

    Scores are computed per volume first and then averaged. A confusion
    cell averages only the volumes where its ground-truth label is present.
    """
    if not reports:
        raise ValueError("no reports to aggregate")

    def stats(values):
        a = np.array(values, dtype=np.float64)
        return float(np.mean(a)), float(np.std(a))

    regions, regions_std = {}, {}
    for k in reports[0].regions:
        regions[k], regions_std[k] = stats([r.regions[k] for r in reports])
    wd, wd_std = {}, {}
    for k in reports[0].wasserstein_dice:
        wd[k], wd_std[k] = stats([r.wasserstein_dice[k] for r in reports])
    md, md_std = stats([r.mean_dice for r in reports])
    n = len(reports[0].confusion)
    confusion, confusion_std = [], []
    for l in range(n):
        row, row_std = [], []
        for l2 in range(n):
            vals = [r.confusion[l][l2] for r in reports if r.confusion[l][l2] is not None]
            if vals:
                m, s = stats(vals)
            else:
                m = s = None
            row.append(m)
            row_std.append(s)
        confusion.append(row)
        confusion_std.append(row_std)
    info = {
        "labels": reports[0].meta.get("labels"),
        "metrics": reports[0].meta.get("metrics"),
        "n_volumes": len(reports),
        "aggregation": "mean of per-volume scores",
        "timestamp": None,
    }
    if meta:
        info.update(meta)
    std = {"regions": regions_std, "mean_dice": md_std, "wasserstein_dice": wd_std, "confusion": confusion_std}
    return ScoreReport(regions, md, wd, confusion, info, std)


def read_report(path) -> ScoreReport:
    with open(path, encoding="utf-8") as fh:
        return ScoreReport.from_dict(json.load(fh))
