"""Data model and I/O for EIS spectra and capacity records.

CSV schema (External Interfaces):
    eis.csv      header: cell_id,stage,cycle,point_index,freq_hz,re_z_ohm,im_z_ohm
    capacity.csv header: cell_id,cycle,capacity_mah
point_index is 0-based ascending and maps to strictly descending frequency.
Floats are rendered with repr(), so ingest -> serialize -> ingest is lossless.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace

import numpy as np

EIS_HEADER = ["cell_id", "stage", "cycle", "point_index", "freq_hz", "re_z_ohm", "im_z_ohm"]
CAPACITY_HEADER = ["cell_id", "cycle", "capacity_mah"]

#: canonical number of frequency points per resampled curve
T_POINTS = 60


class DataError(Exception):
    """Malformed input data or file."""


@dataclass(frozen=True)
class EisCurve:
    """One impedance spectrum: complex Z sampled on a descending frequency grid."""

    cell_id: str
    stage: int
    cycle: int
    freq_hz: np.ndarray
    re_z_ohm: np.ndarray
    im_z_ohm: np.ndarray

    def __post_init__(self):
        for name in ("freq_hz", "re_z_ohm", "im_z_ohm"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=np.float64))
        if not 1 <= self.stage <= 9:
            raise DataError(f"stage must be in 1..9, got {self.stage}")
        if self.cycle < 0:
            raise DataError(f"cycle must be nonnegative, got {self.cycle}")
        n = len(self.freq_hz)
        if len(self.re_z_ohm) != n or len(self.im_z_ohm) != n:
            raise DataError(f"curve {self.key()} has ragged arrays")
        if n and (np.any(self.freq_hz <= 0) or np.any(np.diff(self.freq_hz) >= 0)):
            raise DataError(f"curve {self.key()} frequencies must be positive and strictly descending")
        for name in ("freq_hz", "re_z_ohm", "im_z_ohm"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise DataError(f"curve {self.key()} has non-finite {name}")

    def key(self):
        return (self.cell_id, self.stage, self.cycle)

    @property
    def n_points(self):
        return len(self.freq_hz)


@dataclass(frozen=True)
class StageTag:
    stage: int
    description: str
    has_resting: bool
    has_dc: bool


#: the nine measurement stages with their resting / direct-current flags
STAGES = (
    StageTag(1, "Before charging", True, False),
    StageTag(2, "Start charging", True, True),
    StageTag(3, "After 20-min charging", False, True),
    StageTag(4, "After charging and before resting", False, False),
    StageTag(5, "After 15-min rest", True, False),
    StageTag(6, "Start discharging", True, True),
    StageTag(7, "After 10-min discharging", False, True),
    StageTag(8, "After discharging and before resting", False, False),
    StageTag(9, "After 15-min rest", True, False),
)


def stage_tag(stage: int) -> StageTag:
    if not 1 <= stage <= 9:
        raise DataError(f"unknown stage {stage}")
    return STAGES[stage - 1]


@dataclass(frozen=True)
class CapacityRecord:
    cell_id: str
    cycle: int
    capacity_mah: float

    def __post_init__(self):
        if self.capacity_mah <= 0 or not np.isfinite(self.capacity_mah):
            raise DataError(
                f"capacity must be positive and finite, got {self.capacity_mah} "
                f"for ({self.cell_id}, {self.cycle})")


@dataclass(frozen=True)
class NormStats:
    """Per-channel z-score statistics fit on a training split."""

    re_mean: float
    re_scale: float
    im_mean: float
    im_scale: float

    def __post_init__(self):
        if self.re_scale <= 0 or self.im_scale <= 0:
            raise DataError("normalization scale must be positive")


@dataclass
class Dataset:
    """Curves plus capacity records with a declared train/test cell partition."""

    curves: list[EisCurve]
    capacities: list[CapacityRecord]
    train_cells: tuple[str, ...]
    test_cells: tuple[str, ...]
    _cap_map: dict = field(init=False, repr=False)

    def __post_init__(self):
        if set(self.train_cells) & set(self.test_cells):
            raise DataError("train and test cell partitions overlap")
        self._cap_map = {}
        for rec in self.capacities:
            key = (rec.cell_id, rec.cycle)
            if key in self._cap_map:
                raise DataError(f"duplicate capacity record for {key}")
            self._cap_map[key] = rec.capacity_mah
        for curve in self.curves:
            if (curve.cell_id, curve.cycle) not in self._cap_map:
                raise DataError(
                    f"curve {curve.key()} has no matching capacity record")

    def capacity(self, cell_id: str, cycle: int) -> float:
        return self._cap_map[(cell_id, cycle)]

    def curves_for(self, stage: int, cells=None) -> list[EisCurve]:
        out = [c for c in self.curves if c.stage == stage
               and (cells is None or c.cell_id in cells)]
        return sorted(out, key=lambda c: (c.cell_id, c.cycle))

    def stage_cells(self, stage: int) -> set[str]:
        return {c.cell_id for c in self.curves if c.stage == stage}


# ---------------------------------------------------------------------------
# CSV ingestion / serialization
# ---------------------------------------------------------------------------

def _parse_float(value, row_num, column):
    try:
        return float(value)
    except ValueError:
        raise DataError(f"row {row_num}: non-numeric {column} value {value!r}") from None


def _parse_int(value, row_num, column):
    try:
        return int(value)
    except ValueError:
        raise DataError(f"row {row_num}: non-integer {column} value {value!r}") from None


def load_eis_csv(path) -> list[EisCurve]:
    """Parse eis.csv into curves grouped by (cell_id, stage, cycle)."""
    groups: dict[tuple, dict[int, tuple]] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != EIS_HEADER:
            raise DataError(f"{path}: header {header} != expected {EIS_HEADER}")
        for row_num, row in enumerate(reader, start=2):
            if len(row) != len(EIS_HEADER):
                raise DataError(f"row {row_num}: expected {len(EIS_HEADER)} fields, got {len(row)}")
            cell, stage, cycle, idx = (row[0],
                                       _parse_int(row[1], row_num, "stage"),
                                       _parse_int(row[2], row_num, "cycle"),
                                       _parse_int(row[3], row_num, "point_index"))
            freq = _parse_float(row[4], row_num, "freq_hz")
            re_z = _parse_float(row[5], row_num, "re_z_ohm")
            im_z = _parse_float(row[6], row_num, "im_z_ohm")
            key = (cell, stage, cycle)
            points = groups.setdefault(key, {})
            if idx in points:
                raise DataError(f"row {row_num}: duplicate point {idx} for curve {key}")
            points[idx] = (freq, re_z, im_z)

    curves = []
    for key in sorted(groups):
        points = groups[key]
        n = len(points)
        if sorted(points) != list(range(n)):
            raise DataError(f"curve {key}: point_index not contiguous 0..{n - 1}")
        freq = np.array([points[i][0] for i in range(n)])
        re_z = np.array([points[i][1] for i in range(n)])
        im_z = np.array([points[i][2] for i in range(n)])
        if np.any(np.diff(freq) >= 0):
            raise DataError(f"curve {key}: frequency not strictly descending")
        curves.append(EisCurve(key[0], key[1], key[2], freq, re_z, im_z))
    # all groups in a file must share one grid length
    if curves:
        counts = {c.n_points for c in curves}
        if len(counts) > 1:
            expected = max(counts,
                           key=lambda n: (sum(c.n_points == n for c in curves), n))
            bad = [c.key() for c in curves if c.n_points != expected]
            raise DataError(
                f"incomplete curve group(s) {bad}: expected {expected} points")
    return curves


def save_eis_csv(path, curves) -> None:
    rows = []
    for c in curves:
        for i in range(c.n_points):
            rows.append((c.cell_id, c.stage, c.cycle, i,
                         repr(float(c.freq_hz[i])),
                         repr(float(c.re_z_ohm[i])),
                         repr(float(c.im_z_ohm[i]))))
    rows.sort(key=lambda r: (r[0], r[1], r[2], r[3]))
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(EIS_HEADER)
        writer.writerows(rows)


def load_capacity_csv(path) -> list[CapacityRecord]:
    records = []
    seen = set()
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != CAPACITY_HEADER:
            raise DataError(f"{path}: header {header} != expected {CAPACITY_HEADER}")
        for row_num, row in enumerate(reader, start=2):
            if len(row) != 3:
                raise DataError(f"row {row_num}: expected 3 fields, got {len(row)}")
            key = (row[0], _parse_int(row[1], row_num, "cycle"))
            if key in seen:
                raise DataError(f"row {row_num}: duplicate capacity record for {key}")
            seen.add(key)
            records.append(CapacityRecord(key[0], key[1],
                                          _parse_float(row[2], row_num, "capacity_mah")))
    return records


def save_capacity_csv(path, records) -> None:
    rows = sorted(((r.cell_id, r.cycle, repr(float(r.capacity_mah))) for r in records),
                  key=lambda r: (r[0], r[1]))
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(CAPACITY_HEADER)
        writer.writerows(rows)


# ---------------------------------------------------------------------------
# transforms
# ---------------------------------------------------------------------------

def log_grid(f_max_hz: float, f_min_hz: float, n_points: int = T_POINTS) -> np.ndarray:
    """Descending log-spaced frequency grid from f_max down to f_min."""
    if f_max_hz <= f_min_hz or f_min_hz <= 0:
        raise DataError(f"invalid grid bounds [{f_min_hz}, {f_max_hz}]")
    return np.logspace(np.log10(f_max_hz), np.log10(f_min_hz), n_points)


def resample_log_grid(curve: EisCurve, t_target: int = T_POINTS) -> EisCurve:
    """Interpolate Re and Im linearly in log10(f) onto a log-spaced grid.

    The target grid spans the measured range, so no extrapolation occurs;
    a curve already on the target grid is returned unchanged in value.
    """
    if curve.n_points < 2:
        raise DataError(f"curve {curve.key()} needs >=2 points to resample")
    target = log_grid(curve.freq_hz[0], curve.freq_hz[-1], t_target)
    logf = np.log10(curve.freq_hz)[::-1]
    logt = np.log10(target)[::-1]
    if logt[0] < logf[0] - 1e-12 or logt[-1] > logf[-1] + 1e-12:
        raise DataError(f"curve {curve.key()}: target grid requires extrapolation")
    re_z = np.interp(logt, logf, curve.re_z_ohm[::-1])[::-1]
    im_z = np.interp(logt, logf, curve.im_z_ohm[::-1])[::-1]
    return replace(curve, freq_hz=target, re_z_ohm=re_z, im_z_ohm=im_z)


def fit_norm_stats(curves) -> NormStats:
    """Per-channel mean/std over all points of the given (training) curves."""
    re_all = np.concatenate([c.re_z_ohm for c in curves])
    im_all = np.concatenate([c.im_z_ohm for c in curves])
    re_scale = float(re_all.std()) or 1.0
    im_scale = float(im_all.std()) or 1.0
    return NormStats(float(re_all.mean()), re_scale, float(im_all.mean()), im_scale)


def normalize(curves, stats: NormStats):
    return [replace(c,
                    re_z_ohm=(c.re_z_ohm - stats.re_mean) / stats.re_scale,
                    im_z_ohm=(c.im_z_ohm - stats.im_mean) / stats.im_scale)
            for c in curves]


def denormalize(curves, stats: NormStats):
    return [replace(c,
                    re_z_ohm=c.re_z_ohm * stats.re_scale + stats.re_mean,
                    im_z_ohm=c.im_z_ohm * stats.im_scale + stats.im_mean)
            for c in curves]


def curve_to_array(curve: EisCurve) -> np.ndarray:
    """Stack a curve into the (2, T) channel layout consumed by the GAN."""
    return np.stack([curve.re_z_ohm, curve.im_z_ohm])


def array_to_channels(arr: np.ndarray, stats: NormStats | None = None):
    """Split a (2, T) array back into (re, im), optionally denormalizing."""
    re_z, im_z = arr[0].copy(), arr[1].copy()
    if stats is not None:
        re_z = re_z * stats.re_scale + stats.re_mean
        im_z = im_z * stats.im_scale + stats.im_mean
    return re_z, im_z


def perturb_curve(curve: EisCurve, sigma: float, rng: np.random.Generator) -> EisCurve:
    """Add independent N(0, sigma^2) noise to every Re and Im sample."""
    if sigma < 0:
        raise DataError(f"sigma must be nonnegative, got {sigma}")
    if sigma == 0:
        return curve
    n = curve.n_points
    return replace(curve,
                   re_z_ohm=curve.re_z_ohm + rng.normal(0.0, sigma, n),
                   im_z_ohm=curve.im_z_ohm + rng.normal(0.0, sigma, n))
