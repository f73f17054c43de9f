"""Clinical/demographic record encoding: one-hot, yes/no, min-max scaling."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class EncodingError(Exception):
    """Record value outside the schema vocabulary."""


YES_NO = ("No", "Yes")  # encoded 0 / 1


@dataclass(frozen=True)
class FieldSpec:
    name: str
    kind: str  # "yesno" | "categorical" | "numeric"
    categories: tuple[str, ...] = ()

    def width(self) -> int:
        if self.kind == "categorical":
            return len(self.categories)
        return 1


@dataclass(frozen=True)
class EncodingSchema:
    """Ordered field layout; encoded vector length is fixed per schema."""

    fields: tuple[FieldSpec, ...]

    def width(self) -> int:
        return sum(f.width() for f in self.fields)

    def slot_names(self) -> list[str]:
        names = []
        for f in self.fields:
            if f.kind == "categorical":
                names.extend(f"{f.name}={c}" for c in f.categories)
            else:
                names.append(f.name)
        return names

    def numeric_slot_indices(self) -> list[int]:
        out, pos = [], 0
        for f in self.fields:
            if f.kind == "numeric":
                out.append(pos)
            pos += f.width()
        return out


# Columns mirroring the clinical/demographic table the pipeline consumes.
DEFAULT_SCHEMA = EncodingSchema(fields=(
    FieldSpec("sex", "categorical", ("Male", "Female")),
    FieldSpec("age_years", "numeric"),
    FieldSpec("height_cm", "numeric"),
    FieldSpec("weight_kg", "numeric"),
    FieldSpec("heart_rate_bpm", "numeric"),
    FieldSpec("temperature_c", "numeric"),
    FieldSpec("prior_tb_exposure", "yesno"),
    FieldSpec("weight_loss", "yesno"),
    FieldSpec("fever", "yesno"),
    FieldSpec("night_sweats", "yesno"),
    FieldSpec("hemoptysis", "yesno"),
    FieldSpec("cough_duration_days", "numeric"),
))


def encode_record(record: dict[str, str], schema: EncodingSchema = DEFAULT_SCHEMA) -> np.ndarray:
    """Encode one record: Yes/No -> 1/0, categories -> one-hot indicators,
    numerics passed through (scaling is a separate, fold-fitted step).

    Out-of-vocabulary values raise EncodingError rather than encoding to zero.
    """
    out = np.zeros(schema.width())
    pos = 0
    for f in schema.fields:
        raw = record.get(f.name)
        if raw is None or raw == "":
            raise EncodingError(f"missing field {f.name!r}")
        if f.kind == "yesno":
            if raw not in YES_NO:
                raise EncodingError(f"{f.name}: expected Yes/No, got {raw!r}")
            out[pos] = float(YES_NO.index(raw))
            pos += 1
        elif f.kind == "categorical":
            if raw not in f.categories:
                raise EncodingError(f"{f.name}: {raw!r} not in {f.categories}")
            out[pos + f.categories.index(raw)] = 1.0
            pos += len(f.categories)
        else:
            try:
                val = float(raw)
            except ValueError as exc:
                raise EncodingError(f"{f.name}: unparseable numeric {raw!r}") from exc
            if not np.isfinite(val):
                raise EncodingError(f"{f.name}: non-finite value")
            out[pos] = val
            pos += 1
    return out


@dataclass
class MinMaxScaler:
    """Per-column (x - min) / (max - min), statistics from the training fold
    only. Out-of-range test values are allowed to fall outside [0, 1]."""

    mins: np.ndarray = field(default=None)  # type: ignore[assignment]
    maxs: np.ndarray = field(default=None)  # type: ignore[assignment]

    def fit(self, train_values: np.ndarray) -> "MinMaxScaler":
        v = np.asarray(train_values, dtype=np.float64)
        if v.ndim == 1:
            v = v[:, None]
        self.mins = v.min(axis=0)
        self.maxs = v.max(axis=0)
        if np.any(self.maxs == self.mins):
            degenerate = np.nonzero(self.maxs == self.mins)[0]
            raise ValueError(f"degenerate (constant) columns at {degenerate.tolist()}")
        return self

    def transform(self, x):
        if self.mins is None:
            raise RuntimeError("scaler not fitted")
        x = np.asarray(x, dtype=np.float64)
        return (x - self.mins) / (self.maxs - self.mins)


def minmax_fit_apply(train_values: np.ndarray, x: float) -> float:
    """Single-column convenience wrapper over MinMaxScaler."""
    scaler = MinMaxScaler().fit(np.asarray(train_values, dtype=np.float64))
    return float(scaler.transform(np.asarray([x]))[0])
