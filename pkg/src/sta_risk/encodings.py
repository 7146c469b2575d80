"""Learnable per-side embeddings and continuous sinusoidal temporal embeddings.

Side identity is carried by a learnable vector added to features (never by
subtracting the two sides), so attention layers can reason about left/right
structure instead of destroying it. Exam times are encoded relative to the
most recent ("present") exam in months, supporting irregular screening
intervals including fractional years.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor


def relative_tau(exam_year: float, reference_year: float) -> float:
    """Months between an exam and the reference exam; 0 for the reference,
    negative for earlier exams."""
    if exam_year > reference_year:
        raise ValueError(
            f"exam_year {exam_year} is after the reference year {reference_year}"
        )
    return 12.0 * (exam_year - reference_year)


def temporal_embedding(tau_months: float, d: int) -> Tensor:
    """Deterministic d-dimensional embedding of a relative time in months.

    Even slots carry sin(tau / 10000^(2i/d)), odd slots the matching cosine,
    so nearby exam times map to nearby embeddings.
    """
    if d < 2 or d % 2 != 0:
        raise ValueError(f"embedding dimension must be a positive even integer, got {d}")
    i = np.arange(d // 2, dtype=np.float64)
    angle = tau_months / np.power(10000.0, 2.0 * i / d)
    out = np.empty(d, dtype=np.float64)
    out[0::2] = np.sin(angle)
    out[1::2] = np.cos(angle)
    return Tensor(out)


@dataclass
class TemporalStamp:
    """An exam's absolute year plus its offset from the reference exam."""

    exam_year: float
    tau_months: float

    @classmethod
    def from_years(cls, exam_year: float, reference_year: float) -> "TemporalStamp":
        return cls(exam_year=exam_year, tau_months=relative_tau(exam_year, reference_year))


@dataclass
class SideEmbeddingTable:
    """Two independent learnable vectors identifying the left and right side."""

    v_left: Tensor
    v_right: Tensor

    @classmethod
    def init(cls, rng: np.random.Generator, d_model: int, std: float = 0.02) -> "SideEmbeddingTable":
        return cls(
            v_left=Tensor(rng.normal(0.0, std, d_model), requires_grad=True),
            v_right=Tensor(rng.normal(0.0, std, d_model), requires_grad=True),
        )

    @property
    def d_model(self) -> int:
        return self.v_left.shape[0]


def side_embedding(table: SideEmbeddingTable, side: str) -> Tensor:
    """Look up the learnable embedding for ``side`` ("left" or "right")."""
    if side == "left":
        return table.v_left
    if side == "right":
        return table.v_right
    raise ValueError(f"side must be 'left' or 'right', got {side!r}")
