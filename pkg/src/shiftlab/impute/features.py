"""Readers for the imputation inputs: dyad features, category members and firm counts."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..errors import DuplicateDyad, MalformedRow, SchemaMismatch


@dataclass(frozen=True)
class DyadFeatures:
    names: tuple[str, ...]
    keys: tuple[tuple[str, str], ...]
    values: np.ndarray  # len(keys) x len(names), nan = missing

    def index(self) -> dict[tuple[str, str], int]:
        return {k: i for i, k in enumerate(self.keys)}

    def matrix(self, dyads) -> np.ndarray:
        """Feature rows for ``dyads``; unknown dyads get an all-missing row."""
        idx = self.index()
        out = np.full((len(dyads), len(self.names)), np.nan)
        for i, d in enumerate(dyads):
            j = idx.get(d)
            if j is not None:
                out[i] = self.values[j]
        return out


def _rows(path):
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip().lstrip("﻿") for h in next(reader)]
        except StopIteration:
            raise SchemaMismatch(f"{path}: empty file") from None
        for row in reader:
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise MalformedRow(reader.line_num, header[min(len(row), len(header) - 1)],
                                   f"expected {len(header)} fields, got {len(row)}")
            yield header, reader.line_num, [c.strip() for c in row]


def parse_dyad_features(path: str | Path) -> DyadFeatures:
    """``reporting,partner,<numeric columns...>``; empty cells are missing."""
    names: tuple[str, ...] | None = None
    keys, values = [], []
    seen = set()
    with open(path, newline="", encoding="utf-8") as fh:
        first = fh.readline()
    header = [h.strip().lstrip("﻿") for h in next(csv.reader([first]))] if first else []
    if header[:2] != ["reporting", "partner"] or len(header) < 3:
        raise SchemaMismatch(f"{path}: expected reporting,partner,<features...>, got {','.join(header)}")
    names = tuple(header[2:])
    for _, line, row in _rows(path):
        key = (row[0], row[1])
        if key in seen:
            raise DuplicateDyad(f"{path}: duplicate dyad {key} at line {line}")
        seen.add(key)
        vals = []
        for name, raw in zip(names, row[2:]):
            if raw == "":
                vals.append(math.nan)
                continue
            try:
                v = float(raw)
            except ValueError:
                raise MalformedRow(line, name, f"not a number: {raw!r}") from None
            if math.isinf(v):
                raise MalformedRow(line, name, "infinite value")
            vals.append(v)
        keys.append(key)
        values.append(vals)
    arr = np.array(values, dtype=float).reshape(len(keys), len(names))
    return DyadFeatures(names, tuple(keys), arr)


def parse_category_members(path: str | Path) -> dict[tuple[str, str], tuple[str, ...]]:
    """Map (reporting, category label) to its member countries, in file order."""
    out: dict[tuple[str, str], list[str]] = {}
    for header, line, row in _rows(path):
        if header != ["reporting", "category_label", "member_country"]:
            raise SchemaMismatch(f"{path}: expected reporting,category_label,member_country")
        members = out.setdefault((row[0], row[1]), [])
        if row[2] in members:
            raise DuplicateDyad(f"{path}: member {row[2]} listed twice for {row[0]}/{row[1]} (line {line})")
        members.append(row[2])
    return {k: tuple(v) for k, v in out.items()}


def parse_firm_counts(path: str | Path) -> dict[str, float]:
    """``code,expected_firms`` table."""
    out = {}
    for header, line, row in _rows(path):
        if header != ["code", "expected_firms"]:
            raise SchemaMismatch(f"{path}: expected code,expected_firms")
        try:
            v = float(row[1])
        except ValueError:
            raise MalformedRow(line, "expected_firms", f"not a number: {row[1]!r}") from None
        if not v > 0:
            raise MalformedRow(line, "expected_firms", "must be positive")
        out[row[0]] = v
    return out
