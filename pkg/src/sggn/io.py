"""Artifact serialization shared by every module: floats at 17 significant digits."""

from __future__ import annotations

import csv
import json
import math

import numpy as np


def fmt17(x):
    return format(float(x), ".17g")


def dumps17(doc):
    """JSON with every float rendered at 17 significant digits."""
    def enc(o):
        if isinstance(o, (float, np.floating)):
            o = float(o)
            return fmt17(o) if math.isfinite(o) else json.dumps(None if math.isnan(o) else str(o))
        if isinstance(o, dict):
            return "{" + ", ".join(f"{json.dumps(str(k))}: {enc(v)}" for k, v in o.items()) + "}"
        if isinstance(o, (list, tuple)):
            return "[" + ", ".join(enc(v) for v in o) + "]"
        if isinstance(o, np.ndarray):
            return enc(o.tolist())
        if isinstance(o, (np.integer, np.bool_)):
            return json.dumps(o.item())
        return json.dumps(o)
    return enc(doc) + "\n"


def write_json(path, doc):
    with open(path, "w") as fh:
        fh.write(dumps17(doc))


def write_rows(path, header, rows):
    """CSV with floats at 17 significant digits; other cells written as given."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt17(v) if isinstance(v, (float, np.floating)) else v for v in row])
