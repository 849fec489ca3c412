"""Flat parameter vectors with a named layout."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Mapping, Tuple

import numpy as np

from ..errors import ContractError


@dataclass(frozen=True)
class ParamVector:
    """A flat real vector plus an ordered map ``name -> (start, stop, shape)``."""

    values: np.ndarray
    layout: Dict[str, Tuple[int, int, Tuple[int, ...]]] = field(default_factory=dict)

    def __post_init__(self):
        vals = np.array(self.values, dtype=np.float64).reshape(-1)
        vals.flags.writeable = False
        object.__setattr__(self, "values", vals)
        if self.layout:
            cursor = 0
            for name, (lo, hi, shape) in self.layout.items():
                if lo != cursor or hi - lo != int(np.prod(shape, dtype=int)):
                    raise ContractError(f"layout entry {name!r} is not contiguous")
                cursor = hi
            if cursor != vals.size:
                raise ContractError("layout does not cover the parameter vector")

    def __len__(self):
        return self.values.size

    @classmethod
    def flatten(cls, arrays: Mapping[str, np.ndarray]) -> "ParamVector":
        layout, chunks, cursor = {}, [], 0
        for name, arr in arrays.items():
            arr = np.asarray(arr, dtype=np.float64)
            layout[name] = (cursor, cursor + arr.size, tuple(arr.shape))
            chunks.append(arr.reshape(-1))
            cursor += arr.size
        values = np.concatenate(chunks) if chunks else np.zeros(0)
        return cls(values, layout)

    def unflatten(self, values=None) -> Dict[str, np.ndarray]:
        """Split ``values`` (default: own values) back into named arrays.

        ``values`` may carry leading batch axes; each array then gets the
        same leading axes.
        """
        v = self.values if values is None else values
        lead = tuple(np.shape(v)[:-1])
        return {name: v[..., lo:hi].reshape(lead + shape)
                for name, (lo, hi, shape) in self.layout.items()}

    def with_values(self, values) -> "ParamVector":
        return ParamVector(values, self.layout)

    def slice_of(self, prefix: str) -> slice:
        """Index range spanned by every entry whose name starts with ``prefix``."""
        spans = [(lo, hi) for name, (lo, hi, _) in self.layout.items() if name.startswith(prefix)]
        if not spans:
            raise KeyError(prefix)
        return slice(min(s[0] for s in spans), max(s[1] for s in spans))
