"""Named trainable parameters with deterministic per-path initialization,
plus the on-disk checkpoint format.

Checkpoints are numpy ``.npz`` archives: one array per parameter path, in
row-major order, plus a ``__meta__`` entry holding a JSON document with the
format tag and the creation seed. The format tag is checked on load.
"""

from __future__ import annotations

import hashlib
import json

import numpy as np

from .tensor import Tensor

CHECKPOINT_FORMAT = "corefread-params-v1"
META_KEY = "__meta__"


def _path_entropy(path: str) -> int:
    return int.from_bytes(hashlib.sha256(path.encode("utf-8")).digest()[:8], "little")


class ParameterStore:
    """Unique-path map of trainable tensors.

    Initialization is deterministic per (seed, path), so two stores built with
    the same seed assign identical values to every path they share, no matter
    the creation order.
    """

    def __init__(self, seed: int = 0):
        self.seed = int(seed)
        self._params: dict[str, Tensor] = {}

    def create(self, path: str, shape, init: str = "xavier") -> Tensor:
        if path in self._params:
            raise ValueError(f"duplicate parameter path {path!r}")
        shape = tuple(int(s) for s in shape)
        rng = np.random.default_rng([self.seed, _path_entropy(path)])
        if init == "xavier":
            if len(shape) < 2:
                raise ValueError(f"xavier init needs >=2-D shape at {path!r}")
            fan_in, fan_out = shape[-2], shape[-1]
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            data = rng.uniform(-limit, limit, shape)
        elif init == "small_uniform":
            data = rng.uniform(-0.05, 0.05, shape)
        elif init == "positive_uniform":
            data = rng.uniform(0.05, 0.15, shape)
        elif init == "embedding":
            data = rng.uniform(-0.05, 0.05, shape)
        elif init == "zeros":
            data = np.zeros(shape)
        elif init == "ones":
            data = np.ones(shape)
        else:
            raise ValueError(f"unknown init {init!r}")
        t = Tensor(data, requires_grad=True)
        self._params[path] = t
        return t

    def __getitem__(self, path: str) -> Tensor:
        return self._params[path]

    def __contains__(self, path: str) -> bool:
        return path in self._params

    def __len__(self):
        return len(self._params)

    def paths(self) -> list[str]:
        return sorted(self._params)

    def items(self):
        return [(p, self._params[p]) for p in self.paths()]

    def total_parameters(self) -> int:
        return sum(t.size for t in self._params.values())

    def zero_grad(self):
        for t in self._params.values():
            t.grad = None

    def values_snapshot(self) -> dict[str, np.ndarray]:
        return {p: t.data.copy() for p, t in self._params.items()}

    def load_values(self, values: dict[str, np.ndarray]):
        """Overwrite parameter data; the path sets must match exactly."""
        ours, theirs = set(self._params), set(values)
        if ours != theirs:
            missing = sorted(ours - theirs)[:3]
            extra = sorted(theirs - ours)[:3]
            raise ValueError(
                f"parameter path mismatch: missing {missing}, unexpected {extra}"
            )
        for p, v in values.items():
            t = self._params[p]
            if t.data.shape != v.shape:
                raise ValueError(
                    f"shape mismatch at {p!r}: have {t.data.shape}, got {v.shape}"
                )
            t.data = np.asarray(v, dtype=np.float64).copy()

    def save(self, file):
        meta = json.dumps({"format": CHECKPOINT_FORMAT, "seed": self.seed})
        arrays = {p: t.data for p, t in self._params.items()}
        np.savez(file, **arrays, **{META_KEY: np.frombuffer(meta.encode(), dtype=np.uint8)})

    def load(self, file):
        with np.load(file) as archive:
            if META_KEY not in archive:
                raise ValueError("not a corefread checkpoint: missing metadata entry")
            meta = json.loads(bytes(archive[META_KEY]).decode())
            if meta.get("format") != CHECKPOINT_FORMAT:
                raise ValueError(
                    f"unsupported checkpoint format {meta.get('format')!r},"
                    f" expected {CHECKPOINT_FORMAT!r}"
                )
            self.load_values({k: archive[k] for k in archive.files if k != META_KEY})
