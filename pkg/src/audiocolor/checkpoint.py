"""Versioned checkpoint archive.

A checkpoint is a ZIP holding one ``meta.json`` (format version, stage tag,
config echo, training history) and one ``.npy`` member per named parameter
blob. Members are written sorted with a fixed timestamp, so identical
contents produce byte-identical files. Stage tags: stage1, stage2, stage3,
rnet, plus no_multistep for the joint-training ablation.
"""

from __future__ import annotations

import io
import json
import zipfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import CheckpointError

FORMAT_VERSION = 1
STAGES = ("stage1", "stage2", "stage3", "rnet", "no_multistep")
_EPOCH_TS = (1980, 1, 1, 0, 0, 0)


@dataclass
class CheckpointBundle:
    stage: str
    config: dict
    blobs: dict[str, np.ndarray]
    history: list[dict] = field(default_factory=list)
    version: int = FORMAT_VERSION

    def __post_init__(self):
        if self.stage not in STAGES:
            raise CheckpointError(f"unknown stage tag {self.stage!r}; expected one of {STAGES}")

    def group(self, prefix: str) -> dict[str, np.ndarray]:
        """Blobs under prefix with the prefix stripped."""
        return {k[len(prefix):]: v for k, v in self.blobs.items() if k.startswith(prefix)}

    def require_groups(self, *prefixes: str):
        for p in prefixes:
            if not any(k.startswith(p) for k in self.blobs):
                raise CheckpointError(
                    f"checkpoint (stage={self.stage}) lacks parameter group {p!r}")

    def save(self, path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        meta = {
            "format_version": self.version,
            "stage": self.stage,
            "config": self.config,
            "history": self.history,
        }
        with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_DEFLATED,
                             compresslevel=6) as zf:
            info = zipfile.ZipInfo("meta.json", date_time=_EPOCH_TS)
            info.compress_type = zipfile.ZIP_DEFLATED
            zf.writestr(info, json.dumps(meta, sort_keys=True))
            for key in sorted(self.blobs):
                buf = io.BytesIO()
                np.save(buf, np.ascontiguousarray(self.blobs[key]))
                info = zipfile.ZipInfo(f"blobs/{key}.npy", date_time=_EPOCH_TS)
                info.compress_type = zipfile.ZIP_DEFLATED
                zf.writestr(info, buf.getvalue())

    @classmethod
    def load(cls, path) -> "CheckpointBundle":
        path = Path(path)
        if not path.exists():
            raise CheckpointError(f"checkpoint not found: {path}")
        with zipfile.ZipFile(path) as zf:
            meta = json.loads(zf.read("meta.json"))
            if meta.get("format_version") != FORMAT_VERSION:
                raise CheckpointError(
                    f"{path}: format version {meta.get('format_version')} "
                    f"!= supported {FORMAT_VERSION}")
            blobs = {}
            for name in zf.namelist():
                if name.startswith("blobs/") and name.endswith(".npy"):
                    key = name[len("blobs/"):-len(".npy")]
                    blobs[key] = np.load(io.BytesIO(zf.read(name)))
        return cls(stage=meta["stage"], config=meta["config"], blobs=blobs,
                   history=meta.get("history", []))


def blobs_bitwise_equal(a: dict[str, np.ndarray], b: dict[str, np.ndarray]) -> bool:
    if set(a) != set(b):
        return False
    return all(a[k].shape == b[k].shape and a[k].tobytes() == b[k].tobytes() for k in a)
