"""Serialized model state shared by the mask GAN, inpainter and segmenter.

On disk a checkpoint is a torch blob plus a ``<path>.meta.json`` sidecar
holding the human-readable bits (kind, iteration, stage/phase, config hash).
"""
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import torch

from .exceptions import IngestionError

KINDS = ("mask_gan", "inpaint", "segmentation")


def config_hash(config):
    blob = json.dumps(config, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode()).hexdigest()


def snapshot(module):
    """Detached copy of a module's state dict, safe to keep after training continues."""
    return {k: v.detach().clone() for k, v in module.state_dict().items()}


@dataclass
class Checkpoint:
    kind: str
    state: dict
    config: dict
    iteration: int = 0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown checkpoint kind {self.kind!r}")
        if self.iteration < 0:
            raise ValueError("iteration must be >= 0")

    @property
    def config_hash(self):
        return config_hash(self.config)

    # mask GAN checkpoints record the resolution stage, inpainters the phase
    @property
    def stage(self):
        return self.meta.get("stage")

    @property
    def phase(self):
        return self.meta.get("phase")

    def sidecar(self):
        return {
            "kind": self.kind,
            "iteration": self.iteration,
            "config_hash": self.config_hash,
            **self.meta,
            "config": self.config,
        }

    def save(self, path):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        torch.save(
            {"kind": self.kind, "state": self.state, "config": self.config,
             "iteration": self.iteration, "meta": self.meta},
            path,
        )
        meta_path(path).write_text(json.dumps(self.sidecar(), indent=2, sort_keys=True) + "\n")
        return path

    @classmethod
    def load(cls, path, kind=None):
        path = Path(path)
        if not path.is_file():
            raise IngestionError(f"checkpoint not found: {path}")
        blob = torch.load(path, map_location="cpu", weights_only=True)
        ckpt = cls(blob["kind"], blob["state"], blob["config"], blob["iteration"], blob["meta"])
        side = meta_path(path)
        if side.is_file():
            recorded = json.loads(side.read_text()).get("config_hash")
            if recorded != ckpt.config_hash:
                raise IngestionError(f"{side}: config hash does not match {path}")
        if kind is not None and ckpt.kind != kind:
            raise IngestionError(f"{path} holds a {ckpt.kind!r} checkpoint, expected {kind!r}")
        return ckpt


def meta_path(path):
    path = Path(path)
    return path.with_name(path.name + ".meta.json")
