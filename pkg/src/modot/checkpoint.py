"""Versioned checkpoint container with per-group parameter checksums."""
from __future__ import annotations

import hashlib
import pickle
from dataclasses import dataclass, field
from pathlib import Path

import torch

from .config import Config, config_from_dict
from .errors import DataError
from .models import MoDOT, build_model

CHECKPOINT_VERSION = 1


def group_checksum(module: torch.nn.Module | None) -> str | None:
    """SHA-256 over parameter names and raw float bytes, in name order."""
    if module is None:
        return None
    h = hashlib.sha256()
    for name, tensor in sorted(module.state_dict().items()):
        h.update(name.encode())
        h.update(tensor.detach().cpu().contiguous().numpy().tobytes())
    return h.hexdigest()


def model_checksums(model: MoDOT) -> dict[str, str | None]:
    return {"stage1": group_checksum(model.stage1), "ssr": group_checksum(model.ssr)}


@dataclass
class Checkpoint:
    config: dict
    stage: int
    step: int
    stage1: dict
    ssr: dict | None = None
    optimizer: dict | None = None
    rng: dict = field(default_factory=dict)
    checksums: dict = field(default_factory=dict)
    total_steps: int = 0
    path: Path | None = None

    @classmethod
    def capture(cls, model: MoDOT, cfg: Config, stage: int, step: int, total_steps: int,
                optimizer=None, rng: dict | None = None) -> "Checkpoint":
        return cls(
            config=cfg.to_dict(), stage=stage, step=step, total_steps=total_steps,
            stage1={k: v.detach().clone() for k, v in model.stage1.state_dict().items()},
            ssr=None if model.ssr is None else {k: v.detach().clone() for k, v in model.ssr.state_dict().items()},
            optimizer=None if optimizer is None else optimizer.state_dict(),
            rng=rng or {}, checksums=model_checksums(model),
        )

    def cfg(self) -> Config:
        return config_from_dict(self.config, env=False)

    def build_model(self) -> MoDOT:
        model = build_model(self.cfg().model)
        model.stage1.load_state_dict(self.stage1)
        if self.ssr is not None and model.ssr is not None:
            model.ssr.load_state_dict(self.ssr)
        model.eval()
        return model

    def save(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        payload = {
            "format_version": CHECKPOINT_VERSION, "config": self.config, "stage": self.stage, "step": self.step,
            "total_steps": self.total_steps, "stage1": self.stage1, "ssr": self.ssr,
            "optimizer": self.optimizer, "rng": self.rng, "checksums": self.checksums,
        }
        tmp = path.with_suffix(path.suffix + ".tmp")
        torch.save(payload, tmp)
        tmp.replace(path)
        self.path = path
        return path

    @classmethod
    def load(cls, path: str | Path) -> "Checkpoint":
        path = Path(path)
        try:
            payload = torch.load(path, map_location="cpu", weights_only=False)
        except (OSError, RuntimeError, EOFError, pickle.UnpicklingError) as exc:
            raise DataError(f"cannot load checkpoint {path}: {exc}") from exc
        if not isinstance(payload, dict) or payload.get("format_version") != CHECKPOINT_VERSION:
            raise DataError(f"{path}: not a version-{CHECKPOINT_VERSION} checkpoint")
        payload.pop("format_version")
        return cls(**payload, path=path)
