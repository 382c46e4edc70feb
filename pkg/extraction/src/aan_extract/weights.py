"""Checkpoint handling: load pinned weights when present, else seeded init.

Canonical checkpoints live outside this repository; when a ``--weights``
directory holds ``<name>.pth`` it is loaded (and verified against a
``<name>.pth.sha256`` sidecar when one exists). Without a checkpoint the
network keeps a deterministic seeded initialization so the pipeline stays
runnable and reproducible; extracted features then carry no pretrained
semantics, which is reported loudly.
"""

from __future__ import annotations

import hashlib
import sys
from pathlib import Path

import torch

# canonical public releases for each backbone
CHECKPOINT_SOURCES = {
    "resnet50": "https://download.pytorch.org/models/resnet50-0676ba61.pth",
    "i3d_rgb": "https://github.com/piergiaj/pytorch-i3d (rgb_imagenet.pt)",
    "flownets": "https://github.com/ClementPinard/FlowNetPytorch (flownets_EPE1.951.pth.tar)",
    "vggish": "https://github.com/harritaylor/torchvggish (vggish-10086976.pth)",
}


def _sha256(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def load_or_seed(model: torch.nn.Module, name: str, weights_dir: str | Path | None, seed: int) -> bool:
    """Load <weights_dir>/<name>.pth if present; otherwise seed-initialize.

    Returns True when pretrained weights were loaded.
    """
    if weights_dir is not None:
        path = Path(weights_dir) / f"{name}.pth"
        if path.exists():
            digest = _sha256(path)
            sidecar = path.with_suffix(path.suffix + ".sha256")
            if sidecar.exists():
                pinned = sidecar.read_text().split()[0].strip()
                if pinned != digest:
                    raise ValueError(f"{path}: sha256 {digest} does not match pinned {pinned}")
            state = torch.load(path, map_location="cpu", weights_only=True)
            model.load_state_dict(state)
            print(f"loaded {name} weights from {path} (sha256 {digest[:12]}...)", file=sys.stderr)
            return True
    torch.manual_seed(seed)
    for module in model.modules():
        if hasattr(module, "reset_parameters"):
            module.reset_parameters()
    print(
        f"note: no checkpoint for {name} (canonical source: {CHECKPOINT_SOURCES[name]}); "
        "using a deterministic seeded initialization",
        file=sys.stderr,
    )
    return False
