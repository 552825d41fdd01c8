"""Named-tensor archive: a zip holding one .npy per tensor plus a JSON
manifest describing every tensor (dtype, shape) and free-form metadata.

Writing is fully deterministic (sorted entries, fixed timestamps, stored
compression, canonical JSON), so saving a loaded archive reproduces the
original file byte for byte.
"""
from __future__ import annotations

import io
import json
import zipfile

import numpy as np
import torch

from .errors import FormatError

FORMAT_VERSION = 1
_ZIP_DATE = (1980, 1, 1, 0, 0, 0)


def _canonical_json(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")


def save_archive(path, tensors: dict[str, torch.Tensor], metadata: dict) -> None:
    """Write tensors plus metadata to `path` deterministically."""
    manifest = {
        "format_version": FORMAT_VERSION,
        "metadata": metadata,
        "tensors": {},
    }
    arrays: dict[str, np.ndarray] = {}
    for name in sorted(tensors):
        arr = tensors[name].detach().cpu().numpy()
        arrays[name] = arr
        manifest["tensors"][name] = {
            "dtype": arr.dtype.str,
            "shape": list(arr.shape),
        }
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as zf:
        info = zipfile.ZipInfo("manifest.json", date_time=_ZIP_DATE)
        zf.writestr(info, _canonical_json(manifest))
        for name in sorted(arrays):
            buf = io.BytesIO()
            np.lib.format.write_array(buf, arrays[name], version=(1, 0))
            info = zipfile.ZipInfo(f"tensors/{name}.npy", date_time=_ZIP_DATE)
            zf.writestr(info, buf.getvalue())


def load_archive(path) -> tuple[dict[str, torch.Tensor], dict]:
    """Read tensors and metadata back; validates entries against the manifest."""
    try:
        zf = zipfile.ZipFile(path, "r")
    except (OSError, zipfile.BadZipFile) as exc:
        raise FormatError(f"cannot open archive {path}: {exc}") from exc
    with zf:
        names = set(zf.namelist())
        if "manifest.json" not in names:
            raise FormatError(f"archive {path} has no manifest.json")
        manifest = json.loads(zf.read("manifest.json"))
        if manifest.get("format_version") != FORMAT_VERSION:
            raise FormatError(
                f"archive {path} has unsupported format_version "
                f"{manifest.get('format_version')!r}"
            )
        tensors: dict[str, torch.Tensor] = {}
        for name, entry in manifest["tensors"].items():
            member = f"tensors/{name}.npy"
            if member not in names:
                raise FormatError(f"archive {path} is missing tensor '{name}'")
            arr = np.lib.format.read_array(io.BytesIO(zf.read(member)))
            if arr.dtype.str != entry["dtype"] or list(arr.shape) != entry["shape"]:
                raise FormatError(
                    f"tensor '{name}' does not match its manifest entry: "
                    f"got {arr.dtype.str}{list(arr.shape)}, "
                    f"expected {entry['dtype']}{entry['shape']}"
                )
            tensors[name] = torch.from_numpy(arr)
        return tensors, manifest["metadata"]
