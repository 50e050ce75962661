"""Text serialization for surfaces, local-vol grids and calibration quotes."""

import csv

import numpy as np
import yaml

from ..exceptions import InputError
from .localvol import LocalVolGrid
from .ssvi import SsviSurface


def load_quotes_csv(path):
    """Read calibration quotes with columns k, tau, iv, weight (weight optional)."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = {"k", "tau", "iv"} - set(reader.fieldnames or [])
        if missing:
            raise InputError(f"quotes CSV missing columns {sorted(missing)}")
        rows = [
            (float(r["k"]), float(r["tau"]), float(r["iv"]), float(r.get("weight") or 1.0))
            for r in reader
        ]
    return np.array(rows, dtype=float).reshape(-1, 4)


def save_quotes_csv(path, quotes):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["k", "tau", "iv", "weight"])
        writer.writerows(np.asarray(quotes, float).tolist())


def save_surface(path, surface, lv=None):
    doc = {"surface": surface.to_dict()}
    if lv is not None:
        doc["local_vol"] = lv.to_dict()
    with open(path, "w") as fh:
        yaml.safe_dump(doc, fh, sort_keys=False)


def load_surface(path):
    with open(path) as fh:
        doc = yaml.safe_load(fh) or {}
    if "surface" not in doc:
        raise InputError(f"{path}: no 'surface' section")
    surface = SsviSurface.from_dict(doc["surface"])
    lv = LocalVolGrid.from_dict(doc["local_vol"]) if "local_vol" in doc else None
    return surface, lv
