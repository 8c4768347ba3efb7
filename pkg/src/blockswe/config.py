"""Config file ingestion and emission.

A config is a YAML document with run settings at the top level and one
section per grid level, each holding a list of block sections.  Bathymetry
per block comes from an inline constant, analytic slope parameters, or a
plain-text raster file of ``ni x nj`` depth values (row-major over the x
index, whitespace separated).
"""

from __future__ import annotations

import os

import numpy as np
import yaml

from .grid import (
    Block,
    BoundaryConditions,
    GridLevel,
    InitialCondition,
    NestedGridSystem,
    SimulationConfig,
    DEFAULT_GRAVITY,
    DEFAULT_MANNING_N,
    DEFAULT_WET_THRESHOLD,
    _kochi_depth_profile,
)


class ConfigError(ValueError):
    """The config file is malformed or references missing data."""


def _cell_centers(origin: tuple[float, float], ni: int, nj: int, dx: float):
    x = origin[0] + (np.arange(ni) + 0.5) * dx
    y = origin[1] + (np.arange(nj) + 0.5) * dx
    return x[:, None], y[None, :]


def _build_bathymetry(spec, origin, ni, nj, dx, base_dir) -> np.ndarray:
    if isinstance(spec, (int, float)):
        spec = {"kind": "constant", "depth": float(spec)}
    kind = spec.get("kind")
    if kind == "constant":
        return np.full((ni, nj), float(spec["depth"]))
    if kind == "slope":
        # depth = d0 + gx * x + gy * y, with x/y in global meters
        x, y = _cell_centers(origin, ni, nj, dx)
        d0 = float(spec.get("d0", 0.0))
        gx = float(spec.get("gx", 0.0))
        gy = float(spec.get("gy", 0.0))
        return d0 + gx * x + gy * y + np.zeros((ni, nj))
    if kind == "coastal_profile":
        # shallow shelf around y_center deepening outward (cubic ramp)
        _, y = _cell_centers(origin, ni, nj, dx)
        col = _kochi_depth_profile(y[0], float(spec["y_center"]),
                                   float(spec["half_extent"]))
        return np.broadcast_to(col, (ni, nj))
    if kind == "raster":
        path = spec["path"]
        if not os.path.isabs(path):
            path = os.path.join(base_dir, path)
        values = np.loadtxt(path)
        flat = np.asarray(values, dtype=float).reshape(-1)
        if flat.size != ni * nj:
            raise ConfigError(
                f"raster {path} holds {flat.size} values, expected {ni}x{nj}")
        return flat.reshape(ni, nj)
    raise ConfigError(f"unknown bathymetry kind {kind!r}")


def load_config(path: str) -> tuple[NestedGridSystem, SimulationConfig]:
    """Parse a YAML config into a grid system and run settings."""
    with open(path) as f:
        doc = yaml.safe_load(f)
    if not isinstance(doc, dict):
        raise ConfigError("config root must be a mapping")
    base_dir = os.path.dirname(os.path.abspath(path))

    try:
        dt = float(doc["dt"])
    except KeyError:
        raise ConfigError("config must set dt") from None

    bc = BoundaryConditions(**doc.get("boundary", {}))
    init_doc = dict(doc.get("initial", {"kind": "rest"}))
    if "center" in init_doc:
        init_doc["center"] = tuple(float(v) for v in init_doc["center"])
    initial = InitialCondition(**init_doc)

    settings = SimulationConfig(
        dt=dt,
        total_duration=float(doc.get("duration", 0.0)),
        g=float(doc.get("gravity", DEFAULT_GRAVITY)),
        wet_threshold=float(doc.get("wet_threshold", DEFAULT_WET_THRESHOLD)),
        boundary=bc,
        initial=initial,
        rank_budgets=doc.get("rank_budgets"),
    )

    default_n = float(doc.get("manning_n", DEFAULT_MANNING_N))
    system = NestedGridSystem()
    next_id = 1
    for k, lvl_doc in enumerate(doc.get("levels", [])):
        level = GridLevel(level_index=k + 1, dx=float(lvl_doc["dx"]))
        for blk_doc in lvl_doc.get("blocks", []):
            origin = tuple(float(v) for v in blk_doc["origin"])
            ni, nj = int(blk_doc["ni"]), int(blk_doc["nj"])
            h = _build_bathymetry(blk_doc["bathymetry"], origin, ni, nj,
                                  level.dx, base_dir)
            block_id = int(blk_doc.get("id", next_id))
            next_id = max(next_id, block_id) + 1
            level.blocks.append(Block(
                block_id=block_id, origin=origin, ni=ni, nj=nj, h=h,
                manning_n=float(blk_doc.get("manning_n", default_n))))
        system.levels.append(level)
    if not system.levels:
        raise ConfigError("config defines no grid levels")
    return system, settings


def _bathymetry_doc(block: Block, raster_dir: str | None, base_dir: str):
    h = np.asarray(block.h)
    if h.size and np.all(h == h.flat[0]):
        return {"kind": "constant", "depth": float(h.flat[0])}
    if raster_dir is None:
        raise ConfigError(
            "non-constant bathymetry requires raster_dir to save rasters")
    os.makedirs(raster_dir, exist_ok=True)
    fname = f"bathy_block{block.block_id}.txt"
    np.savetxt(os.path.join(raster_dir, fname), h, fmt="%.17g")
    rel = os.path.relpath(os.path.join(raster_dir, fname), base_dir)
    return {"kind": "raster", "path": rel}


def save_config(system: NestedGridSystem, settings: SimulationConfig,
                path: str, raster_dir: str | None = None,
                bathymetry_docs: dict[int, dict] | None = None):
    """Write a system + settings back out as a YAML config.

    ``bathymetry_docs`` may supply analytic bathymetry sections keyed by
    block id; other blocks fall back to an inline constant or raster file.
    """
    base_dir = os.path.dirname(os.path.abspath(path))
    doc = {
        "dt": settings.dt,
        "duration": settings.total_duration,
        "gravity": settings.g,
        "wet_threshold": settings.wet_threshold,
        "boundary": {s: getattr(settings.boundary, s)
                     for s in ("west", "east", "south", "north")},
        "initial": {
            "kind": settings.initial.kind,
            "amplitude": settings.initial.amplitude,
            "sigma": settings.initial.sigma,
            "center": list(settings.initial.center),
        },
        "levels": [],
    }
    if settings.rank_budgets is not None:
        doc["rank_budgets"] = list(settings.rank_budgets)
    for lvl in system.levels:
        lvl_doc = {"dx": lvl.dx, "blocks": []}
        for b in lvl.blocks:
            if bathymetry_docs and b.block_id in bathymetry_docs:
                bdoc = bathymetry_docs[b.block_id]
            else:
                bdoc = _bathymetry_doc(b, raster_dir, base_dir)
            lvl_doc["blocks"].append({
                "id": b.block_id,
                "origin": [b.origin[0], b.origin[1]],
                "ni": b.ni, "nj": b.nj,
                "manning_n": b.manning_n if np.isscalar(b.manning_n)
                else float(np.mean(b.manning_n)),
                "bathymetry": bdoc,
            })
        doc["levels"].append(lvl_doc)
    with open(path, "w") as f:
        yaml.safe_dump(doc, f, sort_keys=False)


def save_kochi_config(scale: float, path: str, settings: SimulationConfig | None = None):
    """Write a scaled synthetic coastal config with analytic bathymetry."""
    from .grid import build_kochi_scaled_config

    system = build_kochi_scaled_config(scale)
    l1 = system.levels[0]
    b1 = l1.blocks[0]
    half = 0.5 * b1.nj * l1.dx
    y_center = b1.origin[1] + half
    docs = {}
    for lvl in system.levels:
        for b in lvl.blocks:
            docs[b.block_id] = {"kind": "coastal_profile",
                                "y_center": y_center, "half_extent": half}
    if settings is None:
        # center the initial hump on the finest level
        fine = system.levels[-1]
        fx = fine.blocks[0].origin[0]
        fw = sum(b.ni for b in fine.blocks) * fine.dx
        fy = fine.blocks[0].origin[1]
        fh = fine.blocks[0].nj * fine.dx
        settings = SimulationConfig(
            dt=0.2, total_duration=60.0,
            initial=InitialCondition(kind="gaussian", amplitude=0.5,
                                     sigma=max(fw, fh) / 8.0,
                                     center=(fx + fw / 2.0, fy + fh / 2.0)))
    save_config(system, settings, path, bathymetry_docs=docs)
    return system, settings
