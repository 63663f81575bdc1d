"""Radio network model: hexagonal deployments, path loss, RSRP and link capacity.

Positions are 2-D coordinates in meters inside a regular hexagon centered at
the origin.  Antenna heights enter only through the 3-D propagation distance:
cells radiate at 10 m, user terminals sit at 1.5 m.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, asdict

import numpy as np

CELL_HEIGHT_M = 10.0
UE_HEIGHT_M = 1.5

# Rejection sampling gives up after this many candidate draws so an
# infeasible separation constraint fails loudly instead of spinning.
MAX_PLACEMENT_ATTEMPTS = 100_000


class PlacementError(RuntimeError):
    """Raised when positions cannot be sampled under the active constraints."""


@dataclass(frozen=True)
class RadioConfig:
    """Radio parameters shared by every cell in a deployment."""

    tx_power_dbm: float = 33.0        # cell transmit power
    carrier_ghz: float = 30.0         # carrier frequency, GHz
    bandwidth_mhz: float = 100.0      # channel bandwidth, MHz
    noise_figure_db: float = 7.0      # receiver noise figure
    shadow_sigma_db: float = 4.0      # lognormal shadowing std dev
    report_set_size: int = 4          # cells per measurement report

    def noise_dbm(self) -> float:
        """Thermal noise power over the full band: -174 dBm/Hz + 10log10(B) + NF."""
        return -174.0 + 10.0 * math.log10(self.bandwidth_mhz * 1e6) + self.noise_figure_db


@dataclass(frozen=True)
class Deployment:
    """Immutable snapshot of one network drop.

    Attributes:
        seed: RNG seed the drop was generated from.
        hex_diameter_m: corner-to-corner diameter of the service hexagon.
        radio: radio parameters.
        cells: (n_cells, 2) float array of cell positions, meters.
        ues: (n_ues, 2) float array of user positions, meters.
        shadow_db: (n_cells, n_ues) frozen shadowing realization, dB.
    """

    seed: int
    hex_diameter_m: float
    radio: RadioConfig
    cells: np.ndarray
    ues: np.ndarray
    shadow_db: np.ndarray

    @property
    def n_cells(self) -> int:
        return self.cells.shape[0]

    @property
    def n_ues(self) -> int:
        return self.ues.shape[0]


def hex_vertices(diameter_m: float) -> np.ndarray:
    """Vertices of the service hexagon (circumradius = diameter / 2)."""
    radius = diameter_m / 2.0
    angles = np.arange(6) * (math.pi / 3.0)
    return radius * np.stack([np.cos(angles), np.sin(angles)], axis=1)


def in_hexagon(points: np.ndarray, diameter_m: float) -> np.ndarray:
    """Membership test for the regular hexagon with vertices on the x axis.

    Args:
        points: (..., 2) coordinates in meters.
        diameter_m: corner-to-corner diameter.

    Returns:
        Boolean array over the leading dimensions (boundary counts as inside).
    """
    radius = diameter_m / 2.0
    x = np.abs(np.asarray(points)[..., 0])
    y = np.abs(np.asarray(points)[..., 1])
    half_height = radius * math.sqrt(3.0) / 2.0
    return (y <= half_height) & (math.sqrt(3.0) * x + y <= math.sqrt(3.0) * radius)


def _sample_in_hexagon(rng: np.random.Generator, diameter_m: float,
                       keep_min_dist_from: np.ndarray | None = None,
                       min_dist_m: float = 0.0,
                       attempts_used: int = 0) -> tuple[np.ndarray, int]:
    """Rejection-sample one point, optionally min_dist_m away from given points."""
    radius = diameter_m / 2.0
    half_height = radius * math.sqrt(3.0) / 2.0
    attempts = attempts_used
    while attempts < MAX_PLACEMENT_ATTEMPTS:
        attempts += 1
        p = rng.uniform([-radius, -half_height], [radius, half_height])
        if not in_hexagon(p, diameter_m):
            continue
        if keep_min_dist_from is not None and len(keep_min_dist_from) > 0:
            d = np.hypot(*(keep_min_dist_from - p).T)
            if d.min() < min_dist_m:
                continue
        return p, attempts
    raise PlacementError(
        f"could not place a point after {MAX_PLACEMENT_ATTEMPTS} attempts; "
        f"minimum separation of {min_dist_m} m inside a {diameter_m} m hexagon "
        "appears infeasible"
    )


def generate_deployment(seed: int, n_cells: int, n_ues: int,
                        hex_diameter_m: float = 500.0,
                        radio: RadioConfig | None = None,
                        min_cell_sep_m: float = 50.0) -> Deployment:
    """Draw a deployment: cell sites, user positions and a frozen shadowing map.

    Cells are placed first (uniform in the hexagon, pairwise separation at
    least ``min_cell_sep_m``), then users, then the (n_cells, n_ues) shadowing
    matrix.  The draw order is fixed so identical arguments reproduce the
    deployment bit for bit.

    Raises:
        ValueError: non-positive counts or diameter.
        PlacementError: separation constraint infeasible.
    """
    if n_cells < 1 or n_ues < 1:
        raise ValueError(f"need at least one cell and one UE, got {n_cells}/{n_ues}")
    if hex_diameter_m <= 0:
        raise ValueError(f"hex_diameter_m must be positive, got {hex_diameter_m}")
    radio = radio or RadioConfig()
    rng = np.random.default_rng(seed)

    cells = np.empty((0, 2))
    attempts = 0
    for _ in range(n_cells):
        p, attempts = _sample_in_hexagon(rng, hex_diameter_m, cells,
                                         min_cell_sep_m, attempts)
        cells = np.vstack([cells, p])

    ues = np.empty((n_ues, 2))
    for j in range(n_ues):
        ues[j], _ = _sample_in_hexagon(rng, hex_diameter_m)

    shadow_db = rng.normal(0.0, radio.shadow_sigma_db, size=(n_cells, n_ues))
    return Deployment(seed=seed, hex_diameter_m=hex_diameter_m, radio=radio,
                      cells=cells, ues=ues, shadow_db=shadow_db)


def pathloss_db(distance_3d_m, carrier_ghz: float):
    """Urban line-of-sight path loss: 32.4 + 21 log10(d_m) + 20 log10(f_GHz).

    Distance is floored at 1 m.  Works elementwise on arrays.
    """
    d = np.maximum(distance_3d_m, 1.0)
    return 32.4 + 21.0 * np.log10(d) + 20.0 * np.log10(carrier_ghz)


def distance_3d_m(dep: Deployment) -> np.ndarray:
    """(n_cells, n_ues) 3-D distances including the antenna height offset."""
    dxy = dep.cells[:, None, :] - dep.ues[None, :, :]
    dz = CELL_HEIGHT_M - UE_HEIGHT_M
    return np.sqrt(np.sum(dxy * dxy, axis=2) + dz * dz)


def rsrp_dbm(dep: Deployment, cell: int, ue: int) -> float:
    """Received power from one cell at one UE: TX power - path loss - shadowing."""
    return float(rsrp_matrix_dbm(dep)[cell, ue])


def rsrp_matrix_dbm(dep: Deployment) -> np.ndarray:
    """(n_cells, n_ues) RSRP map in dBm."""
    pl = pathloss_db(distance_3d_m(dep), dep.radio.carrier_ghz)
    return dep.radio.tx_power_dbm - pl - dep.shadow_db


def snr_linear(rsrp: np.ndarray | float, radio: RadioConfig):
    return np.power(10.0, (np.asarray(rsrp) - radio.noise_dbm()) / 10.0)


def link_capacity(dep: Deployment, cell: int, ue: int) -> float:
    """Shannon spectral efficiency log2(1 + SNR) of one cell-UE link, bit/s/Hz."""
    snr = snr_linear(rsrp_dbm(dep, cell, ue), dep.radio)
    return float(np.log2(1.0 + snr))


@dataclass(frozen=True)
class MeasurementReport:
    """Strongest cells seen by one UE, sorted by falling RSRP."""

    ue: int
    cells: tuple[int, ...]
    rsrp_dbm: tuple[float, ...]


def measurement_report(dep: Deployment, ue: int) -> MeasurementReport:
    """Report of the ``report_set_size`` strongest cells for a UE.

    Ordering is by descending RSRP; exact ties resolve to the lower cell
    index.  Networks smaller than the report size report every cell.
    """
    if not 0 <= ue < dep.n_ues:
        raise ValueError(f"UE index {ue} out of range [0, {dep.n_ues})")
    rsrp = rsrp_matrix_dbm(dep)[:, ue]
    order = sorted(range(dep.n_cells), key=lambda c: (-rsrp[c], c))
    top = order[: min(dep.radio.report_set_size, dep.n_cells)]
    return MeasurementReport(ue=ue, cells=tuple(top),
                             rsrp_dbm=tuple(float(rsrp[c]) for c in top))


def save_deployment(dep: Deployment, path: str) -> None:
    """Write the deployment as JSON; doubles round-trip losslessly."""
    doc = {
        "seed": dep.seed,
        "hex_diameter_m": dep.hex_diameter_m,
        "radio": asdict(dep.radio),
        "cells": dep.cells.tolist(),
        "ues": dep.ues.tolist(),
        "shadow_db": dep.shadow_db.tolist(),
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)
        fh.write("\n")


def load_deployment(path: str) -> Deployment:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    radio = RadioConfig(**doc["radio"])
    cells = np.asarray(doc["cells"], dtype=float).reshape(-1, 2)
    ues = np.asarray(doc["ues"], dtype=float).reshape(-1, 2)
    shadow = np.asarray(doc["shadow_db"], dtype=float).reshape(cells.shape[0], ues.shape[0])
    return Deployment(seed=int(doc["seed"]), hex_diameter_m=float(doc["hex_diameter_m"]),
                      radio=radio, cells=cells, ues=ues, shadow_db=shadow)
