"""
A-space exports: raw gate activations, 2-D PCA projections and center tables.

aspace CSV:  sample_id,true_subset,assigned_cluster,g_0,...,g_{n-1}
             (true_subset left empty when the split carries no subset labels)
edges JSON:  sidecar "<name>.edges.json" describing the enumeration of g_i
pca CSV:     sample_id,pc1,pc2,assigned_cluster
centers CSV: cluster,g_0,...,g_{n-1}
"""

import io
import numpy as np
import pandas as pd
from typing import NamedTuple, Optional, Sequence
from divdr.clustering.kmeans import as_points
from divdr.clustering.schemas import CenterRegistry
from divdr.lattice.schemas import Edge
from divdr.util import atomic_write, write_json


class AspaceTable(NamedTuple):
    sample_ids: np.ndarray
    true_subset: Optional[np.ndarray]
    assigned: np.ndarray
    values: np.ndarray


def _gate_columns(dim: int) -> list[str]:
    return [f"g_{i}" for i in range(dim)]


def write_frame(path: str, frame: pd.DataFrame):
    buffer = io.StringIO()
    frame.to_csv(buffer, index=False)
    atomic_write(path, buffer.getvalue().encode())


def sidecar_path(csv_path: str) -> str:
    base = csv_path[:-4] if csv_path.endswith(".csv") else csv_path
    return f"{base}.edges.json"


def export_aspace(
    path: str,
    points,
    sample_ids: Sequence[int],
    assigned: Sequence[int],
    edges: list[Edge],
    true_subset: Optional[Sequence[int]] = None,
    cluster_space: str = "post",
):
    """
    One row per sample with the gate activations in enumeration order. The
    sidecar names each column's edge and the space the clusters were fit in
    ("pre" when assignments come from the gate logits).
    """
    values = as_points(points)
    if values.shape[1] != len(edges):
        raise ValueError(f"export_aspace: {values.shape[1]} gate columns for {len(edges)} edges")
    frame = pd.DataFrame(
        {
            "sample_id": np.asarray(sample_ids, dtype=np.int64),
            "true_subset": pd.array(
                list(true_subset) if true_subset is not None else [None] * values.shape[0],
                dtype="Int64",
            ),
            "assigned_cluster": np.asarray(assigned, dtype=np.int64),
        }
    )
    frame = pd.concat([frame, pd.DataFrame(values, columns=_gate_columns(values.shape[1]))], axis=1)
    write_frame(path, frame)
    write_json(
        sidecar_path(path),
        {
            "dimension": len(edges),
            "order": "layer-major, scale ascending, direction up<keep<down",
            "cluster_space": cluster_space,
            "edges": [
                {"column": f"g_{i}", "layer": e.layer, "scale": e.scale, "direction": e.direction}
                for i, e in enumerate(edges)
            ],
        },
    )


def read_aspace(path: str) -> AspaceTable:
    frame = pd.read_csv(path, float_precision="round_trip")
    columns = [column for column in frame.columns if column.startswith("g_")]
    subsets = frame["true_subset"]
    return AspaceTable(
        sample_ids=frame["sample_id"].to_numpy(dtype=np.int64),
        true_subset=None if subsets.isna().all() else subsets.to_numpy(dtype=np.int64),
        assigned=frame["assigned_cluster"].to_numpy(dtype=np.int64),
        values=frame[columns].to_numpy(dtype=np.float64),
    )


def pca_project(points, components: int = 2) -> np.ndarray:
    """
    Project onto the leading principal axes via an exact eigendecomposition of
    the covariance. Each axis is signed so its largest-magnitude loading is
    positive; missing axes (dimension < components) are zero columns.
    """
    values = as_points(points)
    if values.shape[0] < 2:
        raise ValueError(f"pca_project needs at least 2 samples, got {values.shape[0]}")
    centered = values - values.mean(axis=0)
    covariance = np.atleast_2d(np.cov(centered, rowvar=False))
    eigenvalues, eigenvectors = np.linalg.eigh(covariance)
    order = np.argsort(eigenvalues, kind="stable")[::-1][:components]
    axes = eigenvectors[:, order]
    signs = np.sign(axes[np.argmax(np.abs(axes), axis=0), np.arange(axes.shape[1])])
    signs[signs == 0] = 1.0
    projection = centered @ (axes * signs)
    if projection.shape[1] < components:
        projection = np.hstack([projection, np.zeros((projection.shape[0], components - projection.shape[1]))])
    return projection


def export_pca(path: str, projection: np.ndarray, sample_ids: Sequence[int], assigned: Sequence[int]):
    frame = pd.DataFrame(
        {
            "sample_id": np.asarray(sample_ids, dtype=np.int64),
            "pc1": projection[:, 0],
            "pc2": projection[:, 1],
            "assigned_cluster": np.asarray(assigned, dtype=np.int64),
        }
    )
    write_frame(path, frame)


def write_centers(path: str, registry: CenterRegistry):
    frame = pd.DataFrame(registry.centers, columns=_gate_columns(registry.dim))
    frame.insert(0, "cluster", np.arange(registry.K))
    write_frame(path, frame)
