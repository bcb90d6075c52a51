"""CSV/JSON serialization for clouds, graphs, fields, traces, and sweeps.

Floats are written with ``repr`` (shortest round-trip form), so identical
inputs always produce bitwise-identical files.
"""

import csv
import json
from pathlib import Path

import numpy as np
from scipy import sparse

from .continuum import SweepResult
from .kernel_graph import PointCloud, SimilarityGraph
from .mbo import LabelField

__all__ = [
    "write_cloud_csv", "read_cloud_csv",
    "write_graph", "read_graph",
    "write_vector_csv", "read_vector_csv",
    "write_labels_csv", "read_labels_csv",
    "write_energy_trace_csv",
    "write_sweep", "read_sweep",
    "write_audit_csv",
]


def _fmt(x):
    return repr(float(x))


def write_cloud_csv(cloud, path):
    """One row per point, columns x0..x{d-1}."""
    pts = cloud.points
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"x{j}" for j in range(pts.shape[1])])
        for row in pts:
            w.writerow([_fmt(v) for v in row])


def read_cloud_csv(path, k, density="custom", seed=None):
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        header = next(r)
        rows = [[float(v) for v in row] for row in r]
    pts = np.asarray(rows, dtype=float)
    if pts.shape[1] != len(header):
        raise ValueError("ragged cloud file")
    return PointCloud(points=pts, k=k, density=density, seed=seed)


def write_graph(graph, path_prefix):
    """Triplet CSV (i, j, w) of nonzero weights plus a JSON header file."""
    prefix = Path(path_prefix)
    with open(prefix.with_suffix(".csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["i", "j", "w"])
        if graph.is_sparse:
            coo = graph.weights.tocoo()
            order = np.lexsort((coo.col, coo.row))
            for i, j, v in zip(coo.row[order], coo.col[order], coo.data[order]):
                w.writerow([int(i), int(j), _fmt(v)])
        else:
            W = graph.weights
            for i in range(graph.n):
                nz = np.nonzero(W[i])[0]
                for j in nz:
                    w.writerow([int(i), int(j), _fmt(W[i, j])])
    header = {
        "n": int(graph.n),
        "epsilon": float(graph.epsilon),
        "lambda": float(graph.lam),
        "kernel": graph.kernel,
    }
    with open(prefix.with_suffix(".json"), "w") as fh:
        json.dump(header, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_graph(path_prefix):
    prefix = Path(path_prefix)
    with open(prefix.with_suffix(".json")) as fh:
        header = json.load(fh)
    n = header["n"]
    ii, jj, vv = [], [], []
    with open(prefix.with_suffix(".csv"), newline="") as fh:
        r = csv.reader(fh)
        next(r)
        for i, j, v in r:
            ii.append(int(i))
            jj.append(int(j))
            vv.append(float(v))
    W = sparse.coo_matrix((vv, (ii, jj)), shape=(n, n)).tocsr()
    return SimilarityGraph(header["epsilon"], W, lam=header["lambda"],
                           kernel=header.get("kernel"))


def write_vector_csv(values, path):
    """Single-column CSV aligned to vertex index."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["value"])
        for v in np.asarray(values, dtype=float):
            w.writerow([_fmt(v)])


def read_vector_csv(path):
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        next(r)
        return np.asarray([float(row[0]) for row in r])


def write_labels_csv(field, path):
    """Hard fields: (vertex, class); soft fields: (vertex, p0..p{P-1})."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        if field.mode == "hard":
            w.writerow(["vertex", "class"])
            for i, c in enumerate(field.to_indices()):
                w.writerow([i, int(c)])
        else:
            w.writerow(["vertex"] + [f"p{m}" for m in range(field.P)])
            for i, row in enumerate(field.values):
                w.writerow([i] + [_fmt(v) for v in row])


def read_labels_csv(path):
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        header = next(r)
        rows = list(r)
    if header[1] == "class":
        idx = np.asarray([int(row[1]) for row in rows])
        return LabelField.from_indices(idx, int(idx.max()) + 1)
    vals = np.asarray([[float(v) for v in row[1:]] for row in rows])
    return LabelField(vals, mode="soft")


def write_energy_trace_csv(reports, path):
    """Stream of EnergyReport rows: (step, h, total, forcing_term)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "h", "total", "forcing_term"])
        for step, rep in enumerate(reports):
            w.writerow([step, _fmt(rep.h), _fmt(rep.total), _fmt(rep.forcing_term)])


def sweep_paths(outdir, experiment, master_seed):
    base = Path(outdir) / f"{experiment}_seed{master_seed}"
    return base.with_suffix(".csv"), base.with_suffix(".json")


def write_sweep(sweep, outdir, master_seed):
    """Persist a SweepResult as CSV plus a JSON sidecar with the configuration.

    File names embed the experiment name and the master seed; re-running the
    same configuration reproduces both files bitwise.
    """
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    csv_path, json_path = sweep_paths(outdir, sweep.experiment, master_seed)
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["grid_value", "seed", "observable"])
        for g, s, obs in sweep.rows:
            w.writerow([_fmt(g), int(s), _fmt(obs)])
    sidecar = {
        "experiment": sweep.experiment,
        "grid": [float(g) for g in sweep.grid],
        "seeds": [int(s) for s in sweep.seeds],
        "master_seed": int(master_seed),
        "metadata": sweep.metadata,
    }
    with open(json_path, "w") as fh:
        json.dump(sidecar, fh, indent=2, sort_keys=True, default=float)
        fh.write("\n")
    return csv_path, json_path


def read_sweep(csv_path, json_path):
    with open(json_path) as fh:
        sidecar = json.load(fh)
    rows = []
    with open(csv_path, newline="") as fh:
        r = csv.reader(fh)
        next(r)
        for g, s, obs in r:
            rows.append((float(g), int(s), float(obs)))
    return SweepResult(
        experiment=sidecar["experiment"], grid=np.asarray(sidecar["grid"]),
        seeds=tuple(sidecar["seeds"]), rows=rows,
        metadata=sidecar.get("metadata", {}),
    )


def write_audit_csv(rows, path):
    """Audit report: (inequality_id, h, h0_or_N, lhs, rhs, residual, quadrature_bound)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["inequality_id", "h", "h0_or_N", "lhs", "rhs",
                    "residual", "quadrature_bound"])
        for row in rows:
            w.writerow([
                row.inequality_id, _fmt(row.h), _fmt(row.h0_or_N),
                _fmt(row.lhs), _fmt(row.rhs), _fmt(row.residual),
                _fmt(row.quadrature_bound),
            ])
