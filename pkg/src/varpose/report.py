"""CSV logs and SVG error plots for scenario runs."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .scenario import RunRecord  # noqa: E402

_AXES = ("x", "y", "z")
_RIJ = [f"{i}{j}" for i in range(3) for j in range(3)]

CSV_COLUMNS: list[str] = (
    ["time_s"]
    + [f"R_true_{ij}" for ij in _RIJ] + [f"b_true_{a}_m" for a in _AXES]
    + [f"R_hat_{ij}" for ij in _RIJ] + [f"b_hat_{a}_m" for a in _AXES]
    + ["principal_angle_rad"]
    + [f"pos_err_{a}_m" for a in _AXES]
    + [f"pos_err_raw_{a}_m" for a in _AXES]
    + [f"omega_err_{a}_rad_s" for a in _AXES]
    + [f"nu_err_{a}_m_s" for a in _AXES]
    + ["newton_iters", "newton_residual", "energy", "energy_staggered"]
)


class ReportIOError(OSError):
    def __init__(self, path, exc: Exception):
        super().__init__(f"cannot write {path}: {exc}")
        self.path = Path(path)


def record_table(rec: RunRecord) -> np.ndarray:
    """The CSV body as a float array, one row per recorded step."""
    n = len(rec)
    return np.column_stack([
        rec.time, rec.R_true.reshape(n, 9), rec.b_true, rec.R_hat.reshape(n, 9), rec.b_hat,
        rec.attitude_error, rec.position_error, rec.position_error_raw, rec.omega_error, rec.nu_error,
        rec.newton_iterations, rec.newton_residual, rec.energy, rec.energy_staggered,
    ])


def write_run_csv(rec: RunRecord, path) -> Path:
    if len(rec) == 0:
        raise ValueError("run record is empty")
    path = Path(path)
    try:
        np.savetxt(path, record_table(rec), fmt="%.17g", delimiter=",", header=",".join(CSV_COLUMNS), comments="")
    except OSError as exc:
        raise ReportIOError(path, exc) from exc
    return path


def read_run_csv(path) -> tuple[list[str], np.ndarray]:
    path = Path(path)
    with path.open() as fh:
        header = fh.readline().strip().split(",")
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return header, data


def _save(fig, path: Path) -> Path:
    try:
        fig.savefig(path, format="svg", metadata={"Date": None})
    except OSError as exc:
        raise ReportIOError(path, exc) from exc
    finally:
        plt.close(fig)
    return path


def _components(ax, t, values, label, unit):
    for k, a in enumerate(_AXES):
        ax.plot(t, values[:, k], label=f"{label}$_{a}$")
    ax.set_xlabel("time [s]")
    ax.set_ylabel(f"{label} [{unit}]")
    ax.grid(True, alpha=0.3)
    ax.legend(loc="upper right")


def emit_plots(rec: RunRecord, out_dir, prefix: str = "") -> list[Path]:
    """Attitude, position and velocity error plots; returns the three SVG paths."""
    if len(rec) == 0:
        raise ValueError("run record is empty")
    out = Path(out_dir)
    plt.rcParams["svg.hashsalt"] = "varpose"
    t = rec.time
    paths = []

    fig, ax = plt.subplots(figsize=(7, 3.5))
    ax.plot(t, rec.attitude_error, label="principal angle of $R\\hat R^T$")
    ax.set_xlabel("time [s]")
    ax.set_ylabel("attitude error [rad]")
    ax.grid(True, alpha=0.3)
    ax.legend(loc="upper right")
    fig.tight_layout()
    paths.append(_save(fig, out / f"{prefix}attitude_error.svg"))

    fig, ax = plt.subplots(figsize=(7, 3.5))
    _components(ax, t, rec.position_error_raw, "$b - \\hat b$", "m")
    fig.tight_layout()
    paths.append(_save(fig, out / f"{prefix}position_error.svg"))

    fig, (a1, a2) = plt.subplots(2, 1, figsize=(7, 6), sharex=True)
    _components(a1, t, rec.omega_error, "$\\Omega - \\hat\\Omega$", "rad/s")
    _components(a2, t, rec.nu_error, "$\\nu - \\hat\\nu$", "m/s")
    fig.tight_layout()
    paths.append(_save(fig, out / f"{prefix}velocity_error.svg"))
    return paths


def run_summary(rec: RunRecord) -> dict:
    """Scalar digest of a run for JSON reports."""
    fe = rec.final_errors
    return {
        "mode": rec.mode,
        "steps": int(len(rec)),
        "initial_attitude_error_rad": float(rec.attitude_error[0]),
        "initial_position_error_m": float(rec.position_error_norm[0]),
        "final_attitude_error_rad": float(fe.attitude),
        "final_position_error_m": float(np.linalg.norm(fe.position_raw)),
        "final_omega_error_rad_s": float(np.linalg.norm(fe.omega)),
        "final_nu_error_m_s": float(np.linalg.norm(fe.nu)),
        "newton_max_iterations": int(rec.newton_iterations.max()),
        "newton_max_residual": float(rec.newton_residual.max()),
        "max_orthonormality_error": float(rec.max_orthonormality_error),
    }
