"""Central numerical tolerances and defaults."""
from contextlib import contextmanager
from dataclasses import dataclass, fields, replace


@dataclass(frozen=True)
class Tolerances:
    # eigen-solvers
    eig_residual: float = 1e-10
    dense_tridiagonal_max: int = 8192
    dense_general_max: int = 2000
    # ground-state transform / Weyl residual
    gst_residual: float = 1e-10
    weyl_residual: float = 1e-10
    weyl_lanczos_steps: int = 20
    # secular equation for Kirchhoff graphs
    secular_steps: int = 10000
    secular_root_tol: float = 1e-12
    multiplicity_tol: float = 1e-8
    eigenfunction_residual: float = 1e-9
    # transfer matrices and Shnol scans
    shnol_eps_factor: float = 4.0
    cell_max: float = 0.01
    # Allegretto-Piepenbrink sweeps
    ap_angles: int = 720
    ap_cell_max: float = 0.005
    # Kato constants
    kato_threshold: float = 1e-3
    kato_decay_exponent: float = -0.4
    # Kronig-Penney oracle
    kp_edge_tol: float = 1e-10
    # Caccioppoli
    cacc_min_denominator: float = 1e-14

    def scaled(self, factor):
        """Copy with every float tolerance multiplied by ``factor``.

        Grid-like integer settings and physical cell sizes are left alone.
        """
        keep = {"cell_max", "ap_cell_max", "kato_decay_exponent", "shnol_eps_factor"}
        changes = {}
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, float) and f.name not in keep:
                changes[f.name] = v * factor
        return replace(self, **changes)


TOL = Tolerances()


@contextmanager
def using(tol):
    """Temporarily replace the module-wide tolerances."""
    global TOL
    old = TOL
    TOL = tol
    try:
        yield tol
    finally:
        TOL = old
