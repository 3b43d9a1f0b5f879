"""The thirteen acceptance criteria, one test each, at their stated tolerances.

Every test reports a PASS/FAIL line through the ``verdict`` fixture; the
lines are repeated in the terminal summary.
"""
import filecmp
import math
import os
import subprocess
import sys
import textwrap

import numpy as np
import pytest

from factories import block_form, double_well_form, random_connected_form
from formlab import graphs
from formlab import measures as M
from formlab.forms import (Grid1D, assemble_schrodinger_form, capacity_1d, gst_residual,
                           is_irreducible, weyl_residual)
from formlab.lab import (ap_check, ap_threshold, caccioppoli_probe, delta_shell_radial,
                         gap_via_gst, kronig_penney_bands, radial_mesh, radial_sector)
from formlab.linalg import richardson
from formlab.solvers import eig_smallest, shnol_scan


def lowest(grid, measure, k):
    return [p.value for p in eig_smallest(assemble_schrodinger_form(grid, measure), k)]


def test_1_eigensolver_oracle(verdict):
    coarse = lowest(Grid1D(0.0, math.pi, 2049), M.zero(), 3)
    fine = lowest(Grid1D(0.0, math.pi, 4097), M.zero(), 3)
    dirichlet = [richardson(c, f) for c, f in zip(coarse, fine)]
    err_d = max(abs(v - e) / e for v, e in zip(dirichlet, [1, 4, 9]))
    coarse = lowest(Grid1D(-10.0, 10.0, 4001), M.harmonic(), 4)
    fine = lowest(Grid1D(-10.0, 10.0, 8001), M.harmonic(), 4)
    ho = [richardson(c, f) for c, f in zip(coarse, fine)]
    err_h = max(abs(v - e) for v, e in zip(ho, [1, 3, 5, 7]))
    verdict(1, "eigensolver oracle", err_d < 1e-6 and err_h < 1e-6,
            f"dirichlet rel {err_d:.2e}, oscillator {err_h:.2e}")


def test_2_ground_state_transform_identity(verdict):
    rng = np.random.default_rng(2)
    worst = 0.0
    for _ in range(20):
        form = random_connected_form(rng)
        pair = eig_smallest(form, 1)[0]
        ground = pair.vector
        assert np.all(ground > 0)
        for _ in range(100):
            phi = rng.standard_normal(form.n)
            psi = rng.standard_normal(form.n)
            worst = max(worst, gst_residual(form, ground, pair.value, phi, psi, relative=True))
    verdict(2, "ground-state transform identity", worst < 1e-10, f"max scaled residual {worst:.2e}")


def test_3_gap_formula(verdict):
    rng = np.random.default_rng(3)
    forms = [random_connected_form(rng) for _ in range(19)] + [double_well_form(40, 1e-6)]
    worst = 0.0
    small_gap = None
    for form in forms:
        r = gap_via_gst(form)
        worst = max(worst, abs(r.gap_formula - r.gap_eigen) / abs(r.gap_eigen))
        small_gap = r.gap_eigen
    ok = worst < 1e-8 and small_gap <= 1e-6
    verdict(3, "gap formula", ok, f"max rel {worst:.2e}, double-well gap {small_gap:.3e}")


def test_4_allegretto_piepenbrink(verdict):
    cases = [
        ("oscillator", M.harmonic(), (-10.0, 10.0), 1.0),
        ("delta well", M.delta(0.0, -2.0), (-20.0, 20.0), -1.0),
        ("free line", M.zero(), (-50.0, 50.0), 0.0),
    ]
    errs = []
    above = []
    for name, mu, window, exact in cases:
        t = ap_threshold(mu, window, tol=1e-3)
        errs.append(abs(t - exact))
        rep = ap_check(mu, t + 0.1, window, angles=720)
        above.append(rep.verdict == "oscillate" and rep.positive_angles == 0 and rep.angles == 720)
    ok = max(errs) <= 5e-3 and all(above)
    verdict(4, "Allegretto-Piepenbrink round trip", ok,
            "threshold errors " + ", ".join(f"{e:.1e}" for e in errs) + f"; oscillate above: {above}")


def test_5_shnol_characterization(verdict):
    step = 0.01
    lams = np.round(np.arange(4001) * step, 10)
    bands = kronig_penney_bands(2.0, 1.0, (0.0, 40.0))
    rep = shnol_scan(M.periodic_atoms(2.0, 1.0), lams, 200.0, reference=bands)
    edge_cells = max(d for _, d in rep.edge_errors)
    n_edges = len(rep.edge_errors)
    kp_ok = edge_cells <= 2 and rep.symmetric_difference <= 2 * step * n_edges
    free = shnol_scan(M.zero(), np.round(np.arange(-200, 401) * step, 10), 200.0)
    (lo, hi), = free.intervals
    free_ok = abs(lo - 0.0) <= step and abs(hi - 4.0) <= step
    verdict(5, "Shnol characterization", kp_ok and free_ok,
            f"KP worst edge {edge_cells:.2f} cells, symdiff {rep.symmetric_difference:.3f};"
            f" free line [{lo:g}, {hi:g}]")


def test_6_caccioppoli(verdict):
    kw = dict(k=10, E=(-1.0, 1.0), b_grid=(0.25, 0.5, 1.0), b0=1.0)
    coarse = caccioppoli_probe(M.harmonic(), (-10.0, 10.0), n=4001, **kw)
    fine = caccioppoli_probe(M.harmonic(), (-10.0, 10.0), n=8001, **kw)
    finite = np.all(np.isfinite(coarse.ratios)) and np.all(np.isfinite(fine.ratios))
    ratio = fine.C_est / coarse.C_est
    verdict(6, "Caccioppoli ratios", finite and 0.5 <= ratio <= 2.0,
            f"C_est {coarse.C_est:.4f} -> {fine.C_est:.4f}")


def _dense_weyl(form, lam, u, c):
    """Exact supremum from the full eigendecomposition, for the shift ``c``."""
    S = form.symmetric_matrix().toarray()
    ev, Q = np.linalg.eigh(S)
    w = np.sqrt(form.m) * u
    w /= np.linalg.norm(w)
    coef = Q.T @ w
    return math.sqrt(np.sum((ev - lam) ** 2 * coef ** 2 / (ev + c))), ev


def test_7_weyl_criterion(verdict):
    form = assemble_schrodinger_form(Grid1D(-6.0, 6.0, 601), M.harmonic())
    at_eig = max(weyl_residual(form, p.value, p.vector).residual for p in eig_smallest(form, 4))
    rng = np.random.default_rng(7)
    gap_ok = True
    for lam in (2.0, 4.0, 6.0):
        for _ in range(5):
            u = rng.standard_normal(form.n)
            rep = weyl_residual(form, lam, u)
            exact, ev = _dense_weyl(form, lam, u, rep.shift)
            bound = np.min(np.abs(ev - lam)) / math.sqrt(ev[-1] + rep.shift)
            gap_ok &= rep.residual >= 0.9 * bound and abs(rep.residual - exact) <= 1e-8 * exact
    h = 0.05
    waves = []
    for e in range(10, 15):
        n = 2 ** e
        grid = Grid1D(0.0, (n + 1) * h, n + 2)
        x = grid.x_active
        u = np.sin(x) * np.sin(np.pi * x / grid.b)
        waves.append(weyl_residual(assemble_schrodinger_form(grid, M.zero()), 1.0, u).residual)
    decreasing = all(b < a for a, b in zip(waves, waves[1:]))
    ok = at_eig <= 1e-10 and gap_ok and decreasing
    verdict(7, "Weyl criterion", ok,
            f"eigenpair residual {at_eig:.1e}; plane waves " + " ".join(f"{w:.2e}" for w in waves))


def test_8_kato_constants(verdict):
    alphas = [1.0, 4.0, 16.0, 64.0, 256.0]
    c = [M.kato_constant(M.delta(), a) for a in alphas]
    err = max(abs(v - 1 / (2 * math.sqrt(a))) for v, a in zip(c, alphas))
    monotone = all(b < a for a, b in zip(c, c[1:]))
    box = M.kato_constant(M.box(0.0, 1.0), 1.0)
    err_box = abs(box - (1 - math.exp(-0.5)))
    verdict(8, "Kato constants", err < 1e-6 and monotone and err_box < 1e-6,
            f"delta err {err:.1e}, box err {err_box:.1e}")


def test_9_quantum_graphs(verdict):
    loop = graphs.loop_graph(2 * math.pi)
    eigs = graphs.kirchhoff_spectrum(loop, 3.5)
    pattern = np.allclose(eigs, [0, 1, 1, 4, 4, 9, 9], atol=1e-9)
    roots = graphs.kirchhoff_roots(loop, 3.5)
    root_err = max(abs(k - n) for (k, _), n in zip(roots, [1, 2, 3]))
    mults = [m for _, m in roots] == [2, 2, 2]

    star = graphs.star_graph([1.0, 1.0, 1.0])
    secular = graphs.kirchhoff_spectrum(star, 6.0)
    disc = [p.value for p in eig_smallest(graphs.discretize_graph_form(star, 1e-3), len(secular))]
    star_err = max(abs(a - b) for a, b in zip(secular, disc))

    count_ok = True
    for g in (loop, star, graphs.star_graph([1.0, 2.0, math.sqrt(2)]), graphs.interval_graph(math.pi)):
        n = sum(m for _, m in graphs.kirchhoff_roots(g, 50.0))
        slack = len(g.vertices) + len(g.edges)
        count_ok &= abs(n - g.total_length() * 50.0 / math.pi) <= slack
    ok = pattern and root_err <= 1e-10 and mults and star_err <= 1e-3 and count_ok
    verdict(9, "quantum graphs", ok,
            f"loop root err {root_err:.1e}, star err {star_err:.1e}, weyl count ok {count_ok}")


def test_10_delta_shell(verdict):
    strong = delta_shell_radial(1.0, 1.0, 0, r_max=40.0)
    weak = delta_shell_radial(0.05, 1.0, 0, nodes=radial_mesh(1.0, 1e12))
    counts = [radial_sector(1.0, 1.0, 0, radial_mesh(1.0, r_max, 0.02, 1.0)).eigenvalues_between(0.0, 1.0)
              for r_max in (20.0, 40.0, 80.0)]
    ok = (len(strong.sectors[0]) >= 1 and len(weak.sectors[0]) >= 1
          and weak.sectors[0][0] > strong.sectors[0][0] and counts[0] < counts[1] < counts[2])
    verdict(10, "delta shell", ok,
            f"E(alpha=1) {strong.sectors[0]}, E(alpha=0.05) {weak.sectors[0]}, counts in [0,1] {counts}")


def test_11_capacity(verdict):
    form = assemble_schrodinger_form(Grid1D(-30.0, 30.0, 12001), M.zero())
    errs = [abs(capacity_1d(form, (-a, a)) - (2 * a + 2)) for a in (1.0, 2.0)]
    verdict(11, "capacity", max(errs) < 1e-3, f"errors {errs[0]:.1e}, {errs[1]:.1e}")


def test_12_irreducibility(verdict):
    rng = np.random.default_rng(12)
    ok = True
    for case in range(50):
        if case % 2 == 0:
            form = random_connected_form(rng)
            irr, cert = is_irreducible(form)
            ok &= irr and cert.resolvent_min > 0 and cert.semigroup_log_min > -math.inf
        else:
            form, first = block_form(rng)
            irr, cert = is_irreducible(form)
            ok &= (not irr) and set(cert.block.tolist()) == set(first)
    verdict(12, "irreducibility equivalence", ok, "50 randomized cases")


CONFIG = textwrap.dedent("""\
    model:
      kind: schrodinger1d
      geometry: {a: -6.0, b: 6.0, n: 1201}
      measure:
        density: {kind: quadratic, c: 1.0}
        atoms: [[0.5, -1.0]]
    experiments:
      - name: spectrum
        params: {k: 4}
      - name: shnol
        params: {lam_min: -1.0, lam_max: 3.0, step: 0.02, L: 50.0}
      - name: weyl
        params: {k: 2, lams: [0.5]}
      - name: gap
    """)


def test_13_determinism(tmp_path, verdict):
    cfg = tmp_path / "run.yaml"
    cfg.write_text(CONFIG)
    outs = []
    env = dict(os.environ)
    env.pop("LAB_OUT_DIR", None)
    for tag, threads in (("a", 1), ("b", 1), ("c", 8)):
        out = tmp_path / tag
        proc = subprocess.run([sys.executable, "-m", "formlab.cli", "run", str(cfg), "--out", str(out),
                               "--threads", str(threads)], capture_output=True, text=True, env=env)
        assert proc.returncode == 0, proc.stderr
        outs.append(out)
    names = sorted(p.name for p in outs[0].glob("*.csv"))
    same = all(filecmp.cmp(outs[0] / n, o / n, shallow=False) for o in outs[1:] for n in names)
    verdict(13, "determinism", same and len(names) == 5, f"{len(names)} CSV files compared")
