"""Acceptance criteria, each run at its stated tolerance.

Every test prints one PASS/FAIL line to the terminal (also with output
capture on) and then asserts.  The reference sweeps trace the neutral
curve on 20 geometric wavenumbers in [0.01, 10] followed by golden-section
refinement of the minimum.
"""

import functools
import math
import os

import numpy as np
import pytest

from bioconvect.base_state import Parameters
from bioconvect.cli import main
from bioconvect.eigen import growth_rate, nrk_solve, oracle_neutral_R
from bioconvect.neutral import parameter_sweep
from bioconvect.perturbed import ordinate_set, solve_perturbed_diffuse
from bioconvect.radiation import solve_fie, total_intensity_on_z
from bioconvect.specfun import GridFunction, cumulative_integral, gauss_legendre, uniform_grid
from bioconvect.taxis import TaxisModel, taxis, taxis_derivative
from conftest import cached_base

TA_LADDER = (0.0, 100.0, 500.0, 1000.0, 2000.0, 5000.0, 10000.0)
INF = math.inf

# (lambda_c, R_c) per Ta, Sc = 20, Vc = 20, kappa = 0.5, Lt = 1
REFERENCE_K05 = {
    0.0: [(INF, 139.83), (INF, 177.98), (3.34, 284.96), (2.51, 361.02), (1.94, 470.27),
          (1.48, 691.95), (1.22, 952.34)],
    0.43: [(2.98, 221.85), (2.63, 259.30), (2.01, 368.14), (1.77, 467.87), (1.54, 621.83),
           (1.29, 954.64), (1.14, 1361.65)],
    0.48: [(2.26, 658.78), (2.15, 689.10), (1.94, 789.35), (1.78, 890.33), (1.61, 1035.63),
           (1.39, 1434.92), (1.22, 1921.36)],
}
# kappa = 1, omega = 0.59: (lambda_c, R_c, Im sigma, branch)
REFERENCE_OVERSTABLE = [(2.90, 289.72, 8.06, "oscillatory"), (2.69, 332.96, 7.92, "oscillatory"),
              (1.63, 408.41, 0.0, "stationary"), (1.50, 591.26, 0.0, "stationary"),
              (1.37, 841.32, 0.0, "stationary"), (1.78, 954.64, 0.0, "stationary"),
              (1.05, 1146.14, 0.0, "stationary")]

N_POINTS = 20
THREADS = int(os.environ.get("BIOCONVECT_THREADS", "1") or 1)


def report(capsys, number, title, ok, detail):
    with capsys.disabled():
        print(f"\ncriterion {number} {title}: {'PASS' if ok else 'FAIL'} ({detail})")


def within(value, target, tol):
    if math.isinf(target):
        return math.isinf(value)
    return math.isfinite(value) and abs(value - target) <= tol * target


@functools.lru_cache(maxsize=None)
def sweep(kappa, omega):
    rows = parameter_sweep(Parameters(kappa=kappa, omega=omega), list(TA_LADDER),
                           (0.01, 10.0), N_POINTS, threads=THREADS)
    return tuple(rows)


def point(row):
    assert row.point is not None, f"Ta={row.params.Ta}: {row.error}"
    return row.point


def test_criterion_1_reference_critical_points(capsys):
    misses, checked = [], 0
    for omega, targets in REFERENCE_K05.items():
        for row, ta, (lam, R) in zip(sweep(0.5, omega), TA_LADDER, targets):
            checked += 1
            if row.point is None:
                misses.append(f"omega={omega} Ta={ta:g}: failed ({row.error})")
                continue
            cp = row.point
            if not (within(cp.R_c, R, 0.02) and within(cp.lambda_c, lam, 0.02)):
                misses.append(f"omega={omega} Ta={ta:g}: lambda {cp.lambda_c:.3g}/{lam} "
                              f"R {cp.R_c:.5g}/{R}")
    ok = not misses
    report(capsys, 1, "reference critical points", ok,
           f"{checked - len(misses)}/{checked} rows within 2%" + ("" if ok else "; " + "; ".join(misses)))
    assert ok, "\n".join(misses)


def test_criterion_2_overstability(capsys):
    rows = sweep(1.0, 0.59)
    onset, rotating = point(rows[0]), point(rows[2])
    lam, R, im, _ = REFERENCE_OVERSTABLE[0]
    checks = {
        "oscillatory onset": onset.branch == "oscillatory",
        "R_c within 3%": within(onset.R_c, R, 0.03),
        "Im sigma within 5%": within(abs(onset.sigma_im), im, 0.05),
        "stationary at Ta=500": rotating.branch == "stationary",
    }
    ok = all(checks.values())
    failed = [name for name, good in checks.items() if not good]
    report(capsys, 2, "overstability", ok,
           f"Ta=0 {onset.branch} R_c={onset.R_c:.5g} (reference {R}), Im sigma={abs(onset.sigma_im):.4g} "
           f"(reference {im}); Ta=500 {rotating.branch}" + (f"; failed: {', '.join(failed)}" if failed else ""))
    assert ok, failed


def test_criterion_3_stabilisation_trend(capsys):
    columns = {f"kappa=0.5 omega={om}": sweep(0.5, om) for om in REFERENCE_K05}
    columns["kappa=1 omega=0.59"] = sweep(1.0, 0.59)
    broken = []
    for name, rows in columns.items():
        pts = [point(r) for r in rows]
        R = [p.R_c for p in pts]
        lam = [p.lambda_c for p in pts]
        if not all(b > a for a, b in zip(R, R[1:])):
            broken.append(f"{name}: R_c not increasing {np.round(R, 2).tolist()}")
        if not all(b <= a for a, b in zip(lam, lam[1:])):
            broken.append(f"{name}: lambda_c increases {np.round(lam, 3).tolist()}")
    ok = not broken
    report(capsys, 3, "stabilisation trend", ok,
           f"{len(columns)} columns" + ("" if ok else "; " + "; ".join(broken)))
    assert ok, broken


def crossing(z, g, level):
    i = np.flatnonzero(np.diff(np.sign(g - level)))[0]
    return z[i] + (level - g[i]) * (z[i + 1] - z[i]) / (g[i + 1] - g[i])


def uniform_intensity(omega, kappa=0.5, n=2001):
    z = uniform_grid(n)
    rad = solve_fie(omega, kappa, m=128)
    return z, total_intensity_on_z(rad, GridFunction(z, np.ones_like(z)), kappa).values


def test_criterion_4_base_state_features(capsys):
    z, g70 = uniform_intensity(0.7)
    _, g48 = uniform_intensity(0.48)
    _, b = cached_base(0.7, 0.5)
    found = {
        "uniform omega=0.7 max": (z[np.argmax(g70)], 0.94),
        "uniform omega=0.7 G=1": (crossing(z, g70, 1.0), 0.20),
        "uniform omega=0.48 G=1": (crossing(z, g48, 1.0), 0.50),
        "steady omega=0.7 G=Gc": (crossing(b.z_grid, b.G_s, 1.0), 0.10),
    }
    bad = [name for name, (got, want) in found.items() if abs(got - want) > 0.02]
    ok = not bad
    report(capsys, 4, "base-state features", ok,
           "; ".join(f"{name} z={got:.4f} (reference {want})" for name, (got, want) in found.items()))
    assert ok, bad


BASE_MATRIX = [(om, ka, vc) for om in (0.0, 0.43, 0.48, 0.7) for ka in (0.5, 1.0)
               for vc in (10.0, 20.0)]


def trial_perturbation(b, phase=0.0):
    z = b.z_grid
    N = b.Dn_s / np.abs(b.Dn_s).max() * np.sin(np.pi * z + phase) + 0.3j * np.cos(2 * z + phase)
    Phi = cumulative_integral(z, N)
    return N, Phi - Phi[-1]


def property_checks():
    """(name, measured, bound) for every numerical property."""
    out = []
    out.append(("Lambert-Beer", max(np.abs(r.upsilon - np.exp(-r.tau_grid)).max()
                                    for r in (solve_fie(0.0, t) for t in (0.1, 0.5, 3.0))), 1e-12))
    out.append(("conservation", max(abs(cumulative_integral(b.z_grid, b.n_s)[-1] - 1.0)
                                    for b in (cached_base(*c)[1] for c in BASE_MATRIX)), 1e-8))
    model, h = TaxisModel(), 1e-6
    G = np.linspace(0.01, 4.0, 400)
    fd = (taxis(model, G + h) - taxis(model, G - h)) / (2 * h)
    out.append(("taxis derivative", np.abs(taxis_derivative(model, G) - fd).max(), 1e-6))

    _, b = cached_base(0.48, 0.5)
    N1, P1 = trial_perturbation(b)
    N2, P2 = trial_perturbation(b, 0.7)
    lin, parity = 0.0, 0.0
    for k in (0.0, 2.0):
        one, two, both = (solve_perturbed_diffuse(b, n, p, k, tol=1e-13)
                          for n, p in ((N1, P1), (N2, P2), (N1 + N2, P1 + P2)))
        scale = np.abs(both.G1d).max()
        lin = max(lin, np.abs(both.G1d - one.G1d - two.G1d).max() / scale,
                  np.abs(both.P - one.P - two.P).max() / scale)
        parity = max(parity, np.abs(one.Q).max() / np.abs(one.G1d).max())
    out.append(("radiation linearity", lin, 1e-9))
    out.append(("transverse flux parity", parity, 1e-9))

    k = 2 * np.pi / 3
    swirl, cross = 0.0, 0.0
    for omega in (0.0, 0.48):
        p, b = cached_base(omega, 0.5)
        for Ta in (0.0, 1000.0, 10000.0):
            q = Parameters(omega=omega, Ta=Ta)
            sol = nrk_solve(b, q, k)
            if Ta == 0:
                swirl = max(swirl, np.abs(sol.Z).max() / np.abs(sol.W).max())
            R_o = oracle_neutral_R(b, q, k)
            cross = max(cross, abs(sol.R - R_o) / R_o)
    out.append(("Ta=0 swirl", swirl, 1e-10))
    out.append(("NRK vs oracle", cross, 5e-3))

    f = lambda x: np.exp(np.sin(3 * x)) / (1 + x ** 2)
    out.append(("quadrature doubling", abs(gauss_legendre(20, 0.0, 2.0).integrate(f)
                                           - gauss_legendre(40, 0.0, 2.0).integrate(f)), 1e-10))
    tau = np.linspace(0.0, 0.5, 101)
    out.append(("Nystrom doubling", max(np.abs(solve_fie(w, 0.5, m=64).upsilon_at(tau)
                                               - solve_fie(w, 0.5, m=128).upsilon_at(tau)).max()
                                        for w in (0.2, 0.48, 0.7, 0.99)), 1e-8))
    out.append(("grid doubling", max(np.abs(cached_base(w, 0.5, n_grid=801)[1].n_s[::2]
                                            - cached_base(w, 0.5)[1].n_s).max()
                                     for w in (0.0, 0.48, 0.7)), 1e-6))
    ordinate = 0.0
    for kk in (0.0, 2.0):
        a = solve_perturbed_diffuse(b, N1, P1, kk, ordinate_set(24, 16))
        c = solve_perturbed_diffuse(b, N1, P1, kk, ordinate_set(48, 32))
        ordinate = max(ordinate, np.abs(a.G1d - c.G1d).max(), np.abs(a.P - c.P).max())
    out.append(("ordinate doubling", ordinate, 1e-6))
    p, b0 = cached_base(0.0, 0.5)
    q = Parameters(R=100.0)
    s1, s2 = growth_rate(b0, q, k, 48), growth_rate(b0, q, k, 96)
    out.append(("oracle resolution doubling", abs(s1 - s2) / abs(s2), 1e-6))
    return out


def test_criterion_5_property_suite(capsys):
    checks = property_checks()
    bad = [f"{name} {value:.2e} >= {bound:.0e}" for name, value, bound in checks if not value < bound]
    ok = not bad
    report(capsys, 5, "property suite", ok,
           f"{len(checks) - len(bad)}/{len(checks)} within bounds" + ("" if ok else "; " + "; ".join(bad)))
    assert ok, bad


def test_criterion_6_determinism(capsys, tmp_path):
    cfg = tmp_path / "sweep.cfg"
    cfg.write_text("command = sweep\nsweep_Ta = 0, 1000\nn_points = 20\n")
    outputs = []
    for name in ("first.csv", "second.csv"):
        target = tmp_path / name
        assert main(["sweep", "--config", str(cfg), "--out", str(target)]) == 0
        outputs.append(target.read_bytes())
    ok = outputs[0] == outputs[1] and outputs[0].count(b"\n") == 3
    report(capsys, 6, "determinism", ok, f"{len(outputs[0])} bytes, identical={outputs[0] == outputs[1]}")
    assert ok
