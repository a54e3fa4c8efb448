"""Smoke test for the compiled `twinbeam` extension module."""

import json
import math

import twinbeam


def close(a, b, tol):
    return abs(a - b) <= tol


def main():
    r = 0.4335
    cm = twinbeam.CovMat.tmsv(r)
    assert close(cm.purity(), 1.0, 1e-9)
    nu = cm.symplectic_eigenvalues()
    assert close(nu[0], 0.5, 1e-9) and close(nu[1], 0.5, 1e-9)

    sf = cm.standard_form()
    m, n, c1, c2 = sf.values
    assert close(m, math.cosh(2 * r) / 2, 1e-12)
    assert close(c1, math.sinh(2 * r) / 2, 1e-12) and close(c2, -c1, 1e-12)
    assert sf.phs() > 0.25 and sf.duan() < 0.0

    lossy = cm.loss(0.53)
    assert lossy.invert_loss(0.53).max_abs_diff(cm) < 1e-12

    vac = twinbeam.CovMat.vacuum().standard_form()
    assert vac.phs() == 0.25 and vac.duan() == 0.0

    ref = twinbeam.reference_measured_cm()
    report = json.loads(twinbeam.analyze(ref, draws=20_000, seed=1))
    crit = report["criteria"]
    assert close(crit["phs_lhs"]["value"], 0.51, 0.01)
    assert close(crit["duan_lhs"]["value"], -0.31, 0.01)
    print("PHS", round(crit["phs_lhs"]["value"], 4), "Duan", round(crit["duan_lhs"]["value"], 4))

    rec = json.loads(twinbeam.simulate_and_reconstruct(r, samples=100_000, seed=3))
    entries = rec["cm"]["entries"]
    assert close(entries[0], 0.61, 0.05), entries[0]
    print("reconstructed sigma_11", round(entries[0], 4))

    t = 0.53
    v_min = t * math.exp(-2 * r) / 2 + (1 - t) / 2
    v_max = t * math.exp(2 * r) / 2 + (1 - t) / 2
    assert close(twinbeam.transmission_from_variances(v_min, v_max), t, 1e-12)

    assert "global phase" in twinbeam.modes_table()

    try:
        twinbeam.CovMat.tmsv(-1.0)
    except ValueError:
        pass
    else:
        raise AssertionError("negative squeezing accepted")

    print("smoke test passed")


if __name__ == "__main__":
    main()
