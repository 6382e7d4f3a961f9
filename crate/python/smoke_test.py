"""Smoke test for the symsde_py extension.

Build and install first, e.g.
    maturin build --release -m crates/python/Cargo.toml
    pip install target/wheels/symsde_py-*.whl
"""

import json
import math

import symsde_py as s


def main():
    assert s.presets() == ["brownian", "ou", "bessel", "stochvol"]
    assert s.differentiate("x^3", "x") == s.simplify("3*x^2")

    for name in s.presets():
        report = json.loads(s.verify_symmetry(name))
        assert report["pass"], name

    assert s.classify_symmetry("brownian") == "quasi-doob"
    assert s.classify_symmetry("stochvol") == "girsanov-not-quasi-doob"

    # β = z²: Φ_λ(x, z) = (x, z)/(1 − λz), η_λ = (1 − λz)⁻²
    phi, eta, h = s.flow("brownian", [0.7, 0.4], 1.0)
    d = 1.0 - 0.4
    assert math.isclose(phi[0], 0.7 / d, rel_tol=1e-9)
    assert math.isclose(eta, 1.0 / d**2, rel_tol=1e-9)

    r = json.loads(s.ibp("brownian", "x^2", paths=20000, dt=0.01))
    assert r["pass"], r
    assert abs(r["terms"]["flow"]["mean"] - 2.0) < 4 * r["terms"]["flow"]["se"]

    try:
        s.verify_symmetry("bessel", a=2.0)
    except ValueError as e:
        assert "5/2" in str(e)
    else:
        raise AssertionError("a < 5/2 accepted")

    print("smoke test passed")


if __name__ == "__main__":
    main()
