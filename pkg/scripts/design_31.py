"""Design a 31-pixel basis, compare it with the uniform hex mask, and sweep heralding.

Takes one to two minutes on one core.

    python3 scripts/design_31.py --out-dir results/design_31
"""
import argparse
import csv
from pathlib import Path

from jtmakit.basis import compute_T, design_summary, heralding_sweep, make_pixel_basis, optimize_basis
from jtmakit.kvfile import write_kv
from jtmakit.model import JtmaParams

P = JtmaParams(7.45, 151.1, 103.2)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--d", type=int, default=31)
    ap.add_argument("--d1", type=float, default=20.0, help="signal pixel diameter for the heralding sweep")
    ap.add_argument("--out-dir", type=Path, default=Path("results/design_31"))
    args = ap.parse_args(argv)
    args.out_dir.mkdir(parents=True, exist_ok=True)

    uniform = make_pixel_basis(args.d, "hex", P)
    T0 = compute_T(uniform, uniform.mirrored(), P)
    result = optimize_basis(args.d, P)
    T0.write(args.out_dir / "before_T.csv")
    result.T.write(args.out_dir / "after_T.csv")
    (args.out_dir / "before_basis.txt").write_text(uniform.dumps())
    (args.out_dir / "after_basis.txt").write_text(result.basis_s.dumps())
    before = T0.metrics().to_dict()
    before.update(crosstalk_ratio=T0.crosstalk(), diagonal_spread=T0.diagonal_spread())
    summary = {f"before_{k}": v for k, v in before.items()}
    summary.update({f"after_{k}": v for k, v in design_summary(result).items()})
    write_kv(args.out_dir / "metrics.txt", summary)
    print(f"uniform hex:  d_ent >= {before['d_ent_lower_bound']}, F = {before['fidelity_to_maxent']:.4f}")
    print(f"optimised:    d_ent >= {result.metrics.d_ent_lower_bound}, F = {result.metrics.fidelity:.4f}, "
          f"crosstalk = {result.T.crosstalk():.4f}, spread = {result.T.diagonal_spread():.2e}")

    d2 = [args.d1 * k for k in (0.5, 1.0, 1.5, 2.0, 3.0, 4.0, 8.0)]
    eta = heralding_sweep(args.d1, d2, P)
    with open(args.out_dir / "heralding.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("d2_rad_per_mm", "eta"))
        w.writerows((repr(a), repr(e)) for a, e in zip(d2, eta))
    for a, e in zip(d2, eta):
        print(f"d2 = {a:6.1f} rad/mm  eta = {e:.5f}")


if __name__ == "__main__":
    main()
