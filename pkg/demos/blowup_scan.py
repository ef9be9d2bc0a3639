"""Where the trigonometric comparison solution diverges, and in which direction, as a·r crosses 2x₀."""
import numpy as np

from sasaki_mcp import comparison as cmp


def main(r: float = 1.0) -> None:
    critical = cmp.diameter_bound(r)
    print(f"2x0/r = {critical:.10f}")
    print(f"{'a':>8} {'n':>2} {'t0':>10} {'sign':>5}")
    for a in critical * np.array([0.98, 1.02, 1.2, 1.5]):
        for n in (1, 2, 3):
            rep = cmp.blowup_report(cmp.ComparisonParams(a=float(a), n=n, c=0.5, r=r))
            t0 = f"{rep['blowup_time']:.6f}" if rep["blows_up"] else "-"
            print(f"{a:8.4f} {n:2d} {t0:>10} {rep.get('sign', 0):5d}")


if __name__ == "__main__":
    main()
