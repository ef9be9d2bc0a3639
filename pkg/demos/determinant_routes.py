"""One geodesic, three ways to get det dφ_t: linear Riccati form, exponential integral, finite differences."""
import numpy as np

from sasaki_mcp.geodesics import GeodesicInvariants, connecting_covector, frame_momenta
from sasaki_mcp.mcp import jacobian_oracle
from sasaki_mcp.models import build_heisenberg
from sasaki_mcp.riccati import build_coefficients, determinant_ratio, solve_S, volume_distortion


def main(epsilon=0.5) -> None:
    n = 1
    model = build_heisenberg(n, epsilon)
    start, center = np.array([0.4, -0.3, 0.2]), np.array([-0.5, 0.6, 0.9])
    shot = connecting_covector(n, start, center, epsilon)
    h = frame_momenta(n, start, shot.covector)
    coeffs = build_coefficients(GeodesicInvariants(float(np.linalg.norm(h[:2])), float(h[2])), n, None, epsilon)
    t = np.array([0.1, 0.3, 0.5, 0.7, 0.9])
    linear = determinant_ratio(coeffs, t)
    integral = volume_distortion(solve_S(coeffs, np.linspace(0, 0.9, 721)), tol=1e-7)(t)
    oracle = [jacobian_oracle(model, start, shot.covector, tk)["det"][0] for tk in t]
    print(f"{'t':>4} {'linear form':>14} {'exp integral':>14} {'finite diff':>14}")
    for row in zip(t, linear, integral, oracle):
        print("{:4.1f} {:14.9g} {:14.9g} {:14.9g}".format(*row))


if __name__ == "__main__":
    main()
