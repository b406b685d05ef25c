"""One sample path, rendered as text.

The cubic reaction pulls towards the wells at -1 and +1, but on a unit
interval the Dirichlet walls win: the gradient penalty of any profile
that visits a well outweighs the reaction's reward, so the initial bump
melts away and what survives is noise-sustained wiggling around the
flat state.  The same data lands in a CSV through the `trajectory`
command for real plotting.
"""

import numpy as np

from spdefem import (CovarianceSpec, PolynomialDrift, StudyConfig,
                     simulate_trajectory)

GLYPHS = " .:-=+*#%@"


def render(values, lo=-1.5, hi=1.5, width=64):
    points = np.interp(np.linspace(0.0, 1.0, width),
                       np.linspace(0.0, 1.0, values.size), values)
    scaled = np.clip((points - lo) / (hi - lo), 0.0, 1.0)
    return "".join(GLYPHS[int(s * (len(GLYPHS) - 1))] for s in scaled)


def main():
    cfg = StudyConfig(
        kind="strong",
        covariance=CovarianceSpec.power_decay(2.0, k_trunc=256),
        drift=PolynomialDrift.allen_cahn(),
        levels=(2.0 ** -4, 2.0 ** -5, 2.0 ** -6),
        h_ref=2.0 ** -8,
        horizon=2.0,
        dt_ref=2.0 ** -6,
        seed=7,
    )
    space, times, states = simulate_trajectory(cfg)
    print(f"mesh 2^-6 ({space.n} interior nodes), horizon {cfg.horizon}, "
          f"{times.size - 1} steps")
    print(f"value scale: '{GLYPHS[0]}' = -1.5 ... '{GLYPHS[-1]}' = +1.5\n")
    for fraction in (0.0, 0.05, 0.15, 0.3, 0.5, 0.75, 1.0):
        step = round(fraction * (times.size - 1))
        padded = np.concatenate([[0.0], states[step], [0.0]])
        print(f"  t={times[step]:5.3f}  |{render(padded)}|")
    print(f"\nfinal sup-norm {np.abs(states[-1]).max():.3f}, "
          f"final mean {states[-1].mean():+.3f}")


if __name__ == "__main__":
    main()
