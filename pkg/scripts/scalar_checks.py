#!/usr/bin/env python3
"""Print the closed-form anchors next to what the library computes."""
import numpy as np

from chainedbell import npa
from chainedbell.chained import (chained_coefficients, ideal_behavior, solve_gram_sdp,
                                 theorem1_bound, tsirelson_bound, werner_witness_threshold)
from chainedbell.qstate import bloch_decompose, make_werner


def main():
    print(f"{'n':>3} {'2n cos(pi/2n)':>14} {'Gram optimum':>13} {'n cos(pi/n)':>12} {'witness p':>10}")
    for n in range(2, 9):
        g = solve_gram_sdp(n)["primal"]
        print(f"{n:>3} {tsirelson_bound(n):>14.8f} {g:>13.8f} {n * np.cos(np.pi / n):>12.8f} "
              f"{werner_witness_threshold(n):>10.6f}")
    b = bloch_decompose(make_werner(0.9))
    print(f"Werner 0.9, n=3 bound: {theorem1_bound(b, 3):.6f}")
    for n in (2, 3, 4, 5):
        peak = ideal_behavior(n).table[0, 0].max()
        res = npa.max_prob_given_violation(npa.Scenario.chained(n), chained_coefficients(n),
                                           tsirelson_bound(n), (0, 0), "1+ab")
        print(f"n={n}: ideal peak {peak:.6f}, certified p_guess at A1B1 {res.p_guess:.6f} "
              f"({res.min_entropy_bits:.4f} bits)")


if __name__ == "__main__":
    main()
