"""Finite-difference check of the hand-written backward pass across likelihoods and gate types.

Run: python demos/gradient_check.py
"""

from mrvae.gradcheck import standard_gradcheck_suite


def main():
    for result in standard_gradcheck_suite(seed=0):
        name, err = result.worst
        print(f"{result.label:<32} {len(result.errors):3d} parameter arrays, worst {name} at {err:.1e}")


if __name__ == "__main__":
    main()
