"""Compare analytic and finite-difference gradients on a few random instances.

    python3 demos/gradient_audit.py --scenes 10
"""

import argparse

from ar4d.gradcheck import run_audit


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--scenes", type=int, default=10)
    parser.add_argument("--fields", type=int, default=4)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()
    report = run_audit(seed=args.seed, scenes=args.scenes, fields=args.fields)
    for line in report.lines():
        print(line)
    print("all within tolerance" if report.passed else "some gradients disagree")


if __name__ == "__main__":
    main()
