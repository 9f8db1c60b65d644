"""Forgetting benchmark: pretrain a base model on the versatility mixture,
fine-tune it on the speciality task with every method over three seeds, and
print the seed-averaged Spec / Vers / Uni table plus the directional checks.

    python3 scripts/run_benchmark.py [--out results.json] [--seeds 1 2 3]
"""
import argparse
import json

from cofitune.pipeline import BenchmarkConfig, directional_checks, run_benchmark


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", help="write the table and checks as JSON")
    ap.add_argument("--seeds", type=int, nargs="+", default=[1, 2, 3])
    args = ap.parse_args()

    rep = run_benchmark(BenchmarkConfig(seeds=tuple(args.seeds)), log=lambda s: print(s, flush=True))
    print(f"\n{'method':16s} {'Spec':>7s} {'Vers':>7s} {'Uni':>7s} {'Gen-Kn':>7s} {'Gen-Rs':>7s} {'Instr':>7s}")
    for row in rep.table():
        print(f"{row['method']:16s} {row['spec']:7.4f} {row['vers']:7.4f} {row['uni']:7.4f} "
              f"{row['gen_kn']:7.4f} {row['gen_rs']:7.4f} {row['instruct']:7.4f}")
    checks = directional_checks(rep)
    print()
    for c in checks:
        print(f"{'PASS' if c.passed else 'FAIL'}  {c.name}: {c.detail}")
    print(f"\ntotal {rep.seconds['total']:.0f}s")
    if args.out:
        with open(args.out, "w") as fh:
            json.dump({"table": rep.table(), "seconds": rep.seconds,
                       "checks": [c.__dict__ for c in checks]}, fh, indent=1)


if __name__ == "__main__":
    main()
