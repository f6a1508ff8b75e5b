"""Run the acceptance suite and write acceptance.csv; exit 4 on any failure."""

import argparse
import sys
from pathlib import Path

from hilbert_pcr.acceptance import run_all
from hilbert_pcr.tables import write_csv


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--out", type=Path, default=Path("out/acceptance"))
    p.add_argument("--threads", type=int, default=1)
    args = p.parse_args()
    args.out.mkdir(parents=True, exist_ok=True)
    results = run_all(threads=args.threads)
    write_csv(args.out / "acceptance.csv", ["criterion", "name", "passed", "seconds", "detail"],
              [{"criterion": r.number, "name": r.name, "passed": r.passed, "seconds": round(r.seconds, 3),
                "detail": r.detail} for r in results])
    sys.exit(0 if all(r.passed for r in results) else 4)


if __name__ == "__main__":
    main()
