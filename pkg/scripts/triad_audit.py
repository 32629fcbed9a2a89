"""Triad violation audit on a synthetic cohort, both rules, optionally across depths."""

import argparse

from popgcn.data_io import SyntheticConfig, generate_synthetic_cohort
from popgcn.pipeline import AuditConfig, run_audit
from popgcn.reporting import audit_table


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--seed", type=int, default=42)
    ap.add_argument("--depths", type=int, nargs="+", default=[2])
    ap.add_argument("--rules", nargs="+", default=["dominance", "metric"])
    ap.add_argument("--workers", type=int, default=None)
    args = ap.parse_args()

    cohort = generate_synthetic_cohort(SyntheticConfig(seed=args.seed))
    for rule in args.rules:
        for depth in args.depths:
            doc = run_audit(cohort, AuditConfig(rule=rule, depth=depth), workers=args.workers)
            print(f"depth {depth}")
            print(audit_table(doc["audit"]))


if __name__ == "__main__":
    main()
