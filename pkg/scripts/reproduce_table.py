#!/usr/bin/env python3
"""Run the four published (radius, d_min) blocks and write one table CSV per block."""

import argparse
from pathlib import Path

from sphereabout.artifacts import write_report, write_table
from sphereabout.conflict import ConflictPolicy
from sphereabout.experiments import PUBLISHED_BLOCKS, ExperimentConfig, run_table
from sphereabout.reference import Orientation, compare_to_reference


def main() -> None:
    parser = argparse.ArgumentParser(description="reproduce the published sweep tables")
    parser.add_argument("--out-dir", type=Path, default=Path("tables"))
    parser.add_argument("--threads", type=int, default=1)
    parser.add_argument(
        "--orientation",
        default=Orientation.FIRST_BLOCK.value,
        choices=[o.value for o in Orientation],
    )
    args = parser.parse_args()
    args.out_dir.mkdir(parents=True, exist_ok=True)

    for radius, d_min in sorted(PUBLISHED_BLOCKS):
        print(f"Sweeping R={radius:g} d_min={d_min:g}...")
        config = ExperimentConfig(
            radius_m=radius, d_min_m=d_min, policy=ConflictPolicy(d_min_m=d_min)
        )
        run = run_table(config, args.threads)
        out = args.out_dir / f"table_R{radius:g}_d{d_min:g}.csv"
        write_table(out, radius, d_min, run.rows)

        comparison = compare_to_reference(
            run.rows, radius, d_min, Orientation(args.orientation)
        )
        assert comparison is not None
        write_report(out.with_suffix(".report.json"), comparison.model_dump())
        for row in comparison.rows:
            status = "ok" if row.within_band and row.direct_share_ok else "MISS"
            print(f"  N={row.n_uavs}: avg flow {row.avg_flow_delta:+.3f} {status}")
        print(f"Wrote {out}")


if __name__ == "__main__":
    main()
