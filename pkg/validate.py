#!/usr/bin/env python3
import argparse
import sys
import logging
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))

from jamshield.config import OUTPUT_DATASET_FILE, OUTPUT_MASK_FILE, OUTPUT_REPORT_FILE
from jamshield.validation import run_all_validations, print_validation_report

logging.basicConfig(
    level=logging.INFO,
    format='%(asctime)s - %(name)s - %(levelname)s - %(message)s'
)


def _default(path: Path):
    return path if path.exists() else None


if __name__ == '__main__':
    parser = argparse.ArgumentParser(description="Validate jamshield output artifacts")
    parser.add_argument("--dataset", type=Path, default=_default(OUTPUT_DATASET_FILE))
    parser.add_argument("--mask", type=Path, default=_default(OUTPUT_MASK_FILE))
    parser.add_argument("--report", type=Path, default=_default(OUTPUT_REPORT_FILE))
    args = parser.parse_args()

    results = run_all_validations(args.dataset, args.mask, args.report)
    all_passed = print_validation_report(results)

    sys.exit(0 if all_passed else 1)
