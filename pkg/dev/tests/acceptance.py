#!/usr/bin/env python3
"""
revoke-bd acceptance runner - directional end-to-end checks at desk scale

Usage:
    cd /path/to/revoke-bd && python dev/tests/acceptance.py
    python dev/tests/acceptance.py --preset smoke          # synthetic data, quick CPU sanity run
    python dev/tests/acceptance.py --config run.json --skip-ablation

Checks:
    revocation   victim ASR >= 70, ASR-U <= ASR - 40, BA within 5 points of the
                 clean model, BA-U within 10 points of BA (first-order / first-order)
    conflict     mean probe cosine with mitigation is above the baseline's for
                 every one of 3 matched seeds
    ablation     ASR-U(Ours) < ASR-U(w/o Unlearn) < ASR-U(w/o Mitigation),
                 each by at least 5 points

The smoke preset only exercises the pipeline; its numbers are not expected to
meet the desk-scale bounds.
"""

import argparse
import copy
import os
import sys
import time

ROOT = os.path.dirname(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))
sys.path.insert(0, ROOT)

from revoke_bd.attack.bilevel import alternate_optimize  # noqa: E402
from revoke_bd.config import PRESETS, ExperimentConfig  # noqa: E402
from revoke_bd.evaluation.protocol import (ablation, ablation_config, build_trigger,  # noqa: E402
                                           full_protocol, prepare, train_clean, with_config)
from revoke_bd.logger import Logger  # noqa: E402

RESULTS = []


def check(name, passed, detail):
    RESULTS.append((name, passed))
    print(f"  {'✅' if passed else '❌'} {name}: {detail}")


def load(args) -> ExperimentConfig:
    config = ExperimentConfig(args.config) if args.config else ExperimentConfig.from_preset(args.preset)
    config.simulation_unlearn.method = 'first_order'
    config.evaluation_unlearn.method = 'first_order'
    if args.device:
        config.device = args.device
    return config


def run_revocation(config, ctx, clean):
    print("\n💉 Attack -> revoke, first-order / first-order...")
    report = full_protocol(config, ctx, clean=clean)
    clean_acc = clean[1].metadata.get('accuracy')
    check("victim ASR >= 70", report.asr >= 70.0, f"{report.asr:.2f}")
    check("ASR-U at least 40 points below ASR", report.asr_u <= report.asr - 40.0,
          f"{report.asr_u:.2f} ({report.delta:+.2f})")
    check("BA within 5 points of the clean model", abs(report.ba - clean_acc) <= 5.0,
          f"BA {report.ba:.2f} vs clean {clean_acc:.2f}")
    check("BA-U within 10 points of BA", abs(report.ba_u - report.ba) <= 10.0,
          f"BA-U {report.ba_u:.2f}")
    return report


def mean_probe(config, ctx, clean):
    model_clean, theta_clean = clean
    trigger = build_trigger(config, ctx.dataset, ctx.device, ctx.dtype)
    result = alternate_optimize(config, ctx.dataset, ctx.partition, copy.deepcopy(model_clean),
                                theta_clean, trigger)
    return result.trace.mean_probe()


def _signed(value):
    return "n/a" if value is None else f"{value:+.3f}"


def run_conflict(config, ctx, seeds):
    print("\n📐 Gradient conflict with and without mitigation...")
    for seed in seeds:
        seeded = config.copy()
        seeded.seed = seed
        seed_ctx = with_config(ctx, seeded)
        clean = train_clean(seed_ctx)
        with_mitigation = mean_probe(ablation_config(seeded, 'Ours'), seed_ctx, clean)
        baseline = mean_probe(ablation_config(seeded, 'w/o Mitigation'), seed_ctx, clean)
        # a side with no defined cosine fails the check
        passed = with_mitigation is not None and baseline is not None and with_mitigation > baseline
        check(f"seed {seed}: mitigated cosine above baseline", passed,
              f"{_signed(with_mitigation)} vs {_signed(baseline)}")


def run_ablation(config, ctx, clean):
    print("\n🧩 Ablation ordering...")
    results = ablation(config, ctx, clean=clean)
    ours = results['Ours'].asr_u
    no_unlearn = results['w/o Unlearn'].asr_u
    no_mitigation = results['w/o Mitigation'].asr_u
    check("ASR-U(Ours) + 5 <= ASR-U(w/o Unlearn)", ours + 5.0 <= no_unlearn,
          f"{ours:.2f} vs {no_unlearn:.2f}")
    check("ASR-U(w/o Unlearn) + 5 <= ASR-U(w/o Mitigation)", no_unlearn + 5.0 <= no_mitigation,
          f"{no_unlearn:.2f} vs {no_mitigation:.2f}")


def main():
    parser = argparse.ArgumentParser(description="revoke-bd acceptance runner")
    parser.add_argument("--config", "-c", type=str, default=None, help="Config file (overrides --preset)")
    parser.add_argument("--preset", choices=sorted(PRESETS), default="desk")
    parser.add_argument("--device", type=str, default=None)
    parser.add_argument("--seeds", type=int, default=3, help="Matched seed pairs for the conflict check")
    parser.add_argument("--skip-conflict", action="store_true")
    parser.add_argument("--skip-ablation", action="store_true")
    args = parser.parse_args()

    Logger()
    config = load(args)
    print("=" * 60)
    print(f"🔬 revoke-bd acceptance ({args.config or args.preset}, config {config.config_hash()})")
    print("=" * 60)

    start = time.time()
    ctx = prepare(config)
    clean = train_clean(ctx)
    run_revocation(config, ctx, clean)
    if not args.skip_conflict:
        run_conflict(config, ctx, [config.seed + i for i in range(args.seeds)])
    if not args.skip_ablation:
        run_ablation(config, ctx, clean)

    passed = sum(1 for _, ok in RESULTS if ok)
    print("\n" + "=" * 60)
    print(f"📊 {passed}/{len(RESULTS)} checks passed in {(time.time() - start) / 60:.1f} min")
    print("=" * 60)
    return 0 if passed == len(RESULTS) else 1


if __name__ == "__main__":
    sys.exit(main())
