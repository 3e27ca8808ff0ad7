#!/usr/bin/env python3
"""Generate a small demo dataset so every CLI subcommand can be exercised:
attribute CSV, two-seed prediction JSONL, speaker feature CSV, a few WAV
clips and an oversampling plan.

Example:
    python scripts/make_demo_data.py --out-dir demo
    fairaudit audit --predictions demo/predictions.jsonl \
        --attributes demo/attributes.csv --attribute age_group --out-dir out/audit
"""

import argparse
import json
from pathlib import Path

import numpy as np

from fairaudit.audio import AudioClip, write_wav


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out-dir", default="demo")
    parser.add_argument("--subjects", type=int, default=48)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    rng = np.random.default_rng(args.seed)
    out = Path(args.out_dir)
    (out / "audio").mkdir(parents=True, exist_ok=True)

    labels = ["control", "mci", "ad"]
    genders = ["female", "male"]
    languages = ["english", "english", "english", "spanish"]
    ages = [52, 61, 70, 77, 84, 91]
    rows = ["subject_id,gender,age,education,language,label"]
    pred_lines = []
    feat_rows = ["subject_id,voiced_segments_per_sec,shimmer_local_db,mfcc1_stddev_norm"]
    for i in range(args.subjects):
        sid = f"sub{i:03d}"
        label = labels[i % 3]
        age = ages[i % len(ages)]
        edu = "" if i % 5 == 0 else str(int(rng.integers(6, 20)))
        rows.append(f"{sid},{genders[i % 2]},{age},{edu},{languages[i % 4]},{label}")
        for seed in (0, 1):
            # skew quality by age so the demo audit shows a visible gap
            sharp = 6.0 if age < 80 else 2.0
            conc = [sharp if labels[k] == label else 1.0 for k in range(3)]
            probs = rng.dirichlet(conc)
            pred_lines.append(json.dumps({"subject_id": sid, "probs": probs.tolist(),
                                          "seed": seed}))
        feat_rows.append(f"{sid},{rng.uniform(1, 5):.4f},{rng.uniform(0.2, 1.4):.4f},"
                         f"{rng.uniform(0.4, 2.2):.4f}")
        if i < 6:
            t = np.arange(3 * 16000) / 16000.0
            tone = 0.2 * np.sin(2 * np.pi * (180 + 40 * i) * t)
            write_wav(out / "audio" / f"{sid}.wav",
                      AudioClip(samples=tone, sample_rate=16000, subject_id=sid))

    (out / "attributes.csv").write_text("\n".join(rows) + "\n")
    (out / "predictions.jsonl").write_text("\n".join(pred_lines) + "\n")
    (out / "features.csv").write_text("\n".join(feat_rows) + "\n")
    plan = {"seed": 11, "targets": [
        {"predicate": {"age_group": "a80_plus"}, "label": "mci",
         "copies": 2, "operators": ["time_shift", "freq_mask", "time_mask"]}]}
    (out / "plan.json").write_text(json.dumps(plan, indent=2) + "\n")
    print(f"wrote demo data for {args.subjects} subjects under {out}/")


if __name__ == "__main__":
    main()
