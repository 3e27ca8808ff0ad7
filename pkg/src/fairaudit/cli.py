"""Command-line entry point.

Subcommands:
  audit              predictions + attributes -> rate/gap/performance bundle
  mitigate reweight  attributes -> per-sample weight JSONL
  mitigate ceo       val+test predictions -> adjusted predictions + thresholds
  augment            WAVs + oversampling plan -> augmented WAVs / spectrograms
  pair               speaker features -> maximum-weight matching plan
  simulate           scenario config -> baseline + mitigated runs + audit
  report             audit JSONs -> Markdown + SVG

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
Every run writes a manifest (even on failure); under --deterministic all
timestamps are suppressed so outputs are byte-identical across runs.
"""

from __future__ import annotations

import argparse
import datetime
import hashlib
import json
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .errors import FairauditError, NumericalError, UsageError
from . import audio as audio_mod
from . import pairing as pairing_mod
from .ceo import apply_ceo, fit_ceo
from .metrics import (
    auc_ovr,
    auprc_ovr,
    f1_macro,
    gap_report,
    log_loss_multiclass,
    seed_aggregate,
    subgroup_rates,
)
from .records import (
    CLASSES,
    check_predictions_match,
    load_attributes,
    load_predictions,
)
from .report import (
    audit_csv,
    audit_markdown,
    load_bundle,
    rate_bar_svg,
    simulate_markdown,
)
from .reweight import frequency_weights
from .simulate import TrainSettings, run_scenario
from .toynet import scenario_config

log = logging.getLogger(__name__)


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage problems must exit 1, not argparse's 2
        raise UsageError(message)


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


class Manifest:
    """Run provenance: command, config snapshot, input digests, seeds."""

    def __init__(self, command: str, argv: Sequence[str], out_dir: Path, deterministic: bool):
        self.data = {
            "tool": "fairaudit",
            "version": __version__,
            "command": command,
            "argv": list(argv),
            "inputs": {},
            "seeds": [],
            "config": {},
            "started": None if deterministic else datetime.datetime.now().isoformat(),
            "finished": None,
            "status": "running",
        }
        self.deterministic = deterministic
        self.out_dir = out_dir

    def record_input(self, path: str | Path) -> None:
        p = Path(path)
        if p.is_file():
            self.data["inputs"][str(p)] = _sha256(p)

    def finish(self, status: str) -> None:
        self.data["status"] = status
        if not self.deterministic:
            self.data["finished"] = datetime.datetime.now().isoformat()
        self.out_dir.mkdir(parents=True, exist_ok=True)
        _write_json(self.out_dir / "manifest.json", self.data)


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _parse_seeds(raw: str) -> list[int]:
    if "," in raw:
        return [int(tok) for tok in raw.split(",") if tok.strip() != ""]
    n = int(raw)
    return list(range(n))


def _parse_formats(raw: str) -> list[str]:
    formats = [tok.strip() for tok in raw.split(",") if tok.strip()]
    bad = [f for f in formats if f not in ("json", "csv", "md", "svg")]
    if bad:
        raise UsageError(f"unknown format(s) {bad}; expected json,csv,md,svg")
    return formats


# ---------------------------------------------------------------------------
# Subcommand implementations

def _cmd_audit(args, manifest: Manifest) -> None:
    records = load_attributes(args.attributes)
    manifest.record_input(args.attributes)
    prediction_sets = load_predictions(args.predictions)
    manifest.record_input(args.predictions)
    formats = _parse_formats(args.format)

    per_seed = []
    for preds in prediction_sets:
        check_predictions_match(preds, records)
        table = subgroup_rates(preds, records, args.attribute)
        gap = gap_report(table)
        sids = sorted(preds.entries)
        probs = np.array([preds.entries[s] for s in sids])
        by_id = {r.subject_id: r for r in records}
        labels = [by_id[s].label for s in sids]
        hard = [preds.hard_pred(s) for s in sids]
        performance: dict = {"f1_macro": f1_macro(hard, labels),
                             "log_loss": log_loss_multiclass(probs, labels)}
        try:
            performance["auc_ovr"] = {c.value: v for c, v in auc_ovr(probs, labels).items()}
            performance["auprc_ovr"] = {c.value: v for c, v in auprc_ovr(probs, labels).items()}
        except FairauditError as exc:
            log.warning("AUC/AUPRC skipped: %s", exc)
        per_seed.append({"seed": preds.seed, "rate_table": table.to_dict(),
                         "gap_report": gap.to_dict(), "performance": performance})
    manifest.data["seeds"] = [e["seed"] for e in per_seed]

    aggregate = {}
    if len(per_seed) >= 2:
        for name, pick in (("eoo_gap", lambda e: e["gap_report"]["eoo_gap"]),
                           ("eo_gap", lambda e: e["gap_report"]["eo_gap"]),
                           ("f1_macro", lambda e: e["performance"]["f1_macro"]),
                           ("log_loss", lambda e: e["performance"]["log_loss"])):
            agg = seed_aggregate([pick(e) for e in per_seed], method=args.ci_method)
            aggregate[name] = {"mean": agg.mean, "ci95_half_width": agg.ci95_half_width}
    bundle = {"attribute": args.attribute, "seeds": [e["seed"] for e in per_seed],
              "per_seed": per_seed, "aggregate": aggregate}

    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if "json" in formats:
        _write_json(out / "audit.json", bundle)
    if "csv" in formats:
        (out / "audit.csv").write_text(audit_csv(bundle), encoding="utf-8")
    if "md" in formats:
        (out / "audit.md").write_text(audit_markdown(bundle), encoding="utf-8")
    if "svg" in formats:
        (out / "tpr.svg").write_text(
            rate_bar_svg(bundle, "tpr", deterministic=args.deterministic), encoding="utf-8")
        (out / "fpr.svg").write_text(
            rate_bar_svg(bundle, "fpr", deterministic=args.deterministic), encoding="utf-8")


def _cmd_mitigate_reweight(args, manifest: Manifest) -> None:
    records = load_attributes(args.attributes)
    manifest.record_input(args.attributes)
    wv = frequency_weights(records, args.attribute)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    wv.write_jsonl(out / "weights.jsonl")
    _write_json(out / "weights_meta.json",
                {"scheme": wv.scheme, "attribute": wv.attribute,
                 "mean_weight": wv.mean(), "n": len(wv.weights)})


def _cmd_mitigate_ceo(args, manifest: Manifest) -> None:
    records = load_attributes(args.attributes)
    manifest.record_input(args.attributes)
    val_sets = load_predictions(args.val_predictions)
    test_sets = load_predictions(args.test_predictions)
    manifest.record_input(args.val_predictions)
    manifest.record_input(args.test_predictions)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    val_by_seed = {ps.seed: ps for ps in val_sets}
    adjusted_lines = []
    models = {}
    for test_ps in test_sets:
        if test_ps.seed not in val_by_seed:
            raise UsageError(f"no validation predictions for seed {test_ps.seed}")
        model = fit_ceo(val_by_seed[test_ps.seed], records, args.attribute,
                        grid_step=args.grid_step)
        models[test_ps.seed] = model
        adjusted = apply_ceo(model, test_ps, records)
        for sid in adjusted.entries:
            adjusted_lines.append(json.dumps({
                "subject_id": sid,
                "calibrated": [float(p) for p in adjusted.entries[sid]],
                "pred": adjusted.hard[sid].value,
                "seed": test_ps.seed,
            }))
    (out / "adjusted_predictions.jsonl").write_text("\n".join(adjusted_lines) + "\n",
                                                    encoding="utf-8")
    _write_json(out / "ceo_model.json",
                {str(seed): model.to_dict() for seed, model in models.items()})
    manifest.data["seeds"] = sorted(models)


def _cmd_augment(args, manifest: Manifest) -> None:
    records = load_attributes(args.attributes)
    manifest.record_input(args.attributes)
    plan = audio_mod.load_plan(args.plan)
    manifest.record_input(args.plan)
    if args.seed is not None:
        plan.seed = args.seed
    manifest.data["seeds"] = [plan.seed]
    instances = audio_mod.compile_plan(records, plan)
    audio_dir = Path(args.audio_dir)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    for inst in instances:
        wav_path = audio_dir / f"{inst.source_id}.wav"
        if not wav_path.exists():
            raise UsageError(f"missing audio for subject {inst.source_id!r}: {wav_path}")
        clip = audio_mod.read_wav(wav_path, subject_id=inst.source_id)
        if args.low_pass:
            clip = audio_mod.low_pass(clip)
        rng = np.random.default_rng(inst.seed)
        stem = f"{inst.source_id}__{inst.operator}__t{inst.target_index:02d}_i{inst.instance_index:04d}"
        if inst.operator == "time_shift":
            shifted = audio_mod.time_shift(clip, rng)
            out_file = out / f"{stem}.wav"
            audio_mod.write_wav(out_file, shifted)
            produced = [out_file.name]
        else:
            spec = audio_mod.log_mel(clip)
            masked = (audio_mod.freq_mask(spec, rng) if inst.operator == "freq_mask"
                      else audio_mod.time_mask(spec, rng))
            data_path, meta_path = audio_mod.save_spectrogram(masked, out / stem)
            produced = [data_path.name, meta_path.name]
        entries.append({"source_id": inst.source_id, "operator": inst.operator,
                        "seed": inst.seed, "target_index": inst.target_index,
                        "instance_index": inst.instance_index, "outputs": produced})
    _write_json(out / "augmentation_manifest.json", {"plan_seed": plan.seed, "instances": entries})


def _cmd_pair(args, manifest: Manifest) -> None:
    raw = pairing_mod.load_features(args.features)
    manifest.record_input(args.features)
    feats = pairing_mod.normalize_features(raw, method=args.normalization)
    ids, dmat = pairing_mod.distance_matrix(feats)
    plan = pairing_mod.max_weight_matching(dmat, ids=ids)
    utterances: dict[str, list[str]] = {sid: [sid] for sid in ids}
    if args.utterances:
        manifest.record_input(args.utterances)
        utterances = {}
        with open(args.utterances, encoding="utf-8") as fh:
            for line in fh:
                if not line.strip():
                    continue
                obj = json.loads(line)
                utterances.setdefault(str(obj["subject_id"]), []).append(str(obj["utterance_id"]))
    directives = pairing_mod.conversion_plan(plan, utterances)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    pairing_mod.write_plan(out / "matching_plan.json", plan, directives)


def _cmd_simulate(args, manifest: Manifest) -> None:
    config = scenario_config(args.scenario)
    seeds = _parse_seeds(args.seeds)
    manifest.data["seeds"] = seeds
    manifest.data["config"]["scenario"] = config.to_dict()
    settings = TrainSettings(epochs=args.epochs, batch_size=args.batch_size,
                             learning_rate=args.learning_rate, hidden=args.hidden)
    result = run_scenario(config, seeds, settings=settings,
                          adversary_lambda=args.adversary_lambda)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "simulate.json", result)
    (out / "simulate.md").write_text(simulate_markdown(result), encoding="utf-8")


def _cmd_report(args, manifest: Manifest) -> None:
    formats = _parse_formats(args.format)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for path in args.audit:
        manifest.record_input(path)
        bundle = load_bundle(path)
        stem = Path(path).stem
        if "md" in formats:
            (out / f"{stem}.md").write_text(audit_markdown(bundle), encoding="utf-8")
        if "csv" in formats:
            (out / f"{stem}.csv").write_text(audit_csv(bundle), encoding="utf-8")
        if "svg" in formats:
            (out / f"{stem}_tpr.svg").write_text(
                rate_bar_svg(bundle, "tpr", deterministic=args.deterministic), encoding="utf-8")
            (out / f"{stem}_fpr.svg").write_text(
                rate_bar_svg(bundle, "fpr", deterministic=args.deterministic), encoding="utf-8")


# ---------------------------------------------------------------------------
# Parser wiring

def build_parser() -> _Parser:
    parser = _Parser(prog="fairaudit",
                     description="Subgroup fairness auditing and bias mitigation toolkit")
    parser.add_argument("--version", action="version", version=f"fairaudit {__version__}")
    sub = parser.add_subparsers(dest="command")

    def common(p):
        p.add_argument("--out-dir", required=True, help="output directory")
        p.add_argument("--deterministic", action="store_true",
                       help="suppress timestamps so outputs are byte-identical")

    p_audit = sub.add_parser("audit", help="fairness audit of prediction files")
    p_audit.add_argument("--predictions", required=True)
    p_audit.add_argument("--attributes", required=True)
    p_audit.add_argument("--attribute", default="age_group",
                         help="protected attribute to audit")
    p_audit.add_argument("--format", default="json,csv,md,svg")
    p_audit.add_argument("--ci-method", default="t", choices=("t", "normal"))
    common(p_audit)

    p_mit = sub.add_parser("mitigate", help="bias mitigation operators")
    mit_sub = p_mit.add_subparsers(dest="mitigation")
    p_rw = mit_sub.add_parser("reweight", help="frequency-based sample weights")
    p_rw.add_argument("--attributes", required=True)
    p_rw.add_argument("--attribute", default="age_group")
    common(p_rw)
    p_ceo = mit_sub.add_parser("ceo", help="calibrated equalized-odds post-processing")
    p_ceo.add_argument("--val-predictions", required=True)
    p_ceo.add_argument("--test-predictions", required=True)
    p_ceo.add_argument("--attributes", required=True)
    p_ceo.add_argument("--attribute", default="age_group")
    p_ceo.add_argument("--grid-step", type=float, default=0.01)
    common(p_ceo)

    p_aug = sub.add_parser("augment", help="materialize an oversampling plan")
    p_aug.add_argument("--audio-dir", required=True)
    p_aug.add_argument("--plan", required=True)
    p_aug.add_argument("--attributes", required=True)
    p_aug.add_argument("--seed", type=int, default=None, help="override the plan seed")
    p_aug.add_argument("--low-pass", action="store_true",
                       help="apply the 8 kHz low-pass cleanup before augmenting")
    common(p_aug)

    p_pair = sub.add_parser("pair", help="maximum-weight speaker pairing")
    p_pair.add_argument("--features", required=True)
    p_pair.add_argument("--utterances", default=None,
                        help="JSONL {subject_id, utterance_id}; default one per speaker")
    p_pair.add_argument("--normalization", default="zscore", choices=("zscore", "minmax"))
    common(p_pair)

    p_sim = sub.add_parser("simulate", help="synthetic bias scenario end to end")
    p_sim.add_argument("--scenario", required=True,
                       help="registered scenario name or JSON config path")
    p_sim.add_argument("--seeds", default="5",
                       help="seed count N (0..N-1) or comma-separated list")
    p_sim.add_argument("--epochs", type=int, default=12)
    p_sim.add_argument("--batch-size", type=int, default=4)
    p_sim.add_argument("--learning-rate", type=float, default=0.05)
    p_sim.add_argument("--hidden", type=int, default=8)
    p_sim.add_argument("--adversary-lambda", type=float, default=None)
    common(p_sim)

    p_rep = sub.add_parser("report", help="render audit JSONs to Markdown/SVG")
    p_rep.add_argument("--audit", nargs="+", required=True)
    p_rep.add_argument("--format", default="md,svg")
    common(p_rep)
    return parser


_HANDLERS = {
    "audit": _cmd_audit,
    "pair": _cmd_pair,
    "augment": _cmd_augment,
    "simulate": _cmd_simulate,
    "report": _cmd_report,
}


def run(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            parser.print_usage(sys.stderr)
            return 1
        if args.command == "mitigate":
            if getattr(args, "mitigation", None) is None:
                parser.print_usage(sys.stderr)
                return 1
            handler = (_cmd_mitigate_reweight if args.mitigation == "reweight"
                       else _cmd_mitigate_ceo)
            command = f"mitigate {args.mitigation}"
        else:
            handler = _HANDLERS[args.command]
            command = args.command
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1

    manifest = Manifest(command, argv, Path(args.out_dir), args.deterministic)
    manifest.data["config"]["args"] = {
        k: v for k, v in vars(args).items() if k not in ("command", "mitigation")}
    try:
        handler(args, manifest)
    except UsageError as exc:
        manifest.finish(f"usage error: {exc}")
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except NumericalError as exc:
        manifest.finish(f"numerical failure: {exc}")
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    except FairauditError as exc:
        manifest.finish(f"data error: {exc}")
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    manifest.finish("ok")
    return 0


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
