"""Command-line pipeline: features, preselect, score, train-predictor,
select, evaluate, sweep, synth.

Stages compose through files only.  Every stage writes a provenance
sidecar (<output>.prov.json) holding the tool version, a hash of the
effective configuration, and digests of the inputs; path-valued config
entries are recorded by basename so reruns in different directories stay
byte-identical.

Exit codes: 0 ok, 1 usage, 2 missing input, 3 data invariant violation,
4 numeric failure.  Failures print one machine-readable JSON object to
stderr.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .errors import DataFormatError, NumericError
from . import corpus, flmi, metrics, mfcc, predictor, rules, scoring, synth

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_MISSING_INPUT = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on usage errors; this pipeline reserves 2 for
    # missing inputs and uses 1 for usage.
    def error(self, message):
        raise _UsageError(message)


class _Log:
    def __init__(self, mode: str):
        self.mode = mode

    def __call__(self, event: str, **fields):
        if self.mode == "json":
            sys.stderr.write(
                json.dumps({"event": event, **fields}, sort_keys=True) + "\n"
            )
        else:
            extra = " ".join("%s=%s" % (k, v) for k, v in fields.items())
            sys.stderr.write("[asrsel] %s %s\n" % (event, extra))


def _sha256(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            digest.update(block)
    return digest.hexdigest()


def _write_provenance(out_path: Path, stage: str, config: dict, inputs: dict) -> None:
    cfg = {
        k: (Path(v).name if isinstance(v, (str, Path)) and k.endswith("_path") else v)
        for k, v in config.items()
    }
    doc = {
        "tool": "asrsel",
        "version": __version__,
        "stage": stage,
        "config": cfg,
        "config_hash": hashlib.sha256(
            json.dumps(cfg, sort_keys=True).encode()
        ).hexdigest(),
        "inputs": {
            role: {"name": Path(p).name, "sha256": _sha256(Path(p))}
            for role, p in sorted(inputs.items())
        },
    }
    with open(str(out_path) + ".prov.json", "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True, indent=1)
        fh.write("\n")


def _require_files(*paths):
    for p in paths:
        if p is not None and not Path(p).exists():
            raise FileNotFoundError(str(p))


def _write_json(doc: dict, path: Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True, indent=1)
        fh.write("\n")


# ---------------------------------------------------------------------------
# Stage implementations
# ---------------------------------------------------------------------------


def _stage_features(args, log) -> int:
    _require_files(args.manifest)
    records = corpus.read_manifest(args.manifest)
    matrix = mfcc.features_for_manifest(records, args.audio_root)
    corpus.write_embeddings(matrix, args.out)
    _write_provenance(
        Path(args.out),
        "features",
        {"manifest_path": args.manifest, "audio_root": bool(args.audio_root)},
        {"manifest": args.manifest},
    )
    log("features.done", utterances=len(matrix))
    return EXIT_OK


def _stage_preselect(args, log) -> int:
    _require_files(args.pool_manifest, args.pool_features, args.query_features)
    manifest = corpus.read_manifest(args.pool_manifest)
    try:
        ids = flmi.preselect(
            manifest,
            args.pool_features,
            args.query_features,
            budget=args.budget,
            mode=args.mode,
            chunk=args.chunk,
        )
    except ValueError as exc:
        raise _UsageError(str(exc)) from None
    config = {
        "pool_manifest_path": args.pool_manifest,
        "pool_features_path": args.pool_features,
        "query_features_path": args.query_features,
        "budget": args.budget,
        "mode": args.mode,
        "chunk": args.chunk,
    }
    cfg_hash = hashlib.sha256(
        json.dumps(
            {k: Path(v).name if k.endswith("_path") else v for k, v in config.items()},
            sort_keys=True,
        ).encode()
    ).hexdigest()
    corpus.write_id_list(
        ids,
        args.out,
        header=[
            "asrsel preselect v%s" % __version__,
            "budget=%d mode=%s config=%s" % (args.budget, args.mode, cfg_hash[:16]),
        ],
    )
    _write_provenance(
        Path(args.out),
        "preselect",
        config,
        {
            "pool_manifest": args.pool_manifest,
            "pool_features": args.pool_features,
            "query_features": args.query_features,
        },
    )
    log("preselect.done", selected=len(ids))
    return EXIT_OK


def _stage_score(args, log) -> int:
    _require_files(args.hyps, args.speech_emb, args.text_emb, args.weights)
    hyps = corpus.read_hypotheses(args.hyps)
    if args.ids:
        _require_files(args.ids)
        keep = set(corpus.read_id_list(args.ids))
        hyps = [h for h in hyps if h.utt_id in keep]
    pool = scoring.dedup_pool(hyps)
    net = predictor.load_weights(args.weights)
    speech = corpus.read_embeddings(args.speech_emb)
    text = corpus.read_embeddings(args.text_emb)
    scoring.score_pool(pool, speech, text, net)
    corpus.write_scores(scoring.pool_score_rows(pool), args.out)
    dropped_dup = sum(u.dropped_duplicates for u in pool.utterances.values())
    dropped_eq = sum(u.dropped_baseline_equal for u in pool.utterances.values())
    _write_provenance(
        Path(args.out),
        "score",
        {
            "hyps_path": args.hyps,
            "speech_emb_path": args.speech_emb,
            "text_emb_path": args.text_emb,
            "weights_path": args.weights,
            "ids_path": args.ids,
        },
        {
            "hyps": args.hyps,
            "speech_emb": args.speech_emb,
            "text_emb": args.text_emb,
            "weights": args.weights,
        },
    )
    log(
        "score.done",
        utterances=len(pool.utterances),
        hypotheses=len(pool.scores),
        dropped_duplicates=dropped_dup,
        dropped_baseline_equal=dropped_eq,
    )
    return EXIT_OK


def _stage_train_predictor(args, log) -> int:
    _require_files(args.speech_emb, args.text_emb, args.targets)
    speech = corpus.read_embeddings(args.speech_emb)
    text = corpus.read_embeddings(args.text_emb)
    pairs = predictor.read_labeled_pairs(speech, text, args.targets)
    if args.dev_targets:
        _require_files(args.dev_speech_emb, args.dev_text_emb, args.dev_targets)
        dev = predictor.read_labeled_pairs(
            corpus.read_embeddings(args.dev_speech_emb),
            corpus.read_embeddings(args.dev_text_emb),
            args.dev_targets,
        )
        train_pairs = pairs
    else:
        n_dev = max(1, int(round(args.dev_fraction * len(pairs))))
        if n_dev >= len(pairs):
            raise DataFormatError(
                "dev fraction %g leaves no training data over %d pairs"
                % (args.dev_fraction, len(pairs))
            )
        # Seeded tail split after a seeded shuffle.
        order = np.random.default_rng(args.seed).permutation(len(pairs))
        dev = [pairs[int(i)] for i in order[:n_dev]]
        train_pairs = [pairs[int(i)] for i in order[n_dev:]]
    cfg = predictor.TrainConfig(
        hidden=tuple(int(h) for h in args.hidden.split(",")),
        lr=args.lr,
        batch_size=args.batch_size,
        max_epochs=args.epochs,
        patience=args.patience,
        dropout=args.dropout,
        seed=args.seed,
    )
    net, history = predictor.train(train_pairs, dev, cfg)
    predictor.save_weights(net, args.out)
    _write_json({"history": history}, Path(str(args.out) + ".history.json"))
    _write_provenance(
        Path(args.out),
        "train-predictor",
        {
            "speech_emb_path": args.speech_emb,
            "text_emb_path": args.text_emb,
            "targets_path": args.targets,
            "hidden": args.hidden,
            "lr": args.lr,
            "batch_size": args.batch_size,
            "epochs": args.epochs,
            "patience": args.patience,
            "dropout": args.dropout,
            "seed": args.seed,
            "dev_fraction": args.dev_fraction,
        },
        {
            "speech_emb": args.speech_emb,
            "text_emb": args.text_emb,
            "targets": args.targets,
        },
    )
    best = min(h["dev_mse"] for h in history)
    log("train.done", epochs=history[-1]["epoch"], best_dev_mse=round(best, 6))
    return EXIT_OK


def _need(args, *names):
    for name in names:
        if getattr(args, name.replace("-", "_")) is None:
            raise _UsageError("--%s is required for rule %s" % (name, args.rule))


def _load_scored_pool(args):
    _need(args, "hyps", "scores")
    _require_files(args.hyps, args.scores)
    hyps = corpus.read_hypotheses(args.hyps)
    scores = corpus.read_scores(args.scores)
    return hyps, rules.build_scored_pool(hyps, scores)


def _stage_select(args, log) -> int:
    rule = args.rule
    inputs: dict[str, str] = {}
    if rule in ("conf", "pred", "cos", "euc", "stable", "conf-stable", "wer-binary"):
        hyps, pool = _load_scored_pool(args)
        inputs.update({"hyps": args.hyps, "scores": args.scores})
        if rule == "conf":
            if args.p is None:
                raise _UsageError("--p is required for rule conf")
            thresholds = rules.percentile_thresholds(
                rules.deltas(pool), args.p, pool.digest
            )
            result = rules.select_conf(pool, thresholds)
        elif rule in ("pred", "cos", "euc"):
            if args.p is None:
                raise _UsageError("--p is required for rule %s" % rule)
            thresholds = rules.percentile_thresholds(
                rules.deltas(pool), args.p, pool.digest
            )
            result = rules.select_single_metric(pool, thresholds, rule)
        elif rule == "stable":
            if args.p is None:
                raise _UsageError("--p is required for rule stable")
            result = rules.select_stable_base(pool, args.p)
        elif rule == "conf-stable":
            if args.p is None or args.p2 is None:
                raise _UsageError("--p and --p2 are required for rule conf-stable")
            result = rules.select_conf_stable(pool, args.p, args.p2)
        else:
            result = rules.select_wer_binary(pool)
    elif rule == "ppl":
        _need(args, "hyps")
        _require_files(args.hyps)
        hyps = corpus.read_hypotheses(args.hyps)
        inputs["hyps"] = args.hyps
        if args.size_matched is None and args.p is None:
            raise _UsageError("rule ppl needs --p or --size-matched")
        result = rules.select_ppl(hyps, p=args.p, size_matched=args.size_matched)
    elif rule == "random":
        _need(args, "hours", "hyps", "manifest")
        _require_files(args.hyps, args.manifest)
        hyps = corpus.read_hypotheses(args.hyps)
        manifest = corpus.read_manifest(args.manifest)
        inputs.update({"hyps": args.hyps, "manifest": args.manifest})
        result = rules.select_random_hours(manifest, hyps, args.hours, args.seed)
    elif rule == "cer":
        _need(args, "tau", "hyps", "hyps2", "hyps3")
        _require_files(args.hyps, args.hyps2, args.hyps3)
        manifest = None
        if args.manifest:
            _require_files(args.manifest)
            manifest = corpus.read_manifest(args.manifest)
            inputs["manifest"] = args.manifest
        inputs.update({"hyps": args.hyps, "hyps2": args.hyps2, "hyps3": args.hyps3})
        result = rules.select_cer_consistency(
            corpus.read_hypotheses(args.hyps),
            corpus.read_hypotheses(args.hyps2),
            corpus.read_hypotheses(args.hyps3),
            args.tau,
            manifest,
        )
    else:
        raise _UsageError("unknown rule %r" % rule)

    corpus.write_subset(result, args.out)
    _write_provenance(
        Path(args.out),
        "select",
        {
            "rule": rule,
            "p": args.p,
            "p2": args.p2,
            "size_matched": args.size_matched,
            "hours": args.hours,
            "tau": args.tau,
            "seed": args.seed,
            "hyps_path": args.hyps,
            "scores_path": args.scores,
            "manifest_path": args.manifest,
        },
        inputs,
    )
    log("select.done", rule=rule, entries=len(result.entries))
    return EXIT_OK


def _stage_evaluate(args, log) -> int:
    _require_files(args.subset, args.manifest)
    subset = corpus.read_subset(args.subset)
    manifest = corpus.read_manifest(args.manifest)
    report = metrics.evaluate_subset(subset, manifest, normalize=args.normalize)
    _write_json(report, Path(args.out))
    _write_provenance(
        Path(args.out),
        "evaluate",
        {
            "subset_path": args.subset,
            "manifest_path": args.manifest,
            "normalize": args.normalize,
        },
        {"subset": args.subset, "manifest": args.manifest},
    )
    log("evaluate.done", corpus_wer=report["corpus_wer"], hours=round(report["hours"], 4))
    return EXIT_OK


def _stage_sweep(args, log) -> int:
    _require_files(args.manifest, args.hyps)
    manifest = corpus.read_manifest(args.manifest)
    hyps = corpus.read_hypotheses(args.hyps)
    report = metrics.sweep_report(manifest, hyps, normalize=args.normalize)
    _write_json(report.as_dict(), Path(args.out))
    _write_provenance(
        Path(args.out),
        "sweep",
        {"manifest_path": args.manifest, "hyps_path": args.hyps, "normalize": args.normalize},
        {"manifest": args.manifest, "hyps": args.hyps},
    )
    retained = sum(1 for c in report.configs if c.retained)
    log("sweep.done", configs=len(report.configs), retained=retained)
    return EXIT_OK


def _stage_synth(args, log) -> int:
    cfg = synth.SynthConfig(
        n_utts=args.n_utts,
        seed=args.seed,
        rho=args.rho,
        emb_dim=args.emb_dim,
        n_queries=args.n_queries,
    )
    paths = synth.generate(cfg, args.out_dir)
    _write_provenance(
        Path(args.out_dir) / "synth",
        "synth",
        {
            "n_utts": args.n_utts,
            "seed": args.seed,
            "rho": args.rho,
            "emb_dim": args.emb_dim,
            "n_queries": args.n_queries,
        },
        {},
    )
    log("synth.done", files=len(paths), out_dir=str(args.out_dir))
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="asrsel", description=__doc__.splitlines()[0])
    parser.add_argument("--log", choices=("text", "json"), default="text")
    parser.add_argument("--seed", type=int, default=0, help="global default seed")
    parser.add_argument(
        "--threads",
        type=int,
        default=1,
        help="reserved; results never depend on the degree of parallelism",
    )
    sub = parser.add_subparsers(dest="stage", required=True)

    p = sub.add_parser("features", help="mean-MFCC features for a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--audio-root", default=None)
    p.add_argument("--out", required=True)

    p = sub.add_parser("preselect", help="budgeted target-aware greedy preselection")
    p.add_argument("--pool-manifest", required=True)
    p.add_argument("--pool-features", required=True)
    p.add_argument("--query-features", required=True)
    p.add_argument("--budget", type=int, required=True)
    p.add_argument("--mode", choices=("exact", "lazy"), default="lazy")
    p.add_argument("--chunk", type=int, default=4096)
    p.add_argument("--out", required=True)

    p = sub.add_parser("score", help="quality vectors for a hypothesis pool")
    p.add_argument("--hyps", required=True)
    p.add_argument("--speech-emb", required=True)
    p.add_argument("--text-emb", required=True)
    p.add_argument("--weights", required=True)
    p.add_argument("--ids", default=None, help="optional preselected id list filter")
    p.add_argument("--out", required=True)

    p = sub.add_parser("train-predictor", help="train the WER predictor")
    p.add_argument("--speech-emb", required=True)
    p.add_argument("--text-emb", required=True)
    p.add_argument("--targets", required=True)
    p.add_argument("--dev-speech-emb", default=None)
    p.add_argument("--dev-text-emb", default=None)
    p.add_argument("--dev-targets", default=None)
    p.add_argument("--dev-fraction", type=float, default=0.1)
    p.add_argument("--hidden", default="600,32")
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--epochs", type=int, default=70)
    p.add_argument("--patience", type=int, default=10)
    p.add_argument("--dropout", type=float, default=0.3)
    p.add_argument("--out", required=True)

    p = sub.add_parser("select", help="apply a selection rule")
    p.add_argument(
        "--rule",
        required=True,
        choices=(
            "conf", "pred", "cos", "euc", "stable", "conf-stable",
            "ppl", "random", "cer", "wer-binary",
        ),
    )
    p.add_argument("--p", type=int, default=None)
    p.add_argument("--p2", type=int, default=None)
    p.add_argument("--size-matched", type=int, default=None)
    p.add_argument("--hours", type=float, default=None)
    p.add_argument("--tau", type=float, default=None)
    p.add_argument("--hyps", default=None)
    p.add_argument("--hyps2", default=None)
    p.add_argument("--hyps3", default=None)
    p.add_argument("--scores", default=None)
    p.add_argument("--manifest", default=None)
    p.add_argument("--out", required=True)

    p = sub.add_parser("evaluate", help="corpus WER of a selected subset")
    p.add_argument("--subset", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--normalize", action="store_true")
    p.add_argument("--out", required=True)

    p = sub.add_parser("sweep", help="per-configuration improvement-rate report")
    p.add_argument("--manifest", required=True)
    p.add_argument("--hyps", required=True)
    p.add_argument("--normalize", action="store_true")
    p.add_argument("--out", required=True)

    p = sub.add_parser("synth", help="deterministic synthetic pool")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--n-utts", type=int, default=100)
    p.add_argument("--rho", type=float, default=0.8)
    p.add_argument("--emb-dim", type=int, default=32)
    p.add_argument("--n-queries", type=int, default=16)
    return parser


_STAGES = {
    "features": _stage_features,
    "preselect": _stage_preselect,
    "score": _stage_score,
    "train-predictor": _stage_train_predictor,
    "select": _stage_select,
    "evaluate": _stage_evaluate,
    "sweep": _stage_sweep,
    "synth": _stage_synth,
}


def _fail(code: int, kind: str, message: str) -> int:
    sys.stderr.write(json.dumps({"error": {"type": kind, "message": message}}) + "\n")
    return code


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        return _fail(EXIT_USAGE, "usage", str(exc))
    log = _Log(args.log)
    if args.threads < 1:
        return _fail(EXIT_USAGE, "usage", "--threads must be >= 1")
    try:
        return _STAGES[args.stage](args, log)
    except _UsageError as exc:
        return _fail(EXIT_USAGE, "usage", str(exc))
    except FileNotFoundError as exc:
        return _fail(EXIT_MISSING_INPUT, "missing-input", str(exc))
    except DataFormatError as exc:
        return _fail(EXIT_DATA, "data-format", str(exc))
    except NumericError as exc:
        return _fail(EXIT_NUMERIC, "numeric", str(exc))


if __name__ == "__main__":
    sys.exit(main())
