"""Command-line pipeline: gen, extract, train, eval, ablate, bench, serve, score.

Every subcommand accepts --seed, --config and --out. A config file is a
single JSON document with optional sections "gen", "train", "policy",
"lexicon" and "benign_domain"; command-line flags override config values,
which override built-in defaults. Runs that produce artifacts also write a
manifest echoing the resolved configuration.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path
from typing import Optional

from . import __version__
from .baselines import DEFAULT_LEXICON, GbdtDetector, RuleFilterDetector, load_lexicon
from .evaluate import (
    ablation_table,
    build_dataset,
    default_ablation_specs,
    evaluate_scored,
    measure_latency,
    report_text,
    run_ablation,
    score_sessions,
)
from .features import (
    FEATURE_NAMES,
    NORMALIZATION_CONSTANTS,
    BenignProfile,
    FeatureExtractor,
    fit_profile,
    session_rows,
    write_feature_matrix,
)
from .gbdt import GbdtModel, TrainConfig, load_model, save_model
from .gbdt import train as train_gbdt
from .policy import (
    DEFAULT_MAX_BENIGN_BLOCK_RATE,
    DEFAULT_MAX_BENIGN_RESTRICT_RATE,
    Thresholds,
    calibrate,
    decide,
)
from .service import Gateway, measure_service_latency, serve_stdio, serve_tcp
from .trace import DEFAULT_BENIGN_DOMAIN, load_sessions
from .tracegen import GenConfig, corpus_manifest, gen_corpus, load_corpus, manifest_hash, write_corpus


def _load_config(path: Optional[str]) -> dict:
    if path is None:
        return {}
    with open(path, "r", encoding="utf-8") as fp:
        config = json.load(fp)
    if not isinstance(config, dict):
        raise ValueError("config file must contain a json object")
    return config


def _gen_config(args, config: dict) -> GenConfig:
    section = dict(config.get("gen", {}))
    if args.seed is not None:
        section["seed"] = args.seed
    section.setdefault("seed", 7)
    if getattr(args, "n", None) is not None:
        section["n_total"] = args.n
    if getattr(args, "benign_fraction", None) is not None:
        section["benign_fraction"] = args.benign_fraction
    return GenConfig.from_dict(section)


def _train_config(config: dict) -> TrainConfig:
    return TrainConfig.from_dict(dict(config.get("train", {})))


def _policy_caps(config: dict) -> tuple[float, float]:
    section = config.get("policy", {})
    return (
        float(section.get("max_benign_block_rate", DEFAULT_MAX_BENIGN_BLOCK_RATE)),
        float(section.get("max_benign_restrict_rate", DEFAULT_MAX_BENIGN_RESTRICT_RATE)),
    )


def _benign_domain(config: dict) -> str:
    return config.get("benign_domain", DEFAULT_BENIGN_DOMAIN)


def _require_out(args) -> Path:
    if args.out is None:
        raise ValueError("--out is required for this subcommand")
    return Path(args.out)


def _load_bundle(model_dir) -> tuple[GbdtModel, BenignProfile, Thresholds, dict]:
    base = Path(model_dir)
    model = load_model(base / "model.json")
    with open(base / "profile.json", "r", encoding="utf-8") as fp:
        profile = BenignProfile.from_dict(json.load(fp))
    with open(base / "manifest.json", "r", encoding="utf-8") as fp:
        manifest = json.load(fp)
    thresholds = Thresholds.from_dict(manifest["thresholds"])
    return model, profile, thresholds, manifest


def _write_json(path: Path, payload: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fp:
        json.dump(payload, fp, indent=2, sort_keys=True)
        fp.write("\n")


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_gen(args) -> int:
    config = _load_config(args.config)
    gen_config = _gen_config(args, config)
    out = _require_out(args)
    corpus = gen_corpus(gen_config)
    manifest = write_corpus(corpus, out)
    print(f"wrote corpus to {out} (hash {manifest_hash(manifest)[:16]})")
    for split in ("train", "valid", "test"):
        counts = manifest["counts"][split]
        print(
            f"  {split}: {counts['sessions']} sessions "
            f"({counts['benign']} benign / {counts['adversarial']} adversarial, "
            f"{counts['prefixes']} prefixes)"
        )
    return 0


def cmd_extract(args) -> int:
    config = _load_config(args.config)
    out = _require_out(args)
    out.mkdir(parents=True, exist_ok=True)
    corpus = load_corpus(args.corpus)
    profile = fit_profile(corpus.train)
    extractor = FeatureExtractor(profile, _benign_domain(config))
    _write_json(out / "profile.json", profile.to_dict())
    for split in ("train", "valid", "test"):
        sessions = corpus.split_named(split)
        rows = (row for session in sessions for row in session_rows(session, extractor))
        write_feature_matrix(out / f"features_{split}.csv", rows)
        print(f"wrote features_{split}.csv ({sum(len(s.turns) for s in sessions)} rows)")
    return 0


def cmd_train(args) -> int:
    config = _load_config(args.config)
    out = _require_out(args)
    out.mkdir(parents=True, exist_ok=True)
    corpus = load_corpus(args.corpus)
    train_config = _train_config(config)
    block_cap, restrict_cap = _policy_caps(config)
    domain = _benign_domain(config)

    profile = fit_profile(corpus.train)
    extractor = FeatureExtractor(profile, domain)
    train_ds = build_dataset(corpus.train, extractor)
    valid_ds = build_dataset(corpus.valid, extractor)

    started = time.perf_counter()
    model = train_gbdt(train_ds.X, train_ds.y, train_config, list(FEATURE_NAMES))
    elapsed = time.perf_counter() - started

    valid_scores = model.predict(valid_ds.X)
    calibration = calibrate(
        valid_ds.session_scores(valid_scores),
        max_benign_block_rate=block_cap,
        max_benign_restrict_rate=restrict_cap,
    )

    save_model(model, out / "model.json")
    _write_json(out / "profile.json", profile.to_dict())
    manifest = {
        "format_version": 1,
        "train_config": train_config.to_dict(),
        "thresholds": calibration.thresholds.to_dict(),
        "calibration": calibration.to_dict(),
        "benign_domain": domain,
        "normalization_constants": NORMALIZATION_CONSTANTS,
        "corpus_manifest_hash": manifest_hash(corpus_manifest(corpus)),
        "final_train_loss": model.train_loss[-1],
        "train_seconds": round(elapsed, 3),
    }
    _write_json(out / "manifest.json", manifest)
    print(
        f"trained {train_config.n_estimators} trees in {elapsed:.1f}s; "
        f"tau1={calibration.thresholds.tau1:.4f} tau2={calibration.thresholds.tau2:.4f} "
        f"(valid ASR reduction {calibration.asr_reduction:.3f})"
    )
    return 0


def _build_detector(name: str, model_dir, config: dict):
    if name == "ours":
        model, profile, thresholds, _ = _load_bundle(model_dir)
        return GbdtDetector(model, profile, _benign_domain(config)), thresholds
    if name == "rule_filter":
        lexicon = config.get("lexicon")
        if isinstance(lexicon, str):
            lexicon = load_lexicon(lexicon)
        detector = RuleFilterDetector(lexicon or DEFAULT_LEXICON)
        # The rule filter emits 0/1 risks; block at 1.0 and restrict at 0.5
        # keep Eq-style boundary semantics meaningful for a binary score.
        return detector, Thresholds(tau1=0.5, tau2=1.0)
    raise ValueError(f"unknown detector: {name!r} (expected 'ours' or 'rule_filter')")


def cmd_eval(args) -> int:
    config = _load_config(args.config)
    corpus = load_corpus(args.corpus)
    sessions = corpus.split_named(args.split)
    detector, thresholds = _build_detector(args.detector, args.model, config)
    scored = score_sessions(detector, sessions)
    latency_ms = None
    if args.with_latency:
        latency_ms = measure_latency(detector, sessions).p50_ms
    report = evaluate_scored(
        scored,
        thresholds,
        detector_name=args.detector,
        corpus_manifest_hash=manifest_hash(corpus_manifest(corpus)),
        bootstrap_samples=args.bootstrap_samples,
        bootstrap_seed=args.bootstrap_seed if args.seed is None else args.seed,
        latency_p50_ms=latency_ms,
    )
    print(report_text(report))
    if args.out:
        _write_json(Path(args.out), report.to_dict())
        print(f"wrote report to {args.out}")
    if args.csv:
        path = Path(args.csv)
        path.parent.mkdir(parents=True, exist_ok=True)
        lines = ["detector,family,attack_success"]
        lines += [
            f"{args.detector},{family},{success!r}"
            for family, success in sorted(report.per_family_attack_success.items())
        ]
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        print(f"wrote per-family csv to {args.csv}")
    return 0


def cmd_ablate(args) -> int:
    config = _load_config(args.config)
    corpus = load_corpus(args.corpus)
    train_config = _train_config(config)
    block_cap, restrict_cap = _policy_caps(config)
    profile = fit_profile(corpus.train)
    extractor = FeatureExtractor(profile, _benign_domain(config))
    train_ds = build_dataset(corpus.train, extractor)
    valid_ds = build_dataset(corpus.valid, extractor)
    test_ds = build_dataset(corpus.test, extractor)
    rows = run_ablation(
        train_ds,
        valid_ds,
        test_ds,
        train_config,
        default_ablation_specs(),
        max_benign_block_rate=block_cap,
        max_benign_restrict_rate=restrict_cap,
    )
    print(ablation_table(rows))
    if args.out:
        _write_json(
            Path(args.out),
            {
                "corpus_manifest_hash": manifest_hash(corpus_manifest(corpus)),
                "train_config": train_config.to_dict(),
                "rows": [row.to_dict() for row in rows],
            },
        )
        print(f"wrote ablation table to {args.out}")
    if args.csv:
        path = Path(args.csv)
        path.parent.mkdir(parents=True, exist_ok=True)
        lines = ["mode,group,z_size,auc,f1,asr_reduction"]
        lines += [
            f"{r.mode},{r.group},{r.z_size},{r.auc!r},{r.f1!r},{r.asr_reduction!r}"
            for r in rows
        ]
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        print(f"wrote ablation csv to {args.csv}")
    return 0


def cmd_bench(args) -> int:
    config = _load_config(args.config)
    corpus = load_corpus(args.corpus)
    sessions = corpus.split_named(args.split)
    model, profile, thresholds, _ = _load_bundle(args.model)
    domain = _benign_domain(config)

    sample = sessions[: args.sessions] if args.sessions else sessions
    ours = GbdtDetector(model, profile, domain)
    rule = RuleFilterDetector()
    ours_stats = measure_latency(ours, sample)
    rule_stats = measure_latency(rule, sample)

    groups = [sample[i :: args.concurrency] for i in range(args.concurrency)]
    gateway = Gateway(model, profile, thresholds, benign_domain=domain)
    service_stats = measure_service_latency(gateway, groups)

    payload = {
        "offline": {
            "ours_p50_ms": ours_stats.p50_ms,
            "ours_p95_ms": ours_stats.p95_ms,
            "rule_filter_p50_ms": rule_stats.p50_ms,
            "n_prefixes": ours_stats.n_prefixes,
        },
        "service": service_stats,
    }
    print(f"offline ours       p50 {ours_stats.p50_ms:.3f} ms  p95 {ours_stats.p95_ms:.3f} ms")
    print(f"offline rule_filter p50 {rule_stats.p50_ms:.3f} ms")
    print(
        f"service ({service_stats['concurrency']} sessions) "
        f"p50 {service_stats['service_p50_ms']:.3f} ms  "
        f"client rtt p50 {service_stats['client_rtt_p50_ms']:.3f} ms"
    )
    if args.out:
        _write_json(Path(args.out), payload)
        print(f"wrote bench results to {args.out}")
    return 0


def cmd_serve(args) -> int:
    config = _load_config(args.config)
    model, profile, thresholds, _ = _load_bundle(args.model)
    gateway = Gateway(
        model,
        profile,
        thresholds,
        audit_path=args.audit_log,
        idle_timeout_s=args.idle_timeout,
        include_features=args.debug_features,
        benign_domain=_benign_domain(config),
    )
    try:
        if args.transport == "stdio":
            serve_stdio(gateway, sys.stdin, sys.stdout)
        else:
            server = serve_tcp(gateway, host=args.host, port=args.port)
            print(f"listening on {server.server_address[0]}:{server.server_address[1]}", file=sys.stderr)
            try:
                server.serve_forever()
            except KeyboardInterrupt:
                server.shutdown()
                server.server_close()
    finally:
        gateway.close()
    return 0


def cmd_score(args) -> int:
    config = _load_config(args.config)
    model, profile, thresholds, _ = _load_bundle(args.model)
    detector = GbdtDetector(model, profile, _benign_domain(config))
    sessions = load_sessions(args.traces)
    lines = []
    for session in sessions:
        scorer = detector.new_session()
        for turn in session.turns:
            risk = scorer.push(turn)
            decision = decide(risk, thresholds)
            lines.append(
                json.dumps(
                    {
                        "session_id": session.session_id,
                        "turn_index": turn.index,
                        "risk": risk,
                        "decision": decision.verdict,
                    }
                )
            )
    text = "\n".join(lines) + ("\n" if lines else "")
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(text, encoding="utf-8")
        print(f"wrote {len(lines)} decisions to {args.out}")
    else:
        sys.stdout.write(text)
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def _add_common(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--seed", type=int, default=None, help="override the config seed")
    sub.add_argument("--config", default=None, help="path to a JSON config document")
    sub.add_argument("--out", default=None, help="output path (file or directory)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="agentgate",
        description="Behavioral risk scoring and pre-execution gating for agent sessions",
    )
    parser.add_argument("--version", action="version", version=f"agentgate {__version__}")
    subparsers = parser.add_subparsers(dest="command", required=True)

    p = subparsers.add_parser("gen", help="generate the synthetic corpus")
    _add_common(p)
    p.add_argument("--n", type=int, default=None, help="total session count")
    p.add_argument("--benign-fraction", dest="benign_fraction", type=float, default=None)
    p.set_defaults(func=cmd_gen)

    p = subparsers.add_parser("extract", help="corpus -> feature matrices + profile")
    _add_common(p)
    p.add_argument("--corpus", required=True)
    p.set_defaults(func=cmd_extract)

    p = subparsers.add_parser("train", help="train the detector and calibrate thresholds")
    _add_common(p)
    p.add_argument("--corpus", required=True)
    p.set_defaults(func=cmd_train)

    p = subparsers.add_parser("eval", help="evaluate a detector on a corpus split")
    _add_common(p)
    p.add_argument("--corpus", required=True)
    p.add_argument("--model", required=True, help="model bundle directory")
    p.add_argument("--detector", choices=("ours", "rule_filter"), default="ours")
    p.add_argument("--split", choices=("train", "valid", "test"), default="test")
    p.add_argument("--bootstrap-samples", type=int, default=500)
    p.add_argument("--bootstrap-seed", type=int, default=0)
    p.add_argument("--with-latency", action="store_true", help="also measure per-prefix latency")
    p.add_argument("--csv", default=None, help="also write a plot-ready per-family csv")
    p.set_defaults(func=cmd_eval)

    p = subparsers.add_parser("ablate", help="feature-group ablation sweep")
    _add_common(p)
    p.add_argument("--corpus", required=True)
    p.add_argument("--csv", default=None, help="also write a plot-ready csv of the table")
    p.set_defaults(func=cmd_ablate)

    p = subparsers.add_parser("bench", help="latency benchmarks (offline + service)")
    _add_common(p)
    p.add_argument("--corpus", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--split", choices=("train", "valid", "test"), default="test")
    p.add_argument("--sessions", type=int, default=400, help="session sample size (0 = all)")
    p.add_argument("--concurrency", type=int, default=16)
    p.set_defaults(func=cmd_bench)

    p = subparsers.add_parser("serve", help="run the gating sidecar")
    _add_common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--transport", choices=("stdio", "tcp"), default="stdio")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=9009)
    p.add_argument("--audit-log", default=None)
    p.add_argument("--idle-timeout", type=float, default=900.0)
    p.add_argument("--debug-features", action="store_true")
    p.set_defaults(func=cmd_serve)

    p = subparsers.add_parser("score", help="score a trace file offline")
    _add_common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--traces", required=True)
    p.set_defaults(func=cmd_score)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
