"""Command-line pipeline: synth, label, balance, train-*, verify, eval,
reject, bon, ablate, report.

Exit statuses: 0 ok, 2 configuration problem, 3 data/artifact problem,
4 numeric failure. Every artifact embeds the tool version, a hash of the
semantically relevant options, and the seeds in effect.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .artifacts import (
    atomic_write_text,
    meta_header,
    read_csv,
    read_jsonl,
    require_artifact,
    write_csv,
    write_jsonl,
)
from .baselines import (
    AttnConfig,
    MlpConfig,
    extract_features,
    load_baseline,
    load_embeddings,
    predict_attn,
    predict_mlp,
    save_baseline,
    save_embeddings,
    train_attn,
    train_mlp,
)
from .config import load_config
from .container import read_container
from .corpus import (
    AblationMask,
    generated_record,
    ingest_corpus,
    study_record,
)
from .errors import (
    ArtifactMissingError,
    ConfigError,
    DataError,
    JoinError,
    NumericError,
)
from .labeling import (
    OracleConfig,
    balance,
    label_corpus,
    label_record,
    labels_from_records,
    make_oracle,
)
from .metrics import (
    EvalPair,
    bootstrap,
    classification_metrics,
    keyword_f1_micro,
    ranking_metrics,
    toy_finding_labeler,
)
from .prm import (
    Vocabulary,
    build_training_encodings,
    load_checkpoint,
    save_checkpoint,
    train,
    verify,
)
from .report import bon_figure, rejection_figure, render_report
from .selection import (
    CandidateScoreInputs,
    aggregate,
    bon_select,
    bon_sweep,
    reject,
    score_candidate,
    weighted_bon,
)
from .synthetic import make_synthetic, synthetic_embeddings

PROB_METHODS = ("avg_prob", "min_prob", "prod_prob")
ABLATION_VARIANTS = (
    ("Original", AblationMask()),
    ("Ablate INDICATION", AblationMask(drop_indication=True)),
    ("Ablate TECHNIQUE", AblationMask(drop_technique=True)),
    ("Ablate COMPARISON", AblationMask(drop_comparison=True)),
)


def _comma_list(text: str) -> list[str]:
    return [item.strip() for item in text.split(",") if item.strip()]


def _load_labels(path):
    from .corpus import iter_records

    require_artifact(path)
    return labels_from_records(iter_records(path))


def _label_lookup(labels):
    return {(s.study_id, s.sentence_index): s for s in labels}


def _join_pairs(records, labels, threshold):
    """EvalPairs from verification records joined with the labels file.

    The labels file defines the evaluation subset: sentences it omits (for
    example after balancing) are skipped.
    """
    lookup = _label_lookup(labels)
    pairs = []
    for record in records:
        if record.get("candidate_index") is not None:
            continue
        for i, prob in enumerate(record["probs"]):
            key = (record["study_id"], i)
            if key not in lookup:
                continue
            sentence = lookup[key]
            pairs.append(
                EvalPair(
                    prob=float(prob),
                    pred=1 if prob >= threshold else 0,
                    label=sentence.label,
                    text=sentence.text,
                )
            )
    if not pairs:
        raise DataError("verification artifact and labels share no sentences")
    return pairs


def _sentence_metrics(pairs, n, level, seed):
    out = {}
    named = {
        "accuracy": lambda ps: classification_metrics(ps)["accuracy"],
        "f1_macro": lambda ps: classification_metrics(ps)["f1_macro"],
        "mcc": lambda ps: classification_metrics(ps)["mcc"],
        "auroc": lambda ps: ranking_metrics(ps)["auroc"],
        "auprc": lambda ps: ranking_metrics(ps)["auprc"],
    }
    for name, fn in named.items():
        ci = bootstrap(pairs, fn, n=n, level=level, seed=seed)
        out[name] = ci.to_dict()
    return out


# -- commands -------------------------------------------------------------------


def cmd_synth(args) -> int:
    config = load_config(args.config)
    spec = config.synthetic
    if args.seed is not None:
        from dataclasses import replace

        spec = replace(spec, seed=args.seed)
    studies, generated, candidate_sets = make_synthetic(spec)

    out_dir = Path(args.out_dir)
    meta = meta_header({"command": "synth", "spec": spec.to_dict()}, {"global": spec.seed})
    write_jsonl(out_dir / "studies.jsonl", (study_record(c, g) for c, g in studies), meta)
    write_jsonl(out_dir / "generated.jsonl", (generated_record(r) for r in generated), meta)
    write_jsonl(
        out_dir / "candidates.jsonl",
        (generated_record(r) for cs in candidate_sets for r in cs.candidates),
        meta,
    )
    if args.embeddings_out:
        labels = label_corpus(studies, generated, make_oracle(OracleConfig()))
        records = synthetic_embeddings(
            generated, labels, dim=config.attn.input_dim, seed=spec.seed
        )
        save_embeddings(records, args.embeddings_out)
    print(f"synth: {len(studies)} studies -> {out_dir}")
    return 0


def cmd_label(args) -> int:
    config = load_config(args.config)
    oracle_config = config.oracle
    if args.oracle:
        oracle_config = OracleConfig(
            backend=args.oracle,
            endpoint=args.endpoint or oracle_config.endpoint,
            timeout=oracle_config.timeout,
            retries=oracle_config.retries,
        )
    studies = ingest_corpus(require_artifact(args.studies), "studies")
    generated = ingest_corpus(require_artifact(args.generated), "generated")
    labels = label_corpus(studies, generated, make_oracle(oracle_config))
    meta = meta_header(
        {"command": "label", "oracle": oracle_config.backend},
        {"global": config.seeds.global_seed},
    )
    write_jsonl(args.out, (label_record(s) for s in labels), meta)
    positives = sum(s.label for s in labels)
    print(f"label: {len(labels)} sentences, {positives} correct, {len(labels) - positives} hallucinated")
    return 0


def cmd_balance(args) -> int:
    config = load_config(args.config)
    ratio = args.ratio if args.ratio is not None else config.balance_ratio
    seed = args.seed if args.seed is not None else config.seeds.balance
    labels = _load_labels(args.labels)
    balanced = balance(labels, target_ratio=ratio, seed=seed)
    meta = meta_header({"command": "balance", "ratio": ratio}, {"balance": seed})
    write_jsonl(args.out, (label_record(s) for s in balanced), meta)
    print(f"balance: {len(labels)} -> {len(balanced)} sentences")
    return 0


def cmd_train_prm(args) -> int:
    from dataclasses import replace

    config = load_config(args.config)
    train_config = config.prm_train
    if args.seed is not None:
        train_config = replace(train_config, seed=args.seed)
    studies = ingest_corpus(require_artifact(args.studies), "studies")
    generated = ingest_corpus(require_artifact(args.generated), "generated")
    labels = _load_labels(args.labels)

    vocab = Vocabulary(config.arch.vocab_size)
    encodings = build_training_encodings(
        studies,
        generated,
        labels,
        vocab,
        max_len=train_config.max_len,
        prompt_budget=train_config.prompt_budget,
    )
    val = None
    if args.val_frac:
        rng = np.random.default_rng(train_config.seed)
        order = rng.permutation(len(encodings))
        n_val = max(1, int(args.val_frac * len(encodings)))
        val = [encodings[i] for i in order[:n_val]]
        encodings = [encodings[i] for i in order[n_val:]]

    model, history = train(encodings, train_config, val_encodings=val, arch=config.arch)
    save_checkpoint(model, args.out)
    if args.history:
        meta = meta_header(
            {"command": "train-prm", "config": train_config.to_dict(), "arch": config.arch.to_dict()},
            {"train": train_config.seed},
        )
        write_jsonl(args.history, history.to_records(), meta)
    final = history.epochs[-1]["train_loss"] if history.epochs else float("nan")
    print(f"train-prm: {len(encodings)} reports, final epoch loss/sentence {final:.4f}")
    return 0


def cmd_train_mlp(args) -> int:
    from dataclasses import replace

    config = load_config(args.config)
    mlp_config = config.mlp
    if args.seed is not None:
        mlp_config = replace(mlp_config, seed=args.seed)
    generated = ingest_corpus(require_artifact(args.generated), "generated")
    labels = _load_labels(args.labels)
    lookup = _label_lookup(labels)

    features = []
    ys = []
    feature_rows = []
    for report in generated:
        for i, sentence in enumerate(report.sentences):
            key = (report.study_id, i)
            if key not in lookup:
                continue
            vec = extract_features(sentence)
            features.append(vec)
            ys.append(lookup[key].label)
            feature_rows.append(
                {
                    "study_id": report.study_id,
                    "sentence_index": i,
                    "features": list(vec.values),
                    "label": lookup[key].label,
                }
            )
    model = train_mlp(features, ys, mlp_config)
    save_baseline(model, args.out)
    if args.features_out:
        meta = meta_header({"command": "train-mlp"}, {"train": mlp_config.seed})
        write_jsonl(args.features_out, feature_rows, meta)
    print(f"train-mlp: {len(ys)} sentences")
    return 0


def cmd_train_attn(args) -> int:
    from dataclasses import replace

    config = load_config(args.config)
    attn_config = config.attn
    if args.seed is not None:
        attn_config = replace(attn_config, seed=args.seed)
    records = load_embeddings(require_artifact(args.embeddings))
    labels = _load_labels(args.labels)
    lookup = _label_lookup(labels)
    seqs = []
    ys = []
    for study_id, sentence_index, matrix in records:
        key = (study_id, sentence_index)
        if key not in lookup:
            continue
        seqs.append(matrix.astype(np.float64))
        ys.append(lookup[key].label)
    if seqs and seqs[0].shape[1] != attn_config.input_dim:
        attn_config = replace(attn_config, input_dim=int(seqs[0].shape[1]))
    model = train_attn(seqs, ys, attn_config)
    save_baseline(model, args.out)
    print(f"train-attn: {len(ys)} sentences")
    return 0


def _verify_with_prm(model, config, studies, reports, threshold, mask):
    vocab = Vocabulary(model.arch.vocab_size)
    ctx_by_study = {ctx.study_id: ctx for ctx, _ in studies}
    records = []
    for report in reports:
        if report.study_id not in ctx_by_study:
            raise JoinError(f"report references unknown study {report.study_id!r}")
        result = verify(
            model,
            ctx_by_study[report.study_id],
            report.texts,
            vocab,
            threshold=threshold,
            mask=mask,
            prompt_budget=config.prm_train.prompt_budget,
        )
        record = {
            "study_id": report.study_id,
            "probs": list(result.probs),
            "fed_back_labels": list(result.fed_back_labels),
            "truncated": result.truncated_sentences,
        }
        if report.candidate_index is not None:
            record["candidate_index"] = report.candidate_index
        records.append(record)
    return records


def cmd_verify(args) -> int:
    config = load_config(args.config)
    threshold = args.threshold if args.threshold is not None else config.threshold
    mask = AblationMask.drop(args.ablate) if args.ablate else AblationMask()
    studies = ingest_corpus(require_artifact(args.studies), "studies")
    if args.candidates:
        candidate_sets = ingest_corpus(require_artifact(args.candidates), "candidates")
        reports = [c for cs in candidate_sets for c in cs.candidates]
    else:
        reports = ingest_corpus(require_artifact(args.generated), "generated")

    header, _ = read_container(require_artifact(args.model))
    kind = header.get("kind")
    if kind == "prm":
        model = load_checkpoint(args.model)
        records = _verify_with_prm(model, config, studies, reports, threshold, mask)
    elif kind == "mlp":
        if args.ablate:
            raise ConfigError("context ablation applies to the sequential verifier only")
        model = load_baseline(args.model)
        records = []
        for report in reports:
            probs = predict_mlp(model, [extract_features(s) for s in report.sentences])
            record = {"study_id": report.study_id, "probs": [float(p) for p in probs]}
            if report.candidate_index is not None:
                record["candidate_index"] = report.candidate_index
            records.append(record)
    elif kind == "attn":
        if args.ablate:
            raise ConfigError("context ablation applies to the sequential verifier only")
        if not args.embeddings:
            raise ConfigError("attention verifier requires --embeddings")
        model = load_baseline(args.model)
        emb = {(sid, idx): m for sid, idx, m in load_embeddings(require_artifact(args.embeddings))}
        records = []
        for report in reports:
            seqs = []
            for i in range(len(report.sentences)):
                key = (report.study_id, i)
                if key not in emb:
                    raise JoinError(f"no embeddings for {key[0]} sentence {i}")
                seqs.append(emb[key].astype(np.float64))
            probs = predict_attn(model, seqs)
            records.append({"study_id": report.study_id, "probs": [float(p) for p in probs]})
    else:
        raise DataError(f"model container of kind {kind!r} cannot verify")

    meta = meta_header(
        {"command": "verify", "kind": kind, "threshold": threshold, "ablate": args.ablate},
        {"global": config.seeds.global_seed},
    )
    write_jsonl(args.out, records, meta)
    print(f"verify: {len(records)} reports scored with {kind}")
    return 0


def cmd_eval(args) -> int:
    config = load_config(args.config)
    threshold = args.threshold if args.threshold is not None else config.threshold
    seed = args.seed if args.seed is not None else config.seeds.bootstrap
    records = read_jsonl(require_artifact(args.verification))
    labels = _load_labels(args.labels)
    pairs = _join_pairs(records, labels, threshold)

    result = _sentence_metrics(pairs, config.bootstrap_n, config.level, seed)
    keyword_rows = []
    for keyword in config.keywords:
        row = keyword_f1_micro(pairs, keyword, n=config.bootstrap_n, level=config.level, seed=seed)
        if "ci" in row:
            row["ci"] = row["ci"].to_dict()
        keyword_rows.append(row)
    result["keywords"] = keyword_rows
    result["meta"] = meta_header(
        {"command": "eval", "threshold": threshold, "bootstrap_n": config.bootstrap_n},
        {"bootstrap": seed},
    )["meta"]
    atomic_write_text(args.out, json.dumps(result, sort_keys=True, indent=2) + "\n")
    print(
        "eval: "
        + " ".join(f"{k}={result[k]['point']:.3f}" for k in ("accuracy", "f1_macro", "mcc", "auroc", "auprc"))
    )
    return 0


def _report_quality(generated_text: str, reference_text: str) -> dict:
    from .metrics import finding_f1, text_metrics

    quality = text_metrics(generated_text, reference_text)
    gen_vec = toy_finding_labeler(generated_text)
    gt_vec = toy_finding_labeler(reference_text)
    quality["finding_f1"] = finding_f1([gen_vec], [gt_vec])
    quality["finding_cells"] = (
        sum(g and t for g, t in zip(gen_vec, gt_vec)),
        sum(g and not t for g, t in zip(gen_vec, gt_vec)),
        sum(t and not g for g, t in zip(gen_vec, gt_vec)),
    )
    return quality


def _micro_f1(cells) -> float:
    tp = sum(c[0] for c in cells)
    fp = sum(c[1] for c in cells)
    fn = sum(c[2] for c in cells)
    denom = 2 * tp + fp + fn
    return 2 * tp / denom if denom else 0.0


def _load_external_scores(path):
    """Adapter for metrics computed outside this tool (one object per line).

    Rows are {"study_id", "metric", "value"} and may carry
    "candidate_index" when they refer to Best-of-N candidates.
    """
    scores: dict[str, dict] = {}
    for record in read_jsonl(require_artifact(path)):
        try:
            metric = record["metric"]
            key = record["study_id"]
            if "candidate_index" in record:
                key = (key, int(record["candidate_index"]))
            scores.setdefault(metric, {})[key] = float(record["value"])
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"malformed external score row {record!r}: {exc}") from exc
    return scores


def cmd_reject(args) -> int:
    config = load_config(args.config)
    records = [r for r in read_jsonl(require_artifact(args.verification)) if r.get("candidate_index") is None]
    studies = ingest_corpus(require_artifact(args.studies), "studies")
    generated = ingest_corpus(require_artifact(args.generated), "generated")
    gt_by_study = {gt.study_id: gt for _, gt in studies}
    gen_by_study = {r.study_id: r for r in generated}
    pct_grid = [float(p) for p in _comma_list(args.pct_grid)] if args.pct_grid else list(config.pct_grid)
    methods = _comma_list(args.method) if args.method else list(PROB_METHODS)

    probs_by_study = {}
    for record in records:
        if record["study_id"] not in gen_by_study:
            raise JoinError(f"verification references unknown report {record['study_id']!r}")
        probs_by_study[record["study_id"]] = [float(p) for p in record["probs"]]

    study_ids = sorted(probs_by_study)
    quality = {"bleu": [], "rouge1": [], "rouge2": [], "rougeL": [], "finding_f1": []}
    cells = []
    for study_id in study_ids:
        report = gen_by_study[study_id]
        reference = " ".join(gt_by_study[study_id].sentences)
        q = _report_quality(" ".join(report.texts), reference)
        for name in ("bleu", "rouge1", "rouge2", "rougeL", "finding_f1"):
            quality[name].append(q[name])
        cells.append(q["finding_cells"])
    quality["finding_f1_micro"] = cells

    if args.external_scores:
        for metric, values in _load_external_scores(args.external_scores).items():
            missing = [sid for sid in study_ids if sid not in values]
            if missing:
                raise DataError(f"external metric {metric!r} missing studies {missing[:3]}")
            quality[metric] = [values[sid] for sid in study_ids]

    rows = []
    for method in methods:
        scores = []
        for study_id in study_ids:
            report = gen_by_study[study_id]
            entropies = None
            if method == "neg_entropy":
                if any(s.token_stats is None for s in report.sentences):
                    raise DataError(f"{study_id}: token_stats required for neg_entropy")
                entropies = tuple(tuple(t[2] for t in s.token_stats) for s in report.sentences)
            scores.append(
                aggregate(
                    probs_by_study[study_id],
                    method,
                    token_entropies=entropies,
                    log_prob=report.log_prob,
                    study_id=study_id,
                )
            )
        rows.extend(
            reject(scores, quality, pct_grid, aggregators={"finding_f1_micro": _micro_f1})
        )

    meta = meta_header(
        {"command": "reject", "methods": methods, "pct_grid": pct_grid},
        {"global": config.seeds.global_seed},
    )["meta"]
    write_csv(args.out, rows, ("method", "pct", "metric", "value", "retained"), {"meta": meta})
    if args.figure:
        rejection_figure(rows, args.figure)
    print(f"reject: {len(rows)} curve rows over {len(study_ids)} reports")
    return 0


def cmd_bon(args) -> int:
    config = load_config(args.config)
    seed = args.seed if args.seed is not None else config.seeds.global_seed
    records = read_jsonl(require_artifact(args.verification))
    candidate_sets = ingest_corpus(require_artifact(args.candidates), "candidates")
    studies = ingest_corpus(require_artifact(args.studies), "studies")
    gt_by_study = {gt.study_id: gt for _, gt in studies}
    methods = (
        _comma_list(args.method) if args.method else ["avg_prob", "min_prob", "prod_prob", "log_prob"]
    )

    probs = {}
    for record in records:
        if record.get("candidate_index") is None:
            raise DataError("bon requires a candidate verification artifact")
        probs[(record["study_id"], int(record["candidate_index"]))] = [
            float(p) for p in record["probs"]
        ]

    inputs = []
    quality = []
    max_n = min(len(cs) for cs in candidate_sets)
    n_grid = (
        [int(n) for n in _comma_list(args.n_grid)]
        if args.n_grid
        else [n for n in config.n_grid if n <= max_n]
    )
    for cs in candidate_sets:
        if cs.study_id not in gt_by_study:
            raise JoinError(f"candidates reference unknown study {cs.study_id!r}")
        reference = " ".join(gt_by_study[cs.study_id].sentences)
        study_inputs = []
        study_quality: dict[str, list[float]] = {}
        for candidate in cs.candidates:
            key = (cs.study_id, candidate.candidate_index)
            if key not in probs:
                raise JoinError(f"no verification for candidate {key}")
            text = " ".join(candidate.texts)
            entropies = None
            if all(s.token_stats is not None for s in candidate.sentences):
                entropies = tuple(tuple(t[2] for t in s.token_stats) for s in candidate.sentences)
            study_inputs.append(
                CandidateScoreInputs(
                    candidate_index=candidate.candidate_index,
                    probs=tuple(probs[key]),
                    token_entropies=entropies,
                    log_prob=candidate.log_prob,
                    finding_vector=toy_finding_labeler(text),
                )
            )
            q = _report_quality(text, reference)
            for name in ("bleu", "rouge1", "rouge2", "rougeL", "finding_f1"):
                study_quality.setdefault(name, []).append(q[name])
        inputs.append(study_inputs)
        quality.append(study_quality)

    if args.external_scores:
        external = _load_external_scores(args.external_scores)
        for metric, values in external.items():
            for cs, study_quality in zip(candidate_sets, quality):
                row = []
                for candidate in cs.candidates:
                    key = (cs.study_id, candidate.candidate_index)
                    if key not in values:
                        raise DataError(f"external metric {metric!r} missing candidate {key}")
                    row.append(values[key])
                study_quality[metric] = row

    rows = bon_sweep(inputs, methods, quality, n_grid=n_grid, weighted=False, seed=seed)
    rows += bon_sweep(inputs, methods, quality, n_grid=n_grid, weighted=True, seed=seed)

    meta = meta_header(
        {"command": "bon", "methods": methods, "n_grid": n_grid},
        {"global": seed},
    )["meta"]
    write_csv(args.out, rows, ("strategy", "n", "metric", "value"), {"meta": meta})
    if args.audit:
        audit_rows = []
        for strategy, chooser in (("bon", bon_select), ("weighted-bon", weighted_bon)):
            for method in methods:
                for cs, study_inputs in zip(candidate_sets, inputs):
                    chosen = chooser(study_inputs, method)
                    chosen_inputs = next(
                        c for c in study_inputs if c.candidate_index == chosen
                    )
                    audit_rows.append(
                        {
                            "study_id": cs.study_id,
                            "strategy": f"{strategy}-{method}",
                            "chosen_index": chosen,
                            "score": score_candidate(chosen_inputs, method).value,
                        }
                    )
        write_jsonl(args.audit, audit_rows, {"meta": meta})
    if args.figure:
        bon_figure(rows, args.figure)
    print(f"bon: {len(rows)} curve rows over {len(candidate_sets)} studies")
    return 0


def cmd_ablate(args) -> int:
    config = load_config(args.config)
    threshold = args.threshold if args.threshold is not None else config.threshold
    seed = args.seed if args.seed is not None else config.seeds.bootstrap
    model = load_checkpoint(require_artifact(args.model))
    studies = ingest_corpus(require_artifact(args.studies), "studies")
    generated = ingest_corpus(require_artifact(args.generated), "generated")
    labels = _load_labels(args.labels)

    rows = []
    for variant, mask in ABLATION_VARIANTS:
        records = _verify_with_prm(model, config, studies, generated, threshold, mask)
        pairs = _join_pairs(records, labels, threshold)
        metrics = _sentence_metrics(pairs, config.bootstrap_n, config.level, seed)
        row = {"variant": variant}
        for name in ("accuracy", "f1_macro", "mcc", "auroc", "auprc"):
            row[name] = metrics[name]["point"]
            row[f"{name}_lo"] = metrics[name]["lo"]
            row[f"{name}_hi"] = metrics[name]["hi"]
        rows.append(row)

    fieldnames = ["variant"]
    for name in ("accuracy", "f1_macro", "mcc", "auroc", "auprc"):
        fieldnames += [name, f"{name}_lo", f"{name}_hi"]
    meta = meta_header(
        {"command": "ablate", "threshold": threshold, "bootstrap_n": config.bootstrap_n},
        {"bootstrap": seed},
    )["meta"]
    write_csv(args.out, rows, fieldnames, {"meta": meta})
    print(f"ablate: {len(rows)} variants evaluated")
    return 0


def cmd_report(args) -> int:
    metrics = None
    if args.metrics:
        metrics = json.loads(Path(require_artifact(args.metrics)).read_text(encoding="utf-8"))
    ablation_rows = read_csv(require_artifact(args.ablation)) if args.ablation else None
    rejection_rows = read_csv(require_artifact(args.rejection)) if args.rejection else None
    bon_rows = read_csv(require_artifact(args.bon)) if args.bon else None
    history = read_jsonl(require_artifact(args.history)) if args.history else None
    path = render_report(
        args.out_dir,
        metrics=metrics,
        ablation_rows=ablation_rows,
        rejection_rows=rejection_rows,
        bon_rows=bon_rows,
        history_records=history,
    )
    print(f"report: {path}")
    return 0


# -- parser ----------------------------------------------------------------------


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="reportprm",
        description="Sentence-level process-reward verification pipeline",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", default=None, help="pipeline config JSON")
        p.add_argument("--seed", type=int, default=None, help="override the command seed")

    p = sub.add_parser("synth", help="generate a synthetic corpus")
    common(p)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--embeddings-out", default=None)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("label", help="weak-label generated sentences")
    common(p)
    p.add_argument("--studies", required=True)
    p.add_argument("--generated", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--oracle", choices=["synthetic", "remote"], default=None)
    p.add_argument("--endpoint", default=None)
    p.set_defaults(func=cmd_label)

    p = sub.add_parser("balance", help="downsample the majority class")
    common(p)
    p.add_argument("--labels", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--ratio", type=float, default=None)
    p.set_defaults(func=cmd_balance)

    p = sub.add_parser("train-prm", help="train the sequential verifier")
    common(p)
    p.add_argument("--studies", required=True)
    p.add_argument("--generated", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--history", default=None)
    p.add_argument("--val-frac", type=float, default=0.0)
    p.set_defaults(func=cmd_train_prm)

    p = sub.add_parser("train-mlp", help="train the grey-box feature MLP")
    common(p)
    p.add_argument("--generated", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--features-out", default=None)
    p.set_defaults(func=cmd_train_mlp)

    p = sub.add_parser("train-attn", help="train the attention-pooled classifier")
    common(p)
    p.add_argument("--embeddings", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train_attn)

    p = sub.add_parser("verify", help="score sentences with a trained verifier")
    common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--studies", required=True)
    p.add_argument("--generated", default=None)
    p.add_argument("--candidates", default=None)
    p.add_argument("--embeddings", default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--threshold", type=float, default=None)
    p.add_argument("--ablate", choices=["indication", "technique", "comparison"], default=None)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("eval", help="sentence-level metrics with bootstrap CIs")
    common(p)
    p.add_argument("--verification", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--threshold", type=float, default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("reject", help="percentile rejection quality curves")
    common(p)
    p.add_argument("--verification", required=True)
    p.add_argument("--studies", required=True)
    p.add_argument("--generated", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--figure", default=None)
    p.add_argument("--method", default=None, help="comma-separated aggregation methods")
    p.add_argument("--pct-grid", default=None, help="comma-separated percentiles")
    p.add_argument("--external-scores", default=None,
                   help="per-report scores computed outside (one JSON object per line)")
    p.set_defaults(func=cmd_reject)

    p = sub.add_parser("bon", help="best-of-N selection curves")
    common(p)
    p.add_argument("--verification", required=True)
    p.add_argument("--candidates", required=True)
    p.add_argument("--studies", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--audit", default=None)
    p.add_argument("--figure", default=None)
    p.add_argument("--method", default=None)
    p.add_argument("--n-grid", default=None)
    p.add_argument("--external-scores", default=None)
    p.set_defaults(func=cmd_bon)

    p = sub.add_parser("ablate", help="verify+eval under each context ablation")
    common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--studies", required=True)
    p.add_argument("--generated", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--threshold", type=float, default=None)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("report", help="render a summary document with figures")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--metrics", default=None)
    p.add_argument("--ablation", default=None)
    p.add_argument("--rejection", default=None)
    p.add_argument("--bon", default=None)
    p.add_argument("--history", default=None)
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    if args.command == "verify" and not (args.generated or args.candidates):
        parser.error("verify requires --generated or --candidates")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 4
    except (DataError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
