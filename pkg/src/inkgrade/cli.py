"""Command-line orchestration of the whole pipeline.

    inkgrade <command> --config cfg.toml [--seed N] [--deterministic]

Commands: generate, train-recognizer, finetune, train-lm, train-scorer,
bootstrap, pipeline, eval.  Every command writes a run manifest (command,
config hash, input hashes, outputs, wall time, metric summary) under
<out_dir>/manifests/.  Heavy imports happen inside the command functions so
--deterministic can pin the BLAS thread count before numpy loads.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
from pathlib import Path

from .config import PipelineConfig
from .errors import ConfigError, InkgradeError

DOMAINS = ("pretrain", "exam")


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    h.update(Path(path).read_bytes())
    return h.hexdigest()


def _write_json(path: Path, payload) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _write_jsonl(path: Path, rows) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True) + "\n")


def _read_jsonl(path: Path) -> list[dict]:
    return [json.loads(line) for line in Path(path).read_text(encoding="utf-8").splitlines()
            if line.strip()]


def _manifest(cfg: PipelineConfig, command: str, inputs: list[Path],
              outputs: list[Path], metrics: dict, started: float) -> None:
    payload = {
        "command": command,
        "config_hash": hashlib.sha256(cfg.to_text().encode()).hexdigest(),
        "input_hashes": {str(p): _sha256(p) for p in inputs if Path(p).is_file()},
        "outputs": [str(p) for p in outputs],
        "metrics": metrics,
        "wall_time_s": round(time.time() - started, 3),
    }
    _write_json(cfg.path("manifests", f"{command}.json"), payload)


def _atlas(cfg: PipelineConfig):
    from .synthgen import default_atlas

    if cfg.synthgen.alphabet == "default":
        return default_atlas()
    return default_atlas(cfg.synthgen.alphabet)


def _language(cfg: PipelineConfig):
    from .synthgen import make_language

    return make_language(cfg.run.seed)


def _aug_params(cfg: PipelineConfig, domain: str):
    from .synthgen import AugmentParams

    s = cfg.synthgen
    prefix = "pre_" if domain == "pretrain" else "exam_"
    return AugmentParams(
        rotation=getattr(s, prefix + "rotation"),
        shear=getattr(s, prefix + "shear"),
        shift=getattr(s, prefix + "shift"),
        blur=getattr(s, prefix + "blur"),
        noise=getattr(s, prefix + "noise"),
        rng_seed=cfg.run.seed ^ (0x9E1 if domain == "pretrain" else 0x3A7),
    )


def _segmenter_config(cfg: PipelineConfig):
    from .segmenter import SegmenterConfig

    s = cfg.segmenter
    return SegmenterConfig(**{k: getattr(s, k) for k in (
        "blank_row_frac", "min_gap", "line_frac", "border_pad",
        "blank_cell_frac", "binarize_method", "fixed_threshold")})


def _decoder_config(cfg: PipelineConfig):
    from .decoder import DecoderConfig

    d = cfg.decoder
    return DecoderConfig(beam_width=d.beam_width, lm_weight=d.lm_weight,
                         k=d.k, length_bonus=d.length_bonus)


def _scorer_config(cfg: PipelineConfig):
    from .scorer import ScorerConfig

    s = cfg.scorer
    return ScorerConfig(d_model=s.d_model, n_layers=s.n_layers, n_heads=s.n_heads,
                        max_len=s.max_len, n_ranks=s.n_ranks, lr=s.lr,
                        batch_size=s.batch_size, epochs=s.epochs, seed=cfg.run.seed)


# -- generate ----------------------------------------------------------------------


def _split_sizes(cfg: PipelineConfig, domain: str) -> dict[str, int]:
    s = cfg.synthgen
    if domain == "pretrain":
        return {"train": s.n_train, "val": s.n_test, "test": s.n_test}
    return {"train": s.n_exam_train, "val": s.n_exam_test, "test": s.n_exam_test}


def cmd_generate(cfg: PipelineConfig) -> dict:
    from .imagecore import GrayImage, save_image
    from .rng import Rng
    from .synthgen import (BlockSpec, SheetSpec, generate_sheet,
                           make_lm_corpus, make_rubric_corpus, _render_set)

    atlas = _atlas(cfg)
    language = _language(cfg)
    outputs = []
    corpus_rows = []
    root = Rng(cfg.run.seed)
    for domain in DOMAINS:
        aug = _aug_params(cfg, domain)
        for split, n in _split_sizes(cfg, domain).items():
            stream = root.fork(f"corpus-{domain}-{split}")
            ds = _render_set(atlas, aug, n, stream)
            split_dir = cfg.path("corpus", domain, split)
            split_dir.mkdir(parents=True, exist_ok=True)
            for i in range(len(ds)):
                p = split_dir / f"{i:05d}.pgm"
                save_image(GrayImage(ds.images[i]), p)
                corpus_rows.append({
                    "path": str(p.relative_to(cfg.out_dir)),
                    "label": ds.alphabet[int(ds.labels[i])],
                    "domain": domain,
                    "split": split,
                    "seed": cfg.run.seed,
                })
    corpus_manifest = cfg.path("corpus", "manifest.jsonl")
    _write_jsonl(corpus_manifest, corpus_rows)
    outputs.append(corpus_manifest)

    # Rubric answers and the LM word corpus share one procedural language.
    rubric = make_rubric_corpus(language, cfg.synthgen.rubric_answers, seed=cfg.run.seed)
    rubric_path = cfg.path("rubric.jsonl")
    _write_jsonl(rubric_path, [{"text": t, "rank": r, "question_id": 0} for t, r in rubric])
    lm_words = make_lm_corpus(language, cfg.synthgen.lm_words, seed=cfg.run.seed)
    lm_path = cfg.path("lm_corpus.txt")
    lm_path.write_text("\n".join(lm_words) + "\n", encoding="utf-8")
    outputs += [rubric_path, lm_path]

    # Demo exam sheets carry rubric answers, one block per sheet.
    sheets_dir = cfg.path("sheets")
    sheets_dir.mkdir(parents=True, exist_ok=True)
    exam_aug = _aug_params(cfg, "exam")
    truth_rows = []
    s = cfg.synthgen
    for i in range(s.n_sheets):
        text, rank = rubric[i % len(rubric)]
        spec = SheetSpec(blocks=(BlockSpec(s.sheet_rows, s.sheet_cols, s.cell_px),),
                         texts=(text,))
        sheet, truth = generate_sheet(spec, atlas, exam_aug, seed=cfg.run.seed + 7000 + i)
        p = sheets_dir / f"sheet_{i:04d}.pgm"
        save_image(sheet, p)
        truth_rows.append({"sheet": p.name, "blocks": [{"text": text, "rank": rank}]})
    truth_path = sheets_dir / "truth.jsonl"
    _write_jsonl(truth_path, truth_rows)
    outputs.append(truth_path)
    return {"outputs": outputs,
            "metrics": {"corpus_images": len(corpus_rows), "sheets": s.n_sheets}}


# -- training commands ---------------------------------------------------------------


def _load_split(cfg: PipelineConfig, domain: str, split: str):
    import numpy as np

    from .imagecore import load_image
    from .synthgen import Dataset

    atlas = _atlas(cfg)
    manifest = cfg.path("corpus", "manifest.jsonl")
    if not manifest.is_file():
        raise ConfigError(f"corpus manifest missing ({manifest}); run generate first")
    rows = [r for r in _read_jsonl(manifest) if r["domain"] == domain and r["split"] == split]
    images = np.stack([load_image(cfg.path(r["path"])).pixels for r in rows])
    labels = np.array([atlas.labels.index(r["label"]) for r in rows], dtype=np.int64)
    return Dataset(images, labels, atlas.labels)


def _member_path(cfg: PipelineConfig, i: int, fine_tuned: bool) -> Path:
    return cfg.path("checkpoints", f"member{i}{'.ft' if fine_tuned else ''}.ck")


def cmd_train_recognizer(cfg: PipelineConfig) -> dict:
    from . import recognizer as rec
    from .nn import AdamConfig

    train = _load_split(cfg, "pretrain", "train")
    val = _load_split(cfg, "pretrain", "val")
    specs = rec.default_ensemble_specs(len(train.alphabet))[: cfg.recognizer.members]
    outputs, accs = [], []
    for i, spec in enumerate(specs):
        model, history = rec.train(spec, train, AdamConfig(lr=cfg.recognizer.lr),
                                   epochs=cfg.recognizer.epochs, seed=cfg.run.seed + i,
                                   batch_size=cfg.recognizer.batch_size, val=val)
        p = _member_path(cfg, i, fine_tuned=False)
        p.parent.mkdir(parents=True, exist_ok=True)
        rec.save_model(model, p)
        outputs.append(p)
        accs.append(history[-1]["val_accuracy"])
    return {"outputs": outputs, "metrics": {"val_accuracy": accs}}


def cmd_finetune(cfg: PipelineConfig) -> dict:
    from . import recognizer as rec
    from .nn import AdamConfig

    train = _load_split(cfg, "exam", "train")
    val = _load_split(cfg, "exam", "val")
    outputs, accs = [], []
    for i in range(cfg.recognizer.members):
        src = _member_path(cfg, i, fine_tuned=False)
        if not src.is_file():
            raise ConfigError(f"pretrain checkpoint missing ({src}); run train-recognizer first")
        model = rec.load_model(src)
        tuned, history = rec.fine_tune(model, train, AdamConfig(lr=cfg.recognizer.finetune_lr),
                                       epochs=cfg.recognizer.finetune_epochs,
                                       seed=cfg.run.seed + 100 + i,
                                       batch_size=cfg.recognizer.batch_size, val=val)
        p = _member_path(cfg, i, fine_tuned=True)
        rec.save_model(tuned, p)
        outputs.append(p)
        accs.append(history[-1]["val_accuracy"])
    return {"outputs": outputs, "metrics": {"val_accuracy": accs}}


def cmd_train_lm(cfg: PipelineConfig) -> dict:
    from .lm import count_ngrams, estimate_kn, perplexity, read_arpa, write_arpa

    corpus_path = cfg.path("lm_corpus.txt")
    if not corpus_path.is_file():
        raise ConfigError(f"LM corpus missing ({corpus_path}); run generate first")
    sentences = []
    for line in corpus_path.read_text(encoding="utf-8").splitlines():
        for word in line.split():
            sentences.append(list(word))
    model = estimate_kn(count_ngrams(sentences, cfg.lm.order))
    arpa_path = cfg.path("lm.arpa")
    write_arpa(model, arpa_path)
    reread = read_arpa(arpa_path)  # round-trip sanity before declaring success
    ppl = perplexity(reread, sentences[:500])
    return {"outputs": [arpa_path], "metrics": {"train_perplexity": round(ppl, 4)}}


def cmd_train_scorer(cfg: PipelineConfig) -> dict:
    from .metrics import RatingPair, qwk
    from .scorer import save_scorer, score_answers, split_dataset, train_scorer

    rubric_path = cfg.path("rubric.jsonl")
    if not rubric_path.is_file():
        raise ConfigError(f"rubric corpus missing ({rubric_path}); run generate first")
    items = [(r["text"], int(r["rank"])) for r in _read_jsonl(rubric_path)]
    dataset = split_dataset(items, seed=cfg.run.seed)
    params, history = train_scorer(_scorer_config(cfg), dataset)
    p = cfg.path("checkpoints", "scorer.ck")
    p.parent.mkdir(parents=True, exist_ok=True)
    save_scorer(params, p)
    test = dataset.subset("test")
    predicted = score_answers(params, [t for t, _ in test])
    test_qwk = qwk(RatingPair(tuple(predicted), tuple(r for _, r in test), cfg.scorer.n_ranks))
    return {"outputs": [p],
            "metrics": {"val_qwk": history[-1].get("val_qwk"), "test_qwk": test_qwk}}


def cmd_bootstrap(cfg: PipelineConfig) -> dict:
    import numpy as np

    from . import recognizer as rec
    from .nn import AdamConfig
    from .synthgen import Dataset

    # The bootstrap workflow labels realistic data; the deliberately harsh
    # exam augmentation exists to manufacture a domain gap, so the seed model
    # trains on the pretrain-domain corpus.
    exam = _load_split(cfg, "pretrain", "train")
    per_class = cfg.recognizer.bootstrap_per_class
    seed_idx: list[int] = []
    taken: dict[int, int] = {}
    for i, label in enumerate(exam.labels):
        if taken.get(int(label), 0) < per_class:
            taken[int(label)] = taken.get(int(label), 0) + 1
            seed_idx.append(i)
    rest = [i for i in range(len(exam)) if i not in set(seed_idx)]
    if not rest:
        raise ConfigError("bootstrap_per_class covers the whole exam set; "
                          "lower it or generate more exam samples")
    small = Dataset(exam.images[seed_idx], exam.labels[seed_idx], exam.alphabet)
    spec = rec.default_ensemble_specs(len(exam.alphabet))[0]
    model, result = rec.bootstrap_labels(small, exam.images[rest], spec,
                                         AdamConfig(lr=cfg.recognizer.bootstrap_lr),
                                         epochs=cfg.recognizer.bootstrap_epochs,
                                         seed=cfg.run.seed,
                                         batch_size=cfg.recognizer.bootstrap_batch_size)
    review_path = cfg.path("bootstrap_review.jsonl")
    _write_jsonl(review_path, list(result.manifest))
    accuracy = float((result.labels == exam.labels[rest]).mean())
    return {"outputs": [review_path],
            "metrics": {"seed_samples": len(seed_idx), "predicted": len(rest),
                        "bootstrap_accuracy": accuracy}}


# -- pipeline ---------------------------------------------------------------------


def _recognize_line(line, ensemble, dec_cfg):
    import numpy as np

    from .decoder import lattice_from_posteriors
    from .recognizer import ensemble_predict_batch

    filled = [img.pixels for img, blank in zip(line.cells, line.blanks) if not blank]
    probs = ensemble_predict_batch(ensemble, np.stack(filled)) if filled else []
    return lattice_from_posteriors(probs, line.blanks, ensemble.alphabet, dec_cfg)


def cmd_pipeline(cfg: PipelineConfig, sheets_dir: str | None = None) -> dict:
    from . import recognizer as rec
    from .decoder import decode
    from .imagecore import load_image
    from .lm import read_arpa
    from .metrics import RatingPair, agreement_label, confusion, corpus_char_accuracy, qwk
    from .scorer import load_scorer, score_answers
    from .segmenter import segment_sheet

    members = []
    for i in range(cfg.recognizer.members):
        p = _member_path(cfg, i, fine_tuned=True)
        if not p.is_file():
            p = _member_path(cfg, i, fine_tuned=False)
        if not p.is_file():
            raise ConfigError(f"no checkpoint for member {i}; run train-recognizer first")
        members.append(rec.load_model(p))
    ensemble = rec.Ensemble(tuple(members))
    arpa_path = cfg.path("lm.arpa")
    if not arpa_path.is_file():
        raise ConfigError(f"language model missing ({arpa_path}); run train-lm first")
    lm_model = read_arpa(arpa_path)
    scorer_path = cfg.path("checkpoints", "scorer.ck")
    scorer_params = load_scorer(scorer_path) if scorer_path.is_file() else None

    sheets = Path(sheets_dir) if sheets_dir else cfg.path("sheets")
    sheet_paths = sorted(sheets.glob("*.pgm"))
    if not sheet_paths:
        raise ConfigError(f"no sheet images found in {sheets}")
    seg_cfg = _segmenter_config(cfg)
    dec_cfg = _decoder_config(cfg)

    results = []
    failures = 0
    for sheet_path in sheet_paths:
        try:
            segs = segment_sheet(load_image(sheet_path), seg_cfg)
            for block_idx, seg in enumerate(segs):
                lattice = _recognize_line(seg.line, ensemble, dec_cfg)
                best = decode(lattice, lm_model, dec_cfg)
                text = "".join(best.tokens)
                row = {"sheet": sheet_path.name, "block": block_idx, "text": text,
                       "score": round(best.score, 6)}
                if scorer_params is not None:
                    row["rank"] = score_answers(scorer_params, [text])[0]
                results.append(row)
        except InkgradeError as exc:
            failures += 1
            results.append({"sheet": sheet_path.name, "error": type(exc).__name__})
    results_path = cfg.path("results.jsonl")
    _write_jsonl(results_path, results)
    outputs = [results_path]

    metrics: dict = {"sheets": len(sheet_paths), "segmentation_failures": failures}
    truth_path = sheets / "truth.jsonl"
    if truth_path.is_file():
        truth = {r["sheet"]: r["blocks"] for r in _read_jsonl(truth_path)}
        pairs, system_ranks, human_ranks = [], [], []
        for row in results:
            if "error" in row or row["sheet"] not in truth:
                continue
            block = truth[row["sheet"]][row["block"]]
            pairs.append((row["text"], block["text"]))
            if "rank" in row:
                system_ranks.append(row["rank"])
                human_ranks.append(block["rank"])
        if pairs:
            metrics["char_accuracy"] = round(corpus_char_accuracy(pairs), 6)
        if system_ranks:
            kappa = qwk(RatingPair(tuple(system_ranks), tuple(human_ranks),
                                   cfg.scorer.n_ranks))
            metrics["qwk"] = round(kappa, 6)
            metrics["thresholds_label"] = agreement_label(kappa)
            rank_confusion = confusion(list(zip(system_ranks, human_ranks)),
                                       cfg.scorer.n_ranks)
            confusion_path = cfg.path("confusion.json")
            _write_json(confusion_path, {"ranks": cfg.scorer.n_ranks,
                                         "counts": rank_confusion.counts.tolist()})
            outputs.append(confusion_path)
            # relative to out_dir so reports stay byte-identical across runs
            metrics["confusion_path"] = "confusion.json"
        report_path = cfg.path("report.json")
        _write_json(report_path, {**metrics, "n": len(pairs)})
        outputs.append(report_path)
    return {"outputs": outputs, "metrics": metrics}


def cmd_eval(cfg: PipelineConfig, system_file: str, human_file: str) -> dict:
    from .metrics import RatingPair, agreement_label, qwk

    def read_ranks(path):
        text = Path(path).read_text(encoding="utf-8").strip()
        if text.startswith("["):
            return [int(r) for r in json.loads(text)]
        return [int(json.loads(line)["rank"]) for line in text.splitlines() if line.strip()]

    system = read_ranks(system_file)
    human = read_ranks(human_file)
    n_ranks = max(cfg.scorer.n_ranks, max(system, default=0) + 1, max(human, default=0) + 1)
    kappa = qwk(RatingPair(tuple(system), tuple(human), n_ranks))
    report_path = cfg.path("eval_report.json")
    _write_json(report_path, {"qwk": kappa, "n": len(system),
                              "thresholds_label": agreement_label(kappa)})
    return {"outputs": [report_path],
            "metrics": {"qwk": kappa},
            "inputs": [Path(system_file), Path(human_file)]}


# -- entry point --------------------------------------------------------------------


_COMMANDS = {
    "generate": cmd_generate,
    "train-recognizer": cmd_train_recognizer,
    "finetune": cmd_finetune,
    "train-lm": cmd_train_lm,
    "train-scorer": cmd_train_scorer,
    "bootstrap": cmd_bootstrap,
    "pipeline": cmd_pipeline,
    "eval": cmd_eval,
}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="inkgrade",
                                     description="Handwritten answer recognition and scoring")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="pipeline config file")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--deterministic", action="store_true",
                       help="single-threaded numerics for byte-identical reruns")
        if name == "pipeline":
            p.add_argument("--sheets", default=None, help="directory of sheet PGMs")
        if name == "eval":
            p.add_argument("--system", required=True, help="system scores (JSON/JSONL)")
            p.add_argument("--human", required=True, help="examiner scores (JSON/JSONL)")
    args = parser.parse_args(argv)

    if args.deterministic:
        import os

        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ[var] = "1"

    started = time.time()
    try:
        cfg = PipelineConfig.from_file(args.config)
        if args.seed is not None:
            cfg = cfg.with_seed(args.seed)
        cfg.out_dir.mkdir(parents=True, exist_ok=True)
        if args.command == "pipeline":
            result = cmd_pipeline(cfg, args.sheets)
        elif args.command == "eval":
            result = cmd_eval(cfg, args.system, args.human)
        else:
            result = _COMMANDS[args.command](cfg)
    except (ConfigError, InkgradeError, OSError) as exc:
        print(f"inkgrade {args.command}: {exc}", file=sys.stderr)
        return 2
    inputs = result.get("inputs", [Path(args.config)])
    _manifest(cfg, args.command, inputs, result["outputs"], result.get("metrics", {}), started)
    print(json.dumps({"command": args.command, **result.get("metrics", {})}, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
