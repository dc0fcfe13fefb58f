"""Command-line workflows.

    aftcap synth-data        generate synthetic corpora
    aftcap train-embeddings  pretrain skip-gram word vectors on caption text
    aftcap train             teacher-forcing training run
    aftcap finetune          resume a checkpoint on a new corpus
    aftcap caption           decode captions for a corpus split
    aftcap evaluate          score candidate captions against references
    aftcap gradcheck         finite-difference audit of all gradients
    aftcap ablate            local-window vs no-window comparison table

Options resolve as defaults < preset < --config JSON < explicit flags;
unknown config keys are rejected and the effective configuration is echoed
into the output directory.  Exit codes: 0 success, 1 usage error, 2 runtime
error.  Diagnostics go to stderr.  LAFT_THREADS caps decoding workers.
"""

from __future__ import annotations

import argparse
import json
import os
import statistics
import sys
from pathlib import Path

import numpy as np


class UsageError(Exception):
    pass


class Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


PRESETS = {
    # paper-scale hyperparameters
    "paper": {"batch_size": 16, "lr": 1e-4, "window_size": 80, "beam": 5,
              "dim": 128, "blocks": 2, "channels": "64,128,256,512"},
    # desk-scale: quarter-width encoder, fewer epochs by default
    "desk": {"batch_size": 16, "lr": 1e-3, "window_size": 80, "beam": 5,
             "dim": 128, "blocks": 2, "channels": "16,32,64,128"},
}

TRAIN_DEFAULTS = {
    "epochs": 30, "seed": 0, "batch_size": 16, "lr": 1e-3,
    "label_smoothing": 0.1, "window_size": 80, "dim": 128, "blocks": 2,
    "channels": "16,32,64,128", "features": "auto", "augment": False,
    "freeze_embeddings": False, "train_refs": 1, "n_max": 40, "l_max": 192,
    "ffn": True, "grad_clip": 0.0, "embeddings": "", "preset": "",
}


def _load_config_file(path, defaults: dict) -> dict:
    with open(path, encoding="utf-8") as fh:
        file_cfg = json.load(fh)
    unknown = sorted(set(file_cfg) - set(defaults))
    if unknown:
        raise UsageError(f"unknown config keys: {unknown}")
    return file_cfg


def effective_options(args, defaults: dict) -> dict:
    opts = dict(defaults)
    preset = getattr(args, "preset", None) or opts.get("preset") or ""
    if preset:
        if preset not in PRESETS:
            raise UsageError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
        opts.update({k: v for k, v in PRESETS[preset].items() if k in defaults})
        opts["preset"] = preset
    if getattr(args, "config", None):
        opts.update(_load_config_file(args.config, defaults))
    for key in defaults:
        value = getattr(args, key, None)
        if value is not None:
            opts[key] = value
    return opts


def echo_config(out_dir, command: str, opts: dict):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "config.json", "w", encoding="utf-8") as fh:
        json.dump({"command": command, **opts}, fh, indent=2, sort_keys=True)


def _window(opts) -> int | None:
    w = opts["window_size"]
    if isinstance(w, str):
        w = None if w.lower() in ("none", "global") else int(w)
    return None if (w is None or int(w) <= 0) else int(w)


def _train_config(opts, corpus):
    from .decoder import DecoderConfig
    from .encoder import EncoderConfig
    from .training import TrainConfig

    features = opts["features"]
    if features == "auto":
        features = "encoder" if corpus.spec.space == "logmel" else "import"
    if features == "import":
        encoder = None
        dim = corpus.spec.bands
        if opts["dim"] not in (dim, TRAIN_DEFAULTS["dim"]):
            raise UsageError(f"imported features carry dim {dim}; --dim {opts['dim']} conflicts")
    elif features == "encoder":
        if corpus.spec.space != "logmel":
            raise UsageError("encoder mode needs a log-mel corpus")
        dim = int(opts["dim"])
        channels = tuple(int(c) for c in str(opts["channels"]).split(","))
        encoder = EncoderConfig(channels=channels, out_dim=dim, mel_bands=corpus.spec.bands)
    else:
        raise UsageError(f"unknown features mode {features!r}")
    decoder = DecoderConfig(dim=dim, n_blocks=int(opts["blocks"]), n_max=int(opts["n_max"]),
                            l_max=int(opts["l_max"]), window=_window(opts), ffn=bool(opts["ffn"]))
    return TrainConfig(
        batch_size=int(opts["batch_size"]), lr=float(opts["lr"]),
        label_smoothing=float(opts["label_smoothing"]), epochs=int(opts["epochs"]),
        seed=int(opts["seed"]), decoder=decoder, encoder=encoder,
        augment=bool(opts["augment"]),
        grad_clip=float(opts["grad_clip"]) or None,
        freeze_embeddings=bool(opts["freeze_embeddings"]),
        train_refs=int(opts["train_refs"]))


def _load_embedding(path_str):
    if not path_str:
        return None
    from .embedding import Vocab, WordEmbedding
    from .frontend import read_features
    root = Path(path_str)
    vocab = Vocab.load(root / "vocab.txt")
    table = read_features(root / "embeddings.afm")
    return WordEmbedding(table, vocab)


# ---------------------------------------------------------------------------
# commands


def cmd_synth_data(args):
    from .datagen import generate_corpus, standard_pairs, write_corpus
    defaults = {"corpus": "pair", "space": "logmel", "seed": 2024, "out": ""}
    opts = effective_options(args, defaults)
    spec_a, spec_b = standard_pairs(space=opts["space"], seed=int(opts["seed"]))
    chosen = {"pair": [spec_a, spec_b], "a": [spec_a], "b": [spec_b]}.get(opts["corpus"])
    if chosen is None:
        raise UsageError("--corpus must be one of: a, b, pair")
    echo_config(opts["out"], "synth-data", opts)
    for spec in chosen:
        corpus = generate_corpus(spec)
        write_corpus(corpus, Path(opts["out"]) / spec.name)
        print(f"wrote {spec.name}: {spec.n_clips} clips ({spec.space} space) "
              f"-> {Path(opts['out']) / spec.name}")
    return 0


def cmd_train_embeddings(args):
    from .datagen import load_corpus
    from .embedding import Vocab, train_word2vec
    from .frontend import write_features
    defaults = {"dim": 128, "epochs": 3, "window": 5, "negatives": 5, "seed": 0, "out": ""}
    opts = effective_options(args, defaults)
    captions = []
    for corpus_dir in args.corpus:
        corpus = load_corpus(corpus_dir)
        captions += [c for clip in corpus.split_clips("train") for c in clip.captions]
    vocab = Vocab.build(captions)
    ids = [vocab.encode_caption(c) for c in captions]
    emb = train_word2vec(ids, vocab, dim=int(opts["dim"]), window=int(opts["window"]),
                         negatives=int(opts["negatives"]), epochs=int(opts["epochs"]),
                         rng=np.random.default_rng(int(opts["seed"])))
    out = Path(opts["out"])
    echo_config(out, "train-embeddings", opts)
    vocab.save(out / "vocab.txt")
    write_features(out / "embeddings.afm", emb.table)
    print(f"trained {len(vocab)}-token embeddings (dim {opts['dim']}) -> {out}")
    return 0


def cmd_train(args):
    from .datagen import load_corpus
    from .training import save_checkpoint, train
    opts = effective_options(args, TRAIN_DEFAULTS)
    out = Path(args.out)
    corpus = load_corpus(args.corpus)
    cfg = _train_config(opts, corpus)
    echo_config(out, "train", opts)
    result = train(corpus, cfg, embedding=_load_embedding(opts["embeddings"]),
                   log_path=out / "metrics.jsonl")
    save_checkpoint(out / "checkpoint.laft", result.model, cfg,
                    extra_meta={"best_epoch": result.best_epoch})
    last = result.history[-1]
    print(f"trained {cfg.epochs} epochs; best epoch {result.best_epoch}; "
          f"final train loss {last['train_loss']:.4f}, eval loss {last['eval_loss']:.4f}")
    return 0


def cmd_finetune(args):
    from .datagen import load_corpus
    from .training import finetune, load_checkpoint, save_checkpoint
    opts = effective_options(args, TRAIN_DEFAULTS)
    out = Path(args.out)
    corpus = load_corpus(args.corpus)
    ckpt = load_checkpoint(args.checkpoint)
    opts["dim"] = ckpt.meta["decoder"]["dim"]
    cfg = _train_config(opts, corpus)
    echo_config(out, "finetune", opts)
    result = finetune(ckpt, corpus, cfg, log_path=out / "metrics.jsonl")
    save_checkpoint(out / "checkpoint.laft", result.model, cfg,
                    extra_meta={"best_epoch": result.best_epoch})
    print(f"fine-tuned for {cfg.epochs} epochs; best epoch {result.best_epoch}")
    return 0


def cmd_caption(args):
    from .datagen import load_corpus
    from .decoding import caption_corpus
    from .training import load_checkpoint, model_from_checkpoint
    defaults = {"beam": 5, "max_len": 30, "split": "eval"}
    opts = effective_options(args, defaults)
    model = model_from_checkpoint(load_checkpoint(args.checkpoint))
    corpus = load_corpus(args.corpus)
    clips = corpus.split_clips(opts["split"]) if opts["split"] != "all" else corpus.clips
    threads = int(os.environ.get("LAFT_THREADS", "1"))
    records = caption_corpus(model, clips, beam=int(opts["beam"]),
                             max_len=int(opts["max_len"]), threads=threads)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec) + "\n")
    print(f"captioned {len(records)} clips (beam {opts['beam']}) -> {out}")
    return 0


def _read_caption_file(path) -> dict[str, list[str]]:
    table = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            rec = json.loads(line)
            caps = rec.get("captions") or rec.get("references") or [rec.get("caption", rec.get("candidate"))]
            table[rec["clip_id"]] = [c for c in caps if c]
    return table


def cmd_evaluate(args):
    from .embedding import tokenize
    from .metrics import EvalPair, evaluate_pairs, strip_specials
    defaults = {"out": ""}
    opts = effective_options(args, defaults)
    if not args.candidates or not args.references:
        raise UsageError("--candidates and --references are required")
    cands = _read_caption_file(args.candidates)
    refs = _read_caption_file(args.references)
    missing = sorted(set(cands) - set(refs))
    if missing:
        raise UsageError(f"candidates with no references: {missing[:5]}")

    def toks(text):
        return strip_specials(tokenize(text)[1:-1]) if text.strip() else []

    pairs = [EvalPair(candidate=toks(cands[cid][0]), references=[toks(r) for r in refs[cid]])
             for cid in sorted(cands)]
    scores = evaluate_pairs(pairs)
    print(json.dumps(scores, indent=2, sort_keys=True))
    if opts["out"]:
        Path(opts["out"]).parent.mkdir(parents=True, exist_ok=True)
        with open(opts["out"], "w", encoding="utf-8") as fh:
            json.dump(scores, fh, indent=2, sort_keys=True)
    return 0


def cmd_gradcheck(args):
    from .checks import full_gradient_check
    defaults = {"seed": 0, "tol": 1e-4}
    opts = effective_options(args, defaults)
    try:
        errors = full_gradient_check(seed=int(opts["seed"]), tol=float(opts["tol"]))
    except AssertionError as exc:
        print(f"FAIL {exc}", file=sys.stderr)
        return 2
    worst = max(errors.values())
    for name in sorted(errors):
        print(f"pass {name}: rel err {errors[name]:.2e}")
    print(f"all {len(errors)} parameter tensors pass (worst rel err {worst:.2e}, tol {opts['tol']})")
    return 0


def cmd_ablate(args):
    from .datagen import generate_corpus, standard_pairs
    from .decoding import caption_corpus
    from .embedding import tokenize
    from .metrics import EvalPair, cider_d, strip_specials
    from .training import train
    defaults = {"seeds": 5, "epochs": 12, "space": "encoder", "corpus": "a",
                "window_size": 0, "beam": 5, "max_len": 30, "out": "",
                "batch_size": 16, "lr": 1e-3, "dim": 0, "blocks": 2}
    opts = effective_options(args, defaults)
    if not opts["out"]:
        raise UsageError("--out is required")
    out = Path(opts["out"])
    spec_a, spec_b = standard_pairs(space=opts["space"])
    spec = {"a": spec_a, "b": spec_b}.get(opts["corpus"])
    if spec is None:
        raise UsageError("--corpus must be a or b")
    corpus = generate_corpus(spec)
    window = int(opts["window_size"]) or max(1, round(corpus.spec.frames / 4))
    echo_config(out, "ablate", {**opts, "window_size": window})
    refs = {c.clip_id: c.captions for c in corpus.split_clips("eval")}

    def toks(text):
        return strip_specials(tokenize(text)[1:-1]) if text.strip() else []

    rows = []
    for variant, win in (("local", window), ("global", None)):
        for seed in range(int(opts["seeds"])):
            cfg = _make_ablate_cfg(opts, corpus, win, seed)
            result = train(corpus, cfg)
            records = caption_corpus(result.model, corpus.split_clips("eval"),
                                     beam=int(opts["beam"]), max_len=int(opts["max_len"]))
            pairs = [EvalPair(candidate=toks(r["caption"]),
                              references=[toks(t) for t in refs[r["clip_id"]]])
                     for r in records]
            score = cider_d(pairs)
            rows.append({"variant": variant, "seed": seed, "cider_d": score})
            print(f"{variant:7s} seed {seed}: CIDEr-D {score:.4f}")
    medians = {}
    for variant in ("local", "global"):
        med = statistics.median(r["cider_d"] for r in rows if r["variant"] == variant)
        medians[variant] = med
        rows.append({"variant": variant, "seed": "median", "cider_d": med})
        print(f"{variant:7s} median : CIDEr-D {med:.4f}")
    with open(out / "ablation.json", "w", encoding="utf-8") as fh:
        json.dump({"window": window, "rows": rows, "medians": medians}, fh, indent=2)
    print(f"table -> {out / 'ablation.json'}")
    return 0


def _make_ablate_cfg(opts, corpus, window, seed):
    from .decoder import DecoderConfig
    from .training import TrainConfig
    dim = int(opts["dim"]) or corpus.spec.bands
    decoder = DecoderConfig(dim=dim, n_blocks=int(opts["blocks"]), n_max=40,
                            l_max=max(64, corpus.spec.frames), window=window)
    return TrainConfig(batch_size=int(opts["batch_size"]), lr=float(opts["lr"]),
                       epochs=int(opts["epochs"]), seed=seed, decoder=decoder, encoder=None)


# ---------------------------------------------------------------------------


def build_parser() -> Parser:
    parser = Parser(prog="aftcap", description=__doc__,
                    formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON file of option overrides")
        p.add_argument("--seed", type=int)

    p = sub.add_parser("synth-data", help="generate synthetic corpora")
    common(p)
    p.add_argument("--out", required=True)
    p.add_argument("--corpus", choices=["a", "b", "pair"])
    p.add_argument("--space", choices=["logmel", "encoder"])
    p.set_defaults(func=cmd_synth_data)

    p = sub.add_parser("train-embeddings", help="skip-gram caption embeddings")
    common(p)
    p.add_argument("--corpus", action="append", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--dim", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--window", type=int)
    p.add_argument("--negatives", type=int)
    p.set_defaults(func=cmd_train_embeddings)

    def train_opts(p):
        common(p)
        p.add_argument("--corpus", required=True)
        p.add_argument("--out", required=True)
        p.add_argument("--preset", choices=sorted(PRESETS))
        p.add_argument("--epochs", type=int)
        p.add_argument("--batch-size", dest="batch_size", type=int)
        p.add_argument("--lr", type=float)
        p.add_argument("--label-smoothing", dest="label_smoothing", type=float)
        p.add_argument("--window-size", dest="window_size",
                       help="local region size; 'none' disables the window")
        p.add_argument("--dim", type=int)
        p.add_argument("--blocks", type=int)
        p.add_argument("--channels")
        p.add_argument("--features", choices=["auto", "import", "encoder"])
        p.add_argument("--augment", action="store_const", const=True)
        p.add_argument("--embeddings", help="directory from train-embeddings")
        p.add_argument("--freeze-embeddings", dest="freeze_embeddings",
                       action="store_const", const=True)
        p.add_argument("--train-refs", dest="train_refs", type=int)
        p.add_argument("--grad-clip", dest="grad_clip", type=float)

    p = sub.add_parser("train", help="train from scratch")
    train_opts(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("finetune", help="resume a checkpoint on a new corpus")
    train_opts(p)
    p.add_argument("--checkpoint", required=True)
    p.set_defaults(func=cmd_finetune)

    p = sub.add_parser("caption", help="decode captions")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--beam", type=int)
    p.add_argument("--max-len", dest="max_len", type=int)
    p.add_argument("--split", choices=["train", "val", "eval", "all"])
    p.set_defaults(func=cmd_caption)

    p = sub.add_parser("evaluate", help="score candidates against references")
    common(p)
    p.add_argument("--candidates", required=True)
    p.add_argument("--references", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("gradcheck", help="finite-difference gradient audit")
    common(p)
    p.add_argument("--tol", type=float)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("ablate", help="local-window vs global comparison")
    common(p)
    p.add_argument("--out", required=True)
    p.add_argument("--seeds", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--space", choices=["logmel", "encoder"])
    p.add_argument("--corpus", choices=["a", "b"])
    p.add_argument("--window-size", dest="window_size", type=int)
    p.add_argument("--beam", type=int)
    p.add_argument("--max-len", dest="max_len", type=int)
    p.add_argument("--dim", type=int)
    p.add_argument("--blocks", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--lr", type=float)
    p.set_defaults(func=cmd_ablate)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # runtime failure
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
