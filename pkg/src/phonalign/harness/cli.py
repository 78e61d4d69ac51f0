"""Command-line entry point.

Stage subcommands (``train-speech`` ... ``eval``) run the configured pipeline
up to that stage, reusing any checkpoints already in the output directory.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import replace

from ..audio import featurize_dir, read_manifest
from .config import ConfigError, load_config
from .evaluation import ablation_table, dump_pca_coords, write_coords
from .pipeline import Pipeline, StageError, run_ablations, run_pipeline, write_report
from .synth import save_corpus, synth_corpus

STAGES = ("train-speech", "train-text", "align", "decode", "rescore", "eval")


def _config(args):
    cfg = load_config(args.config, seed=args.seed, out_dir=args.out_dir)
    if getattr(args, "n_seeds", None) is not None:
        cfg = replace(cfg, n_seeds=args.n_seeds)
    return cfg


def cmd_synth(args):
    cfg = _config(args)
    if cfg.synth is None:
        raise ConfigError("config is in audio mode; nothing to synthesize")
    corpus = synth_corpus(cfg.synth)
    out = os.path.join(cfg.out_dir, "corpus")
    save_corpus(out, corpus)
    print(f"{len(corpus.segments)} tokens, {len(corpus.lexicon)} words, "
          f"{len(corpus.utterances)} utterances -> {out}")


def cmd_featurize(args):
    manifest = read_manifest(args.manifest)
    segs = featurize_dir(args.audio_dir, manifest, args.out_dir)
    print(f"{len(segs)} segments from {len({r.utterance_id for r in manifest})} utterances -> {args.out_dir}")


def cmd_stage(args):
    cfg = _config(args)
    cfg.check_paths()
    pipe = Pipeline(cfg)
    stage = args.command
    if stage == "train-speech":
        pipe.speech_model()
        print(pipe._path("speech", pipe.speech_key()))
    elif stage == "train-text":
        pipe.text_model()
        print(pipe._path("text", pipe.text_key()))
    elif stage == "align":
        pipe.transform()
        print(pipe._path("align", pipe.align_key()))
    elif stage == "decode":
        pipe.ranked()
        path = os.path.join(cfg.out_dir, "predictions.jsonl")
        pipe.write_predictions(path)
        print(path)
    elif stage == "rescore":
        res = pipe.rescored()
        if not res:
            print("no transcripts configured; nothing to rescore")
        pipe.write_predictions(os.path.join(cfg.out_dir, "predictions.jsonl"))
        rep = pipe.report()
        for before, after in zip(rep.transcripts_before, rep.transcripts_after):
            print(f"{before}\t->\t{after}")
    else:
        rep = pipe.report()
        pipe.write_predictions(os.path.join(cfg.out_dir, "predictions.jsonl"))
        write_report(cfg.out_dir, rep)
        print(rep.table(), end="")


def cmd_run_all(args):
    rep = run_pipeline(_config(args))
    print(rep.table(), end="")


def cmd_ablate(args):
    rows = run_ablations(_config(args))
    print(ablation_table(rows), end="")


def cmd_dump_pca(args):
    cfg = _config(args)
    pipe = Pipeline(cfg)
    if args.which == "speech":
        vectors, labels = pipe.speech_vectors(), pipe.labels()
    else:
        vectors, labels = pipe.text_vectors(), pipe.words()
    words = args.words.split(",") if args.words else sorted(set(labels))
    coords = dump_pca_coords(vectors, labels, words, args.components)
    out = args.output or os.path.join(cfg.out_dir, f"pca_{args.which}.tsv")
    write_coords(out, words, coords)
    print(out)


def build_parser():
    p = argparse.ArgumentParser(prog="phonalign", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="key = value config file with [pipeline], [synth], ... sections")
        sp.add_argument("--seed", type=int, help="global seed (overrides the config)")
        sp.add_argument("--out-dir", help="output directory (overrides the config)")
        sp.add_argument("--n-seeds", type=int, help="number of annotated seed pairs")
        return sp

    common(sub.add_parser("synth", help="write a synthetic corpus")).set_defaults(fn=cmd_synth)
    f = sub.add_parser("featurize", help="MFCC features for a directory of WAV files")
    f.add_argument("--audio-dir", required=True)
    f.add_argument("--manifest", required=True, help="JSON-lines word boundaries")
    f.add_argument("--out-dir", required=True)
    f.set_defaults(fn=cmd_featurize)
    for name in STAGES:
        common(sub.add_parser(name, help=f"run the pipeline through '{name}'")).set_defaults(fn=cmd_stage)
    common(sub.add_parser("run-all", help="full pipeline and report")).set_defaults(fn=cmd_run_all)
    common(sub.add_parser("ablate", help="disentanglement x feature-type ablation")).set_defaults(fn=cmd_ablate)
    d = common(sub.add_parser("dump-pca", help="per-word mean embeddings on 3 PCA components"))
    d.add_argument("--which", choices=("speech", "text"), default="speech")
    d.add_argument("--words", help="comma-separated words (default: all)")
    d.add_argument("--components", type=int, default=3)
    d.add_argument("--output")
    d.set_defaults(fn=cmd_dump_pca)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.fn(args)
    except (ConfigError, StageError, KeyError, FileNotFoundError) as e:
        print(f"phonalign: error: {e}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
