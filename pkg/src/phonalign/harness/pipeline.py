"""End-to-end run: data, both embedders, projection, alignment, decoding, rescoring, report.

Every expensive stage writes a checkpoint whose file name is a digest of
everything that determines it, so reruns and ablations reuse finished work.
Later stages always read back their inputs from the checkpoints, which makes
a fresh run and a resumed run follow the same code path.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import os
import time
from collections import defaultdict
from dataclasses import replace

import numpy as np

from ..align import (ProjectedSet, build_projected_sets, decode_knn_batch, load_transform, save_transform,
                     select_seeds, train_alignment)
from ..audio import featurize_dir, read_manifest
from ..lm import RescoreConfig, beam_rescore, load_lm, save_lm, train_bigram
from ..numkit.pca import PCAModel
from ..numkit.tsv import read_blocks, write_blocks
from ..speech import embed_segments, load_model, save_model, train_speech_embedder
from ..text import (check_lexicon, encode_texts, lexicon_sequences, load_lexicon, load_spe_table,
                    load_text_model, save_text_model, train_text_embedder)
from .config import PipelineConfig, format_config
from .evaluation import EvalReport, ablation_table, eval_topk, round1
from .synth import SynthCorpus, load_corpus, save_corpus, synth_corpus

log = logging.getLogger(__name__)

TOPN = 10  # candidates kept per token in the prediction dump


class StageError(RuntimeError):
    def __init__(self, stage, err):
        super().__init__(f"stage '{stage}' failed: {type(err).__name__}: {err}")
        self.stage = stage


def digest(*parts):
    blob = json.dumps(parts, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def _file_digest(path):
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _atomic_write(path, writer):
    tmp = path + ".tmp"
    writer(tmp)
    os.replace(tmp, path)


class Pipeline:
    """Lazily evaluated stages of one configured run."""

    def __init__(self, cfg: PipelineConfig, stage_dir=None):
        self.cfg = cfg
        self.stage_dir = stage_dir or os.path.join(cfg.out_dir, "stages")
        os.makedirs(self.stage_dir, exist_ok=True)
        self.timings = {}
        self._memo = {}

    def _run(self, name, fn):
        if name in self._memo:
            return self._memo[name]
        t0 = time.perf_counter()
        try:
            out = fn()
        except Exception as e:  # noqa: BLE001 - re-raised with the stage name
            raise StageError(name, e) from e
        self.timings[name] = round(time.perf_counter() - t0, 3)
        self._memo[name] = out
        return out

    def _path(self, stage, key, ext=".txt"):
        return os.path.join(self.stage_dir, f"{stage}-{key}{ext}")

    # -- inputs ------------------------------------------------------------

    def table(self):
        return self._run("table", lambda: load_spe_table(self.cfg.spe_table))

    def _table_key(self):
        return sorted((p, list(map(float, v))) for p, v in self.table().items())

    def data_key(self):
        cfg = self.cfg
        if cfg.synth is not None:
            return digest("data", dataclasses.asdict(cfg.synth), self._table_key())
        wavs = sorted(f for f in os.listdir(cfg.audio_dir) if f.endswith(".wav"))
        parts = [_file_digest(cfg.manifest), _file_digest(cfg.lexicon),
                 _file_digest(cfg.transcripts) if cfg.transcripts else None,
                 [(w, _file_digest(os.path.join(cfg.audio_dir, w))) for w in wavs]]
        return digest("data", parts)

    def data(self) -> SynthCorpus:
        def build():
            cfg = self.cfg
            d = self._path("data", self.data_key(), "")
            if not os.path.exists(os.path.join(d, "done")):
                if cfg.synth is not None:
                    corpus = synth_corpus(cfg.synth, self.table())
                else:
                    corpus = self._audio_corpus(os.path.join(d, "features"))
                save_corpus(d, corpus)
                open(os.path.join(d, "done"), "w").close()
            return load_corpus(d)

        return self._run("data", build)

    def _audio_corpus(self, feat_dir):
        cfg = self.cfg
        manifest = read_manifest(cfg.manifest)
        segments = featurize_dir(cfg.audio_dir, manifest, feat_dir)
        lexicon = load_lexicon(cfg.lexicon)
        check_lexicon(lexicon, self.table())
        transcripts = []
        if cfg.transcripts:
            with open(cfg.transcripts, encoding="utf-8") as f:
                transcripts = [line.strip() for line in f if line.strip()]
        by_utt = defaultdict(list)
        for i, r in enumerate(manifest):
            by_utt[r.utterance_id].append(i)
        utterances = [sorted(ix, key=lambda i: manifest[i].start_s) for _, ix in sorted(by_utt.items())]
        return SynthCorpus(segments, manifest, lexicon, transcripts, utterances)

    def words(self):
        return sorted(self.data().lexicon)

    def labels(self):
        return [s.word for s in self.data().segments]

    # -- embedders -----------------------------------------------------------

    def speech_key(self):
        return digest("speech", self.data_key(), dataclasses.asdict(self.cfg.effective_speech()))

    def speech_model(self):
        def build():
            path = self._path("speech", self.speech_key())
            if not os.path.exists(path):
                model, trace = train_speech_embedder(self.data().segments, self.cfg.effective_speech())
                _atomic_write(path, lambda p: save_model(p, model))
                with open(self._path("speech", self.speech_key(), ".trace.json"), "w") as f:
                    json.dump(trace, f)
            return load_model(path)

        return self._run("speech", build)

    def text_key(self):
        lex = sorted((w, list(p)) for w, p in self.data().lexicon.items())
        return digest("text", lex, self._table_key(), dataclasses.asdict(self.cfg.effective_text()))

    def text_model(self):
        def build():
            path = self._path("text", self.text_key())
            if not os.path.exists(path):
                model, _ = train_text_embedder(self.data().lexicon, self.table(), self.cfg.effective_text())
                _atomic_write(path, lambda p: save_text_model(p, model))
            return load_text_model(path)

        return self._run("text", build)

    def speech_vectors(self):
        return self._run("embed-speech", lambda: embed_segments(self.speech_model(), self.data().segments))

    def text_vectors(self):
        def build():
            seqs = lexicon_sequences(self.data().lexicon, self.table(), self.cfg.one_hot, self.words())
            return encode_texts(self.text_model(), seqs)

        return self._run("embed-text", build)

    # -- projection and alignment -------------------------------------------

    def project_key(self):
        return digest("project", self.speech_key(), self.text_key(), self.cfg.k)

    def projected(self):
        def build():
            path = self._path("project", self.project_key())
            if not os.path.exists(path):
                A, B = build_projected_sets(self.speech_vectors(), self.labels(), self.text_vectors(),
                                            self.words(), self.cfg.k)
                arrays = {}
                for tag, P in (("a", A), ("b", B)):
                    arrays.update({f"{tag}.vectors": P.vectors, f"{tag}.mean": P.pca.mean, f"{tag}.std": P.pca.std,
                                   f"{tag}.components": P.pca.components,
                                   f"{tag}.explained_variance": P.pca.explained_variance})

                def write(p):
                    with open(p, "w", encoding="utf-8") as f:
                        write_blocks(f, arrays)
                _atomic_write(path, write)
            with open(path, encoding="utf-8") as f:
                arr = read_blocks(f.readlines())

            def make(tag, labels):
                pca = PCAModel(arr[f"{tag}.mean"], arr[f"{tag}.std"], arr[f"{tag}.components"],
                               arr[f"{tag}.explained_variance"])
                return ProjectedSet(labels, arr[f"{tag}.vectors"], pca)
            return make("a", self.labels()), make("b", self.words())

        return self._run("project", build)

    def seeds(self):
        return self._run("seeds", lambda: select_seeds(self.labels(), self.cfg.n_seeds, self.cfg.seed, self.words()))

    def align_key(self):
        return digest("align", self.project_key(), self.cfg.n_seeds, dataclasses.asdict(self.cfg.effective_align()))

    def transform(self):
        def build():
            path = self._path("align", self.align_key())
            if not os.path.exists(path):
                A, B = self.projected()
                s = self.seeds()
                acfg = self.cfg.effective_align()
                T, trace = train_alignment(A.vectors[s.a_index], B.vectors[s.b_index], acfg,
                                           trace_every=max(1, acfg.iterations // 100))
                _atomic_write(path, lambda p: save_transform(p, T, acfg.cycle_weight, acfg.iterations))
            return load_transform(path)

        return self._run("align", build)

    # -- decoding and rescoring ---------------------------------------------

    def ranked(self):
        """Cosine-ranked candidates for every token, as long as the widest beam."""
        def build():
            A, B = self.projected()
            width = min(len(B.labels), max((TOPN,) + tuple(self.cfg.beams)))
            return decode_knn_batch(A.vectors, self.transform(), B, width)

        return self._run("decode", build)

    def seed_mask(self):
        mask = np.zeros(len(self.labels()), dtype=bool)
        mask[self.seeds().a_index] = True
        return mask

    def lm(self):
        def build():
            tr = self.data().transcripts
            if not tr:
                return None
            path = self._path("lm", digest("lm", tr))
            if not os.path.exists(path):
                _atomic_write(path, lambda p: save_lm(p, train_bigram(tr)))
            return load_lm(path)

        return self._run("lm", build)

    def rescored(self):
        """``{beam width: predicted word per token}``; empty without transcripts."""
        def build():
            lm = self.lm()
            if lm is None:
                return {}
            ranked = self.ranked()
            out = {}
            for K in self.cfg.beams:
                rcfg = replace(self.cfg.rescore, beam=K)
                pred = [None] * len(ranked)
                for utt in self.data().utterances:
                    words, _ = beam_rescore([ranked[i][:K] for i in utt], lm, rcfg)
                    for i, w in zip(utt, words):
                        pred[i] = w
                out[K] = pred
            return out

        return self._run("rescore", build)

    # -- report --------------------------------------------------------------

    def report(self) -> EvalReport:
        labels = self.labels()
        ranked = self.ranked()
        rescored = self.rescored()
        seed = self.seed_mask()
        unpaired = np.nonzero(~seed)[0]
        paired = self.seeds().a_index
        if set(unpaired.tolist()) & set(paired.tolist()):
            raise AssertionError("seed tokens leaked into the unpaired set")

        def acc(idx):
            if len(idx) == 0:
                return {1: 0.0, TOPN: 0.0}
            return eval_topk([ranked[i] for i in idx], [labels[i] for i in idx], (1, TOPN))

        pa, ua = acc(paired), acc(unpaired)
        beam_acc = {}
        for K, pred in rescored.items():
            beam_acc[K] = round1(100.0 * np.mean([pred[i] == labels[i] for i in unpaired])) if len(unpaired) else 0.0
        utts = self.data().utterances
        before = [" ".join(ranked[i][0][0] for i in u) for u in utts]
        after = [" ".join(rescored[max(rescored)][i] for i in u) for u in utts] if rescored else []
        return EvalReport(
            paired_top1=round1(pa[1]), paired_top10=round1(pa[TOPN]),
            unpaired_top1=round1(ua[1]), unpaired_top10=round1(ua[TOPN]),
            n_seeds=len(paired), n_unpaired=len(unpaired),
            no_lm_top1=round1(ua[1]), beam_accuracy=beam_acc,
            transcripts_before=before, transcripts_after=after,
            config=self.cfg.to_dict(), timings=dict(self.timings))

    def write_predictions(self, path):
        labels, ranked, rescored = self.labels(), self.ranked(), self.rescored()
        seed = self.seed_mask()
        segs = self.data().segments
        with open(path, "w", encoding="utf-8") as f:
            for i, lab in enumerate(labels):
                rec = {"token": i, "utterance": segs[i].utterance_id, "speaker": segs[i].speaker,
                       "reference": lab, "seed": bool(seed[i]),
                       "ranked": [[w, c] for w, c in ranked[i][:TOPN]],
                       "rescored": {str(K): pred[i] for K, pred in rescored.items()}}
                f.write(json.dumps(rec) + "\n")


def write_report(out_dir, report):
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "report.json"), "w", encoding="utf-8") as f:
        f.write(report.to_json())
    with open(os.path.join(out_dir, "report.txt"), "w", encoding="utf-8") as f:
        f.write(report.table())


def run_pipeline(cfg: PipelineConfig, stage_dir=None) -> EvalReport:
    """Run every stage and write ``report.json``, ``report.txt``, ``predictions.jsonl`` and ``config.ini``."""
    cfg.check_paths()
    os.makedirs(cfg.out_dir, exist_ok=True)
    with open(os.path.join(cfg.out_dir, "config.ini"), "w", encoding="utf-8") as f:
        f.write(format_config(cfg))
    pipe = Pipeline(cfg, stage_dir)
    report = pipe.report()
    pipe.write_predictions(os.path.join(cfg.out_dir, "predictions.jsonl"))
    write_report(cfg.out_dir, report)
    return report


def report_from_predictions(path):
    """Recompute the accuracies of a report from its per-token dump."""
    recs = [json.loads(line) for line in open(path, encoding="utf-8")]
    out = {}
    for name, sel in (("paired", True), ("unpaired", False)):
        rs = [r for r in recs if r["seed"] is sel]
        acc = eval_topk([r["ranked"] for r in rs], [r["reference"] for r in rs], (1, TOPN)) if rs else {1: 0, TOPN: 0}
        out[f"{name}_top1"], out[f"{name}_top10"] = round1(acc[1]), round1(acc[TOPN])
    un = [r for r in recs if not r["seed"]]
    keys = un[0]["rescored"].keys() if un else []
    out["beam_accuracy"] = {int(K): round1(100.0 * np.mean([r["rescored"][K] == r["reference"] for r in un]))
                            for K in keys}
    return out


ABLATION_ROWS = ((True, False), (False, False), (True, True), (False, True))


def run_ablations(cfg: PipelineConfig):
    """Four runs over disentanglement x (SPE, one-hot), sharing one stage cache."""
    stage_dir = os.path.join(cfg.out_dir, "stages")
    rows = []
    for dis, one_hot in ABLATION_ROWS:
        tag = f"{'dis' if dis else 'nodis'}-{'onehot' if one_hot else 'spe'}"
        sub = replace(cfg, disentangle=dis, one_hot=one_hot, out_dir=os.path.join(cfg.out_dir, tag))
        rep = run_pipeline(sub, stage_dir=stage_dir)
        rows.append({"disentangle": dis, "one_hot": one_hot, "unpaired_top1": rep.unpaired_top1,
                     "unpaired_top10": rep.unpaired_top10, "paired_top1": rep.paired_top1,
                     "paired_top10": rep.paired_top10, "config": rep.config})
    with open(os.path.join(cfg.out_dir, "ablation.json"), "w", encoding="utf-8") as f:
        json.dump(rows, f, indent=2, sort_keys=True)
    with open(os.path.join(cfg.out_dir, "ablation.txt"), "w", encoding="utf-8") as f:
        f.write(ablation_table(rows))
    return rows
