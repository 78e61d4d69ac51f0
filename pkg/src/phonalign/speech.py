"""Speaker-disentangled phonetic embeddings of spoken words.

Two bidirectional GRU encoders map a word's frames to a phonetic vector and a
speaker vector.  A two-layer GRU decoder reconstructs the frames from both.
Speaker vectors of the same speaker are pulled together while different
speakers are pushed at least ``margin`` apart.  A pair discriminator tries to
tell whether two phonetic vectors share a speaker, and the phonetic encoder is
trained to leave it at chance.
"""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from .numkit import tape as tp
from .numkit.layers import (batch_inputs, bigru_encode, decode, init_bigru, init_decoder,
                            init_dense, minibatches, mlp_logits)
from .numkit.optim import AdamState, adam_step
from .numkit.tape import ShapeError, Tape
from .numkit.tsv import read_blocks, write_blocks

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = "phonalign-speech-embedder 1"


@dataclass(frozen=True)
class SpeechTrainConfig:
    margin: float = 0.01
    adversarial_weight: float = 1.0
    margin_weight: float = 1.0
    recon_weight: float = 1.0
    disc_steps: int = 1
    batch_size: int = 64
    lr: float = 1e-4
    epochs: int = 50
    seed: int = 0
    disentangle: bool = True
    enc_hidden: int = 256
    dec_hidden: tuple = (512, 256)
    disc_hidden: int = 256
    disc_layers: int = 2

    def __post_init__(self):
        if self.margin <= 0:
            raise ValueError("speaker margin must be positive")
        if self.batch_size < 2:
            raise ValueError("batch size must be at least 2")


@dataclass
class SpeechEmbedModel:
    weights: dict
    feat_mean: np.ndarray
    feat_std: np.ndarray
    config: SpeechTrainConfig = field(default_factory=SpeechTrainConfig)

    @property
    def dim(self):
        return 2 * self.config.enc_hidden


def init_model(n_features, cfg, rng):
    H = cfg.enc_hidden
    w = {}
    w.update(init_bigru(rng, "enc_p", n_features, H))
    w.update(init_bigru(rng, "enc_s", n_features, H))
    w.update(init_decoder(rng, "dec", 4 * H, n_features, cfg.dec_hidden))
    n_in = 4 * H
    for i in range(cfg.disc_layers):
        w[f"dis.{i}.W"], w[f"dis.{i}.b"] = init_dense(rng, n_in, cfg.disc_hidden)
        n_in = cfg.disc_hidden
    w["dis.out.W"], w["dis.out.b"] = init_dense(rng, n_in, 1)
    return SpeechEmbedModel(w, np.zeros(n_features), np.ones(n_features), cfg)


def _frames(model, seg):
    f = seg.frames if hasattr(seg, "frames") else seg
    f = np.asarray(f, dtype=np.float64)
    if f.ndim != 2 or len(f) == 0:
        raise ShapeError(f"segment must have at least one frame, got shape {f.shape}")
    if f.shape[1] != len(model.feat_mean):
        raise ShapeError(f"segment has {f.shape[1]} features, model expects {len(model.feat_mean)}")
    return (f - model.feat_mean) / model.feat_std


def _encode_batch(model, prefix, segs):
    t = Tape()
    p = {k: t.const(v) for k, v in model.weights.items() if k.startswith(prefix)}
    x, mask, lengths = batch_inputs(t, [_frames(model, s) for s in segs])
    return bigru_encode(p, prefix, x, mask, lengths).value


def encode_phonetic(model, seg):
    return _encode_batch(model, "enc_p", [seg])[0]


def encode_speaker(model, seg):
    if not model.config.disentangle:
        _frames(model, seg)
        return np.zeros(model.dim)
    return _encode_batch(model, "enc_s", [seg])[0]


def embed_segments(model, segs, which="p", batch_size=256):
    """Phonetic (``which="p"``) or speaker (``"s"``) vectors for many segments, in order."""
    if which == "s" and not model.config.disentangle:
        return np.zeros((len(segs), model.dim))
    prefix = "enc_p" if which == "p" else "enc_s"
    out = [_encode_batch(model, prefix, segs[i:i + batch_size]) for i in range(0, len(segs), batch_size)]
    return np.vstack(out) if out else np.zeros((0, model.dim))


def reconstruct(model, vp, vs, T):
    """Decode ``T`` frames (in the original feature scale) from a vector pair."""
    if T < 1:
        raise ValueError(f"T must be >= 1, got {T}")
    vp, vs = np.asarray(vp, dtype=np.float64), np.asarray(vs, dtype=np.float64)
    if vp.shape != (model.dim,) or vs.shape != (model.dim,):
        raise ShapeError(f"vector dims {vp.shape}, {vs.shape} != ({model.dim},)")
    t = Tape()
    p = {k: t.const(v) for k, v in model.weights.items() if k.startswith("dec")}
    cond = t.const(np.concatenate([vp, vs])[None, :])
    y = decode(p, "dec", cond, T).value[:, 0, :]
    return y * model.feat_std + model.feat_mean


def speaker_margin_loss(vs_i, vs_j, same_speaker, margin):
    """Squared distance for same-speaker pairs, squared hinge ``max(0, margin - d)`` otherwise."""
    vs_i, vs_j = np.asarray(vs_i, dtype=np.float64), np.asarray(vs_j, dtype=np.float64)
    if vs_i.shape != vs_j.shape:
        raise ShapeError(f"speaker vector dims differ: {vs_i.shape} vs {vs_j.shape}")
    d2 = float(np.sum((vs_i - vs_j) ** 2))
    if same_speaker:
        return d2
    return max(0.0, margin - np.sqrt(d2)) ** 2


def _pair_features(a, b):
    return tp.concat([tp.add(a, b), tp.absolute(tp.sub(a, b))], axis=-1)


def discriminator_score(model, vp_i, vp_j):
    """Probability that two phonetic vectors come from the same speaker."""
    vp_i, vp_j = np.atleast_2d(vp_i), np.atleast_2d(vp_j)
    if vp_i.shape[-1] != model.dim or vp_j.shape != vp_i.shape:
        raise ShapeError(f"discriminator inputs {vp_i.shape}, {vp_j.shape}; expected (*, {model.dim})")
    t = Tape()
    p = {k: t.const(v) for k, v in model.weights.items() if k.startswith("dis.")}
    logit = mlp_logits(p, "dis", _pair_features(t.const(vp_i), t.const(vp_j)), model.config.disc_layers)
    prob = 1.0 / (1.0 + np.exp(-np.clip(logit.value[:, 0], -700, 700)))
    # keep strictly inside (0, 1)
    prob = np.clip(prob, np.nextafter(0.0, 1.0), np.nextafter(1.0, 0.0))
    return float(prob[0]) if prob.shape == (1,) else prob


def sample_pairs(rng, speakers):
    """All same-speaker pairs in a batch plus as many random different-speaker pairs."""
    speakers = np.asarray(speakers)
    n = len(speakers)
    iu, ju = np.triu_indices(n, k=1)
    same = speakers[iu] == speakers[ju]
    s_i, s_j = iu[same], ju[same]
    d_i, d_j = iu[~same], ju[~same]
    if len(d_i) > len(s_i):
        pick = np.sort(rng.choice(len(d_i), size=len(s_i), replace=False))
        d_i, d_j = d_i[pick], d_j[pick]
    i = np.concatenate([s_i, d_i])
    j = np.concatenate([s_j, d_j])
    label = np.concatenate([np.ones(len(s_i)), np.zeros(len(d_i))])
    return i, j, label


def _speaker_ids(corpus):
    # without speaker labels, words of one utterance share a pseudo-speaker
    return [s.speaker if s.speaker else f"utt:{s.utterance_id}" for s in corpus]


def _main_loss(model, p, batch, spk, pairs, cfg):
    t = next(iter(p.values())).tape
    x, mask, lengths = batch_inputs(t, batch)
    vp = bigru_encode(p, "enc_p", x, mask, lengths)
    if cfg.disentangle:
        vs = bigru_encode(p, "enc_s", x, mask, lengths)
    else:
        vs = t.const(np.zeros(vp.value.shape))
    cond = tp.concat([vp, vs], axis=-1)
    y = decode(p, "dec", cond, x.value.shape[0])
    recon = tp.masked_mse(y, x.value, mask[:, :, None])
    terms = {"recon": recon}
    loss = tp.mul(recon, cfg.recon_weight)
    i, j, label = pairs
    if cfg.disentangle and len(i):
        d = tp.row_distance(vs[i], vs[j])
        same_term = tp.weighted_sum(tp.square(d), label / len(i))
        hinge = tp.relu(tp.sub(cfg.margin, d))
        diff_term = tp.weighted_sum(tp.square(hinge), (1.0 - label) / len(i))
        margin = tp.add(same_term, diff_term)
        logits = mlp_logits(p, "dis", _pair_features(vp[i], vp[j]), cfg.disc_layers)
        adv = tp.bce_with_logits(logits, np.full(logits.value.shape, 0.5))
        loss = tp.add(loss, tp.add(tp.mul(margin, cfg.margin_weight), tp.mul(adv, cfg.adversarial_weight)))
        terms["margin"], terms["adv"] = margin, adv
    return loss, terms, vp


def speech_loss(model, segs, pairs=None, rng=None):
    """Main training objective on one batch and its gradient w.r.t. every encoder/decoder weight.

    Frames are normalized with the model's statistics.  ``pairs`` defaults to
    :func:`sample_pairs` over the segments' speakers.  Returns ``(loss, grads)``.
    """
    cfg = model.config
    batch = [_frames(model, s) for s in segs]
    speakers = np.array(_speaker_ids(segs))
    if pairs is None:
        pairs = sample_pairs(rng or np.random.default_rng(0), speakers)
    t = Tape()
    p = {k: (t.const(w) if k.startswith("dis.") else t.param(k, w)) for k, w in model.weights.items()}
    loss, _, _ = _main_loss(model, p, batch, speakers, pairs, cfg)
    return float(loss.value), t.backward(loss)


def train_speech_embedder(corpus, cfg=SpeechTrainConfig(), n_features=None):
    """Train on a list of segments.  Returns ``(model, trace)``.

    ``trace`` holds one dict per epoch with mean reconstruction, margin,
    adversarial and discriminator losses.  The same corpus and config give
    bit-identical results.
    """
    if not corpus:
        raise ValueError("speech corpus is empty")
    rng = np.random.default_rng(cfg.seed)
    frames = [np.asarray(s.frames, dtype=np.float64) for s in corpus]
    n_features = n_features or frames[0].shape[1]
    model = init_model(n_features, cfg, rng)
    allf = np.vstack(frames)
    model.feat_mean = allf.mean(axis=0)
    std = allf.std(axis=0)
    model.feat_std = np.where(std < 1e-8, 1.0, std)
    normed = [(f - model.feat_mean) / model.feat_std for f in frames]
    speakers = np.array(_speaker_ids(corpus))

    enc_keys = [k for k in model.weights if not k.startswith("dis.")]
    dis_keys = [k for k in model.weights if k.startswith("dis.")]
    if not cfg.disentangle:
        enc_keys = [k for k in enc_keys if not k.startswith("enc_s")]
    main_opt = AdamState(lr=cfg.lr)
    dis_opt = AdamState(lr=cfg.lr)
    trace = []
    for epoch in range(cfg.epochs):
        sums = {"recon": 0.0, "margin": 0.0, "adv": 0.0, "disc": 0.0}
        n_batches = 0
        for idx in minibatches(rng, len(corpus), cfg.batch_size):
            batch = [normed[i] for i in idx]
            pairs = sample_pairs(rng, speakers[idx])
            if cfg.disentangle and len(pairs[0]):
                for _ in range(cfg.disc_steps):
                    t = Tape()
                    p = {k: t.const(model.weights[k]) for k in model.weights if k.startswith("enc_p")}
                    x, mask, lengths = batch_inputs(t, batch)
                    vp = bigru_encode(p, "enc_p", x, mask, lengths).value
                    dp = t.params({k: model.weights[k] for k in dis_keys})
                    i, j, label = pairs
                    logits = mlp_logits(dp, "dis", _pair_features(t.const(vp[i]), t.const(vp[j])),
                                        cfg.disc_layers)
                    dloss = tp.bce_with_logits(logits, label[:, None])
                    grads = t.backward(dloss)
                    upd, dis_opt = adam_step({k: model.weights[k] for k in dis_keys}, grads, dis_opt)
                    model.weights.update(upd)
                    sums["disc"] += float(dloss.value)
            t = Tape()
            p = {k: (t.param(k, w) if k in enc_keys else t.const(w)) for k, w in model.weights.items()}
            loss, terms, _ = _main_loss(model, p, batch, speakers[idx], pairs, cfg)
            grads = t.backward(loss)
            upd, main_opt = adam_step({k: model.weights[k] for k in enc_keys}, grads, main_opt)
            model.weights.update(upd)
            for k, v in terms.items():
                sums[k] += float(v.value)
            n_batches += 1
        rec = {k: v / n_batches for k, v in sums.items()}
        rec["epoch"] = epoch
        trace.append(rec)
        log.debug("speech epoch %d: %s", epoch, rec)
    if not cfg.disentangle:
        for k in model.weights:
            if k.startswith("enc_s"):
                model.weights[k] = np.zeros_like(model.weights[k])
    return model, trace


def save_model(path, model):
    cfg = asdict(model.config)
    with open(path, "w", encoding="utf-8") as f:
        f.write(f"# {CHECKPOINT_VERSION}\n")
        for k in sorted(cfg):
            v = cfg[k]
            v = ",".join(str(x) for x in v) if isinstance(v, (tuple, list)) else v
            f.write(f"# {k} = {v}\n")
        arrays = dict(model.weights)
        arrays["feat_mean"] = model.feat_mean
        arrays["feat_std"] = model.feat_std
        write_blocks(f, arrays)


def load_model(path):
    with open(path, encoding="utf-8") as f:
        lines = f.readlines()
    if not lines or lines[0].strip() != f"# {CHECKPOINT_VERSION}":
        raise ValueError(f"{path}: not a speech embedder checkpoint")
    meta = {}
    for line in lines[1:]:
        if line.startswith("## "):
            break
        k, v = line[2:].split("=", 1)
        meta[k.strip()] = v.strip()
    cfg = _config_from_meta(meta)
    arrays = read_blocks(lines)
    mean, std = arrays.pop("feat_mean"), arrays.pop("feat_std")
    return SpeechEmbedModel(arrays, mean, std, cfg)


def _config_from_meta(meta):
    types = {f: type(v) for f, v in asdict(SpeechTrainConfig()).items()}
    kw = {}
    for k, v in meta.items():
        ty = types.get(k)
        if ty is None:
            continue
        if ty is bool:
            kw[k] = v == "True"
        elif ty is tuple:
            kw[k] = tuple(int(x) for x in v.split(","))
        else:
            kw[k] = ty(v)
    return SpeechTrainConfig(**kw)
