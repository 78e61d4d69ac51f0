"""Articulatory-feature sequences for text words and their autoencoder embeddings."""
from __future__ import annotations

import json
import logging
import re
from dataclasses import asdict, dataclass
from importlib import resources

import numpy as np

from .numkit import tape as tp
from .numkit.layers import batch_inputs, bigru_encode, decode, init_bigru, init_decoder, minibatches
from .numkit.optim import AdamState, adam_step
from .numkit.tape import ShapeError, Tape
from .numkit.tsv import read_blocks, write_blocks

log = logging.getLogger(__name__)

SPE_FEATURES = (
    "sonorant", "syllabic", "consonantal", "high", "back", "front", "low", "round",
    "tense", "anterior", "coronal", "voice", "continuant", "nasal", "strident",
)
CHECKPOINT_VERSION = "phonalign-text-embedder 1"


class UnknownPhonemeError(KeyError):
    def __str__(self):
        return f"unknown phoneme {self.args[0]!r}"


class OutOfLexiconError(KeyError):
    def __str__(self):
        return f"word {self.args[0]!r} is not in the lexicon"


class SpeTable(dict):
    """Mapping phoneme symbol -> 15-vector in {-1, 0, +1}."""

    @property
    def inventory(self):
        return sorted(self)


def load_spe_table(path=None):
    if path is None:
        text = resources.files("phonalign.data").joinpath("spe_arpabet.tsv").read_text(encoding="utf-8")
    else:
        with open(path, encoding="utf-8") as f:
            text = f.read()
    table = SpeTable()
    header = None
    for line in text.splitlines():
        if not line.strip() or line.startswith("#"):
            continue
        cols = line.split("\t")
        if header is None:
            header = tuple(cols[1:])
            if header != SPE_FEATURES:
                raise ValueError(f"SPE table header {header} does not match feature order {SPE_FEATURES}")
            continue
        vals = np.array([float(x) for x in cols[1:]])
        if vals.shape != (15,) or not np.all(np.isin(vals, (-1.0, 0.0, 1.0))):
            raise ValueError(f"bad SPE row for {cols[0]}: {cols[1:]}")
        table[cols[0]] = vals
    return table


def spe_featurize(table, phoneme):
    try:
        return table[phoneme].copy()
    except KeyError:
        raise UnknownPhonemeError(phoneme) from None


def one_hot_featurize(inventory, phoneme):
    inv = sorted(inventory)
    try:
        i = inv.index(phoneme)
    except ValueError:
        raise UnknownPhonemeError(phoneme) from None
    v = np.zeros(len(inv))
    v[i] = 1.0
    return v


@dataclass(frozen=True)
class ArticulatorySequence:
    word: str
    rows: np.ndarray  # (L, feature dim)


_STRESS = re.compile(r"\d+$")


def parse_lexicon(lines):
    """Parse ``WORD<TAB>PH1 PH2 ...`` or CMU-dictionary lines.

    Stress digits are stripped and the first pronunciation of a word wins.
    """
    lex = {}
    for line in lines:
        line = line.strip()
        if not line or line.startswith(";;;") or line.startswith("#"):
            continue
        if "\t" in line:
            word, pron = line.split("\t", 1)
        else:
            word, _, pron = line.partition(" ")
        word = re.sub(r"\(\d+\)$", "", word.strip())
        phones = [_STRESS.sub("", p) for p in pron.split()]
        if not phones:
            raise ValueError(f"empty pronunciation for {word!r}")
        lex.setdefault(word, tuple(phones))
    return lex


def load_lexicon(path):
    with open(path, encoding="utf-8") as f:
        return parse_lexicon(f)


def write_lexicon(path, lexicon):
    with open(path, "w", encoding="utf-8") as f:
        for w in sorted(lexicon):
            f.write(f"{w}\t{' '.join(lexicon[w])}\n")


def check_lexicon(lexicon, table):
    for w, pron in lexicon.items():
        if not pron:
            raise ValueError(f"empty pronunciation for {w!r}")
        for p in pron:
            if p not in table:
                raise UnknownPhonemeError(p)


def word_to_articulatory(lexicon, table, word, one_hot=False):
    """Feature rows for each phoneme of ``word`` (SPE, or one-hot over the table's inventory)."""
    try:
        pron = lexicon[word]
    except KeyError:
        raise OutOfLexiconError(word) from None
    if one_hot:
        inv = table.inventory if isinstance(table, SpeTable) else sorted(table)
        rows = [one_hot_featurize(inv, p) for p in pron]
    else:
        rows = [spe_featurize(table, p) for p in pron]
    return ArticulatorySequence(word, np.vstack(rows))


@dataclass(frozen=True)
class TextTrainConfig:
    epochs: int = 200
    batch_size: int = 64
    lr: float = 1e-4
    seed: int = 0
    one_hot: bool = False
    enc_hidden: int = 256
    dec_hidden: tuple = (512, 256)


@dataclass
class TextEmbedModel:
    weights: dict
    config: TextTrainConfig

    @property
    def dim(self):
        return 2 * self.config.enc_hidden

    @property
    def feature_dim(self):
        return self.weights["dec.out.W"].shape[1]


def init_text_model(feature_dim, cfg, rng):
    w = {}
    w.update(init_bigru(rng, "enc_t", feature_dim, cfg.enc_hidden))
    w.update(init_decoder(rng, "dec", 2 * cfg.enc_hidden, feature_dim, cfg.dec_hidden))
    return TextEmbedModel(w, cfg)


def _rows(model, seq):
    rows = seq.rows if isinstance(seq, ArticulatorySequence) else np.asarray(seq, dtype=np.float64)
    if rows.ndim != 2 or len(rows) == 0:
        raise ShapeError(f"articulatory sequence must have at least one row, got shape {rows.shape}")
    if rows.shape[1] != model.feature_dim:
        raise ShapeError(f"feature dim {rows.shape[1]} != model input dim {model.feature_dim}")
    return rows


def encode_texts(model, seqs, batch_size=256):
    out = []
    for i in range(0, len(seqs), batch_size):
        t = Tape()
        p = {k: t.const(v) for k, v in model.weights.items() if k.startswith("enc_t")}
        x, mask, lengths = batch_inputs(t, [_rows(model, s) for s in seqs[i:i + batch_size]])
        out.append(bigru_encode(p, "enc_t", x, mask, lengths).value)
    return np.vstack(out) if out else np.zeros((0, model.dim))


def encode_text(model, seq):
    return encode_texts(model, [seq])[0]


def reconstruct_text(model, vt, L):
    if L < 1:
        raise ValueError(f"L must be >= 1, got {L}")
    t = Tape()
    p = {k: t.const(v) for k, v in model.weights.items() if k.startswith("dec")}
    return decode(p, "dec", t.const(np.asarray(vt, dtype=np.float64)[None, :]), L).value[:, 0, :]


def lexicon_sequences(lexicon, table, one_hot=False, words=None):
    words = sorted(lexicon) if words is None else words
    return [word_to_articulatory(lexicon, table, w, one_hot) for w in words]


def text_loss(model, seqs):
    """Reconstruction loss of a batch of articulatory sequences and its gradient."""
    t = Tape()
    p = t.params(model.weights)
    x, mask, lengths = batch_inputs(t, [_rows(model, s) for s in seqs])
    vt = bigru_encode(p, "enc_t", x, mask, lengths)
    y = decode(p, "dec", vt, x.value.shape[0])
    loss = tp.masked_mse(y, x.value, mask[:, :, None])
    return float(loss.value), t.backward(loss)


def train_text_embedder(lexicon, table, cfg=TextTrainConfig()):
    """Fit the text autoencoder on every lexicon word.  Returns ``(model, trace)``."""
    if not lexicon:
        raise ValueError("lexicon is empty")
    rng = np.random.default_rng(cfg.seed)
    seqs = [s.rows for s in lexicon_sequences(lexicon, table, cfg.one_hot)]
    model = init_text_model(seqs[0].shape[1], cfg, rng)
    opt = AdamState(lr=cfg.lr)
    trace = []
    for epoch in range(cfg.epochs):
        total, n = 0.0, 0
        for idx in minibatches(rng, len(seqs), cfg.batch_size):
            t = Tape()
            p = t.params(model.weights)
            x, mask, lengths = batch_inputs(t, [seqs[i] for i in idx])
            vt = bigru_encode(p, "enc_t", x, mask, lengths)
            y = decode(p, "dec", vt, x.value.shape[0])
            loss = tp.masked_mse(y, x.value, mask[:, :, None])
            grads = t.backward(loss)
            model.weights, opt = adam_step(model.weights, grads, opt)
            total += float(loss.value)
            n += 1
        trace.append({"epoch": epoch, "recon": total / n})
        log.debug("text epoch %d: %.5f", epoch, total / n)
    return model, trace


def save_text_model(path, model):
    cfg = asdict(model.config)
    with open(path, "w", encoding="utf-8") as f:
        f.write(f"# {CHECKPOINT_VERSION}\n")
        for k in sorted(cfg):
            v = cfg[k]
            v = ",".join(str(x) for x in v) if isinstance(v, (tuple, list)) else v
            f.write(f"# {k} = {v}\n")
        write_blocks(f, model.weights)


def load_text_model(path):
    with open(path, encoding="utf-8") as f:
        lines = f.readlines()
    if not lines or lines[0].strip() != f"# {CHECKPOINT_VERSION}":
        raise ValueError(f"{path}: not a text embedder checkpoint")
    kw = {}
    types = {k: type(v) for k, v in asdict(TextTrainConfig()).items()}
    for line in lines[1:]:
        if line.startswith("## "):
            break
        k, v = (s.strip() for s in line[2:].split("=", 1))
        ty = types.get(k)
        if ty is bool:
            kw[k] = v == "True"
        elif ty is tuple:
            kw[k] = tuple(int(x) for x in v.split(","))
        elif ty is not None:
            kw[k] = ty(v)
    return TextEmbedModel(read_blocks(lines), TextTrainConfig(**kw))


def dump_text_embeddings(path, words, vectors):
    with open(path, "w", encoding="utf-8") as f:
        for w, v in zip(words, vectors):
            f.write(json.dumps({"word": w, "v_t": [float(x) for x in v]}) + "\n")
